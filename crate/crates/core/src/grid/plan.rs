//! Measurement plans: which quantities are metered where, by which device,
//! and whether they arrive in real time.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{identify_zero_injection, NetworkCase};

/// Noise standard deviation of power injection and flow channels (p.u.).
pub const SIGMA_POWER: f64 = 0.01;
/// Noise standard deviation of voltage magnitude and angle channels.
pub const SIGMA_VOLTAGE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedundancyLevel {
    Lowest,
    Low,
    High,
    Highest,
}

impl RedundancyLevel {
    pub const ALL: [RedundancyLevel; 4] = [
        RedundancyLevel::Lowest,
        RedundancyLevel::Low,
        RedundancyLevel::High,
        RedundancyLevel::Highest,
    ];

    /// Target ratio of real-time channels to state variables.
    pub fn target_redundancy(self) -> f64 {
        match self {
            RedundancyLevel::Lowest => 0.40,
            RedundancyLevel::Low => 0.55,
            RedundancyLevel::High => 0.70,
            RedundancyLevel::Highest => 0.90,
        }
    }

    pub fn has_pmu(self) -> bool {
        matches!(self, RedundancyLevel::Low | RedundancyLevel::Highest)
    }

    /// Redundancy provided by SCADA alone: the "low" SCADA set is the one of
    /// `Lowest`, the "high" set the one of `High`.
    fn scada_redundancy(self) -> f64 {
        match self {
            RedundancyLevel::Lowest | RedundancyLevel::Low => 0.40,
            RedundancyLevel::High | RedundancyLevel::Highest => 0.70,
        }
    }
}

impl std::fmt::Display for RedundancyLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RedundancyLevel::Lowest => "lowest",
            RedundancyLevel::Low => "low",
            RedundancyLevel::High => "high",
            RedundancyLevel::Highest => "highest",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for RedundancyLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lowest" => Ok(RedundancyLevel::Lowest),
            "low" => Ok(RedundancyLevel::Low),
            "high" => Ok(RedundancyLevel::High),
            "highest" => Ok(RedundancyLevel::Highest),
            other => Err(format!("unknown redundancy level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    VMag,
    VAngle,
    PInjection,
    QInjection,
    PFlow,
    QFlow,
}

impl ChannelKind {
    pub fn is_voltage(self) -> bool {
        matches!(self, ChannelKind::VMag | ChannelKind::VAngle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchEnd {
    From,
    To,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Bus(usize),
    Branch { branch: usize, end: BranchEnd },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSource {
    Pmu,
    Scada,
    SmartMeter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementChannel {
    pub kind: ChannelKind,
    pub location: Location,
    pub source: ChannelSource,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("redundancy level {level} is unreachable for this case: {reason}")]
    Unreachable {
        level: RedundancyLevel,
        reason: String,
    },
    #[error("invalid plan: {0}")]
    Invalid(String),
}

/// Measurement channels partitioned into real-time (available) and delayed
/// sets, with per-channel noise level and WLS weight `1/sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub channels: Vec<MeasurementChannel>,
    pub available: Vec<usize>,
    pub delayed: Vec<usize>,
    pub sigma: Vec<f64>,
    pub weight: Vec<f64>,
    pub level: Option<RedundancyLevel>,
    pub zero_injection: Vec<usize>,
    pub n_bus: usize,
    pub slack: usize,
    pub seed: u64,
}

fn default_sigma(kind: ChannelKind) -> f64 {
    if kind.is_voltage() {
        SIGMA_VOLTAGE
    } else {
        SIGMA_POWER
    }
}

impl MeasurementPlan {
    /// Builds a plan from explicit channels. `is_available[i]` says whether
    /// channel `i` arrives in real time. Sigmas follow the channel kind.
    pub fn from_channels(
        case: &NetworkCase,
        channels: Vec<MeasurementChannel>,
        is_available: &[bool],
        level: Option<RedundancyLevel>,
        seed: u64,
    ) -> Result<Self, PlanError> {
        if channels.len() != is_available.len() {
            return Err(PlanError::Invalid("availability mask length mismatch".into()));
        }
        let zero_injection = identify_zero_injection(case);
        for ch in &channels {
            match (ch.kind, ch.location) {
                (k, Location::Bus(b)) => {
                    if b >= case.n_bus() {
                        return Err(PlanError::Invalid(format!("bus {b} out of range")));
                    }
                    if matches!(k, ChannelKind::PFlow | ChannelKind::QFlow) {
                        return Err(PlanError::Invalid("flow channel located at a bus".into()));
                    }
                    if !k.is_voltage() && zero_injection.contains(&b) {
                        return Err(PlanError::Invalid(format!(
                            "injection channel at zero-injection bus {b}"
                        )));
                    }
                }
                (k, Location::Branch { branch, .. }) => {
                    if !matches!(k, ChannelKind::PFlow | ChannelKind::QFlow) {
                        return Err(PlanError::Invalid("non-flow channel on a branch".into()));
                    }
                    if case.branches.get(branch).map_or(true, |b| !b.in_service) {
                        return Err(PlanError::Invalid(format!(
                            "branch {branch} missing or out of service"
                        )));
                    }
                }
            }
            if ch.source == ChannelSource::Pmu && !ch.kind.is_voltage() {
                return Err(PlanError::Invalid("PMU channels measure voltage phasors only".into()));
            }
        }
        let sigma: Vec<f64> = channels.iter().map(|c| default_sigma(c.kind)).collect();
        let weight = sigma.iter().map(|s| 1.0 / s).collect();
        let available = (0..channels.len()).filter(|&i| is_available[i]).collect();
        let delayed = (0..channels.len()).filter(|&i| !is_available[i]).collect();
        Ok(MeasurementPlan {
            channels,
            available,
            delayed,
            sigma,
            weight,
            level,
            zero_injection,
            n_bus: case.n_bus(),
            slack: case.slack(),
            seed,
        })
    }

    /// Every bus voltage phasor, every non-zero-injection bus injection and
    /// both end flows of every in-service branch, all real-time.
    pub fn full_instrumentation(case: &NetworkCase) -> Self {
        let zi = identify_zero_injection(case);
        let mut channels = Vec::new();
        for b in 0..case.n_bus() {
            for kind in [ChannelKind::VMag, ChannelKind::VAngle] {
                channels.push(MeasurementChannel {
                    kind,
                    location: Location::Bus(b),
                    source: ChannelSource::Pmu,
                });
            }
        }
        for b in (0..case.n_bus()).filter(|b| !zi.contains(b)) {
            for kind in [ChannelKind::PInjection, ChannelKind::QInjection] {
                channels.push(MeasurementChannel {
                    kind,
                    location: Location::Bus(b),
                    source: ChannelSource::Scada,
                });
            }
        }
        for (k, _) in case.branches.iter().enumerate().filter(|(_, b)| b.in_service) {
            for end in [BranchEnd::From, BranchEnd::To] {
                for kind in [ChannelKind::PFlow, ChannelKind::QFlow] {
                    channels.push(MeasurementChannel {
                        kind,
                        location: Location::Branch { branch: k, end },
                        source: ChannelSource::Scada,
                    });
                }
            }
        }
        let mask = vec![true; channels.len()];
        Self::from_channels(case, channels, &mask, None, 0).expect("full instrumentation is valid")
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_states(&self) -> usize {
        2 * self.n_bus - 1
    }

    /// Real-time redundancy `m_a / n`.
    pub fn redundancy(&self) -> f64 {
        self.available.len() as f64 / self.n_states() as f64
    }

    pub fn available_weights(&self) -> Vec<f64> {
        self.available.iter().map(|&i| self.weight[i]).collect()
    }

    pub fn delayed_weights(&self) -> Vec<f64> {
        self.delayed.iter().map(|&i| self.weight[i]).collect()
    }

    /// Returns a copy with every channel moved to the real-time set.
    pub fn all_available(&self) -> Self {
        let mut plan = self.clone();
        plan.available = (0..self.channels.len()).collect();
        plan.delayed.clear();
        plan
    }
}

/// Builds the measurement plan of a redundancy scenario.
///
/// The slack bus always carries a real-time voltage magnitude: a PMU when
/// the level has PMUs, a SCADA voltmeter otherwise. SCADA P/Q injection
/// meters go to a seeded random subset of the non-zero-injection buses whose
/// size is derived from the level's target redundancy; PMU levels add
/// phasor units (slack plus seeded random buses) on top of the matching
/// SCADA set. All remaining non-zero-injection buses get delayed smart
/// meters.
pub fn plan_measurements(
    case: &NetworkCase,
    level: RedundancyLevel,
    seed: u64,
) -> Result<MeasurementPlan, PlanError> {
    let n_states = case.n_states() as f64;
    let slack = case.slack();
    let zi = identify_zero_injection(case);
    let injecting: Vec<usize> = (0..case.n_bus()).filter(|b| !zi.contains(b)).collect();

    let scada_buses = ((level.scada_redundancy() * n_states - 1.0) / 2.0).round() as usize;
    let pmu_buses = if level.has_pmu() {
        let remaining = level.target_redundancy() * n_states - 2.0 * scada_buses as f64;
        (remaining / 2.0).round().max(1.0) as usize
    } else {
        0
    };
    if scada_buses > injecting.len() {
        return Err(PlanError::Unreachable {
            level,
            reason: format!("needs {scada_buses} SCADA buses, {} inject", injecting.len()),
        });
    }
    if pmu_buses > case.n_bus() {
        return Err(PlanError::Unreachable {
            level,
            reason: format!("needs {pmu_buses} PMU buses, case has {}", case.n_bus()),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scada_pool = injecting.clone();
    scada_pool.shuffle(&mut rng);
    let mut scada: Vec<usize> = scada_pool[..scada_buses].to_vec();
    scada.sort_unstable();

    let mut pmu = Vec::new();
    if pmu_buses > 0 {
        let mut others: Vec<usize> = (0..case.n_bus()).filter(|&b| b != slack).collect();
        others.shuffle(&mut rng);
        pmu.push(slack);
        pmu.extend_from_slice(&others[..pmu_buses - 1]);
        pmu.sort_unstable();
    }

    let mut channels = Vec::new();
    let mut mask = Vec::new();
    let mut push = |kind, bus, source, available: bool| {
        channels.push(MeasurementChannel {
            kind,
            location: Location::Bus(bus),
            source,
        });
        mask.push(available);
    };
    for &b in &pmu {
        push(ChannelKind::VMag, b, ChannelSource::Pmu, true);
        push(ChannelKind::VAngle, b, ChannelSource::Pmu, true);
    }
    if pmu.is_empty() {
        push(ChannelKind::VMag, slack, ChannelSource::Scada, true);
    }
    for &b in &scada {
        push(ChannelKind::PInjection, b, ChannelSource::Scada, true);
        push(ChannelKind::QInjection, b, ChannelSource::Scada, true);
    }
    for &b in injecting.iter().filter(|b| !scada.contains(b)) {
        push(ChannelKind::PInjection, b, ChannelSource::SmartMeter, false);
        push(ChannelKind::QInjection, b, ChannelSource::SmartMeter, false);
    }

    let plan = MeasurementPlan::from_channels(case, channels, &mask, Some(level), seed)?;
    let r = plan.redundancy();
    if (r - level.target_redundancy()).abs() > 0.05 {
        return Err(PlanError::Unreachable {
            level,
            reason: format!("closest achievable redundancy is {r:.3}"),
        });
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::shipped_case;
    use proptest::prelude::*;

    #[test]
    fn case33_lowest_has_no_pmu() {
        let case = shipped_case("case33bw").unwrap();
        let plan = plan_measurements(&case, RedundancyLevel::Lowest, 7).unwrap();
        assert!(plan.channels.iter().all(|c| c.source != ChannelSource::Pmu));
        assert!((plan.redundancy() - 0.40).abs() <= 0.05);
    }

    #[test]
    fn case39_highest_has_pmu() {
        let case = shipped_case("case39").unwrap();
        let plan = plan_measurements(&case, RedundancyLevel::Highest, 7).unwrap();
        assert!(plan.channels.iter().any(|c| c.source == ChannelSource::Pmu));
        assert!((plan.redundancy() - 0.90).abs() <= 0.05);
        assert!(!plan.delayed.is_empty());
    }

    #[test]
    fn deterministic_for_same_seed() {
        let case = shipped_case("case39").unwrap();
        for level in RedundancyLevel::ALL {
            let a = plan_measurements(&case, level, 42).unwrap();
            let b = plan_measurements(&case, level, 42).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sigmas_follow_channel_kind() {
        let case = shipped_case("case33bw").unwrap();
        let plan = plan_measurements(&case, RedundancyLevel::Highest, 1).unwrap();
        for (ch, &s) in plan.channels.iter().zip(&plan.sigma) {
            let want = if ch.kind.is_voltage() { 0.001 } else { 0.01 };
            assert_eq!(s, want);
        }
        for (s, w) in plan.sigma.iter().zip(&plan.weight) {
            assert_eq!(*w, 1.0 / s);
        }
    }

    #[test]
    fn unreachable_target_is_reported() {
        // 3 states: the lowest level rounds to zero SCADA buses, R = 1/3.
        let two = crate::grid::test_cases::two_bus(0.1, 0.0);
        let err = plan_measurements(&two, RedundancyLevel::Lowest, 0).unwrap_err();
        assert!(matches!(err, PlanError::Unreachable { .. }), "{err}");
        // 5 states, one injecting non-slack bus: high wants 2 SCADA buses
        // out of the 2 injecting ones, highest adds PMUs beyond that.
        let chain = crate::grid::test_cases::three_bus_chain();
        assert!(plan_measurements(&chain, RedundancyLevel::Highest, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn partition_and_redundancy_hold(seed in any::<u64>(), level_idx in 0usize..4, case_idx in 0usize..2) {
            let case = shipped_case(crate::grid::SHIPPED_CASES[case_idx]).unwrap();
            let level = RedundancyLevel::ALL[level_idx];
            let plan = plan_measurements(&case, level, seed).unwrap();
            let mut all: Vec<usize> = plan.available.iter().chain(&plan.delayed).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..plan.n_channels()).collect::<Vec<_>>());
            let r = plan.available.len() as f64 / (2 * case.n_bus() - 1) as f64;
            prop_assert!((r - level.target_redundancy()).abs() <= 0.05);
            for ch in &plan.channels {
                if let Location::Bus(b) = ch.location {
                    if plan.zero_injection.contains(&b) {
                        prop_assert!(ch.kind.is_voltage());
                    }
                }
            }
        }
    }
}
