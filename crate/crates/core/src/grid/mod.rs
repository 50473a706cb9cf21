//! Network data: case records, parsers, the bus admittance matrix and
//! measurement planning.

mod json;
mod matpower;
mod plan;
mod ybus;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use json::{parse_json_case, to_json_string};
pub use matpower::parse_matpower_case;
pub use plan::{
    plan_measurements, ChannelKind, ChannelSource, Location, MeasurementChannel, MeasurementPlan,
    PlanError, RedundancyLevel, BranchEnd, SIGMA_POWER, SIGMA_VOLTAGE,
};
pub use ybus::{build_admittance, AdmittanceMatrix, BranchAdmittance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {record}: {message}")]
    Semantic { record: String, message: String },
    #[error("branch {0} has zero series impedance")]
    SingularBranch(usize),
    #[error("unknown case `{0}`")]
    UnknownCase(String),
}

impl CaseError {
    fn semantic(record: impl Into<String>, message: impl Into<String>) -> Self {
        CaseError::Semantic {
            record: record.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

/// A bus. Powers and shunts are per unit on the case base.
#[derive(Debug, Clone, PartialEq)]
pub struct BusRecord {
    /// External (file) bus number.
    pub id: usize,
    pub kind: BusKind,
    pub load_p: f64,
    pub load_q: f64,
    pub shunt_g: f64,
    pub shunt_b: f64,
    pub base_kv: f64,
}

/// A line or transformer between two internal bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance.
    pub b_charging: f64,
    /// Off-nominal turns ratio on the from side (1.0 for lines).
    pub tap_ratio: f64,
    /// Phase shift in radians.
    pub phase_shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    /// Internal bus index.
    pub bus: usize,
    pub p_set: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub v_set: f64,
}

/// A validated network case with dense internal bus indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub generators: Vec<Generator>,
    slack: usize,
}

impl NetworkCase {
    /// Validates records and builds the case. Branch and generator bus
    /// references must already be internal indices.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<BusRecord>,
        branches: Vec<BranchRecord>,
        generators: Vec<Generator>,
    ) -> Result<Self, CaseError> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(CaseError::semantic("baseMVA", "must be positive"));
        }
        if buses.is_empty() {
            return Err(CaseError::semantic("case", "no buses"));
        }
        let mut ids = BTreeSet::new();
        for bus in &buses {
            if !ids.insert(bus.id) {
                return Err(CaseError::semantic(
                    format!("bus {}", bus.id),
                    "duplicate bus id",
                ));
            }
            let values = [bus.load_p, bus.load_q, bus.shunt_g, bus.shunt_b, bus.base_kv];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(CaseError::semantic(
                    format!("bus {}", bus.id),
                    "non-finite value",
                ));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.as_slice() {
            [s] => *s,
            [] => return Err(CaseError::semantic("case", "no slack bus")),
            _ => {
                return Err(CaseError::semantic(
                    format!("bus {}", buses[slacks[1]].id),
                    "more than one slack bus",
                ))
            }
        };
        let n = buses.len();
        for (k, br) in branches.iter().enumerate() {
            let record = format!("branch {}", k + 1);
            if br.from_bus >= n || br.to_bus >= n {
                return Err(CaseError::semantic(record, "dangling branch endpoint"));
            }
            if br.from_bus == br.to_bus {
                return Err(CaseError::semantic(record, "branch connects a bus to itself"));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(CaseError::SingularBranch(k));
            }
            let values = [br.r, br.x, br.b_charging, br.tap_ratio, br.phase_shift];
            if values.iter().any(|v| !v.is_finite()) || br.tap_ratio <= 0.0 {
                return Err(CaseError::semantic(record, "invalid impedance or tap"));
            }
        }
        for (k, g) in generators.iter().enumerate() {
            if g.bus >= n {
                return Err(CaseError::semantic(
                    format!("generator {}", k + 1),
                    "references a missing bus",
                ));
            }
        }
        if !generators.iter().any(|g| g.bus == slack) {
            return Err(CaseError::semantic("case", "no generator at the slack bus"));
        }
        Ok(NetworkCase {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            slack,
        })
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Internal index of the slack bus.
    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Number of free state variables (all magnitudes, all angles but the slack).
    pub fn n_states(&self) -> usize {
        2 * self.n_bus() - 1
    }

    pub fn internal_index(&self, external_id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == external_id)
    }

    pub fn external_id(&self, index: usize) -> usize {
        self.buses[index].id
    }

    pub fn has_generator(&self, bus: usize) -> bool {
        self.generators.iter().any(|g| g.bus == bus)
    }

    /// Net scheduled complex injection per bus: generator set points minus load.
    /// The slack entry carries only its load; the solver determines the rest.
    pub fn scheduled_injections(&self, loads: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let mut inj: Vec<(f64, f64)> = loads.iter().map(|&(p, q)| (-p, -q)).collect();
        for g in &self.generators {
            if g.bus != self.slack {
                inj[g.bus].0 += g.p_set;
            }
        }
        inj
    }

    pub fn base_loads(&self) -> Vec<(f64, f64)> {
        self.buses.iter().map(|b| (b.load_p, b.load_q)).collect()
    }
}

/// Buses with no load, no generator and no shunt. Their power balance is
/// enforced exactly by the estimators.
pub fn identify_zero_injection(case: &NetworkCase) -> Vec<usize> {
    case.buses
        .iter()
        .enumerate()
        .filter(|(i, b)| {
            b.load_p == 0.0
                && b.load_q == 0.0
                && b.shunt_g == 0.0
                && b.shunt_b == 0.0
                && !case.has_generator(*i)
        })
        .map(|(i, _)| i)
        .collect()
}

const CASE33BW: &str = include_str!("../../data/case33bw.json");
const CASE39: &str = include_str!("../../data/case39.json");

/// Names of the cases bundled with the crate.
pub const SHIPPED_CASES: [&str; 2] = ["case33bw", "case39"];

/// Loads one of the bundled cases by name (`case33bw` or `case39`).
pub fn shipped_case(name: &str) -> Result<NetworkCase, CaseError> {
    match name {
        "case33bw" | "ieee33" => parse_json_case(CASE33BW),
        "case39" | "ieee39" => parse_json_case(CASE39),
        other => Err(CaseError::UnknownCase(other.to_string())),
    }
}


#[cfg(test)]
mod tests {
    use super::test_cases::*;
    use super::*;

    #[test]
    fn zero_injection_empty_when_every_bus_injects() {
        assert!(identify_zero_injection(&two_bus(0.5, 0.1)).is_empty());
    }

    #[test]
    fn zero_injection_finds_middle_of_chain() {
        assert_eq!(identify_zero_injection(&three_bus_chain()), vec![1]);
    }

    #[test]
    fn zero_injection_39_bus_matches_record_scan() {
        let case = shipped_case("case39").unwrap();
        // Independent scan of the raw JSON records.
        let raw: serde_json::Value =
            serde_json::from_str(include_str!("../../data/case39.json")).unwrap();
        let gen_buses: BTreeSet<u64> = raw["generators"]
            .as_array()
            .unwrap()
            .iter()
            .map(|g| g["bus"].as_u64().unwrap())
            .collect();
        let expected: Vec<usize> = raw["buses"]
            .as_array()
            .unwrap()
            .iter()
            .enumerate()
            .filter(|(_, b)| {
                ["load_p", "load_q", "shunt_g", "shunt_b"]
                    .iter()
                    .all(|k| b[k].as_f64().unwrap() == 0.0)
                    && !gen_buses.contains(&b["id"].as_u64().unwrap())
            })
            .map(|(i, _)| i)
            .collect();
        assert_eq!(identify_zero_injection(&case), expected);
        assert_eq!(expected.len(), 10);
    }

    #[test]
    fn rejects_missing_slack_and_self_loops() {
        let err = NetworkCase::new(
            "x",
            100.0,
            vec![bus(1, BusKind::Pq, 0.0, 0.0), bus(2, BusKind::Pq, 0.1, 0.0)],
            vec![line(0, 1, 0.0, 0.1)],
            vec![slack_gen(0)],
        )
        .unwrap_err();
        assert!(matches!(err, CaseError::Semantic { .. }));

        let err = NetworkCase::new(
            "x",
            100.0,
            vec![bus(1, BusKind::Slack, 0.0, 0.0), bus(2, BusKind::Pq, 0.1, 0.0)],
            vec![line(1, 1, 0.0, 0.1)],
            vec![slack_gen(0)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("branch 1"));
    }

    #[test]
    fn rejects_zero_impedance() {
        let err = NetworkCase::new(
            "x",
            100.0,
            vec![bus(1, BusKind::Slack, 0.0, 0.0), bus(2, BusKind::Pq, 0.1, 0.0)],
            vec![line(0, 1, 0.0, 0.0)],
            vec![slack_gen(0)],
        )
        .unwrap_err();
        assert_eq!(err, CaseError::SingularBranch(0));
    }

    #[test]
    fn shipped_cases_have_expected_shape() {
        let c33 = shipped_case("case33bw").unwrap();
        assert_eq!(c33.n_bus(), 33);
        assert_eq!(c33.generators.len(), 1);
        let active = c33.branches.iter().filter(|b| b.in_service).count();
        // A connected radial network has exactly n - 1 in-service branches.
        assert_eq!(active, 32);
        assert_eq!(c33.slack(), 0);
    }
}
