use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::injections::{end_power, end_power_derivatives, eval_injections, injection_derivatives};
use super::{angle_index, magnitude_index, StateVector};
use crate::grid::{
    build_admittance, AdmittanceMatrix, BranchEnd, CaseError, ChannelKind, Location,
    MeasurementPlan, NetworkCase,
};

/// Largest condition number of the observability matrix still considered
/// numerically observable.
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

/// Which rows of the measurement model to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    All,
    Available,
    Delayed,
    /// P and Q injection at every zero-injection bus, interleaved per bus.
    ZeroInjection,
}

/// Measurement values tagged with the subset they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>) -> Self {
        MeasurementVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sum_i (w_i (self_i - other_i))^2`
    pub fn weighted_sq_distance(&self, other: &MeasurementVector, weights: &[f64]) -> f64 {
        assert_eq!(self.len(), other.len());
        assert_eq!(self.len(), weights.len());
        self.values
            .iter()
            .zip(&other.values)
            .zip(weights)
            .map(|((a, b), w)| (w * (a - b)).powi(2))
            .sum()
    }
}

/// A case, its admittance matrix and a measurement plan bundled for
/// repeated evaluation.
#[derive(Debug, Clone)]
pub struct MeasurementModel {
    pub case: NetworkCase,
    pub ybus: AdmittanceMatrix,
    pub plan: MeasurementPlan,
}

impl MeasurementModel {
    pub fn new(case: NetworkCase, plan: MeasurementPlan) -> Result<Self, CaseError> {
        assert_eq!(case.n_bus(), plan.n_bus, "plan built for a different case");
        let ybus = build_admittance(&case)?;
        Ok(MeasurementModel { case, ybus, plan })
    }

    pub fn n_bus(&self) -> usize {
        self.case.n_bus()
    }

    pub fn n_states(&self) -> usize {
        self.case.n_states()
    }

    pub fn slack(&self) -> usize {
        self.case.slack()
    }

    fn rows(&self, subset: Subset) -> Vec<usize> {
        match subset {
            Subset::All => (0..self.plan.n_channels()).collect(),
            Subset::Available => self.plan.available.clone(),
            Subset::Delayed => self.plan.delayed.clone(),
            Subset::ZeroInjection => Vec::new(),
        }
    }

    /// Channel weights of a subset (unit weights for zero-injection rows).
    pub fn weights(&self, subset: Subset) -> Vec<f64> {
        match subset {
            Subset::ZeroInjection => vec![1.0; 2 * self.plan.zero_injection.len()],
            _ => self.rows(subset).iter().map(|&c| self.plan.weight[c]).collect(),
        }
    }

    pub fn eval(&self, state: &StateVector, subset: Subset) -> MeasurementVector {
        let inj = eval_injections(state, &self.ybus);
        if subset == Subset::ZeroInjection {
            let values = self
                .plan
                .zero_injection
                .iter()
                .flat_map(|&b| [inj.p[b], inj.q[b]])
                .collect();
            return MeasurementVector::new(values);
        }
        let values = self
            .rows(subset)
            .into_iter()
            .map(|c| {
                let ch = &self.plan.channels[c];
                match (ch.kind, ch.location) {
                    (ChannelKind::VMag, Location::Bus(b)) => state.v_mag[b],
                    (ChannelKind::VAngle, Location::Bus(b)) => state.v_ang[b],
                    (ChannelKind::PInjection, Location::Bus(b)) => inj.p[b],
                    (ChannelKind::QInjection, Location::Bus(b)) => inj.q[b],
                    (kind, Location::Branch { branch, end }) => {
                        let (p, q) = self.branch_end_power(state, branch, end);
                        if kind == ChannelKind::PFlow {
                            p
                        } else {
                            q
                        }
                    }
                    (kind, loc) => panic!("channel {kind:?} cannot sit at {loc:?}"),
                }
            })
            .collect();
        MeasurementVector::new(values)
    }

    /// Returns `(y_kk, y_km, k, m)` for the measured end of a branch.
    fn end_terms(
        &self,
        branch: usize,
        end: BranchEnd,
    ) -> Option<(num_complex::Complex64, num_complex::Complex64, usize, usize)> {
        let y = self.ybus.branch(branch)?;
        let br = &self.case.branches[branch];
        Some(match end {
            BranchEnd::From => (y.yff, y.yft, br.from_bus, br.to_bus),
            BranchEnd::To => (y.ytt, y.ytf, br.to_bus, br.from_bus),
        })
    }

    fn branch_end_power(&self, state: &StateVector, branch: usize, end: BranchEnd) -> (f64, f64) {
        match self.end_terms(branch, end) {
            Some((ykk, ykm, k, m)) => end_power(
                ykk,
                ykm,
                state.v_mag[k],
                state.v_mag[m],
                state.v_ang[k] - state.v_ang[m],
            ),
            None => (0.0, 0.0),
        }
    }

    /// Analytic Jacobian of `eval(state, subset)` with respect to the free
    /// state variables.
    pub fn jacobian(&self, state: &StateVector, subset: Subset) -> DMatrix<f64> {
        let n = self.n_bus();
        let slack = self.slack();
        let inj = eval_injections(state, &self.ybus);
        let put = |row: &mut [f64], bus: usize, d_ang: f64, d_mag: f64| {
            if let Some(k) = angle_index(bus, slack) {
                row[k] += d_ang;
            }
            row[magnitude_index(bus, n)] += d_mag;
        };
        let injection_row = |row: &mut [f64], bus: usize, reactive: bool| {
            for (j, dpt, dpv, dqt, dqv) in
                injection_derivatives(state, &self.ybus, bus, inj.p[bus], inj.q[bus])
            {
                if reactive {
                    put(row, j, dqt, dqv);
                } else {
                    put(row, j, dpt, dpv);
                }
            }
        };

        let n_free = 2 * n - 1;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        if subset == Subset::ZeroInjection {
            for &b in &self.plan.zero_injection {
                for reactive in [false, true] {
                    let mut row = vec![0.0; n_free];
                    injection_row(&mut row, b, reactive);
                    rows.push(row);
                }
            }
        } else {
            for c in self.rows(subset) {
                let ch = &self.plan.channels[c];
                let mut row = vec![0.0; n_free];
                match (ch.kind, ch.location) {
                    (ChannelKind::VMag, Location::Bus(b)) => put(&mut row, b, 0.0, 1.0),
                    (ChannelKind::VAngle, Location::Bus(b)) => put(&mut row, b, 1.0, 0.0),
                    (ChannelKind::PInjection, Location::Bus(b)) => injection_row(&mut row, b, false),
                    (ChannelKind::QInjection, Location::Bus(b)) => injection_row(&mut row, b, true),
                    (kind, Location::Branch { branch, end }) => {
                        if let Some((ykk, ykm, k, m)) = self.end_terms(branch, end) {
                            let (dp, dq) = end_power_derivatives(
                                ykk,
                                ykm,
                                state.v_mag[k],
                                state.v_mag[m],
                                state.v_ang[k] - state.v_ang[m],
                            );
                            let d = if kind == ChannelKind::PFlow { dp } else { dq };
                            put(&mut row, k, d[0], d[1]);
                            put(&mut row, m, d[2], d[3]);
                        }
                    }
                    (kind, loc) => panic!("channel {kind:?} cannot sit at {loc:?}"),
                }
                rows.push(row);
            }
        }
        let mut h = DMatrix::zeros(rows.len(), n_free);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                h[(i, j)] = *v;
            }
        }
        h
    }

    /// `eval` stacked into a column vector.
    pub fn eval_vector(&self, state: &StateVector, subset: Subset) -> DVector<f64> {
        DVector::from_vec(self.eval(state, subset).values)
    }
}

/// Evaluates the channels of `subset` in plan order.
pub fn eval_measurement_fn(
    state: &StateVector,
    model: &MeasurementModel,
    subset: Subset,
) -> MeasurementVector {
    model.eval(state, subset)
}

pub fn measurement_jacobian(
    state: &StateVector,
    model: &MeasurementModel,
    subset: Subset,
) -> DMatrix<f64> {
    model.jacobian(state, subset)
}

/// Numerical observability of the real-time channel set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observability {
    pub observable: bool,
    pub rank: usize,
    pub n_states: usize,
    /// Ratio of extreme singular values; infinite when rank deficient.
    pub condition: f64,
}

/// Rank and conditioning of the weighted Jacobian of the available channels
/// stacked with the zero-injection rows.
pub fn observability_check(
    model: &MeasurementModel,
    state: &StateVector,
    condition_cap: f64,
) -> Observability {
    let n_states = model.n_states();
    let ha = model.jacobian(state, Subset::Available);
    let wa = model.weights(Subset::Available);
    let hz = model.jacobian(state, Subset::ZeroInjection);
    let m = ha.nrows() + hz.nrows();
    if m < n_states {
        return Observability {
            observable: false,
            rank: m.min(n_states),
            n_states,
            condition: f64::INFINITY,
        };
    }
    let mut h = DMatrix::zeros(m, n_states);
    for i in 0..ha.nrows() {
        h.set_row(i, &(ha.row(i) * wa[i]));
    }
    for i in 0..hz.nrows() {
        h.set_row(ha.nrows() + i, &hz.row(i));
    }
    let sv = h.singular_values();
    let smax = sv.max();
    let tol = smax * (m.max(n_states) as f64) * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let smin = sv.min();
    let condition = if rank < n_states || smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    };
    Observability {
        observable: rank == n_states && condition < condition_cap,
        rank,
        n_states,
        condition,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::test_cases::two_bus;
    use crate::grid::{
        plan_measurements, shipped_case, ChannelSource, MeasurementChannel, RedundancyLevel,
        SHIPPED_CASES,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(n: usize, slack: usize, rng: &mut ChaCha8Rng) -> StateVector {
        let mut s = StateVector::flat(n, slack);
        for i in 0..n {
            s.v_mag[i] = rng.random_range(0.9..1.1);
            if i != slack {
                s.v_ang[i] = rng.random_range(-0.3..0.3);
            }
        }
        s
    }

    fn full_model(name: &str) -> MeasurementModel {
        let case = shipped_case(name).unwrap();
        let plan = MeasurementPlan::full_instrumentation(&case);
        MeasurementModel::new(case, plan).unwrap()
    }

    #[test]
    fn voltage_channels_are_identities() {
        let model = full_model("case33bw");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(33, 0, &mut rng);
        let z = model.eval(&s, Subset::All);
        let h = model.jacobian(&s, Subset::All);
        for (c, ch) in model.plan.channels.iter().enumerate() {
            if let (ChannelKind::VMag, Location::Bus(b)) = (ch.kind, ch.location) {
                assert_eq!(z.values[c], s.v_mag[b]);
                for j in 0..h.ncols() {
                    let expect = if j == magnitude_index(b, 33) { 1.0 } else { 0.0 };
                    assert_eq!(h[(c, j)], expect);
                }
            }
        }
    }

    #[test]
    fn slack_angle_row_is_zero() {
        let case = two_bus(0.2, 0.1);
        let channels = vec![
            MeasurementChannel {
                kind: ChannelKind::VAngle,
                location: Location::Bus(0),
                source: ChannelSource::Pmu,
            },
            MeasurementChannel {
                kind: ChannelKind::VMag,
                location: Location::Bus(0),
                source: ChannelSource::Pmu,
            },
        ];
        let plan = MeasurementPlan::from_channels(&case, channels, &[true, true], None, 0).unwrap();
        let model = MeasurementModel::new(case, plan).unwrap();
        let h = model.jacobian(&StateVector::flat(2, 0), Subset::All);
        assert!(h.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lossless_flat_state_power_channels_vanish() {
        let case = two_bus(0.2, 0.1);
        let plan = MeasurementPlan::full_instrumentation(&case);
        let model = MeasurementModel::new(case, plan).unwrap();
        let z = model.eval(&StateVector::flat(2, 0), Subset::All);
        for (c, ch) in model.plan.channels.iter().enumerate() {
            if !ch.kind.is_voltage() {
                assert!(z.values[c].abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn available_and_delayed_partition_all() {
        for name in SHIPPED_CASES {
            let case = shipped_case(name).unwrap();
            for level in RedundancyLevel::ALL {
                let plan = plan_measurements(&case, level, 4).unwrap();
                let model = MeasurementModel::new(case.clone(), plan).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(9);
                let s = random_state(case.n_bus(), case.slack(), &mut rng);
                let all = model.eval(&s, Subset::All).values;
                let za = model.eval(&s, Subset::Available).values;
                let zd = model.eval(&s, Subset::Delayed).values;
                for (k, &c) in model.plan.available.iter().enumerate() {
                    assert_eq!(all[c].to_bits(), za[k].to_bits());
                }
                for (k, &c) in model.plan.delayed.iter().enumerate() {
                    assert_eq!(all[c].to_bits(), zd[k].to_bits());
                }
                assert_eq!(za.len() + zd.len(), all.len());
            }
        }
    }

    fn max_fd_error(model: &MeasurementModel, s: &StateVector, subset: Subset) -> f64 {
        let h = model.jacobian(s, subset);
        let x = s.to_free();
        let (n, slack) = (s.n_bus(), s.slack);
        let step = 1e-6;
        let mut worst: f64 = 0.0;
        let mut fd = DMatrix::zeros(h.nrows(), h.ncols());
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let zp = model.eval_vector(&StateVector::from_free(&xp, n, slack), subset);
            let zm = model.eval_vector(&StateVector::from_free(&xm, n, slack), subset);
            fd.set_column(j, &((zp - zm) / (2.0 * step)));
        }
        for i in 0..h.nrows() {
            let scale = fd.row(i).amax().max(1.0);
            worst = worst.max((h.row(i) - fd.row(i)).amax() / scale);
        }
        worst
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for name in SHIPPED_CASES {
            let model = full_model(name);
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            for _ in 0..5 {
                let s = random_state(model.n_bus(), model.slack(), &mut rng);
                let e = max_fd_error(&model, &s, Subset::All);
                assert!(e < 1e-5, "{name}: {e}");
            }
        }
    }

    #[test]
    fn zero_injection_jacobian_matches_finite_differences() {
        let case = shipped_case("case39").unwrap();
        let plan = plan_measurements(&case, RedundancyLevel::High, 1).unwrap();
        let model = MeasurementModel::new(case, plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(39, model.slack(), &mut rng);
        assert_eq!(model.eval(&s, Subset::ZeroInjection).len(), 20);
        assert!(max_fd_error(&model, &s, Subset::ZeroInjection) < 1e-5);
    }

    #[test]
    fn full_instrumentation_is_observable() {
        let model = full_model("case33bw");
        let obs = observability_check(&model, &StateVector::flat(33, 0), DEFAULT_CONDITION_CAP);
        assert!(obs.observable, "{obs:?}");
    }

    #[test]
    fn single_voltage_channel_is_unobservable() {
        let case = shipped_case("case33bw").unwrap();
        let channels = vec![MeasurementChannel {
            kind: ChannelKind::VMag,
            location: Location::Bus(0),
            source: ChannelSource::Scada,
        }];
        let plan = MeasurementPlan::from_channels(&case, channels, &[true], None, 0).unwrap();
        let model = MeasurementModel::new(case, plan).unwrap();
        let obs = observability_check(&model, &StateVector::flat(33, 0), DEFAULT_CONDITION_CAP);
        assert!(!obs.observable);
        assert_eq!(obs.rank, 1);
    }
}
