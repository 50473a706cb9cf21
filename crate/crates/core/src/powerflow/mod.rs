//! AC network equations: state representation, bus injections, branch
//! flows, Newton-Raphson power flow and the measurement functions used by
//! the estimators.

mod injections;
mod measure;
mod newton;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use injections::{eval_flows, eval_injections, BranchFlow, Injections};
pub use measure::{
    eval_measurement_fn, measurement_jacobian, observability_check, MeasurementModel,
    MeasurementVector, Observability, Subset, DEFAULT_CONDITION_CAP,
};
pub use newton::{solve_powerflow, PowerFlowError, PowerFlowOptions, PowerFlowSolution};

use crate::grid::{BusKind, NetworkCase};

/// Bus voltage magnitudes (p.u.) and angles (rad). The slack angle is the
/// reference and stays at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub slack: usize,
}

impl StateVector {
    pub fn flat(n_bus: usize, slack: usize) -> Self {
        StateVector {
            v_mag: vec![1.0; n_bus],
            v_ang: vec![0.0; n_bus],
            slack,
        }
    }

    /// Flat angles, unit magnitudes except generator buses, which start at
    /// their voltage set point.
    pub fn initial(case: &NetworkCase) -> Self {
        let mut state = Self::flat(case.n_bus(), case.slack());
        for g in &case.generators {
            if case.buses[g.bus].kind != BusKind::Pq {
                state.v_mag[g.bus] = g.v_set;
            }
        }
        state
    }

    pub fn n_bus(&self) -> usize {
        self.v_mag.len()
    }

    /// Number of free variables, `2 n_bus - 1`.
    pub fn n_free(&self) -> usize {
        2 * self.n_bus() - 1
    }

    /// Free-variable vector: angles of all non-slack buses in bus order,
    /// then all magnitudes.
    pub fn to_free(&self) -> DVector<f64> {
        let n = self.n_bus();
        let mut x = DVector::zeros(2 * n - 1);
        for i in 0..n {
            if let Some(k) = angle_index(i, self.slack) {
                x[k] = self.v_ang[i];
            }
            x[n - 1 + i] = self.v_mag[i];
        }
        x
    }

    pub fn from_free(x: &DVector<f64>, n_bus: usize, slack: usize) -> Self {
        assert_eq!(x.len(), 2 * n_bus - 1, "free vector dimension");
        let mut state = Self::flat(n_bus, slack);
        for i in 0..n_bus {
            if let Some(k) = angle_index(i, slack) {
                state.v_ang[i] = x[k];
            }
            state.v_mag[i] = x[n_bus - 1 + i];
        }
        state
    }

    /// All angles followed by all magnitudes, the vector used by the error
    /// metrics.
    pub fn to_full(&self) -> Vec<f64> {
        self.v_ang.iter().chain(&self.v_mag).copied().collect()
    }

    /// Squared Euclidean distance over angles and magnitudes.
    pub fn squared_distance(&self, other: &StateVector) -> f64 {
        let da: f64 = self
            .v_ang
            .iter()
            .zip(&other.v_ang)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let dm: f64 = self
            .v_mag
            .iter()
            .zip(&other.v_mag)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        da + dm
    }

    pub fn is_valid(&self) -> bool {
        self.v_mag.len() == self.v_ang.len()
            && self.slack < self.v_mag.len()
            && self.v_ang[self.slack] == 0.0
            && self.v_mag.iter().all(|v| v.is_finite() && *v > 0.0)
            && self.v_ang.iter().all(|a| a.is_finite())
    }
}

/// Position of bus `bus`'s angle in the free-variable vector.
pub fn angle_index(bus: usize, slack: usize) -> Option<usize> {
    match bus.cmp(&slack) {
        std::cmp::Ordering::Less => Some(bus),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(bus - 1),
    }
}

/// Position of bus `bus`'s magnitude in the free-variable vector.
pub fn magnitude_index(bus: usize, n_bus: usize) -> usize {
    n_bus - 1 + bus
}
