//! State estimators over a window of historical snapshots: retrospective
//! WLS, nearest-neighbor (vanilla) estimation, the distributionally robust
//! estimator with its radius tuning, and the persistent and anticipative
//! baselines.

mod contextual;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{solve_pseudo_wls, RobustError, SplitModel, WlsError, WlsOptions, WlsReport};
use crate::powerflow::{MeasurementModel, MeasurementVector, StateVector, Subset};

pub use contextual::{
    anticipative_estimate, compute_rho_grid, rcse_estimate, robust_candidates, robust_data,
    robust_estimate,
    select_candidate, Candidate, CandidateSet, RhoGrid, SelectionRule,
};

/// Number of radii in the tuning grid used by the benchmarks.
pub const DEFAULT_GRID_CARDINALITY: usize = 20;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("history window is empty")]
    EmptyWindow,
    #[error("K = {k} exceeds the window size {window}")]
    KTooLarge { k: usize, window: usize },
    #[error("K must be positive")]
    ZeroK,
    #[error("grid cardinality must be at least 1")]
    EmptyGrid,
    #[error(transparent)]
    Wls(#[from] WlsError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error("no robust candidate converged")]
    NoConvergedCandidate,
}

/// One past snapshot with its retrospective (fully observed) estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySample {
    pub sample_id: usize,
    pub z_a: MeasurementVector,
    pub z_d: MeasurementVector,
    pub x_retro: StateVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub samples: Vec<HistorySample>,
}

impl HistoryWindow {
    pub fn new(samples: Vec<HistorySample>) -> Self {
        HistoryWindow { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `‖W_a(z_a_t − z_a_s)‖²` for every sample.
    pub fn distances(&self, z_a_t: &MeasurementVector, weights: &[f64]) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| z_a_t.weighted_sq_distance(&s.z_a, weights))
            .collect()
    }
}

/// The K nearest samples in ascending distance.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub sample_ids: Vec<usize>,
    /// Positions of the neighbors inside the window.
    pub positions: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Retrospective,
    Vanilla,
    Rcse,
    Persistent,
    Anticipative,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Retrospective,
        Method::Vanilla,
        Method::Rcse,
        Method::Persistent,
        Method::Anticipative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Retrospective => "retrospective",
            Method::Vanilla => "vanilla",
            Method::Rcse => "rcse",
            Method::Persistent => "persistent",
            Method::Anticipative => "anticipative",
        }
    }

    /// Whether the method only uses information available in real time.
    pub fn implementable(self) -> bool {
        !matches!(self, Method::Retrospective | Method::Anticipative)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverFlags {
    pub converged: bool,
    /// Robust candidates excluded from the selection.
    pub failed_candidates: usize,
    /// Largest relative primal-dual gap over the inner LPs.
    pub max_lp_gap: Option<f64>,
    pub degenerate_grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub method: Method,
    pub x_hat: StateVector,
    pub rho_selected: Option<f64>,
    pub validation_errors: Option<Vec<Option<f64>>>,
    /// False for the oracle baselines that need data unavailable in real time.
    pub implementable: bool,
    pub flags: SolverFlags,
}

impl EstimateRecord {
    pub fn simple(method: Method, x_hat: StateVector, converged: bool) -> Self {
        EstimateRecord {
            method,
            x_hat,
            rho_selected: None,
            validation_errors: None,
            implementable: method.implementable(),
            flags: SolverFlags {
                converged,
                ..SolverFlags::default()
            },
        }
    }
}

/// Adapter exposing a [`MeasurementModel`] to the generic solvers.
pub struct GridSplitModel<'a> {
    pub model: &'a MeasurementModel,
    w_a: Vec<f64>,
    w_d: Vec<f64>,
}

impl<'a> GridSplitModel<'a> {
    pub fn new(model: &'a MeasurementModel) -> Self {
        GridSplitModel {
            w_a: model.weights(Subset::Available),
            w_d: model.weights(Subset::Delayed),
            model,
        }
    }

    fn state(&self, x: &DVector<f64>) -> StateVector {
        StateVector::from_free(x, self.model.n_bus(), self.model.slack())
    }
}

impl SplitModel for GridSplitModel<'_> {
    fn dim(&self) -> usize {
        self.model.n_states()
    }
    fn h_available(&self, x: &DVector<f64>) -> DVector<f64> {
        self.model.eval_vector(&self.state(x), Subset::Available)
    }
    fn jac_available(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.model.jacobian(&self.state(x), Subset::Available)
    }
    fn h_delayed(&self, x: &DVector<f64>) -> DVector<f64> {
        self.model.eval_vector(&self.state(x), Subset::Delayed)
    }
    fn jac_delayed(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.model.jacobian(&self.state(x), Subset::Delayed)
    }
    fn equality(&self, x: &DVector<f64>) -> DVector<f64> {
        self.model.eval_vector(&self.state(x), Subset::ZeroInjection)
    }
    fn equality_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.model.jacobian(&self.state(x), Subset::ZeroInjection)
    }
    fn weights_available(&self) -> &[f64] {
        &self.w_a
    }
    fn weights_delayed(&self) -> &[f64] {
        &self.w_d
    }
}

/// Flat start: unit magnitudes, zero angles.
pub fn flat_start(model: &MeasurementModel) -> DVector<f64> {
    StateVector::flat(model.n_bus(), model.slack()).to_free()
}

fn to_state(model: &MeasurementModel, rep: &WlsReport) -> StateVector {
    StateVector::from_free(&rep.x, model.n_bus(), model.slack())
}

/// Retrospective estimate from the complete measurement set, flat start.
pub fn wls_estimate(
    model: &MeasurementModel,
    z_a: &MeasurementVector,
    z_d: &MeasurementVector,
) -> Result<(StateVector, WlsReport), EstimatorError> {
    let split = GridSplitModel::new(model);
    let rep = solve_pseudo_wls(
        &split,
        &DVector::from_column_slice(&z_a.values),
        &DVector::from_column_slice(&z_d.values),
        &flat_start(model),
        &WlsOptions::default(),
    )?;
    Ok((to_state(model, &rep), rep))
}

fn check_k(window: &HistoryWindow, k: usize) -> Result<(), EstimatorError> {
    if window.is_empty() {
        return Err(EstimatorError::EmptyWindow);
    }
    if k == 0 {
        return Err(EstimatorError::ZeroK);
    }
    if k > window.len() {
        return Err(EstimatorError::KTooLarge {
            k,
            window: window.len(),
        });
    }
    Ok(())
}

/// The `k` samples closest to `z_a_t`; ties go to the lower sample id.
pub fn knn_select(
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    k: usize,
    weights: &[f64],
) -> Result<NeighborSet, EstimatorError> {
    check_k(window, k)?;
    let d = window.distances(z_a_t, weights);
    let mut order: Vec<usize> = (0..window.len()).collect();
    order.sort_by(|&a, &b| {
        d[a].total_cmp(&d[b])
            .then(window.samples[a].sample_id.cmp(&window.samples[b].sample_id))
    });
    order.truncate(k);
    Ok(NeighborSet {
        sample_ids: order.iter().map(|&i| window.samples[i].sample_id).collect(),
        distances: order.iter().map(|&i| d[i]).collect(),
        positions: order,
    })
}

/// Nominal contextual estimate: WLS with the delayed channels replaced by
/// the average of the K nearest samples' delayed measurements. Averaging is
/// exact: `(1/K)Σ‖z_s − h‖² = ‖z̄ − h‖² + const`.
pub fn vanilla_estimate(
    model: &MeasurementModel,
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    k: usize,
) -> Result<(StateVector, WlsReport), EstimatorError> {
    let nn = knn_select(window, z_a_t, k, &model.weights(Subset::Available))?;
    let md = window.samples[0].z_d.len();
    let mut z_bar = DVector::zeros(md);
    for &p in &nn.positions {
        z_bar += DVector::from_column_slice(&window.samples[p].z_d.values);
    }
    z_bar /= k as f64;
    let split = GridSplitModel::new(model);
    let rep = solve_pseudo_wls(
        &split,
        &DVector::from_column_slice(&z_a_t.values),
        &z_bar,
        &flat_start(model),
        &WlsOptions::default(),
    )?;
    Ok((to_state(model, &rep), rep))
}

/// Retrospective state of the single nearest sample.
pub fn persistent_estimate(
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    weights: &[f64],
) -> Result<StateVector, EstimatorError> {
    let nn = knn_select(window, z_a_t, 1, weights)?;
    Ok(window.samples[nn.positions[0]].x_retro.clone())
}

#[cfg(test)]
pub(crate) mod test_support;

#[cfg(test)]
mod tests;
