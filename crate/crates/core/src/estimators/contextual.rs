use nalgebra::DVector;
use rayon::prelude::*;

use super::{
    check_k, knn_select, vanilla_estimate, EstimateRecord, EstimatorError, GridSplitModel,
    HistoryWindow, Method, NeighborSet, SolverFlags,
};
use crate::optim::{solve_robust_nlp, RobustData, RobustNlpState, RobustOptions, WlsReport};
use crate::powerflow::{MeasurementModel, MeasurementVector, StateVector, Subset};

/// Geometric grid of ambiguity radii between the mean K-NN distance and the
/// largest distance in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoGrid {
    pub rho_min: f64,
    pub rho_max: f64,
    pub values: Vec<f64>,
    /// Set when every radius collapses to one value.
    pub degenerate: bool,
}

impl RhoGrid {
    pub fn from_distances(
        distances: &[f64],
        k: usize,
        cardinality: usize,
    ) -> Result<Self, EstimatorError> {
        if cardinality == 0 {
            return Err(EstimatorError::EmptyGrid);
        }
        if k == 0 {
            return Err(EstimatorError::ZeroK);
        }
        if k > distances.len() {
            return Err(EstimatorError::KTooLarge {
                k,
                window: distances.len(),
            });
        }
        let mut sorted = distances.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rho_min = sorted[..k].iter().sum::<f64>() / k as f64;
        let rho_max = sorted[sorted.len() - 1];
        if rho_max <= rho_min * (1.0 + 1e-12) {
            return Ok(RhoGrid {
                rho_min,
                rho_max: rho_min,
                values: vec![rho_min],
                degenerate: true,
            });
        }
        if cardinality == 1 {
            return Ok(RhoGrid {
                rho_min,
                rho_max,
                values: vec![rho_min],
                degenerate: false,
            });
        }
        // A zero lower end cannot seed a geometric sequence; space the
        // interior points from a tiny positive radius instead.
        let lower = if rho_min > 0.0 { rho_min } else { rho_max * 1e-12 };
        let ratio = rho_max / lower;
        let steps = (cardinality - 1) as f64;
        let mut values: Vec<f64> = (0..cardinality)
            .map(|i| lower * ratio.powf(i as f64 / steps))
            .collect();
        values[0] = rho_min;
        values[cardinality - 1] = rho_max;
        Ok(RhoGrid {
            rho_min,
            rho_max,
            values,
            degenerate: false,
        })
    }
}

pub fn compute_rho_grid(
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    k: usize,
    cardinality: usize,
    weights: &[f64],
) -> Result<RhoGrid, EstimatorError> {
    check_k(window, k)?;
    RhoGrid::from_distances(&window.distances(z_a_t, weights), k, cardinality)
}

pub fn robust_data(
    model: &MeasurementModel,
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    k: usize,
) -> RobustData {
    RobustData {
        z_a: DVector::from_column_slice(&z_a_t.values),
        z_d: window
            .samples
            .iter()
            .map(|s| DVector::from_column_slice(&s.z_d.values))
            .collect(),
        distances: window.distances(z_a_t, &model.weights(Subset::Available)),
        k,
    }
}

/// Robust estimate for one radius, warm-started at `x_warm`.
pub fn robust_estimate(
    model: &MeasurementModel,
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    k: usize,
    x_warm: &StateVector,
    rho: f64,
) -> Result<(StateVector, RobustNlpState), EstimatorError> {
    check_k(window, k)?;
    let data = robust_data(model, window, z_a_t, k);
    let split = GridSplitModel::new(model);
    let state = solve_robust_nlp(&split, &data, &x_warm.to_free(), rho, &RobustOptions::default())?;
    let x = StateVector::from_free(&state.x, model.n_bus(), model.slack());
    Ok((x, state))
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub rho: f64,
    pub result: Result<(StateVector, RobustNlpState), String>,
}

impl Candidate {
    pub fn usable(&self) -> bool {
        matches!(&self.result, Ok((_, s)) if s.converged)
    }

    pub fn state(&self) -> Option<&StateVector> {
        self.result.as_ref().ok().map(|(x, _)| x)
    }
}

/// Vanilla estimate and one robust estimate per grid radius.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub vanilla: StateVector,
    pub vanilla_report: WlsReport,
    pub neighbors: NeighborSet,
    pub grid: RhoGrid,
    pub candidates: Vec<Candidate>,
}

/// Solves the robust problem at every radius of the grid. Radii are solved
/// in parallel; the output order follows the grid.
pub fn robust_candidates(
    model: &MeasurementModel,
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    k: usize,
    cardinality: usize,
) -> Result<CandidateSet, EstimatorError> {
    let (vanilla, vanilla_report) = vanilla_estimate(model, window, z_a_t, k)?;
    let weights = model.weights(Subset::Available);
    let neighbors = knn_select(window, z_a_t, k, &weights)?;
    let data = robust_data(model, window, z_a_t, k);
    let grid = RhoGrid::from_distances(&data.distances, k, cardinality)?;
    let split = GridSplitModel::new(model);
    let x_warm = vanilla.to_free();
    let options = RobustOptions::default();
    let candidates = grid
        .values
        .par_iter()
        .map(|&rho| Candidate {
            rho,
            result: solve_robust_nlp(&split, &data, &x_warm, rho, &options)
                .map(|s| {
                    (
                        StateVector::from_free(&s.x, model.n_bus(), model.slack()),
                        s,
                    )
                })
                .map_err(|e| e.to_string()),
        })
        .collect();
    Ok(CandidateSet {
        vanilla,
        vanilla_report,
        neighbors,
        grid,
        candidates,
    })
}

/// How a candidate radius is chosen.
#[derive(Debug, Clone, Copy)]
pub enum SelectionRule<'a> {
    /// Mean squared distance to the retrospective states of the K nearest
    /// samples; uses only information available in real time.
    NeighborAverage(&'a HistoryWindow),
    /// Squared distance to the test snapshot's own retrospective state.
    Oracle(&'a StateVector),
}

impl SelectionRule<'_> {
    fn score(&self, x: &StateVector, neighbors: &NeighborSet) -> f64 {
        match self {
            SelectionRule::NeighborAverage(window) => {
                let sum: f64 = neighbors
                    .positions
                    .iter()
                    .map(|&p| x.squared_distance(&window.samples[p].x_retro))
                    .sum();
                sum / neighbors.positions.len() as f64
            }
            SelectionRule::Oracle(target) => x.squared_distance(target),
        }
    }
}

/// Picks the candidate with the lowest score; ties go to the smaller radius.
/// Non-converged candidates are skipped unless none converged.
pub fn select_candidate(
    set: &CandidateSet,
    rule: SelectionRule<'_>,
    method: Method,
) -> Result<EstimateRecord, EstimatorError> {
    let scores: Vec<Option<f64>> = set
        .candidates
        .iter()
        .map(|c| c.state().map(|x| rule.score(x, &set.neighbors)))
        .collect();
    let argmin = |only_usable: bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (c, score) in scores.iter().enumerate() {
            let Some(v) = score else { continue };
            if only_usable && !set.candidates[c].usable() {
                continue;
            }
            if best.is_none_or(|b| *v < scores[b].unwrap()) {
                best = Some(c);
            }
        }
        best
    };
    let (chosen, converged) = match argmin(true) {
        Some(c) => (c, true),
        None => (argmin(false).ok_or(EstimatorError::NoConvergedCandidate)?, false),
    };
    let max_lp_gap = set
        .candidates
        .iter()
        .filter_map(|c| c.result.as_ref().ok().map(|(_, s)| s.max_lp_gap))
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));
    let cand = &set.candidates[chosen];
    Ok(EstimateRecord {
        method,
        x_hat: cand.state().unwrap().clone(),
        rho_selected: Some(cand.rho),
        validation_errors: Some(scores),
        implementable: method.implementable(),
        flags: SolverFlags {
            converged,
            failed_candidates: set.candidates.iter().filter(|c| !c.usable()).count(),
            max_lp_gap,
            degenerate_grid: set.grid.degenerate,
        },
    })
}

/// Robust contextual estimate with the radius tuned on the neighbors'
/// retrospective states.
pub fn rcse_estimate(
    model: &MeasurementModel,
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    k: usize,
    cardinality: usize,
) -> Result<EstimateRecord, EstimatorError> {
    let set = robust_candidates(model, window, z_a_t, k, cardinality)?;
    select_candidate(&set, SelectionRule::NeighborAverage(window), Method::Rcse)
}

/// Benchmark-only variant of [`rcse_estimate`] that tunes the radius against
/// the test snapshot's own retrospective state.
pub fn anticipative_estimate(
    model: &MeasurementModel,
    window: &HistoryWindow,
    z_a_t: &MeasurementVector,
    k: usize,
    cardinality: usize,
    x_retro_t: &StateVector,
) -> Result<EstimateRecord, EstimatorError> {
    let set = robust_candidates(model, window, z_a_t, k, cardinality)?;
    select_candidate(&set, SelectionRule::Oracle(x_retro_t), Method::Anticipative)
}
