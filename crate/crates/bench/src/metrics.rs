use rcse_core::grid::{AdmittanceMatrix, NetworkCase};
use rcse_core::powerflow::{eval_flows, eval_injections, StateVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty test set")]
    Empty,
    #[error("{estimates} estimates for {truths} truths")]
    Length { estimates: usize, truths: usize },
    #[error("instance {0}: state dimensions differ")]
    Dimension(usize),
}

fn check(estimates: usize, truths: usize) -> Result<(), MetricError> {
    if estimates != truths {
        return Err(MetricError::Length { estimates, truths });
    }
    if estimates == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn rmse_of(errors: impl Iterator<Item = f64>, n: usize) -> f64 {
    (errors.sum::<f64>() / n as f64).sqrt()
}

/// `sqrt((1/|T|) Σ ‖x̂_t − x̃_t‖²)` over full states (magnitudes and angles).
pub fn rmse_state(estimates: &[StateVector], truths: &[StateVector]) -> Result<f64, MetricError> {
    check(estimates.len(), truths.len())?;
    for (t, (e, x)) in estimates.iter().zip(truths).enumerate() {
        if e.n_bus() != x.n_bus() {
            return Err(MetricError::Dimension(t));
        }
    }
    Ok(rmse_of(
        estimates.iter().zip(truths).map(|(e, x)| e.squared_distance(x)),
        estimates.len(),
    ))
}

/// Apparent power of every bus injection followed by both ends of every
/// in-service branch, per unit.
pub fn apparent_power_profile(
    state: &StateVector,
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
) -> Vec<f64> {
    let inj = eval_injections(state, ybus);
    let mut out: Vec<f64> = inj.p.iter().zip(&inj.q).map(|(p, q)| p.hypot(*q)).collect();
    for (br, f) in case.branches.iter().zip(eval_flows(state, case)) {
        if br.in_service {
            out.push(f.p_from.hypot(f.q_from));
            out.push(f.p_to.hypot(f.q_to));
        }
    }
    out
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Squared error of the derived apparent powers of one estimate.
pub fn apparent_power_sq_error(
    estimate: &StateVector,
    truth: &StateVector,
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
) -> f64 {
    sq_diff(
        &apparent_power_profile(estimate, case, ybus),
        &apparent_power_profile(truth, case, ybus),
    )
}

/// The state RMSE formula applied to apparent power injections and flows.
pub fn rmse_apparent_power(
    estimates: &[StateVector],
    truths: &[StateVector],
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
) -> Result<f64, MetricError> {
    check(estimates.len(), truths.len())?;
    for (t, (e, x)) in estimates.iter().zip(truths).enumerate() {
        if e.n_bus() != case.n_bus() || x.n_bus() != case.n_bus() {
            return Err(MetricError::Dimension(t));
        }
    }
    Ok(rmse_of(
        estimates
            .iter()
            .zip(truths)
            .map(|(e, x)| apparent_power_sq_error(e, x, case, ybus)),
        estimates.len(),
    ))
}
