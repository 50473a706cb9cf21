use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::injections::{eval_injections, injection_derivatives};
use super::StateVector;
use crate::grid::{AdmittanceMatrix, BusKind, NetworkCase};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    /// Largest absolute P/Q mismatch accepted, p.u.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-8,
            max_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub state: StateVector,
    pub iterations: usize,
    pub mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (mismatch {mismatch:.3e})")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular power-flow Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("injection vector has {got} entries, case has {expected} buses")]
    Dimension { expected: usize, got: usize },
}

/// Full Newton-Raphson in polar coordinates.
///
/// `injections` holds the scheduled net injection `(P, Q)` of every bus; the
/// slack entry and the Q of PV buses are ignored. The slack voltage and the
/// PV magnitudes are taken from `start` and held fixed. Generator reactive
/// limits are not enforced.
pub fn solve_powerflow(
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
    injections: &[(f64, f64)],
    start: &StateVector,
    options: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = case.n_bus();
    if injections.len() != n {
        return Err(PowerFlowError::Dimension {
            expected: n,
            got: injections.len(),
        });
    }
    let slack = case.slack();
    let pvpq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
    let mut ang_col = vec![usize::MAX; n];
    let mut mag_col = vec![usize::MAX; n];
    for (k, &i) in pvpq.iter().enumerate() {
        ang_col[i] = k;
    }
    for (k, &i) in pq.iter().enumerate() {
        mag_col[i] = pvpq.len() + k;
    }
    let dim = pvpq.len() + pq.len();

    let mut state = start.clone();
    let mut iterations = 0;
    loop {
        let inj = eval_injections(&state, ybus);
        let mut f = DVector::zeros(dim);
        for (k, &i) in pvpq.iter().enumerate() {
            f[k] = inj.p[i] - injections[i].0;
        }
        for (k, &i) in pq.iter().enumerate() {
            f[pvpq.len() + k] = inj.q[i] - injections[i].1;
        }
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch,
            });
        }
        if mismatch < options.tolerance {
            return Ok(PowerFlowSolution {
                state,
                iterations,
                mismatch,
            });
        }
        if iterations == options.max_iterations {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch,
            });
        }

        let mut jac = DMatrix::zeros(dim, dim);
        for &i in &pvpq {
            let p_row = ang_col[i];
            let q_row = mag_col[i];
            for (j, dpt, dpv, dqt, dqv) in injection_derivatives(&state, ybus, i, inj.p[i], inj.q[i]) {
                if ang_col[j] != usize::MAX {
                    jac[(p_row, ang_col[j])] = dpt;
                    if q_row != usize::MAX {
                        jac[(q_row, ang_col[j])] = dqt;
                    }
                }
                if mag_col[j] != usize::MAX {
                    jac[(p_row, mag_col[j])] = dpv;
                    if q_row != usize::MAX {
                        jac[(q_row, mag_col[j])] = dqv;
                    }
                }
            }
        }
        iterations += 1;
        let dx = jac
            .lu()
            .solve(&(-f))
            .ok_or(PowerFlowError::SingularJacobian(iterations))?;
        for &i in &pvpq {
            state.v_ang[i] += dx[ang_col[i]];
        }
        for &i in &pq {
            state.v_mag[i] += dx[mag_col[i]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::test_cases::{three_bus_chain, two_bus};
    use crate::grid::{build_admittance, shipped_case, SHIPPED_CASES};

    #[test]
    fn unloaded_network_stays_flat() {
        let case = two_bus(0.0, 0.0);
        let y = build_admittance(&case).unwrap();
        let sol = solve_powerflow(
            &case,
            &y,
            &case.scheduled_injections(&case.base_loads()),
            &StateVector::flat(2, 0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        assert!(sol.iterations <= 1);
        assert_eq!(sol.state, StateVector::flat(2, 0));
    }

    #[test]
    fn two_bus_recovers_known_angle() {
        // Injections produced by theta2 = -0.1 with unit magnitudes; the line
        // absorbs reactive power, so bus 2 injects Q.
        let p2 = 10.0 * 0.1f64.sin();
        let q2 = 10.0 * (1.0 - 0.1f64.cos());
        let case = two_bus(p2, -q2);
        let y = build_admittance(&case).unwrap();
        let sol = solve_powerflow(
            &case,
            &y,
            &case.scheduled_injections(&case.base_loads()),
            &StateVector::flat(2, 0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        assert!((sol.state.v_ang[1] + 0.1).abs() < 1e-9);
        assert!((sol.state.v_mag[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reproduces_scheduled_injections() {
        for name in SHIPPED_CASES {
            let case = shipped_case(name).unwrap();
            let y = build_admittance(&case).unwrap();
            let sched = case.scheduled_injections(&case.base_loads());
            let sol = solve_powerflow(
                &case,
                &y,
                &sched,
                &StateVector::initial(&case),
                &PowerFlowOptions::default(),
            )
            .unwrap();
            let inj = eval_injections(&sol.state, &y);
            for i in 0..case.n_bus() {
                if i == case.slack() {
                    continue;
                }
                assert!((inj.p[i] - sched[i].0).abs() < 1e-8, "{name} P{i}");
                if case.buses[i].kind == BusKind::Pq {
                    assert!((inj.q[i] - sched[i].1).abs() < 1e-8, "{name} Q{i}");
                }
            }
            assert!(sol.iterations < 10, "{name}: {} iterations", sol.iterations);
        }
    }

    #[test]
    fn infeasible_load_does_not_converge() {
        let case = two_bus(50.0, 20.0);
        let y = build_admittance(&case).unwrap();
        let r = solve_powerflow(
            &case,
            &y,
            &case.scheduled_injections(&case.base_loads()),
            &StateVector::flat(2, 0),
            &PowerFlowOptions::default(),
        );
        assert!(matches!(
            r,
            Err(PowerFlowError::NonConvergence { .. }) | Err(PowerFlowError::SingularJacobian(_))
        ));
    }

    #[test]
    fn three_bus_chain_converges() {
        let case = three_bus_chain();
        let y = build_admittance(&case).unwrap();
        let sol = solve_powerflow(
            &case,
            &y,
            &case.scheduled_injections(&case.base_loads()),
            &StateVector::flat(3, 0),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        assert!(sol.mismatch < 1e-8);
    }
}
