use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Nonlinear least-squares model `min ½‖r(x)‖²` subject to `c(x) = 0`, where
/// `r` already carries the measurement weights.
pub trait WlsModel {
    fn dim(&self) -> usize;
    fn residual(&self, x: &DVector<f64>) -> DVector<f64>;
    fn residual_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn equality(&self, x: &DVector<f64>) -> DVector<f64>;
    fn equality_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsOptions {
    /// Stop once every step component is below this.
    pub step_tol: f64,
    /// Stop once the Lagrangian gradient norm is below this.
    pub gradient_tol: f64,
    /// Required bound on `‖c(x)‖∞` at a converged point.
    pub constraint_tol: f64,
    pub max_iterations: usize,
}

impl Default for WlsOptions {
    fn default() -> Self {
        WlsOptions {
            step_tol: 1e-8,
            gradient_tol: 1e-8,
            constraint_tol: 1e-8,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsReport {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖r(x)‖²`
    pub objective: f64,
    /// `‖c(x)‖∞`
    pub constraint_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WlsError {
    #[error("singular KKT system at iteration {0}")]
    SingularKkt(usize),
    #[error("non-finite residual at the starting point")]
    BadStart,
}

fn merit(r: &DVector<f64>, c: &DVector<f64>, penalty: f64) -> f64 {
    0.5 * r.norm_squared() + penalty * c.lp_norm(1)
}

/// Solves the KKT system `[JᵀJ Cᵀ; C 0][Δ; ν] = [g; h]` for every column of
/// `(g, h)`.
pub(crate) fn kkt_solve(
    j: &DMatrix<f64>,
    c: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = j.ncols();
    let p = c.nrows();
    let mut k = DMatrix::zeros(n + p, n + p);
    k.view_mut((0, 0), (n, n)).copy_from(&(j.transpose() * j));
    if p > 0 {
        k.view_mut((0, n), (n, p)).copy_from(&c.transpose());
        k.view_mut((n, 0), (p, n)).copy_from(c);
    }
    let mut rhs = DMatrix::zeros(n + p, g.ncols());
    rhs.view_mut((0, 0), (n, g.ncols())).copy_from(g);
    if p > 0 {
        rhs.view_mut((n, 0), (p, g.ncols())).copy_from(h);
    }
    // Equilibrate rows and columns; JᵀJ and C can differ by many orders of
    // magnitude.
    let d: Vec<f64> = (0..n + p)
        .map(|i| {
            let m = k.row(i).amax();
            if m > 0.0 {
                1.0 / m.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    for i in 0..n + p {
        for jj in 0..n + p {
            k[(i, jj)] *= d[i] * d[jj];
        }
        for jj in 0..rhs.ncols() {
            rhs[(i, jj)] *= d[i];
        }
    }
    let lu = k.lu();
    let mut sol = lu.solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for i in 0..n + p {
        for jj in 0..sol.ncols() {
            sol[(i, jj)] *= d[i];
        }
    }
    let step = sol.rows(0, n).into_owned();
    let mult = sol.rows(n, p).into_owned();
    Some((step, mult))
}

/// Equality-constrained Gauss-Newton. Each iteration solves the augmented
/// system `[JᵀJ Cᵀ; C 0][Δx; ν] = [−Jᵀr; −c]` and backtracks by halving on
/// the exact penalty `½‖r‖² + μ‖c‖₁`.
///
/// `iterations` counts accepted steps. A run that hits the iteration cap
/// returns the last iterate with `converged = false`.
pub fn solve_eq_wls(
    model: &impl WlsModel,
    x0: &DVector<f64>,
    options: &WlsOptions,
) -> Result<WlsReport, WlsError> {
    let mut x = x0.clone();
    let mut r = model.residual(&x);
    let mut c = model.equality(&x);
    if r.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(WlsError::BadStart);
    }
    let mut penalty: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    for round in 0..=options.max_iterations {
        let jr = model.residual_jacobian(&x);
        let jc = model.equality_jacobian(&x);
        let g = -(jr.transpose() * &r);
        let (dx, nu) = kkt_solve(
            &jr,
            &jc,
            &DMatrix::from_column_slice(g.len(), 1, g.as_slice()),
            &DMatrix::from_column_slice(c.len(), 1, (-&c).as_slice()),
        )
        .ok_or(WlsError::SingularKkt(round))?;
        let dx = dx.column(0).into_owned();
        let nu = nu.column(0).into_owned();

        let grad = jr.transpose() * &r + jc.transpose() * &nu;
        let feasible = c.is_empty() || c.amax() < options.constraint_tol;
        if feasible && (dx.amax() < options.step_tol || grad.amax() < options.gradient_tol) {
            converged = true;
            break;
        }
        if round == options.max_iterations {
            break;
        }

        if !nu.is_empty() {
            penalty = penalty.max(2.0 * nu.amax() + 1.0);
        }
        let phi0 = merit(&r, &c, penalty);
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut stalled = false;
        for _ in 0..30 {
            let xn = &x + alpha * &dx;
            let rn = model.residual(&xn);
            let cn = model.equality(&xn);
            let phi = merit(&rn, &cn, penalty);
            if rn.iter().chain(cn.iter()).all(|v| v.is_finite()) && phi <= phi0 {
                x = xn;
                r = rn;
                c = cn;
                accepted = true;
                iterations += 1;
                stalled = phi0 - phi <= 8.0 * f64::EPSILON * phi0;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || stalled {
            // No decrease along the Gauss-Newton direction: stationary to
            // working precision if the step is already tiny.
            let feasible = c.is_empty() || c.amax() < options.constraint_tol;
            converged = feasible && dx.amax() < 1e-6;
            if !accepted || converged {
                break;
            }
        }
    }
    Ok(WlsReport {
        objective: r.norm_squared(),
        constraint_violation: if c.is_empty() { 0.0 } else { c.amax() },
        x,
        iterations,
        converged,
    })
}
