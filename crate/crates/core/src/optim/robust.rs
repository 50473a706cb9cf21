use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::lp::{solve_small_lp, DenseLp, LpStatus};
use super::qp::{solve_dense_qp, DenseQp};
use super::wls::{kkt_solve, solve_eq_wls, WlsError, WlsModel, WlsOptions, WlsReport};

/// Measurement model split into real-time (`a`) and delayed (`d`) channels,
/// plus the exact equality constraints, over a free-variable vector.
pub trait SplitModel: Sync {
    fn dim(&self) -> usize;
    fn h_available(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jac_available(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn h_delayed(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jac_delayed(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn equality(&self, x: &DVector<f64>) -> DVector<f64>;
    fn equality_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn weights_available(&self) -> &[f64];
    fn weights_delayed(&self) -> &[f64];
}

/// WLS over both channel sets with a single delayed vector, typically a
/// weighted average of historical delayed measurements.
struct PseudoWls<'a, M: SplitModel> {
    model: &'a M,
    z_a: &'a DVector<f64>,
    z_d: DVector<f64>,
}

impl<M: SplitModel> WlsModel for PseudoWls<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let ra = (self.model.h_available(x) - self.z_a)
            .component_mul(&DVector::from_column_slice(self.model.weights_available()));
        let rd = (self.model.h_delayed(x) - &self.z_d)
            .component_mul(&DVector::from_column_slice(self.model.weights_delayed()));
        stack(&ra, &rd)
    }

    fn residual_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        weighted_jacobian(self.model, x)
    }

    fn equality(&self, x: &DVector<f64>) -> DVector<f64> {
        self.model.equality(x)
    }

    fn equality_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.model.equality_jacobian(x)
    }
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(a.len() + b.len());
    v.rows_mut(0, a.len()).copy_from(a);
    v.rows_mut(a.len(), b.len()).copy_from(b);
    v
}

/// `[W_a H_a; W_d H_d]`
fn weighted_jacobian<M: SplitModel>(model: &M, x: &DVector<f64>) -> DMatrix<f64> {
    let ha = model.jac_available(x);
    let hd = model.jac_delayed(x);
    let (ma, md) = (ha.nrows(), hd.nrows());
    let mut j = DMatrix::zeros(ma + md, model.dim());
    for (i, w) in model.weights_available().iter().enumerate() {
        j.set_row(i, &(ha.row(i) * *w));
    }
    for (i, w) in model.weights_delayed().iter().enumerate() {
        j.set_row(ma + i, &(hd.row(i) * *w));
    }
    j
}

/// Minimizes `‖W_a(z_a − h_a(x))‖² + ‖W_d(z_d − h_d(x))‖²` subject to the
/// model's equality constraints.
pub fn solve_pseudo_wls<M: SplitModel>(
    model: &M,
    z_a: &DVector<f64>,
    z_d: &DVector<f64>,
    x0: &DVector<f64>,
    options: &WlsOptions,
) -> Result<WlsReport, WlsError> {
    let problem = PseudoWls {
        model,
        z_a,
        z_d: z_d.clone(),
    };
    solve_eq_wls(&problem, x0, options)
}

/// Test snapshot plus the delayed measurements and contextual distances of
/// the history window.
#[derive(Debug, Clone)]
pub struct RobustData {
    pub z_a: DVector<f64>,
    pub z_d: Vec<DVector<f64>>,
    /// `d_s = ‖W_a(z_a − z_a_s)‖²`
    pub distances: Vec<f64>,
    pub k: usize,
}

impl RobustData {
    /// Smallest reachable `Σ w_s d_s`: the mean of the `k` smallest distances.
    pub fn rho_min(&self) -> f64 {
        let mut d = self.distances.clone();
        d.sort_by(f64::total_cmp);
        d[..self.k].iter().sum::<f64>() / self.k as f64
    }

    /// Uniform weights on the `k` nearest samples (ties to the lower index).
    pub fn nominal_weights(&self) -> Vec<f64> {
        let mut order: Vec<usize> = (0..self.distances.len()).collect();
        order.sort_by(|&a, &b| self.distances[a].total_cmp(&self.distances[b]).then(a.cmp(&b)));
        let mut w = vec![0.0; self.distances.len()];
        for &i in &order[..self.k] {
            w[i] = 1.0 / self.k as f64;
        }
        w
    }

    fn weighted_delayed(&self, w: &[f64]) -> DVector<f64> {
        let mut z = DVector::zeros(self.z_d[0].len());
        for (zs, ws) in self.z_d.iter().zip(w) {
            if *ws != 0.0 {
                z.axpy(*ws, zs, 1.0);
            }
        }
        z
    }
}

/// Inner worst case at a fixed state and its dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    /// `max_w Σ w_s r_s(x)` over the ambiguity set.
    pub value: f64,
    /// `(1/K)Σλ_s + μ₁ + ρμ₂`
    pub dual_value: f64,
    pub weights: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
    /// Largest violation of `λ_s + μ₁ + μ₂ d_s ≥ r_s`, `λ ≥ 0`, `μ₂ ≥ 0`.
    pub dual_residual: f64,
    /// Per-sample costs `r_s(x)`.
    pub sample_costs: Vec<f64>,
}

/// Per-sample costs `r_s(x) = ‖W_a(z_a − h_a(x))‖² + ‖W_d(z_d_s − h_d(x))‖²`.
pub fn sample_costs<M: SplitModel>(model: &M, data: &RobustData, x: &DVector<f64>) -> Vec<f64> {
    let wa = model.weights_available();
    let wd = model.weights_delayed();
    let ha = model.h_available(x);
    let hd = model.h_delayed(x);
    let a: f64 = (0..ha.len()).map(|i| (wa[i] * (data.z_a[i] - ha[i])).powi(2)).sum();
    data.z_d
        .iter()
        .map(|zs| a + (0..hd.len()).map(|i| (wd[i] * (zs[i] - hd[i])).powi(2)).sum::<f64>())
        .collect()
}

/// `max Σ w_s c_s` s.t. `0 ≤ w_s ≤ 1/K`, `Σ w_s = 1`, `Σ w_s d_s ≤ ρ`.
pub fn ambiguity_lp(costs: &[f64], distances: &[f64], k: usize, rho: f64) -> DenseLp {
    let n = costs.len();
    let mut lp = DenseLp::new(costs.to_vec());
    lp.upper = vec![1.0 / k as f64; n];
    lp.add_eq(vec![1.0; n], 1.0);
    lp.add_le(distances.to_vec(), rho);
    lp
}

/// Solves the inner linear program at `x`. The available-channel term is
/// common to every sample and is factored out before the LP solve.
pub fn worst_case<M: SplitModel>(
    model: &M,
    data: &RobustData,
    x: &DVector<f64>,
    rho: f64,
) -> Result<WorstCase, RobustError> {
    let costs = sample_costs(model, data, x);
    let base = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = costs.iter().map(|c| c - base).collect();
    let sol = solve_small_lp(&ambiguity_lp(&shifted, &data.distances, data.k, rho));
    if sol.status != LpStatus::Optimal {
        return Err(RobustError::InnerLp(sol.status));
    }
    let lambda = sol.dual_upper.clone();
    let mu1 = sol.dual_eq[0] + base;
    let mu2 = sol.dual_le[0];
    let mut dual_residual: f64 = mu2.min(0.0).abs();
    for (s, c) in costs.iter().enumerate() {
        dual_residual = dual_residual
            .max(lambda[s].min(0.0).abs())
            .max(c - lambda[s] - mu1 - mu2 * data.distances[s]);
    }
    let value = sol.objective + base;
    let dual_value = lambda.iter().sum::<f64>() / data.k as f64 + mu1 + rho * mu2;
    Ok(WorstCase {
        value,
        dual_value,
        weights: sol.x,
        lambda,
        mu1,
        mu2,
        dual_residual,
        sample_costs: costs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustOptions {
    pub max_rounds: usize,
    /// Relative gap between the worst case and the lower bound at which
    /// iteration stops.
    pub rel_tol: f64,
    /// Largest relative gap reported as converged.
    pub accept_tol: f64,
    pub wls: WlsOptions,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions {
            max_rounds: 100,
            rel_tol: 1e-8,
            accept_tol: 1e-7,
            // The lower bound needs minimizers well below the gap tolerance.
            wls: WlsOptions {
                step_tol: 1e-10,
                gradient_tol: 1e-10,
                ..WlsOptions::default()
            },
        }
    }
}

/// Solution of the single-level robust problem with its dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustNlpState {
    pub x: DVector<f64>,
    pub rho: f64,
    pub weights: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
    /// Worst-case objective at `x`.
    pub objective: f64,
    /// `(1/K)Σλ + μ₁ + ρμ₂` at `x`.
    pub dual_objective: f64,
    pub dual_residual: f64,
    /// Worst-case objective at the warm start.
    pub warm_objective: f64,
    /// Largest relative primal-dual gap over every inner LP solved.
    pub max_lp_gap: f64,
    /// Worst case at `x` minus the best lower bound `g(w)` found.
    pub duality_gap: f64,
    /// Equality-constraint violation at `x`.
    pub constraint_violation: f64,
    pub rounds: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustError {
    #[error("ambiguity radius {rho} is below the smallest feasible radius {rho_min}")]
    RadiusTooSmall { rho: f64, rho_min: f64 },
    #[error("inner LP ended with status {0:?}")]
    InnerLp(LpStatus),
    #[error("weighted least squares failed: {0}")]
    Wls(#[from] WlsError),
}

/// Weights maximizing the dual function of the problem linearized at `x`.
///
/// Around `x`, `min_δ F(x + δ, w)` subject to the linearized equalities is
/// a concave quadratic `g(w)`; it is maximized over the ambiguity polytope by
/// an interior point QP.
fn linearized_dual_weights<M: SplitModel>(
    model: &M,
    data: &RobustData,
    x: &DVector<f64>,
    rho: f64,
) -> Option<Vec<f64>> {
    let wa = DVector::from_column_slice(model.weights_available());
    let wd = DVector::from_column_slice(model.weights_delayed());
    let hd = model.h_delayed(x);
    let a0 = (&data.z_a - model.h_available(x)).component_mul(&wa);
    let (ma, md) = (a0.len(), hd.len());
    let s_count = data.z_d.len();
    let j = weighted_jacobian(model, x);
    let c = model.equality_jacobian(x);
    let c0 = model.equality(x);

    let mut e = DMatrix::zeros(md, s_count);
    for (s, zs) in data.z_d.iter().enumerate() {
        e.set_column(s, &(zs - &hd).component_mul(&wd));
    }
    let mut y0 = DVector::zeros(ma + md);
    y0.rows_mut(0, ma).copy_from(&a0);
    let mut e_hat = DMatrix::zeros(ma + md, s_count);
    e_hat.view_mut((ma, 0), (md, s_count)).copy_from(&e);

    let n = model.dim();
    let p = c.nrows();
    let mut g = DMatrix::zeros(n, s_count + 1);
    g.set_column(0, &(j.transpose() * &y0));
    g.view_mut((0, 1), (n, s_count)).copy_from(&(j.transpose() * &e_hat));
    let mut h = DMatrix::zeros(p, s_count + 1);
    h.set_column(0, &(-&c0));
    let (delta, _) = kkt_solve(&j, &c, &g, &h)?;
    let delta0 = delta.column(0).into_owned();
    let delta_e = delta.columns(1, s_count).into_owned();

    let r0 = &y0 - &j * &delta0;
    let big_n = &j * &delta_e;
    let big_m = &e_hat - &big_n;
    let sq: DVector<f64> = DVector::from_iterator(s_count, e.column_iter().map(|col| col.norm_squared()));

    let lin = 2.0 * big_m.transpose() * &r0 + sq;
    let scale = 1.0 + lin.amax();
    let q_mat = (2.0 / scale) * big_n.transpose() * &big_n;
    let q_vec = -lin / scale;

    let mut gm = DMatrix::zeros(2 * s_count + 1, s_count);
    let mut hv = DVector::zeros(2 * s_count + 1);
    for i in 0..s_count {
        gm[(i, i)] = 1.0;
        hv[i] = 1.0 / data.k as f64;
        gm[(s_count + i, i)] = -1.0;
    }
    for i in 0..s_count {
        gm[(2 * s_count, i)] = data.distances[i];
    }
    hv[2 * s_count] = rho;
    let qp = DenseQp {
        q_mat,
        q_vec,
        a: DMatrix::from_element(1, s_count, 1.0),
        b: DVector::from_element(1, 1.0),
        g: gm,
        h: hv,
    };
    let sol = solve_dense_qp(&qp, 1e-10, 200);
    if sol.w.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Clip interior-point round-off back into the box.
    Some(sol.w.iter().map(|v| v.clamp(0.0, 1.0 / data.k as f64)).collect())
}

/// Minimizes the worst-case objective
/// `max_w Σ_s w_s r_s(x)` over `{0 ≤ w ≤ 1/K, Σw = 1, Σ w_s d_s ≤ ρ}`
/// subject to the equality constraints, starting from the nominal estimate
/// `x_warm`.
///
/// The objective is linear in `w`, so `g(w) = min_x Σ_s w_s r_s(x)` is
/// concave and bounds the optimum from below. Each round maximizes the
/// Gauss-Newton model of `g` over the ambiguity polytope, line-searches
/// toward it on the exact `g` (one weighted least squares per trial), falls
/// back to the conditional-gradient vertex when that fails, and
/// keeps whichever minimizer has the smallest exact worst case (an LP). The
/// solve has converged once that worst case is within `rel_tol` of `g`.
/// The returned multipliers are the duals of the final inner LP.
pub fn solve_robust_nlp<M: SplitModel>(
    model: &M,
    data: &RobustData,
    x_warm: &DVector<f64>,
    rho: f64,
    options: &RobustOptions,
) -> Result<RobustNlpState, RobustError> {
    let rho_min = data.rho_min();
    if rho < rho_min - 1e-9 * (1.0 + rho_min.abs()) {
        return Err(RobustError::RadiusTooSmall { rho, rho_min });
    }
    let rho = rho.max(rho_min);
    // At rho_min the ambiguity set is the single nominal weighting (absent
    // ties at the K-th distance).
    let collapsed = rho <= rho_min * (1.0 + 1e-12);

    let rel_gap = |wc: &WorstCase| (wc.value - wc.dual_value).abs() / (1.0 + wc.value.abs());
    let mut best_x = x_warm.clone();
    let mut best = worst_case(model, data, &best_x, rho)?;
    let warm_objective = best.value;
    let mut max_lp_gap = rel_gap(&best);

    // Minimizer of the weighted objective for fixed weights, with g(w) and
    // the worst-case weights there.
    let mut solve_weights = |w: &[f64], x0: &DVector<f64>, best_x: &mut DVector<f64>, best: &mut WorstCase| {
        let z_bar = data.weighted_delayed(w);
        let rep = solve_pseudo_wls(model, &data.z_a, &z_bar, x0, &options.wls).ok()?;
        if !rep.converged {
            return None;
        }
        let g: f64 = sample_costs(model, data, &rep.x).iter().zip(w).map(|(c, w)| c * w).sum();
        let wc = match worst_case(model, data, &rep.x, rho) {
            Ok(wc) => wc,
            Err(e) => return Some(Err(e)),
        };
        max_lp_gap = max_lp_gap.max(rel_gap(&wc));
        let vertex = wc.weights.clone();
        if wc.value < best.value {
            *best_x = rep.x.clone();
            *best = wc;
        }
        Some(Ok((rep.x, g, vertex)))
    };

    let mut w = data.nominal_weights();
    let (mut x_w, mut g, mut vertex) = match solve_weights(&w, x_warm, &mut best_x, &mut best) {
        Some(r) => r?,
        None => (x_warm.clone(), f64::NEG_INFINITY, best.weights.clone()),
    };
    let gap_of = |best: &WorstCase, g: f64| (best.value - g) / (1.0 + best.value.abs());
    let mut rounds = 0;
    while !collapsed && rounds < options.max_rounds && gap_of(&best, g) > options.rel_tol {
        rounds += 1;
        // Maximizer of the Gauss-Newton model of g first; the worst-case
        // vertex at x(w) is a guaranteed ascent direction otherwise.
        let targets = linearized_dual_weights(model, data, &x_w, rho)
            .into_iter()
            .chain(std::iter::once(vertex.clone()));
        let mut accepted = None;
        'targets: for target in targets {
            let mut step = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> = w.iter().zip(&target).map(|(a, b)| a + step * (b - a)).collect();
                if let Some(r) = solve_weights(&trial, &x_w, &mut best_x, &mut best) {
                    let (x, gt, v) = r?;
                    if gt > g {
                        accepted = Some((trial, x, gt, v));
                        break 'targets;
                    }
                }
                step *= 0.5;
            }
        }
        match accepted {
            Some((wt, x, gt, v)) => {
                w = wt;
                x_w = x;
                g = gt;
                vertex = v;
            }
            None => break,
        }
    }
    let converged = collapsed || gap_of(&best, g) <= options.accept_tol;
    let duality_gap = (best.value - g).max(0.0);

    let constraint_violation = {
        let c = model.equality(&best_x);
        if c.is_empty() {
            0.0
        } else {
            c.amax()
        }
    };
    Ok(RobustNlpState {
        x: best_x,
        rho,
        weights: best.weights,
        lambda: best.lambda,
        mu1: best.mu1,
        mu2: best.mu2,
        objective: best.value,
        dual_objective: best.dual_value,
        dual_residual: best.dual_residual,
        warm_objective,
        max_lp_gap,
        duality_gap,
        constraint_violation,
        rounds,
        converged,
    })
}
