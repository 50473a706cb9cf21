use nalgebra::{DMatrix, DVector};

/// `maximize cᵀx` subject to `A_le x ≤ b_le`, `A_eq x = b_eq` and
/// `0 ≤ x ≤ upper` (an infinite upper bound means none).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLp {
    pub objective: Vec<f64>,
    pub le_rows: Vec<Vec<f64>>,
    pub le_rhs: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DenseLp {
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        DenseLp {
            objective,
            le_rows: Vec::new(),
            le_rhs: Vec::new(),
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        assert_eq!(row.len(), self.n_vars());
        self.le_rows.push(row);
        self.le_rhs.push(rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        assert_eq!(row.len(), self.n_vars());
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    fn is_finite(&self) -> bool {
        let rows = self.le_rows.iter().chain(&self.eq_rows).flatten();
        self.objective
            .iter()
            .chain(rows)
            .chain(&self.le_rhs)
            .chain(&self.eq_rhs)
            .all(|v| v.is_finite())
            && self.upper.iter().all(|u| !u.is_nan())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Multipliers of the `≤` rows (nonnegative).
    pub dual_le: Vec<f64>,
    /// Multipliers of the equality rows (free).
    pub dual_eq: Vec<f64>,
    /// Multipliers of the finite upper bounds (nonnegative, zero elsewhere).
    pub dual_upper: Vec<f64>,
    pub objective: f64,
    /// `b_leᵀy_le + b_eqᵀy_eq + uᵀy_u`
    pub dual_objective: f64,
}

impl LpSolution {
    fn with_status(status: LpStatus, lp: &DenseLp) -> Self {
        LpSolution {
            status,
            x: vec![0.0; lp.n_vars()],
            dual_le: vec![0.0; lp.le_rows.len()],
            dual_eq: vec![0.0; lp.eq_rows.len()],
            dual_upper: vec![0.0; lp.n_vars()],
            objective: f64::NAN,
            dual_objective: f64::NAN,
        }
    }

    pub fn gap(&self) -> f64 {
        (self.objective - self.dual_objective).abs()
    }
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;

#[derive(Clone, Copy, PartialEq)]
enum RowKind {
    Le(usize),
    Upper(usize),
    Eq(usize),
}

/// Two-phase tableau simplex with Bland's rule. Primal and dual values are
/// recomputed from the final basis by LU factorization, which removes the
/// round-off accumulated over the pivots.
pub fn solve_small_lp(lp: &DenseLp) -> LpSolution {
    assert!(lp.is_finite(), "LP coefficients must be finite");
    let n = lp.n_vars();

    // Constraint rows in standard form with nonnegative right-hand sides.
    let mut kinds = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for (i, r) in lp.le_rows.iter().enumerate() {
        kinds.push(RowKind::Le(i));
        rows.push(r.clone());
        rhs.push(lp.le_rhs[i]);
    }
    for (j, &u) in lp.upper.iter().enumerate() {
        if u.is_finite() {
            let mut r = vec![0.0; n];
            r[j] = 1.0;
            kinds.push(RowKind::Upper(j));
            rows.push(r);
            rhs.push(u);
        }
    }
    for (i, r) in lp.eq_rows.iter().enumerate() {
        kinds.push(RowKind::Eq(i));
        rows.push(r.clone());
        rhs.push(lp.eq_rhs[i]);
    }
    let m = rows.len();
    let n_slack = kinds.iter().filter(|k| !matches!(k, RowKind::Eq(_))).count();
    let mut slack_col = vec![None; m];
    let mut next = n;
    for (i, k) in kinds.iter().enumerate() {
        if !matches!(k, RowKind::Eq(_)) {
            slack_col[i] = Some(next);
            next += 1;
        }
    }
    let sign: Vec<f64> = rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();

    // Columns: originals, slacks, then one artificial per row lacking a
    // ready unit column.
    let n_struct = n + n_slack;
    let mut basis = vec![usize::MAX; m];
    let mut n_art = 0;
    for i in 0..m {
        if slack_col[i].is_some() && sign[i] > 0.0 {
            basis[i] = slack_col[i].unwrap();
        } else {
            basis[i] = n_struct + n_art;
            n_art += 1;
        }
    }
    let ncol = n_struct + n_art;
    let mut t = DMatrix::<f64>::zeros(m, ncol + 1);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = sign[i] * rows[i][j];
        }
        if let Some(s) = slack_col[i] {
            t[(i, s)] = sign[i];
        }
        if basis[i] >= n_struct {
            t[(i, basis[i])] = 1.0;
        }
        t[(i, ncol)] = sign[i] * rhs[i];
    }
    let scale = 1.0 + rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let mut active_rows: Vec<bool> = vec![true; m];

    // Phase 1: maximize -sum(artificials).
    if n_art > 0 {
        let mut cost = vec![0.0; ncol];
        for c in cost.iter_mut().skip(n_struct) {
            *c = -1.0;
        }
        match run_simplex(&mut t, &mut basis, &cost, ncol, &active_rows) {
            SimplexEnd::Optimal => {}
            SimplexEnd::Unbounded => unreachable!("phase 1 objective is bounded"),
        }
        let infeasibility: f64 = (0..m)
            .filter(|&i| basis[i] >= n_struct)
            .map(|i| t[(i, ncol)])
            .sum();
        if infeasibility > 1e-9 * scale {
            return LpSolution::with_status(LpStatus::Infeasible, lp);
        }
        // Drive artificials out of the basis; rows that cannot pivot are
        // linearly dependent and dropped.
        for i in 0..m {
            if basis[i] < n_struct {
                continue;
            }
            let col = (0..n_struct).find(|&j| t[(i, j)].abs() > 1e-9);
            match col {
                Some(j) => pivot(&mut t, &mut basis, i, j),
                None => active_rows[i] = false,
            }
        }
    }

    // Phase 2 over structural columns only.
    let mut cost = vec![0.0; ncol];
    cost[..n].copy_from_slice(&lp.objective);
    match run_simplex(&mut t, &mut basis, &cost, n_struct, &active_rows) {
        SimplexEnd::Optimal => {}
        SimplexEnd::Unbounded => return LpSolution::with_status(LpStatus::Unbounded, lp),
    }

    // Exact recovery from the basis.
    let rows_kept: Vec<usize> = (0..m).filter(|&i| active_rows[i]).collect();
    let mk = rows_kept.len();
    let column = |j: usize, i: usize| -> f64 {
        if j < n {
            sign[i] * rows[i][j]
        } else if slack_col[i] == Some(j) {
            sign[i]
        } else {
            0.0
        }
    };
    let mut bmat = DMatrix::<f64>::zeros(mk, mk);
    let mut b = DVector::<f64>::zeros(mk);
    let mut cb = DVector::<f64>::zeros(mk);
    for (r, &i) in rows_kept.iter().enumerate() {
        b[r] = sign[i] * rhs[i];
        for (k, &bi) in rows_kept.iter().enumerate() {
            bmat[(r, k)] = column(basis[bi], i);
        }
    }
    for (k, &bi) in rows_kept.iter().enumerate() {
        cb[k] = if basis[bi] < n { lp.objective[basis[bi]] } else { 0.0 };
    }
    let lu = bmat.clone().lu();
    let (xb, y) = match (lu.solve(&b), bmat.transpose().lu().solve(&cb)) {
        (Some(xb), Some(y)) => (xb, y),
        // Fall back to the tableau values if the basis is numerically singular.
        _ => {
            let xb = DVector::from_iterator(mk, rows_kept.iter().map(|&i| t[(i, ncol)]));
            (xb, DVector::zeros(mk))
        }
    };
    let mut x = vec![0.0; n];
    for (k, &bi) in rows_kept.iter().enumerate() {
        if basis[bi] < n {
            x[basis[bi]] = xb[k];
        }
    }
    let mut sol = LpSolution::with_status(LpStatus::Optimal, lp);
    let mut dual_obj = 0.0;
    for (r, &i) in rows_kept.iter().enumerate() {
        let yi = sign[i] * y[r];
        dual_obj += yi * rhs[i];
        match kinds[i] {
            RowKind::Le(k) => sol.dual_le[k] = yi,
            RowKind::Upper(j) => sol.dual_upper[j] = yi,
            RowKind::Eq(k) => sol.dual_eq[k] = yi,
        }
    }
    sol.objective = x.iter().zip(&lp.objective).map(|(a, c)| a * c).sum();
    sol.dual_objective = dual_obj;
    sol.x = x;
    sol
}

enum SimplexEnd {
    Optimal,
    Unbounded,
}

fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], r: usize, c: usize) {
    let p = t[(r, c)];
    let width = t.ncols();
    for j in 0..width {
        t[(r, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i == r {
            continue;
        }
        let f = t[(i, c)];
        if f != 0.0 {
            for j in 0..width {
                t[(i, j)] -= f * t[(r, j)];
            }
        }
    }
    basis[r] = c;
}

/// Maximizes `costᵀx` over columns `< n_enter`; Bland's rule for both the
/// entering and the leaving choice.
fn run_simplex(
    t: &mut DMatrix<f64>,
    basis: &mut [usize],
    cost: &[f64],
    n_enter: usize,
    active: &[bool],
) -> SimplexEnd {
    let m = t.nrows();
    let rhs = t.ncols() - 1;
    loop {
        let mut entering = None;
        for j in 0..n_enter {
            if basis.contains(&j) {
                continue;
            }
            let mut reduced = cost[j];
            for i in (0..m).filter(|&i| active[i]) {
                reduced -= cost[basis[i]] * t[(i, j)];
            }
            if reduced > COST_TOL {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else {
            return SimplexEnd::Optimal;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in (0..m).filter(|&i| active[i]) {
            let a = t[(i, j)];
            if a > PIVOT_TOL {
                let ratio = t[(i, rhs)].max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((k, best)) => {
                        if ratio < best - 1e-14 * (1.0 + best)
                            || (ratio <= best + 1e-14 * (1.0 + best) && basis[i] < basis[k])
                        {
                            Some((i, ratio))
                        } else {
                            Some((k, best))
                        }
                    }
                };
            }
        }
        let Some((r, _)) = leave else {
            return SimplexEnd::Unbounded;
        };
        pivot(t, basis, r, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_variable_upper_bound() {
        let mut lp = DenseLp::new(vec![1.0]);
        lp.add_le(vec![1.0], 1.0);
        let s = solve_small_lp(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.dual_le[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_sample_ambiguity_set() {
        let mut lp = DenseLp::new(vec![3.0, 2.0, 1.0]);
        lp.upper = vec![0.5; 3];
        lp.add_eq(vec![1.0; 3], 1.0);
        lp.add_le(vec![0.1, 0.2, 0.3], 1.0);
        let s = solve_small_lp(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        for (a, b) in s.x.iter().zip([0.5, 0.5, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.objective - 2.5).abs() < 1e-12);
        assert!(s.gap() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = DenseLp::new(vec![1.0, 0.0]);
        lp.add_eq(vec![1.0, 1.0], 1.0);
        lp.add_le(vec![1.0, 1.0], 0.5);
        assert_eq!(solve_small_lp(&lp).status, LpStatus::Infeasible);

        let mut lp = DenseLp::new(vec![1.0, 1.0]);
        lp.add_le(vec![1.0, -1.0], 1.0);
        assert_eq!(solve_small_lp(&lp).status, LpStatus::Unbounded);
    }

    #[test]
    fn negative_rhs_and_redundant_equalities() {
        // x + y = 2 stated twice, x - y >= 0 written as -x + y <= 0, x <= 1.5.
        let mut lp = DenseLp::new(vec![-1.0, -2.0]);
        lp.add_eq(vec![1.0, 1.0], 2.0);
        lp.add_eq(vec![2.0, 2.0], 4.0);
        lp.add_le(vec![-1.0, -1.0], -1.0);
        lp.upper = vec![1.5, f64::INFINITY];
        let s = solve_small_lp(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 1.5).abs() < 1e-12 && (s.x[1] - 0.5).abs() < 1e-12);
        assert!((s.objective + 2.5).abs() < 1e-12);
        assert!(s.gap() < 1e-12);
    }
}
