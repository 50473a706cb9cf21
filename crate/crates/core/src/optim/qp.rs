use nalgebra::{DMatrix, DVector};

/// `min ½wᵀQw + qᵀw` subject to `A w = b` and `G w ≤ h`, with `Q` positive
/// semidefinite.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub q_mat: DMatrix<f64>,
    pub q_vec: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub w: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Mehrotra predictor-corrector interior point method on the reduced
/// normal equations.
pub fn solve_dense_qp(qp: &DenseQp, tol: f64, max_iterations: usize) -> QpSolution {
    let n = qp.q_vec.len();
    let p = qp.b.len();
    let m = qp.h.len();
    let scale = 1.0 + qp.q_mat.amax().max(qp.q_vec.amax());

    let mut w = DVector::from_element(n, 1.0 / n as f64);
    let mut s = (&qp.h - &qp.g * &w).map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let mut y = DVector::zeros(p);

    let step_to_boundary = |v: &DVector<f64>, dv: &DVector<f64>| -> f64 {
        let mut a: f64 = 1.0;
        for i in 0..v.len() {
            if dv[i] < 0.0 {
                a = a.min(-v[i] / dv[i]);
            }
        }
        a
    };

    for it in 0..max_iterations {
        let rd = &qp.q_mat * &w + &qp.q_vec + qp.a.transpose() * &y + qp.g.transpose() * &z;
        let rp = &qp.a * &w - &qp.b;
        let rg = &qp.g * &w + &s - &qp.h;
        let mu = s.dot(&z) / m.max(1) as f64;
        let done = rd.amax() < tol * scale
            && (p == 0 || rp.amax() < tol)
            && (m == 0 || rg.amax() < tol)
            && mu < tol * scale;
        if done {
            return QpSolution {
                w,
                iterations: it,
                converged: true,
            };
        }

        let d = z.component_div(&s);
        let mut gd = qp.g.clone();
        for i in 0..m {
            gd.row_mut(i).scale_mut(d[i]);
        }
        let mut k = DMatrix::zeros(n + p, n + p);
        k.view_mut((0, 0), (n, n))
            .copy_from(&(&qp.q_mat + qp.g.transpose() * &gd));
        if p > 0 {
            k.view_mut((0, n), (n, p)).copy_from(&qp.a.transpose());
            k.view_mut((n, 0), (p, n)).copy_from(&qp.a);
        }
        let lu = k.lu();

        // Solves the Newton system for a complementarity target `rc`.
        let solve = |rc: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let t = (rc - z.component_mul(&rg)).component_div(&s);
            let top = -&rd + qp.g.transpose() * &t;
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&top);
            if p > 0 {
                rhs.rows_mut(n, p).copy_from(&(-&rp));
            }
            let sol = lu.solve(&rhs)?;
            let dw = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, p).into_owned();
            let ds = -&rg - &qp.g * &dw;
            let dz = (-rc - z.component_mul(&ds)).component_div(&s);
            Some((dw, dy, ds, dz))
        };

        let rc_aff = s.component_mul(&z);
        let Some((_, _, ds_a, dz_a)) = solve(&rc_aff) else {
            break;
        };
        let a_aff = step_to_boundary(&s, &ds_a).min(step_to_boundary(&z, &dz_a));
        let mu_aff = (&s + a_aff * &ds_a).dot(&(&z + a_aff * &dz_a)) / m.max(1) as f64;
        let sigma = (mu_aff / mu.max(f64::MIN_POSITIVE)).powi(3).min(1.0);
        let rc = &rc_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let Some((dw, dy, ds, dz)) = solve(&rc) else {
            break;
        };
        let alpha = (0.99 * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz))).min(1.0);
        w += alpha * dw;
        y += alpha * dy;
        s += alpha * ds;
        z += alpha * dz;
    }
    QpSolution {
        w,
        iterations: max_iterations,
        converged: false,
    }
}
