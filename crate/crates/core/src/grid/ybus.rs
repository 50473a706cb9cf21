use num_complex::Complex64;

use super::{CaseError, NetworkCase};

/// Pi-model admittances of one branch as seen from its two ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

impl BranchAdmittance {
    /// Series admittance `1/(r + jx)`, half the charging at each end, ideal
    /// transformer `tap * e^{j shift}` on the from side.
    pub fn of(r: f64, x: f64, b: f64, tap: f64, shift: f64) -> Self {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
        let half_b = Complex64::new(0.0, b / 2.0);
        let t = Complex64::from_polar(tap, shift);
        BranchAdmittance {
            yff: (ys + half_b) / (tap * tap),
            yft: -ys / t.conj(),
            ytf: -ys / t,
            ytt: ys + half_b,
        }
    }
}

/// Sparse bus admittance matrix stored row-wise, columns ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
    branches: Vec<Option<BranchAdmittance>>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Nonzero entries of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |&(c, _)| c) {
            Ok(k) => self.rows[i][k].1,
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// Pi-model admittances of branch `k`, `None` when out of service.
    pub fn branch(&self, k: usize) -> Option<&BranchAdmittance> {
        self.branches[k].as_ref()
    }

    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let mut dense = vec![vec![Complex64::new(0.0, 0.0); self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, y) in row {
                dense[i][j] = y;
            }
        }
        dense
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }
}

/// Assembles Ybus (per unit) from the in-service branches and bus shunts.
pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceMatrix, CaseError> {
    let n = case.n_bus();
    let mut rows: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    let mut add = |i: usize, j: usize, y: Complex64| {
        let row = &mut rows[i];
        match row.binary_search_by_key(&j, |&(c, _)| c) {
            Ok(k) => row[k].1 += y,
            Err(k) => row.insert(k, (j, y)),
        }
    };
    let mut branches = Vec::with_capacity(case.branches.len());
    for (k, br) in case.branches.iter().enumerate() {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(CaseError::SingularBranch(k));
        }
        if !br.in_service {
            branches.push(None);
            continue;
        }
        let pi = BranchAdmittance::of(br.r, br.x, br.b_charging, br.tap_ratio, br.phase_shift);
        add(br.from_bus, br.from_bus, pi.yff);
        add(br.from_bus, br.to_bus, pi.yft);
        add(br.to_bus, br.from_bus, pi.ytf);
        add(br.to_bus, br.to_bus, pi.ytt);
        branches.push(Some(pi));
    }
    for (i, bus) in case.buses.iter().enumerate() {
        if bus.shunt_g != 0.0 || bus.shunt_b != 0.0 {
            add(i, i, Complex64::new(bus.shunt_g, bus.shunt_b));
        }
    }
    Ok(AdmittanceMatrix { n, rows, branches })
}
