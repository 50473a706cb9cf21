use serde::{Deserialize, Serialize};

use super::StateVector;
use crate::grid::{AdmittanceMatrix, BranchAdmittance, NetworkCase};

/// Net active and reactive injection at every bus (p.u., generation positive).
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Power entering a branch at each of its ends.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BranchFlow {
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
}

/// Polar injection equations
/// `P_i = V_i sum_j V_j (G_ij cos t_ij + B_ij sin t_ij)`,
/// `Q_i = V_i sum_j V_j (G_ij sin t_ij - B_ij cos t_ij)`.
pub fn eval_injections(state: &StateVector, ybus: &AdmittanceMatrix) -> Injections {
    let n = ybus.n();
    assert_eq!(state.n_bus(), n, "state and Ybus dimensions differ");
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        let (vi, ti) = (state.v_mag[i], state.v_ang[i]);
        let (mut pi, mut qi) = (0.0, 0.0);
        for &(j, y) in ybus.row(i) {
            let (s, c) = (ti - state.v_ang[j]).sin_cos();
            let vj = state.v_mag[j];
            pi += vj * (y.re * c + y.im * s);
            qi += vj * (y.re * s - y.im * c);
        }
        p[i] = vi * pi;
        q[i] = vi * qi;
    }
    Injections { p, q }
}

/// Partial derivatives of `P_i` and `Q_i` with respect to the angle and
/// magnitude of every bus in row `i` of Ybus. Each entry is
/// `(j, dP/dθ_j, dP/dV_j, dQ/dθ_j, dQ/dV_j)`.
pub(crate) fn injection_derivatives(
    state: &StateVector,
    ybus: &AdmittanceMatrix,
    i: usize,
    p_i: f64,
    q_i: f64,
) -> Vec<(usize, f64, f64, f64, f64)> {
    let vi = state.v_mag[i];
    let ti = state.v_ang[i];
    let yii = ybus.get(i, i);
    ybus.row(i)
        .iter()
        .map(|&(j, y)| {
            if j == i {
                (
                    i,
                    -q_i - yii.im * vi * vi,
                    p_i / vi + yii.re * vi,
                    p_i - yii.re * vi * vi,
                    q_i / vi - yii.im * vi,
                )
            } else {
                let vj = state.v_mag[j];
                let (s, c) = (ti - state.v_ang[j]).sin_cos();
                let a = y.re * c + y.im * s;
                let b = y.re * s - y.im * c;
                (j, vi * vj * b, vi * a, -vi * vj * a, vi * b)
            }
        })
        .collect()
}

/// Power at one branch end `k` given its self and mutual admittances:
/// `S_k = V_k conj(y_kk V_k + y_km V_m)`.
pub(crate) fn end_power(
    y_kk: num_complex::Complex64,
    y_km: num_complex::Complex64,
    vk: f64,
    vm: f64,
    theta: f64,
) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    let p = y_kk.re * vk * vk + vk * vm * (y_km.re * c + y_km.im * s);
    let q = -y_kk.im * vk * vk + vk * vm * (y_km.re * s - y_km.im * c);
    (p, q)
}

/// Derivatives of `end_power` with respect to `(θ_k, V_k, θ_m, V_m)` for P
/// and Q.
pub(crate) fn end_power_derivatives(
    y_kk: num_complex::Complex64,
    y_km: num_complex::Complex64,
    vk: f64,
    vm: f64,
    theta: f64,
) -> ([f64; 4], [f64; 4]) {
    let (s, c) = theta.sin_cos();
    let a = y_km.re * c + y_km.im * s;
    let b = y_km.re * s - y_km.im * c;
    let dp = [
        -vk * vm * b,
        2.0 * y_kk.re * vk + vm * a,
        vk * vm * b,
        vk * a,
    ];
    let dq = [
        vk * vm * a,
        -2.0 * y_kk.im * vk + vm * b,
        -vk * vm * a,
        vk * b,
    ];
    (dp, dq)
}

/// Branch-end flows from the pi model (taps and charging included). Open
/// branches carry zero flow.
pub fn eval_flows(state: &StateVector, case: &NetworkCase) -> Vec<BranchFlow> {
    case.branches
        .iter()
        .map(|br| {
            if !br.in_service {
                return BranchFlow::default();
            }
            let y = BranchAdmittance::of(br.r, br.x, br.b_charging, br.tap_ratio, br.phase_shift);
            flow_with(&y, state, br.from_bus, br.to_bus)
        })
        .collect()
}

pub(crate) fn flow_with(y: &BranchAdmittance, state: &StateVector, f: usize, t: usize) -> BranchFlow {
    let (vf, vt) = (state.v_mag[f], state.v_mag[t]);
    let theta = state.v_ang[f] - state.v_ang[t];
    let (p_from, q_from) = end_power(y.yff, y.yft, vf, vt, theta);
    let (p_to, q_to) = end_power(y.ytt, y.ytf, vt, vf, -theta);
    BranchFlow {
        p_from,
        q_from,
        p_to,
        q_to,
    }
}
