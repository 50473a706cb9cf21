//! Quick runtime self-checks behind the `verify` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcse_core::estimators::{
    compute_rho_grid, robust_estimate, vanilla_estimate, wls_estimate, EstimatorError,
};
use rcse_core::grid::{shipped_case, MeasurementPlan, RedundancyLevel, SHIPPED_CASES};
use rcse_core::optim::{solve_small_lp, DenseLp, LpStatus};
use rcse_core::powerflow::{MeasurementModel, StateVector, Subset};
use rcse_core::scenario::{build_history, generate_dataset, ScenarioConfig};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, worst: f64, limit: f64) -> Check {
    Check {
        name,
        passed: worst.is_finite() && worst <= limit,
        detail: format!("worst {worst:.3e}, limit {limit:.1e}"),
    }
}

fn random_state(n: usize, slack: usize, rng: &mut impl Rng) -> StateVector {
    let mut x = StateVector::flat(n, slack);
    for i in 0..n {
        x.v_mag[i] = rng.random_range(0.9..1.1);
        if i != slack {
            x.v_ang[i] = rng.random_range(-0.3..0.3);
        }
    }
    x
}

fn jacobian_check(rng: &mut impl Rng) -> Check {
    let mut worst: f64 = 0.0;
    for name in SHIPPED_CASES {
        let case = shipped_case(name).unwrap();
        let plan = MeasurementPlan::full_instrumentation(&case);
        let model = MeasurementModel::new(case.clone(), plan).unwrap();
        for _ in 0..5 {
            let x = random_state(case.n_bus(), case.slack(), rng);
            let j = model.jacobian(&x, Subset::All);
            let x0 = x.to_free();
            for c in 0..x0.len() {
                let mut xp = x0.clone();
                let mut xm = x0.clone();
                xp[c] += 1e-6;
                xm[c] -= 1e-6;
                let hp = model.eval_vector(&StateVector::from_free(&xp, case.n_bus(), case.slack()), Subset::All);
                let hm = model.eval_vector(&StateVector::from_free(&xm, case.n_bus(), case.slack()), Subset::All);
                for r in 0..hp.len() {
                    let fd = (hp[r] - hm[r]) / 2e-6;
                    worst = worst.max((j[(r, c)] - fd).abs() / fd.abs().max(1.0));
                }
            }
        }
    }
    check("jacobian", worst, 1e-5)
}

fn lp_check(rng: &mut impl Rng) -> Check {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=10);
        let mut lp = DenseLp::new((0..n).map(|_| rng.random_range(-5.0..5.0)).collect());
        lp.add_le(vec![1.0; n], rng.random_range(1.0..10.0));
        for _ in 0..rng.random_range(0..4) {
            lp.add_le((0..n).map(|_| rng.random_range(-3.0..3.0)).collect(), rng.random_range(0.0..5.0));
        }
        let sol = solve_small_lp(&lp);
        if sol.status != LpStatus::Optimal {
            worst = f64::INFINITY;
            break;
        }
        worst = worst.max(sol.gap() / (1.0 + sol.objective.abs()));
    }
    check("lp duality", worst, 1e-9)
}

fn small_config(case: &str) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::desk(case, RedundancyLevel::High);
    cfg.pool_size = 60;
    cfg.test_size = 3;
    cfg.window_size = 30;
    cfg
}

fn wls_check() -> Check {
    let mut worst: f64 = 0.0;
    for name in SHIPPED_CASES {
        let mut cfg = small_config(name);
        cfg.sigma_power = 0.0;
        cfg.sigma_voltage = 0.0;
        let Ok(ds) = generate_dataset(&cfg) else {
            return check("noiseless wls", f64::INFINITY, 1e-6);
        };
        for inst in ds.instances.iter().take(5) {
            match wls_estimate(&ds.model, &inst.z_a, &inst.z_d) {
                Ok((x, _)) => {
                    for (a, b) in x.to_full().iter().zip(inst.x_true.to_full()) {
                        worst = worst.max((a - b).abs());
                    }
                }
                Err(_) => worst = f64::INFINITY,
            }
        }
    }
    check("noiseless wls", worst, 1e-6)
}

fn collapse_check() -> Check {
    let run = || -> Result<f64, String> {
        let mut worst: f64 = 0.0;
        for name in SHIPPED_CASES {
            let ds = generate_dataset(&small_config(name)).map_err(|e| e.to_string())?;
            for &t in &ds.test_ids {
                let w = build_history(&ds, t, ds.config.window_size).map_err(|e| e.to_string())?;
                let z = &ds.instances[t].z_a;
                let k = ds.config.k;
                let (xv, _) = vanilla_estimate(&ds.model, &w, z, k).map_err(|e| e.to_string())?;
                let grid = compute_rho_grid(&w, z, k, 1, &ds.model.weights(Subset::Available))
                    .map_err(|e| e.to_string())?;
                let (xr, _) = robust_estimate(&ds.model, &w, z, k, &xv, grid.rho_min)
                    .map_err(|e: EstimatorError| e.to_string())?;
                for (a, b) in xr.to_full().iter().zip(xv.to_full()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(w) => check("robust collapse at rho_min", w, 1e-5),
        Err(e) => Check {
            name: "robust collapse at rho_min",
            passed: false,
            detail: e,
        },
    }
}

fn noise_check() -> Check {
    let mut cfg = small_config("case33bw");
    cfg.pool_size = 400;
    let Ok(ds) = generate_dataset(&cfg) else {
        return check("noise calibration", f64::INFINITY, 0.05);
    };
    let plan = ds.plan();
    let (mut sp, mut np, mut sv, mut nv) = (0.0, 0.0, 0.0, 0.0);
    for inst in &ds.instances {
        let clean = ds.model.eval(&inst.x_true, Subset::All).values;
        for (k, &c) in plan.available.iter().enumerate() {
            let e = inst.z_a.values[k] - clean[c];
            if plan.channels[c].kind.is_voltage() {
                sv += e * e;
                nv += 1.0;
            } else {
                sp += e * e;
                np += 1.0;
            }
        }
    }
    let mut worst: f64 = ((sp / np).sqrt() / cfg.sigma_power - 1.0).abs();
    if nv > 0.0 {
        worst = worst.max(((sv / nv).sqrt() / cfg.sigma_voltage - 1.0).abs());
    }
    check("noise calibration", worst, 0.05)
}

pub fn run_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        jacobian_check(&mut rng),
        lp_check(&mut rng),
        wls_check(),
        collapse_check(),
        noise_check(),
    ]
}
