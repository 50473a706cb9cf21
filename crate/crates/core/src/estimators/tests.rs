use nalgebra::DVector;
use proptest::prelude::*;

use super::test_support::small_dataset;
use super::*;
use crate::grid::RedundancyLevel;
use crate::optim::{worst_case, RobustData, RobustNlpState};
use crate::scenario::build_history;

fn mv(values: &[f64]) -> MeasurementVector {
    MeasurementVector::new(values.to_vec())
}

fn window_from_distances(d: &[f64]) -> HistoryWindow {
    HistoryWindow::new(
        d.iter()
            .enumerate()
            .map(|(i, &v)| HistorySample {
                sample_id: i,
                z_a: mv(&[v.sqrt()]),
                z_d: mv(&[0.0]),
                x_retro: StateVector::flat(2, 0),
            })
            .collect(),
    )
}

#[test]
fn knn_orders_by_distance() {
    let w = window_from_distances(&[0.5, 0.1, 0.2]);
    let nn = knn_select(&w, &mv(&[0.0]), 2, &[1.0]).unwrap();
    assert_eq!(nn.sample_ids, vec![1, 2]);
}

#[test]
fn knn_tie_goes_to_lower_id() {
    let w = window_from_distances(&[0.3, 0.1, 0.2, 0.2]);
    let nn = knn_select(&w, &mv(&[0.0]), 3, &[1.0]).unwrap();
    assert_eq!(nn.sample_ids, vec![1, 2, 3]);
    let nn = knn_select(&w, &mv(&[0.0]), 2, &[1.0]).unwrap();
    assert_eq!(nn.sample_ids, vec![1, 2]);
}

#[test]
fn knn_rejects_oversized_k() {
    let w = window_from_distances(&[0.3]);
    assert!(matches!(
        knn_select(&w, &mv(&[0.0]), 2, &[1.0]),
        Err(EstimatorError::KTooLarge { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn knn_matches_full_sort(values in proptest::collection::vec(0u8..20, 1..30), k_seed in 0usize..100) {
        let d: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let k = 1 + k_seed % d.len();
        let w = window_from_distances(&d);
        let nn = knn_select(&w, &mv(&[0.0]), k, &[1.0]).unwrap();
        let mut oracle: Vec<(u8, usize)> = values.iter().copied().zip(0..).collect();
        oracle.sort();
        let expect: Vec<usize> = oracle[..k].iter().map(|p| p.1).collect();
        prop_assert_eq!(nn.sample_ids, expect);
    }
}

#[test]
fn rho_grid_endpoints_and_ratio() {
    // K-NN mean 1, max 100.
    let g = RhoGrid::from_distances(&[0.5, 1.5, 100.0, 50.0], 2, 3).unwrap();
    assert_eq!(g.values.len(), 3);
    for (a, b) in g.values.iter().zip([1.0, 10.0, 100.0]) {
        assert!((a - b).abs() < 1e-12 * b);
    }
    let g = RhoGrid::from_distances(&[2.0; 5], 3, 20).unwrap();
    assert!(g.degenerate);
    assert_eq!(g.values, vec![2.0]);
}

proptest! {
    #[test]
    fn rho_grid_is_geometric(d in proptest::collection::vec(0.01f64..1e3, 5..60), c in 2usize..25) {
        let g = RhoGrid::from_distances(&d, 3, c).unwrap();
        prop_assume!(!g.degenerate);
        prop_assert_eq!(g.values[0], g.rho_min);
        prop_assert_eq!(*g.values.last().unwrap(), g.rho_max);
        let r0 = g.values[1] / g.values[0];
        for w in g.values.windows(2) {
            prop_assert!(w[1] > w[0]);
            prop_assert!((w[1] / w[0] - r0).abs() < 1e-12 * r0);
        }
    }
}

#[test]
fn retrospective_inverts_noiseless_measurements() {
    for case in ["case33bw", "case39"] {
        let ds = small_dataset(case, RedundancyLevel::High, 30, false);
        for inst in ds.instances.iter().take(5) {
            let (x, rep) = wls_estimate(&ds.model, &inst.z_a, &inst.z_d).unwrap();
            assert!(rep.converged);
            for (a, b) in x.to_full().iter().zip(inst.x_true.to_full()) {
                assert!((a - b).abs() < 1e-6, "{case}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn retrospective_enforces_zero_injection() {
    let ds = small_dataset("case39", RedundancyLevel::High, 30, true);
    for inst in ds.instances.iter().take(5) {
        let (x, _) = wls_estimate(&ds.model, &inst.z_a, &inst.z_d).unwrap();
        let zi = ds.model.eval(&x, Subset::ZeroInjection);
        assert!(zi.values.iter().all(|v| v.abs() < 1e-8));
    }
}

#[test]
fn retrospective_residuals_match_noise_level() {
    let ds = small_dataset("case33bw", RedundancyLevel::High, 200, true);
    let mut total = 0.0;
    let mut count = 0;
    for inst in &ds.instances {
        let (x, _) = wls_estimate(&ds.model, &inst.z_a, &inst.z_d).unwrap();
        let za = ds.model.eval(&x, Subset::Available);
        let zd = ds.model.eval(&x, Subset::Delayed);
        let plan = ds.plan();
        for (k, &c) in plan.available.iter().enumerate() {
            total += (inst.z_a.values[k] - za.values[k]).abs() / plan.sigma[c];
            count += 1;
        }
        for (k, &c) in plan.delayed.iter().enumerate() {
            total += (inst.z_d.values[k] - zd.values[k]).abs() / plan.sigma[c];
            count += 1;
        }
    }
    let mean = total / count as f64;
    assert!(mean < 1.5, "mean standardized residual {mean}");
}

fn test_window(ds: &crate::scenario::Dataset, t: usize) -> HistoryWindow {
    build_history(ds, ds.test_ids[t], ds.config.window_size).unwrap()
}

#[test]
fn vanilla_with_true_delayed_neighbors_equals_wls() {
    let ds = small_dataset("case33bw", RedundancyLevel::High, 30, false);
    let t = ds.test_ids[0];
    let inst = &ds.instances[t];
    let mut window = test_window(&ds, 0);
    for s in &mut window.samples {
        s.z_d = inst.z_d.clone();
    }
    let (xv, _) = vanilla_estimate(&ds.model, &window, &inst.z_a, 4).unwrap();
    let (xw, _) = wls_estimate(&ds.model, &inst.z_a, &inst.z_d).unwrap();
    for (a, b) in xv.to_full().iter().zip(xw.to_full()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn vanilla_single_neighbor_is_pseudo_measurement_wls() {
    let ds = small_dataset("case33bw", RedundancyLevel::High, 40, true);
    let t = ds.test_ids[1];
    let inst = &ds.instances[t];
    let window = test_window(&ds, 1);
    let w = ds.model.weights(Subset::Available);
    let nn = knn_select(&window, &inst.z_a, 1, &w).unwrap();
    let (xv, _) = vanilla_estimate(&ds.model, &window, &inst.z_a, 1).unwrap();
    let (xw, _) = wls_estimate(&ds.model, &inst.z_a, &window.samples[nn.positions[0]].z_d).unwrap();
    assert_eq!(xv, xw);
}

#[test]
fn vanilla_objective_matches_recomputation() {
    let ds = small_dataset("case33bw", RedundancyLevel::High, 40, true);
    let t = ds.test_ids[2];
    let inst = &ds.instances[t];
    let window = test_window(&ds, 2);
    let k = 4;
    let (xv, rep) = vanilla_estimate(&ds.model, &window, &inst.z_a, k).unwrap();
    let wa = ds.model.weights(Subset::Available);
    let wd = ds.model.weights(Subset::Delayed);
    let nn = knn_select(&window, &inst.z_a, k, &wa).unwrap();
    let ha = ds.model.eval(&xv, Subset::Available);
    let hd = ds.model.eval(&xv, Subset::Delayed);
    let mut direct = inst.z_a.weighted_sq_distance(&ha, &wa);
    for &p in &nn.positions {
        direct += window.samples[p].z_d.weighted_sq_distance(&hd, &wd) / k as f64;
    }
    // The solver minimizes the same objective with the neighbors averaged;
    // the two differ by the spread of the neighbors around their mean.
    let md = hd.len();
    let mean: Vec<f64> = (0..md)
        .map(|i| nn.positions.iter().map(|&p| window.samples[p].z_d.values[i]).sum::<f64>() / k as f64)
        .collect();
    let spread: f64 = nn
        .positions
        .iter()
        .map(|&p| window.samples[p].z_d.weighted_sq_distance(&mv(&mean), &wd))
        .sum::<f64>()
        / k as f64;
    assert!((rep.objective + spread - direct).abs() < 1e-10 * direct.max(1.0));
}

#[test]
fn persistent_returns_nearest_retrospective_state() {
    let ds = small_dataset("case33bw", RedundancyLevel::Lowest, 40, true);
    let window = test_window(&ds, 0);
    let w = ds.model.weights(Subset::Available);
    // A snapshot equal to a window sample selects that sample.
    let target = &window.samples[7];
    let x = persistent_estimate(&window, &target.z_a, &w).unwrap();
    assert_eq!(x, target.x_retro);
    // Window of one.
    let single = HistoryWindow::new(vec![window.samples[3].clone()]);
    let x = persistent_estimate(&single, &ds.instances[ds.test_ids[0]].z_a, &w).unwrap();
    assert_eq!(x, window.samples[3].x_retro);
    // Composition with the 1-NN selection.
    let z = &ds.instances[ds.test_ids[0]].z_a;
    let nn = knn_select(&window, z, 1, &w).unwrap();
    assert_eq!(persistent_estimate(&window, z, &w).unwrap(), window.samples[nn.positions[0]].x_retro);
}

fn robust_setup() -> (crate::scenario::Dataset, HistoryWindow, MeasurementVector) {
    let ds = small_dataset("case39", RedundancyLevel::High, 60, true);
    let window = test_window(&ds, 0);
    let z = ds.instances[ds.test_ids[0]].z_a.clone();
    (ds, window, z)
}

#[test]
fn robust_collapses_to_vanilla_at_rho_min() {
    let (ds, window, z) = robust_setup();
    let k = 4;
    let (xv, _) = vanilla_estimate(&ds.model, &window, &z, k).unwrap();
    let grid = compute_rho_grid(&window, &z, k, 5, &ds.model.weights(Subset::Available)).unwrap();
    let (xr, state) = robust_estimate(&ds.model, &window, &z, k, &xv, grid.rho_min).unwrap();
    assert!(state.converged);
    for (a, b) in xr.to_full().iter().zip(xv.to_full()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn robust_certificates_across_grid() {
    let (ds, window, z) = robust_setup();
    let k = 4;
    let set = robust_candidates(&ds.model, &window, &z, k, 6).unwrap();
    let mut last = f64::NEG_INFINITY;
    for c in &set.candidates {
        let (_, s) = c.result.as_ref().unwrap();
        assert!(s.converged);
        assert!(s.objective <= s.warm_objective);
        assert!((s.objective - s.dual_objective).abs() <= 1e-7 * (1.0 + s.objective.abs()));
        assert!(s.dual_residual <= 1e-7 * (1.0 + s.objective.abs()));
        assert!(s.constraint_violation < 1e-8);
        assert!(s.objective >= last - 1e-9 * s.objective.abs(), "{} < {last}", s.objective);
        last = s.objective;
        let w = &s.weights;
        assert!(w.iter().all(|&v| (-1e-10..=1.0 / k as f64 + 1e-10).contains(&v)));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
    // At rho_max every sample may carry weight, still capped by 1/K.
    let data = RobustData {
        z_a: DVector::from_column_slice(&z.values),
        z_d: window.samples.iter().map(|s| DVector::from_column_slice(&s.z_d.values)).collect(),
        distances: window.distances(&z, &ds.model.weights(Subset::Available)),
        k,
    };
    let top = set.candidates.last().unwrap().result.as_ref().unwrap();
    let wc = worst_case(&GridSplitModel::new(&ds.model), &data, &top.1.x, set.grid.rho_max).unwrap();
    let wd: f64 = wc.weights.iter().zip(&data.distances).map(|(a, b)| a * b).sum();
    assert!(wd <= set.grid.rho_max + 1e-8);
}

fn dummy_state(x: &StateVector) -> RobustNlpState {
    RobustNlpState {
        x: x.to_free(),
        rho: 1.0,
        weights: vec![],
        lambda: vec![],
        mu1: 0.0,
        mu2: 0.0,
        objective: 0.0,
        dual_objective: 0.0,
        dual_residual: 0.0,
        warm_objective: 0.0,
        max_lp_gap: 0.0,
        duality_gap: 0.0,
        constraint_violation: 0.0,
        rounds: 1,
        converged: true,
    }
}

/// Two neighbors with retrospective states `a` and `b`; candidate `c`
/// (1-based) equal to their mean.
fn hand_built_set(c: usize) -> (HistoryWindow, CandidateSet) {
    let mut a = StateVector::flat(3, 0);
    a.v_mag = vec![1.0, 0.98, 0.96];
    a.v_ang = vec![0.0, -0.01, -0.02];
    let mut b = a.clone();
    b.v_mag = vec![1.0, 0.96, 0.92];
    b.v_ang = vec![0.0, -0.03, -0.06];
    let mut mean = a.clone();
    for i in 0..3 {
        mean.v_mag[i] = 0.5 * (a.v_mag[i] + b.v_mag[i]);
        mean.v_ang[i] = 0.5 * (a.v_ang[i] + b.v_ang[i]);
    }
    let window = HistoryWindow::new(
        [a, b]
            .into_iter()
            .enumerate()
            .map(|(i, x)| HistorySample {
                sample_id: i,
                z_a: mv(&[i as f64]),
                z_d: mv(&[0.0]),
                x_retro: x,
            })
            .collect(),
    );
    let candidates = (1..=5)
        .map(|i| {
            let mut x = mean.clone();
            if i != c {
                x.v_mag[2] += 0.01 * (i as f64 - c as f64);
            }
            Candidate {
                rho: i as f64,
                result: Ok((x.clone(), dummy_state(&x))),
            }
        })
        .collect();
    let set = CandidateSet {
        vanilla: mean.clone(),
        vanilla_report: crate::optim::WlsReport {
            x: mean.to_free(),
            iterations: 0,
            converged: true,
            objective: 0.0,
            constraint_violation: 0.0,
        },
        neighbors: NeighborSet {
            sample_ids: vec![0, 1],
            positions: vec![0, 1],
            distances: vec![0.0, 1.0],
        },
        grid: RhoGrid {
            rho_min: 1.0,
            rho_max: 5.0,
            values: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            degenerate: false,
        },
        candidates,
    };
    (window, set)
}

#[test]
fn selection_picks_neighbor_mean() {
    let (window, set) = hand_built_set(3);
    let rec = select_candidate(&set, SelectionRule::NeighborAverage(&window), Method::Rcse).unwrap();
    assert_eq!(rec.rho_selected, Some(3.0));
    // Recompute every validation error from the stored candidates.
    let errors = rec.validation_errors.unwrap();
    for (c, e) in set.candidates.iter().zip(&errors) {
        let x = c.state().unwrap();
        let expect = (x.squared_distance(&window.samples[0].x_retro)
            + x.squared_distance(&window.samples[1].x_retro))
            / 2.0;
        assert!((e.unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn selection_ties_go_to_smallest_radius() {
    let (window, mut set) = hand_built_set(3);
    let dup = set.candidates[2].clone();
    set.candidates[4] = Candidate { rho: 5.0, ..dup };
    let rec = select_candidate(&set, SelectionRule::NeighborAverage(&window), Method::Rcse).unwrap();
    assert_eq!(rec.rho_selected, Some(3.0));
}

#[test]
fn oracle_selection_hits_exact_candidate() {
    let (window, set) = hand_built_set(2);
    let target = set.candidates[3].state().unwrap().clone();
    let rec = select_candidate(&set, SelectionRule::Oracle(&target), Method::Anticipative).unwrap();
    assert_eq!(rec.rho_selected, Some(4.0));
    assert!(!rec.implementable);
    let rcse = select_candidate(&set, SelectionRule::NeighborAverage(&window), Method::Rcse).unwrap();
    assert!(rec.x_hat.squared_distance(&target) <= rcse.x_hat.squared_distance(&target));
    assert!(rcse.implementable);
}

#[test]
fn non_converged_candidates_are_skipped() {
    let (window, mut set) = hand_built_set(3);
    if let Ok((_, s)) = &mut set.candidates[2].result {
        s.converged = false;
    }
    let rec = select_candidate(&set, SelectionRule::NeighborAverage(&window), Method::Rcse).unwrap();
    assert_ne!(rec.rho_selected, Some(3.0));
    assert_eq!(rec.flags.failed_candidates, 1);
}

#[test]
fn rcse_with_single_radius() {
    let (ds, window, z) = robust_setup();
    let rec = rcse_estimate(&ds.model, &window, &z, 4, 1).unwrap();
    assert_eq!(rec.validation_errors.as_ref().unwrap().len(), 1);
    assert!(rec.rho_selected.is_some());
}

#[test]
fn estimates_are_deterministic() {
    let (ds, window, z) = robust_setup();
    let a = rcse_estimate(&ds.model, &window, &z, 4, 4).unwrap();
    let b = rcse_estimate(&ds.model, &window, &z, 4, 4).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
