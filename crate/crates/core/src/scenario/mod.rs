//! Synthetic datasets: perturbed load profiles, power-flow ground truth,
//! noisy measurement snapshots and per-snapshot history windows.

mod io;

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_dataset, write_dataset};

use crate::estimators::{wls_estimate, HistorySample, HistoryWindow};
use crate::grid::{
    plan_measurements, shipped_case, CaseError, ChannelKind, MeasurementPlan, NetworkCase,
    PlanError, RedundancyLevel, SIGMA_POWER, SIGMA_VOLTAGE,
};
use crate::powerflow::{
    solve_powerflow, MeasurementModel, MeasurementVector, PowerFlowOptions, StateVector, Subset,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{count} of {pool} instances needed a resample after power-flow divergence")]
    TooManyDivergences { count: usize, pool: usize },
    #[error("instance {0} diverged on every resample")]
    Unsolvable(usize),
    #[error("retrospective estimate of instance {id} failed: {message}")]
    Retrospective { id: usize, message: String },
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub case_name: String,
    /// Load participation variability, percent.
    pub delta: f64,
    /// Multipliers applied to every load's nominal power factor.
    pub pf_range: (f64, f64),
    pub pool_size: usize,
    pub test_size: usize,
    pub window_size: usize,
    pub k: usize,
    pub redundancy: RedundancyLevel,
    pub sigma_power: f64,
    pub sigma_voltage: f64,
    pub grid_cardinality: usize,
    pub master_seed: u64,
}

impl ScenarioConfig {
    /// Desk-scale defaults: pool of 2 000 (33-bus) or 5 000 (39-bus)
    /// instances, 50 test snapshots, `|S_t| = 50`, `K = 7`, `δ = 5`, and the
    /// wide (distribution) or narrow (transmission) power-factor range.
    pub fn desk(case_name: &str, redundancy: RedundancyLevel) -> Self {
        let transmission = matches!(case_name, "case39" | "ieee39");
        ScenarioConfig {
            case_name: case_name.to_string(),
            delta: 5.0,
            pf_range: if transmission { (0.975, 1.025) } else { (0.7, 1.3) },
            pool_size: if transmission { 5000 } else { 2000 },
            test_size: 50,
            window_size: 50,
            k: 7,
            redundancy,
            sigma_power: SIGMA_POWER,
            sigma_voltage: SIGMA_VOLTAGE,
            grid_cardinality: crate::estimators::DEFAULT_GRID_CARDINALITY,
            master_seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: &str| Err(ScenarioError::Config(m.to_string()));
        if !(self.delta >= 0.0 && self.delta < 100.0) {
            return err("delta must lie in [0, 100)");
        }
        let (lo, hi) = self.pf_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return err("pf_range must satisfy 0 < lo <= hi");
        }
        if self.k == 0 || self.k > self.window_size {
            return err("K must satisfy 1 <= K <= window_size");
        }
        if self.test_size >= self.pool_size || self.window_size > self.pool_size - self.test_size {
            return err("window_size must not exceed pool_size - test_size");
        }
        if self.sigma_power < 0.0 || self.sigma_voltage < 0.0 {
            return err("noise sigmas must be nonnegative");
        }
        if self.grid_cardinality == 0 {
            return err("grid_cardinality must be positive");
        }
        Ok(())
    }
}

/// One synthetic snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: usize,
    pub load_profile: Vec<(f64, f64)>,
    pub x_true: StateVector,
    pub z_a: MeasurementVector,
    pub z_d: MeasurementVector,
}

#[derive(Debug)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub model: MeasurementModel,
    pub instances: Vec<Instance>,
    /// Held-out snapshots, ascending.
    pub test_ids: Vec<usize>,
    /// Power-flow resamples needed while generating.
    pub divergences: usize,
    retro: Vec<OnceLock<Result<StateVector, String>>>,
}

impl Dataset {
    fn assemble(
        config: ScenarioConfig,
        model: MeasurementModel,
        instances: Vec<Instance>,
        test_ids: Vec<usize>,
        divergences: usize,
    ) -> Self {
        let retro = (0..instances.len()).map(|_| OnceLock::new()).collect();
        Dataset {
            config,
            model,
            instances,
            test_ids,
            divergences,
            retro,
        }
    }

    pub fn plan(&self) -> &MeasurementPlan {
        &self.model.plan
    }

    /// Instances available as history (everything but the test set).
    pub fn history_ids(&self) -> Vec<usize> {
        (0..self.instances.len())
            .filter(|i| self.test_ids.binary_search(i).is_err())
            .collect()
    }

    /// Retrospective estimate from all channels of instance `id`, computed
    /// on first use.
    pub fn retro_state(&self, id: usize) -> Result<&StateVector, ScenarioError> {
        self.retro[id]
            .get_or_init(|| {
                let inst = &self.instances[id];
                match wls_estimate(&self.model, &inst.z_a, &inst.z_d) {
                    Ok((x, rep)) if rep.converged => Ok(x),
                    Ok(_) => Err("did not converge".to_string()),
                    Err(e) => Err(e.to_string()),
                }
            })
            .as_ref()
            .map_err(|message| ScenarioError::Retrospective {
                id,
                message: message.clone(),
            })
    }

    pub(crate) fn set_retro(&self, id: usize, x: StateVector) {
        let _ = self.retro[id].set(Ok(x));
    }

    pub(crate) fn cached_retro(&self, id: usize) -> Option<&StateVector> {
        self.retro[id].get().and_then(|r| r.as_ref().ok())
    }
}

/// Per-load multipliers `U[1 − δ/100, 1 + δ/100]` applied to the
/// participation factors before renormalization.
pub fn participation_multipliers(n: usize, delta: f64, rng: &mut impl Rng) -> Vec<f64> {
    let half = delta / 100.0;
    (0..n)
        .map(|_| {
            if half == 0.0 {
                1.0
            } else {
                rng.random_range(1.0 - half..=1.0 + half)
            }
        })
        .collect()
}

/// Perturbed per-bus loads `(P, Q)`.
///
/// Each load's share of the total demand is scaled by a uniform multiplier
/// and the shares are renormalized so the total active demand is unchanged.
/// Each power factor is scaled by a uniform draw from `pf_range` and capped
/// at one; reactive demand follows from the new power factor.
pub fn perturb_loads(
    case: &NetworkCase,
    delta: f64,
    pf_range: (f64, f64),
    rng: &mut impl Rng,
) -> Vec<(f64, f64)> {
    let base = case.base_loads();
    let loads: Vec<usize> = (0..base.len()).filter(|&i| base[i].0 != 0.0).collect();
    let total: f64 = loads.iter().map(|&i| base[i].0).sum();
    let mult = participation_multipliers(loads.len(), delta, rng);
    let scaled: Vec<f64> = loads.iter().zip(&mult).map(|(&i, m)| base[i].0 * m).collect();
    let scaled_total: f64 = scaled.iter().sum();

    let mut out = base.clone();
    for (k, &i) in loads.iter().enumerate() {
        let (p0, q0) = base[i];
        let p = if delta == 0.0 {
            p0
        } else {
            total * scaled[k] / scaled_total
        };
        let m = if pf_range.0 == pf_range.1 {
            pf_range.0
        } else {
            rng.random_range(pf_range.0..=pf_range.1)
        };
        let q = if m == 1.0 && delta == 0.0 {
            q0
        } else {
            let pf0 = p0.abs() / p0.hypot(q0);
            let pf = (pf0 * m).min(1.0);
            q0.signum() * p.abs() * (1.0 - pf * pf).max(0.0).sqrt() / pf
        };
        out[i] = (p, q);
    }
    out
}

const MAX_RESAMPLES: u64 = 64;

fn instance_rng(master_seed: u64, id: usize, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((id as u64) << 8) | attempt);
    rng
}

/// Builds the measurement plan of a configuration. Channel sigmas follow
/// the configuration where positive.
pub fn scenario_model(config: &ScenarioConfig) -> Result<MeasurementModel, ScenarioError> {
    let case = shipped_case(&config.case_name)?;
    let mut plan = plan_measurements(&case, config.redundancy, config.master_seed)?;
    for (c, ch) in plan.channels.iter().enumerate() {
        let sigma = if ch.kind.is_voltage() {
            config.sigma_voltage
        } else {
            config.sigma_power
        };
        if sigma > 0.0 {
            plan.sigma[c] = sigma;
            plan.weight[c] = 1.0 / sigma;
        }
    }
    Ok(MeasurementModel::new(case, plan)?)
}

fn noise_sigma(config: &ScenarioConfig, kind: ChannelKind) -> f64 {
    if kind.is_voltage() {
        config.sigma_voltage
    } else {
        config.sigma_power
    }
}

/// Generates the instance pool of a configuration. Every instance draws
/// from its own counter-derived random stream, so the result does not
/// depend on scheduling.
pub fn generate_dataset(config: &ScenarioConfig) -> Result<Dataset, ScenarioError> {
    config.validate()?;
    let model = scenario_model(config)?;
    let case = &model.case;
    let start = StateVector::initial(case);
    let options = PowerFlowOptions::default();

    let results: Vec<Result<(Instance, u64), ScenarioError>> = (0..config.pool_size)
        .into_par_iter()
        .map(|id| {
            for attempt in 0..MAX_RESAMPLES {
                let mut rng = instance_rng(config.master_seed, id, attempt);
                let loads = perturb_loads(case, config.delta, config.pf_range, &mut rng);
                let sched = case.scheduled_injections(&loads);
                let Ok(sol) = solve_powerflow(case, &model.ybus, &sched, &start, &options) else {
                    continue;
                };
                let clean = model.eval(&sol.state, Subset::All).values;
                let noisy: Vec<f64> = clean
                    .iter()
                    .zip(&model.plan.channels)
                    .map(|(v, ch)| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        v + noise_sigma(config, ch.kind) * e
                    })
                    .collect();
                let pick = |idx: &[usize]| MeasurementVector::new(idx.iter().map(|&c| noisy[c]).collect());
                let inst = Instance {
                    instance_id: id,
                    load_profile: loads,
                    x_true: sol.state,
                    z_a: pick(&model.plan.available),
                    z_d: pick(&model.plan.delayed),
                };
                return Ok((inst, attempt));
            }
            Err(ScenarioError::Unsolvable(id))
        })
        .collect();
    let mut instances = Vec::with_capacity(config.pool_size);
    let mut divergences = 0;
    for r in results {
        let (inst, attempts) = r?;
        divergences += attempts as usize;
        instances.push(inst);
    }
    if divergences * 100 > config.pool_size {
        return Err(ScenarioError::TooManyDivergences {
            count: divergences,
            pool: config.pool_size,
        });
    }

    let mut ids: Vec<usize> = (0..config.pool_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
    rng.set_stream(u64::MAX);
    ids.shuffle(&mut rng);
    let mut test_ids = ids[..config.test_size].to_vec();
    test_ids.sort_unstable();
    Ok(Dataset::assemble(config.clone(), model, instances, test_ids, divergences))
}

/// The `window_size` history instances closest to the test snapshot in the
/// weighted real-time measurement space (ties by instance id), each with its
/// retrospective estimate. Test instances never enter a window.
pub fn build_history(
    dataset: &Dataset,
    test_id: usize,
    window_size: usize,
) -> Result<HistoryWindow, ScenarioError> {
    let weights = dataset.model.weights(Subset::Available);
    let z_t = &dataset.instances[test_id].z_a;
    let pool: Vec<usize> = dataset
        .history_ids()
        .into_iter()
        .filter(|&i| i != test_id)
        .collect();
    if pool.len() < window_size {
        return Err(ScenarioError::Config(format!(
            "history pool has {} instances, window needs {window_size}",
            pool.len()
        )));
    }
    let mut ranked: Vec<(f64, usize)> = pool
        .iter()
        .map(|&i| (z_t.weighted_sq_distance(&dataset.instances[i].z_a, &weights), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(window_size);
    let samples = ranked
        .iter()
        .map(|&(_, i)| {
            let inst = &dataset.instances[i];
            Ok(HistorySample {
                sample_id: i,
                z_a: inst.z_a.clone(),
                z_d: inst.z_d.clone(),
                x_retro: dataset.retro_state(i)?.clone(),
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    Ok(HistoryWindow::new(samples))
}
