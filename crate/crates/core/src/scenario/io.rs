use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{scenario_model, Dataset, Instance, ScenarioConfig, ScenarioError};
use crate::grid::MeasurementPlan;
use crate::powerflow::{MeasurementVector, StateVector};

#[derive(Serialize, Deserialize)]
struct Header {
    config: ScenarioConfig,
    plan: MeasurementPlan,
    test_ids: Vec<usize>,
    divergences: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    instance_id: usize,
    load_profile: Vec<(f64, f64)>,
    x_true: StateVector,
    z_a: MeasurementVector,
    z_d: MeasurementVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    retro_state: Option<StateVector>,
}

/// Writes a JSON-lines file: one header record, then one record per
/// instance. With `include_retro`, every retrospective state is computed
/// and stored.
pub fn write_dataset(
    dataset: &Dataset,
    mut out: impl Write,
    include_retro: bool,
) -> Result<(), ScenarioError> {
    let json = |e: serde_json::Error| ScenarioError::Format(e.to_string());
    let header = Header {
        config: dataset.config.clone(),
        plan: dataset.plan().clone(),
        test_ids: dataset.test_ids.clone(),
        divergences: dataset.divergences,
    };
    serde_json::to_writer(&mut out, &header).map_err(json)?;
    out.write_all(b"\n")?;
    if include_retro {
        use rayon::prelude::*;
        (0..dataset.instances.len())
            .into_par_iter()
            .try_for_each(|i| dataset.retro_state(i).map(|_| ()))?;
    }
    for inst in &dataset.instances {
        let rec = Record {
            instance_id: inst.instance_id,
            load_profile: inst.load_profile.clone(),
            x_true: inst.x_true.clone(),
            z_a: inst.z_a.clone(),
            z_d: inst.z_d.clone(),
            retro_state: if include_retro {
                dataset.cached_retro(inst.instance_id).cloned()
            } else {
                None
            },
        };
        serde_json::to_writer(&mut out, &rec).map_err(json)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a file written by [`write_dataset`]. The plan stored in the header
/// must match the one the configuration produces.
pub fn read_dataset(input: impl BufRead) -> Result<Dataset, ScenarioError> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| ScenarioError::Format("empty dataset file".into()))??;
    let header: Header = serde_json::from_str(&first)
        .map_err(|e| ScenarioError::Format(format!("header: {e}")))?;
    header.config.validate()?;
    let model = scenario_model(&header.config)?;
    if model.plan != header.plan {
        return Err(ScenarioError::Format(
            "stored measurement plan differs from the configuration's plan".into(),
        ));
    }
    let mut instances = Vec::new();
    let mut retro = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| ScenarioError::Format(format!("record {}: {e}", n + 1)))?;
        if rec.instance_id != instances.len() {
            return Err(ScenarioError::Format(format!(
                "record {} has instance id {}",
                n + 1,
                rec.instance_id
            )));
        }
        retro.push(rec.retro_state);
        instances.push(Instance {
            instance_id: rec.instance_id,
            load_profile: rec.load_profile,
            x_true: rec.x_true,
            z_a: rec.z_a,
            z_d: rec.z_d,
        });
    }
    if instances.len() != header.config.pool_size {
        return Err(ScenarioError::Format(format!(
            "expected {} instances, found {}",
            header.config.pool_size,
            instances.len()
        )));
    }
    let ds = Dataset::assemble(header.config, model, instances, header.test_ids, header.divergences);
    for (i, r) in retro.into_iter().enumerate() {
        if let Some(x) = r {
            ds.set_retro(i, x);
        }
    }
    Ok(ds)
}
