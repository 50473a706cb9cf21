//! JSON case schema.
//!
//! ```text
//! {
//!   "name": "case33bw",
//!   "base_mva": 10.0,
//!   "buses": [{"id": 1, "kind": "slack", "load_p": 0.0, "load_q": 0.0,
//!              "shunt_g": 0.0, "shunt_b": 0.0, "base_kv": 12.66}, ...],
//!   "branches": [{"from": 1, "to": 2, "r": 0.0058, "x": 0.0029, "b": 0.0,
//!                 "tap": 1.0, "shift_rad": 0.0, "in_service": true}, ...],
//!   "generators": [{"bus": 1, "p_set": 0.0, "q_min": -1.0, "q_max": 1.0,
//!                   "v_set": 1.0}, ...]
//! }
//! ```
//!
//! All powers, impedances and shunts are per unit on `base_mva`. Bus ids
//! are the external (1-based) numbers; branches and generators refer to
//! them. `tap`, `shift_rad`, `in_service`, `name` and the shunt fields are
//! optional.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{BranchRecord, BusKind, BusRecord, CaseError, Generator, NetworkCase};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    #[serde(default)]
    name: String,
    base_mva: f64,
    buses: Vec<BusEntry>,
    branches: Vec<BranchEntry>,
    generators: Vec<GenEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusEntry {
    id: usize,
    kind: BusKind,
    #[serde(default)]
    load_p: f64,
    #[serde(default)]
    load_q: f64,
    #[serde(default)]
    shunt_g: f64,
    #[serde(default)]
    shunt_b: f64,
    #[serde(default)]
    base_kv: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchEntry {
    from: usize,
    to: usize,
    r: f64,
    x: f64,
    #[serde(default)]
    b: f64,
    #[serde(default = "unit")]
    tap: f64,
    #[serde(default)]
    shift_rad: f64,
    #[serde(default = "yes")]
    in_service: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenEntry {
    bus: usize,
    #[serde(default)]
    p_set: f64,
    #[serde(default)]
    q_min: f64,
    #[serde(default)]
    q_max: f64,
    #[serde(default = "unit")]
    v_set: f64,
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Parses a case in the JSON schema documented above.
pub fn parse_json_case(text: &str) -> Result<NetworkCase, CaseError> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| CaseError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let index: HashMap<usize, usize> = file
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    let lookup = |id: usize, record: String| {
        index.get(&id).copied().ok_or_else(|| CaseError::Semantic {
            record,
            message: format!("references missing bus {id}"),
        })
    };

    let buses = file
        .buses
        .iter()
        .map(|b| BusRecord {
            id: b.id,
            kind: b.kind,
            load_p: b.load_p,
            load_q: b.load_q,
            shunt_g: b.shunt_g,
            shunt_b: b.shunt_b,
            base_kv: b.base_kv,
        })
        .collect();
    let mut branches = Vec::with_capacity(file.branches.len());
    for (k, br) in file.branches.iter().enumerate() {
        let record = format!("branch {}", k + 1);
        branches.push(BranchRecord {
            from_bus: lookup(br.from, record.clone())?,
            to_bus: lookup(br.to, record)?,
            r: br.r,
            x: br.x,
            b_charging: br.b,
            tap_ratio: if br.tap == 0.0 { 1.0 } else { br.tap },
            phase_shift: br.shift_rad,
            in_service: br.in_service,
        });
    }
    let mut generators = Vec::with_capacity(file.generators.len());
    for (k, g) in file.generators.iter().enumerate() {
        generators.push(Generator {
            bus: lookup(g.bus, format!("generator {}", k + 1))?,
            p_set: g.p_set,
            q_min: g.q_min,
            q_max: g.q_max,
            v_set: g.v_set,
        });
    }
    NetworkCase::new(file.name, file.base_mva, buses, branches, generators)
}

/// Serializes a case to the JSON schema. `parse_json_case` of the output
/// reproduces the case exactly.
pub fn to_json_string(case: &NetworkCase) -> String {
    let file = CaseFile {
        name: case.name.clone(),
        base_mva: case.base_mva,
        buses: case
            .buses
            .iter()
            .map(|b| BusEntry {
                id: b.id,
                kind: b.kind,
                load_p: b.load_p,
                load_q: b.load_q,
                shunt_g: b.shunt_g,
                shunt_b: b.shunt_b,
                base_kv: b.base_kv,
            })
            .collect(),
        branches: case
            .branches
            .iter()
            .map(|br| BranchEntry {
                from: case.external_id(br.from_bus),
                to: case.external_id(br.to_bus),
                r: br.r,
                x: br.x,
                b: br.b_charging,
                tap: br.tap_ratio,
                shift_rad: br.phase_shift,
                in_service: br.in_service,
            })
            .collect(),
        generators: case
            .generators
            .iter()
            .map(|g| GenEntry {
                bus: case.external_id(g.bus),
                p_set: g.p_set,
                q_min: g.q_min,
                q_max: g.q_max,
                v_set: g.v_set,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("case serialization cannot fail")
}
