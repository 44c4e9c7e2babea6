//! Response CSV files and simulation truth.
//!
//! A response file has a header `id,<item label>,...` and one row per
//! observation with 0/1 entries.

use std::path::Path;

use serde::{Deserialize, Serialize};
use treelcm_core::{ResponseMatrix, SimulatedDataset};

use crate::error::{CliError, CliResult};

pub fn read_responses(path: &Path) -> CliResult<ResponseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let header = rdr.headers().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?.clone();
    if header.len() < 2 {
        return Err(CliError::data(format!(
            "{}: expected a header `id,<item>,...` with at least one item",
            path.display()
        )));
    }
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut row_ids = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::data(format!("{}: line {line}: {e}", path.display())))?;
        row_ids.push(rec.get(0).unwrap_or_default().to_string());
        let row = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, v)| match v {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(CliError::data(format!(
                    "{}: line {line}, column `{}`: expected 0 or 1, found `{other}`",
                    path.display(),
                    col_ids[j]
                ))),
            })
            .collect::<CliResult<Vec<u8>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::data(format!("{}: no observations", path.display())));
    }
    ResponseMatrix::new(rows, row_ids, col_ids).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn write_responses(path: &Path, data: &ResponseMatrix) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let io_err = |e: csv::Error| CliError::io(path, e);
    w.write_record(std::iter::once("id").chain(data.col_ids.iter().map(String::as_str)))
        .map_err(io_err)?;
    for i in 0..data.n_rows() {
        let mut rec = vec![data.row_ids[i].clone()];
        rec.extend(data.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Ground truth written next to simulated responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub schema_version: u32,
    pub n_observations: usize,
    pub n_items: usize,
    pub tree: String,
    pub class_probability: Vec<f64>,
    /// K x J response probabilities.
    pub theta: Vec<Vec<f64>>,
    /// Logit-scale location of every leaf, K x J.
    pub leaf_locations: Vec<Vec<f64>>,
    /// 1-based class of every observation.
    pub memberships: Vec<usize>,
    #[serde(rename = "Sigma_by_group")]
    pub sigma_by_group: Vec<f64>,
    pub group_names: Vec<String>,
    pub item_labels: Vec<String>,
    pub seed_parameter: u64,
    pub seed_response: u64,
}

impl Truth {
    pub fn from_dataset(sim: &SimulatedDataset, sigma_by_group: &[f64], group_names: &[String]) -> Self {
        Self {
            schema_version: 1,
            n_observations: sim.response_matrix.n_rows(),
            n_items: sim.response_matrix.n_cols(),
            tree: sim.tree.to_newick(),
            class_probability: sim.class_probability.as_slice().to_vec(),
            theta: sim.theta.0.clone(),
            leaf_locations: treelcm_core::lcm::leaf_locations(&sim.tree, &sim.locations),
            memberships: sim.memberships.iter().map(|z| z + 1).collect(),
            sigma_by_group: sigma_by_group.to_vec(),
            group_names: group_names.to_vec(),
            item_labels: sim.response_matrix.col_ids.clone(),
            seed_parameter: sim.seed_parameter,
            seed_response: sim.seed_response,
        }
    }
}
