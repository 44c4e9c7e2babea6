//! Posterior chain storage.
//!
//! On disk a chain is a directory with `meta.json`, `chain.jsonl` (one
//! snapshot per line) and `trees.nwk` (one Newick tree per iteration).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::Hyperparameters;

pub const CHAIN_SCHEMA_VERSION: u32 = 1;

/// State of the sampler after one sweep. Memberships are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: usize,
    pub tree: String,
    /// K x J response probabilities.
    pub theta: Vec<Vec<f64>>,
    pub class_probability: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub c: f64,
    pub memberships: Vec<usize>,
    pub log_posterior: f64,
    pub topology_accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub schema_version: u32,
    pub n_observations: usize,
    pub n_items: usize,
    pub n_groups: usize,
    pub n_classes: usize,
    pub total_iters: usize,
    pub seed: u64,
    pub wall_time_secs: f64,
    pub item_labels: Vec<String>,
    pub group_names: Vec<String>,
    /// 1-based item indices per group.
    pub item_membership: Vec<Vec<usize>>,
    pub hyperparameters: Hyperparameters,
    pub topology_moves_per_iter: usize,
    pub topology_proposal: String,
    pub location_update: String,
    pub fix_c: bool,
    pub accepted_topology_moves: usize,
    pub skipped_topology_moves: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub meta: ChainMeta,
    pub snapshots: Vec<Snapshot>,
}

impl ChainMeta {
    /// Completion banner printed after a fit.
    pub fn run_header(&self) -> String {
        run_header(self.n_classes, self.n_observations, self.n_items, self.n_groups, self.total_iters)
    }
}

pub fn run_header(k: usize, n: usize, j: usize, g: usize, total_iters: usize) -> String {
    let rule = "-".repeat(45);
    format!(
        "{rule}\nDDT-LCM with K = {k} latent classes run on {n} observations and {j} items in {g} major groups. {total_iters} iterations of posterior samples drawn.\n{rule}"
    )
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.snapshots {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn snapshots_from_jsonl(text: &str) -> Result<Vec<Snapshot>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Serialization(format!("chain.jsonl line {}: {e}", i + 1)))
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        let mut w = BufWriter::new(fs::File::create(dir.join("chain.jsonl"))?);
        for s in &self.snapshots {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        let mut t = BufWriter::new(fs::File::create(dir.join("trees.nwk"))?);
        for s in &self.snapshots {
            writeln!(t, "{}", s.tree)?;
        }
        t.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: ChainMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)
            .map_err(|e| Error::Serialization(format!("meta.json: {e}")))?;
        if meta.schema_version != CHAIN_SCHEMA_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported chain schema_version {}",
                meta.schema_version
            )));
        }
        let f = BufReader::new(fs::File::open(dir.join("chain.jsonl"))?);
        let mut snapshots = Vec::new();
        for (i, line) in f.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            snapshots.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::Serialization(format!("chain.jsonl line {}: {e}", i + 1)))?,
            );
        }
        Ok(Self { meta, snapshots })
    }
}
