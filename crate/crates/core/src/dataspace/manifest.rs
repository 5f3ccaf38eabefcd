//! JSONL shard manifest, one record per client.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataspace::{ClientDataset, CorruptionKind, Quality};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardRecord {
    pub client_id: usize,
    pub size: usize,
    pub truth_tag: Quality,
    pub noise_level: f64,
    pub kinds: Vec<CorruptionKind>,
    pub seed: Option<u64>,
}

impl ShardRecord {
    pub fn of<T: Scalar>(c: &ClientDataset<T>) -> Self {
        Self {
            client_id: c.client_id,
            size: c.len(),
            truth_tag: c.truth_tag,
            noise_level: c.noise_level(),
            kinds: c.corruption.as_ref().map(|r| r.kinds.clone()).unwrap_or_default(),
            seed: c.corruption.as_ref().map(|r| r.seed),
        }
    }
}

pub fn shard_manifest_lines<T: Scalar>(clients: &[ClientDataset<T>]) -> Vec<String> {
    clients
        .iter()
        .map(|c| serde_json::to_string(&ShardRecord::of(c)).expect("shard record serializes"))
        .collect()
}

pub fn write_shard_manifest<T: Scalar>(path: &Path, clients: &[ClientDataset<T>]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for line in shard_manifest_lines(clients) {
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
