//! JSON-lines dataset files: one header record, then one sample per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::logging::LoggingPolicy;
use super::{BanditDataset, LoggedSample, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub num_samples: usize,
    pub num_arms: usize,
    pub context_dim: usize,
    pub num_groups: usize,
    pub reward_upper_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logging: Option<LoggingPolicy>,
}

pub fn write_jsonl(path: &Path, dataset: &BanditDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = DatasetHeader {
        num_samples: dataset.len(),
        num_arms: dataset.num_arms(),
        context_dim: dataset.context_dim(),
        num_groups: dataset.num_groups(),
        reward_upper_bound: dataset.reward_upper_bound(),
        seed: dataset.provenance().map(|p| p.seed),
        logging: dataset.provenance().map(|p| p.logging.clone()),
    };
    let write_line = |out: &mut BufWriter<File>, line: String| {
        out.write_all(line.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write_line(&mut out, serde_json::to_string(&header)?)?;
    for s in dataset.samples() {
        write_line(&mut out, serde_json::to_string(s)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<BanditDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{} is empty", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    let mut samples = Vec::with_capacity(header.num_samples);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LoggedSample = serde_json::from_str(&line)?;
        samples.push(LoggedSample::new(
            s.context,
            s.action,
            s.reward,
            s.propensity,
            s.group,
        )?);
    }
    if samples.len() != header.num_samples {
        return Err(Error::Data(format!(
            "header declares {} samples, file has {}",
            header.num_samples,
            samples.len()
        )));
    }
    let dataset = BanditDataset::new(
        samples,
        header.num_arms,
        header.context_dim,
        header.num_groups,
        header.reward_upper_bound,
    )?;
    Ok(match (header.seed, header.logging) {
        (Some(seed), Some(logging)) => dataset.with_provenance(Provenance { seed, logging }),
        _ => dataset,
    })
}
