//! On-disk layout of a generated synthetic dataset:
//!
//! ```text
//! DIR/manifest.jsonl          one DatasetEntry per line
//! DIR/flows/<id>.flo
//! DIR/proposals/<id>.json     ProposalFeatures
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use motion_wsod::flowio::write_flow_file;
use motion_wsod::synth::{SynthSample, TruthBox};
use motion_wsod::{ImageLabels, ProposalFeatures};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub split: String,
    pub labels: ImageLabels,
    pub truth: Vec<TruthBox>,
    pub flow: String,
    pub proposals: String,
}

pub fn write_dataset(dir: &Path, splits: &[(&str, &[SynthSample])]) -> Result<usize> {
    fs::create_dir_all(dir.join("flows"))?;
    fs::create_dir_all(dir.join("proposals"))?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?);
    let mut n = 0;
    for (split, samples) in splits {
        for s in *samples {
            let id = format!("{split}-{}", s.id);
            let flow = format!("flows/{id}.flo");
            let proposals = format!("proposals/{id}.json");
            write_flow_file(&s.flow, dir.join(&flow))?;
            fs::write(dir.join(&proposals), serde_json::to_vec(&s.proposals)?)?;
            let entry = DatasetEntry {
                id,
                split: split.to_string(),
                labels: s.labels.clone(),
                truth: s.truth.clone(),
                flow,
                proposals,
            };
            serde_json::to_writer(&mut manifest, &entry)?;
            manifest.write_all(b"\n")?;
            n += 1;
        }
    }
    manifest.flush()?;
    Ok(n)
}

/// Entries of `split` (all entries when `None`), in manifest order.
pub fn read_entries(dir: &Path, split: Option<&str>) -> Result<Vec<DatasetEntry>> {
    let path = dir.join("manifest.jsonl");
    let f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: DatasetEntry =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), n + 1))?;
        if split.is_none_or(|s| s == e.split) {
            out.push(e);
        }
    }
    Ok(out)
}

pub fn read_proposals(dir: &Path, e: &DatasetEntry) -> Result<ProposalFeatures> {
    let path = dir.join(&e.proposals);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}
