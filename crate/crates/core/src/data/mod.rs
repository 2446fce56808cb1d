//! Dataset representation, the JSON-lines file format, and deterministic
//! splits.
//!
//! A dataset file is UTF-8 JSON-lines: one header object on the first line
//! (`version`, `task`, `d1`, `l`, `d2`, `d3_max`, `vocab`, `n_labels`,
//! `n_samples`), then one sample object per line. Token id 0 is reserved
//! for padding and id 1 for the leading classification token of every
//! note sequence.

mod batch;
mod generate;

pub use batch::{batches, LabelBlock, SampleBatch};
pub use generate::{generate, GeneratorSpec, Modality, SignalPlan, TaskSpec};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
/// First non-reserved token id.
pub const CONTENT_ID_BASE: usize = 2;

pub const DATASET_VERSION: u32 = 1;

/// Prediction task a dataset (and model) is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ArfBinary,
    DiagnosesMultilabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub task: TaskKind,
    pub d1: usize,
    pub l: usize,
    pub d2: usize,
    pub d3_max: usize,
    pub vocab: usize,
    pub n_labels: usize,
    pub n_samples: usize,
}

/// Labels of one sample: a 0/1 flag or the indices of the active labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleLabel {
    Binary(u8),
    Multilabel(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub ti: Vec<f64>,
    pub ts: Vec<Vec<f64>>,
    pub note_ids: Vec<usize>,
    pub label: SampleLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for sample in &self.samples {
            serde_json::to_writer(&mut out, sample)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Dataset("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        if header.version != DATASET_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported dataset version {}",
                header.version
            )));
        }
        let mut samples = Vec::with_capacity(header.n_samples);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str(&line)?);
        }
        if samples.len() != header.n_samples {
            return Err(Error::Dataset(format!(
                "header declares {} samples, file has {}",
                header.n_samples,
                samples.len()
            )));
        }
        let ds = Self { header, samples };
        ds.validate()?;
        Ok(ds)
    }

    /// Structural invariants every sample must satisfy.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        for (i, s) in self.samples.iter().enumerate() {
            let fail = |why: String| Err(Error::Dataset(format!("sample {i}: {why}")));
            if s.ti.len() != h.d1 {
                return fail(format!("ti has {} of {} features", s.ti.len(), h.d1));
            }
            if s.ts.len() != h.l || s.ts.iter().any(|row| row.len() != h.d2) {
                return fail("time series does not match (l, d2)".into());
            }
            if s.ts.iter().flatten().any(|v| !v.is_finite()) {
                return fail("time series contains non-finite values".into());
            }
            if s.note_ids.is_empty() {
                return fail("empty note sequence".into());
            }
            if s.note_ids.len() > h.d3_max {
                return fail(format!(
                    "{} note ids exceed d3_max {}",
                    s.note_ids.len(),
                    h.d3_max
                ));
            }
            if s.note_ids[0] != CLS_ID {
                return fail("note sequence must start with the classification token".into());
            }
            if s.note_ids.iter().any(|&id| id >= h.vocab) {
                return fail("note id out of vocabulary".into());
            }
            match (&s.label, h.task) {
                (SampleLabel::Binary(b), TaskKind::ArfBinary) => {
                    if *b > 1 {
                        return fail("binary label must be 0 or 1".into());
                    }
                }
                (SampleLabel::Multilabel(ids), TaskKind::DiagnosesMultilabel) => {
                    if ids.iter().any(|&l| l >= h.n_labels) {
                        return fail("label index out of range".into());
                    }
                }
                _ => return fail("label kind does not match the header task".into()),
            }
        }
        Ok(())
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<Sample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let mut header = self.header.clone();
        header.n_samples = samples.len();
        Dataset { header, samples }
    }
}

/// Deterministic 7 : 1.5 : 1.5 split into (train, valid, test).
///
/// Sizes follow the largest-remainder rule with ties resolved toward the
/// earlier split, so they are always within one sample of the exact
/// proportions and the three parts partition the dataset.
pub fn split(dataset: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let n = dataset.len();
    if n < 3 {
        return Err(Error::Dataset(format!(
            "cannot split {n} samples three ways"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngState::new(seed).stream("split").shuffle(&mut order);

    let ratios = [0.70, 0.15, 0.15];
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut by_fraction: Vec<usize> = (0..3).collect();
    by_fraction.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for idx in by_fraction {
        if leftover == 0 {
            break;
        }
        sizes[idx] += 1;
        leftover -= 1;
    }

    let train_ids = &order[..sizes[0]];
    let valid_ids = &order[sizes[0]..sizes[0] + sizes[1]];
    let test_ids = &order[sizes[0] + sizes[1]..];
    Ok((
        dataset.subset(train_ids),
        dataset.subset(valid_ids),
        dataset.subset(test_ids),
    ))
}

#[cfg(test)]
mod tests;
