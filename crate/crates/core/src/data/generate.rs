//! Synthetic EHR-shaped data with plantable label signal.
//!
//! Labels are drawn from a logistic model over per-sample latent factors;
//! each factor is embedded into the modalities named by the signal plan —
//! directly into the time-invariant features, as the amplitude of a
//! temporal sine motif in the time series, and as the mix of signature
//! token groups in the notes. All other content is distractor noise, so a
//! modality without planted signal carries no label information.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RngState, RngStream};

use super::{
    Dataset, DatasetHeader, Sample, SampleLabel, TaskKind, CLS_ID, CONTENT_ID_BASE, DATASET_VERSION,
};

/// Logistic sharpness: labels are near-deterministic in the latent factor.
const SHARPNESS: f64 = 12.0;
/// Amplitude multiplier for the time-series motif.
const TS_AMPLITUDE: f64 = 3.0;
/// Amplitude multiplier for the time-invariant embedding.
const TI_AMPLITUDE: f64 = 2.0;
/// Tokens per signature group.
const GROUP_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TimeInvariant,
    TimeSeries,
    Notes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub modality: Modality,
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Binary { positive_rate: f64 },
    Multilabel { n_labels: usize, positive_rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_samples: usize,
    pub d1: usize,
    pub l: usize,
    pub d2: usize,
    pub d3_max: usize,
    pub vocab: usize,
    pub task: TaskSpec,
    pub signal: Vec<SignalPlan>,
}

impl GeneratorSpec {
    fn strength(&self, modality: Modality) -> f64 {
        self.signal
            .iter()
            .filter(|p| p.modality == modality)
            .map(|p| p.strength)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::InvalidConfig(format!("generator spec: {why}")));
        if self.n_samples == 0 || self.d1 == 0 || self.l == 0 || self.d2 == 0 {
            return bad("dimensions must be positive");
        }
        if self.d3_max < 2 {
            return bad("d3_max must leave room for the classification token");
        }
        if self.vocab < CONTENT_ID_BASE + 2 * GROUP_SIZE + 8 {
            return bad("vocabulary too small for signature groups plus noise");
        }
        if self.signal.is_empty() {
            return bad("signal plan must name at least one modality");
        }
        if self
            .signal
            .iter()
            .any(|p| !(0.0..=1.0).contains(&p.strength))
        {
            return bad("signal strengths must lie in [0, 1]");
        }
        match self.task {
            TaskSpec::Binary { positive_rate } => {
                if !(0.0..1.0).contains(&positive_rate) || positive_rate == 0.0 {
                    return bad("positive_rate must lie in (0, 1)");
                }
            }
            TaskSpec::Multilabel {
                n_labels,
                positive_rate,
            } => {
                if n_labels == 0 {
                    return bad("n_labels must be positive");
                }
                if !(0.0..1.0).contains(&positive_rate) || positive_rate == 0.0 {
                    return bad("positive_rate must lie in (0, 1)");
                }
            }
        }
        Ok(())
    }
}

/// Acklam's rational approximation of the standard normal quantile.
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Signature token for a label/polarity pair, hashed into the content id
/// range so any label count works with any (large enough) vocabulary.
fn signature_token(label: usize, positive: bool, offset: usize, vocab: usize) -> usize {
    let span = vocab - CONTENT_ID_BASE;
    let key = label * 2 + usize::from(positive);
    CONTENT_ID_BASE + (key * (2 * GROUP_SIZE) + offset * 7919) % span
}

struct FactorEmbedding<'a> {
    spec: &'a GeneratorSpec,
    ti_strength: f64,
    ts_strength: f64,
    nt_strength: f64,
}

impl<'a> FactorEmbedding<'a> {
    fn new(spec: &'a GeneratorSpec) -> Self {
        Self {
            spec,
            ti_strength: spec.strength(Modality::TimeInvariant),
            ts_strength: spec.strength(Modality::TimeSeries),
            nt_strength: spec.strength(Modality::Notes),
        }
    }

    /// Add factor `z` of label `j` into the time-invariant vector.
    fn embed_ti(&self, ti: &mut [f64], j: usize, z: f64) {
        let dim = j % self.spec.d1;
        ti[dim] += TI_AMPLITUDE * self.ti_strength * z;
        if self.spec.d1 > 1 {
            // a second, sign-flipped copy for redundancy
            let dim2 = (j + 1) % self.spec.d1;
            ti[dim2] -= TI_AMPLITUDE * self.ti_strength * z;
        }
    }

    /// Add factor `z` of label `j` as a temporal motif.
    fn embed_ts(&self, ts: &mut [Vec<f64>], j: usize, z: f64) {
        let channel = j % self.spec.d2;
        let phase = (j / self.spec.d2) as f64 * 0.7;
        let period = (self.spec.l as f64 / 2.0).max(4.0);
        for (t, row) in ts.iter_mut().enumerate() {
            let motif = (2.0 * std::f64::consts::PI * (t as f64 + phase) / period).sin();
            row[channel] += TS_AMPLITUDE * self.ts_strength * z * motif;
        }
    }

    /// Emit one note token: a signature token of an active label with
    /// probability `nt_strength`, otherwise vocabulary noise.
    fn note_token(&self, actives: &[(usize, f64)], rng: &mut RngStream) -> usize {
        if self.nt_strength > 0.0 && !actives.is_empty() && rng.next_f64() < self.nt_strength {
            let (label, z) = actives[rng.below(actives.len())];
            let positive = rng.next_f64() < sigmoid(2.0 * z);
            return signature_token(label, positive, rng.below(GROUP_SIZE), self.spec.vocab);
        }
        CONTENT_ID_BASE + rng.below(self.spec.vocab - CONTENT_ID_BASE)
    }
}

/// Generate a dataset. Byte-identical output for identical specs.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let rng_root = RngState::new(spec.seed);
    let (task, n_labels) = match spec.task {
        TaskSpec::Binary { .. } => (TaskKind::ArfBinary, 1),
        TaskSpec::Multilabel { n_labels, .. } => (TaskKind::DiagnosesMultilabel, n_labels),
    };
    let embedder = FactorEmbedding::new(spec);

    let mut samples = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let mut rng = rng_root.stream_indexed("sample", i as u64);

        // latent factors and labels
        let mut label_factors: Vec<(usize, f64, bool)> = Vec::new();
        match spec.task {
            TaskSpec::Binary { positive_rate } => {
                let z = rng.gaussian();
                let threshold = normal_quantile(1.0 - positive_rate);
                let y = rng.next_f64() < sigmoid(SHARPNESS * (z - threshold));
                label_factors.push((0, z, y));
            }
            TaskSpec::Multilabel {
                n_labels,
                positive_rate,
            } => {
                let threshold = normal_quantile(1.0 - positive_rate);
                for j in 0..n_labels {
                    let z = rng.gaussian();
                    let y = rng.next_f64() < sigmoid(SHARPNESS * (z - threshold));
                    label_factors.push((j, z, y));
                }
            }
        }

        // base noise
        let mut ti: Vec<f64> = (0..spec.d1).map(|_| rng.gaussian()).collect();
        let mut ts: Vec<Vec<f64>> = (0..spec.l)
            .map(|_| (0..spec.d2).map(|_| rng.gaussian()).collect())
            .collect();

        // embed every factor into its planned modalities
        for &(j, z, _) in &label_factors {
            if embedder.ti_strength > 0.0 {
                embedder.embed_ti(&mut ti, j, z);
            }
            if embedder.ts_strength > 0.0 {
                embedder.embed_ts(&mut ts, j, z);
            }
        }

        // notes: classification token, then content driven by active labels
        let actives: Vec<(usize, f64)> = label_factors
            .iter()
            .filter(|&&(_, _, y)| y)
            .map(|&(j, z, _)| (j, z))
            .collect();
        let max_content = spec.d3_max - 1;
        let min_content = (max_content / 2).max(1);
        let content_len = min_content + rng.below(max_content - min_content + 1);
        let mut note_ids = Vec::with_capacity(content_len + 1);
        note_ids.push(CLS_ID);
        for _ in 0..content_len {
            note_ids.push(embedder.note_token(&actives, &mut rng));
        }

        let label = match spec.task {
            TaskSpec::Binary { .. } => SampleLabel::Binary(u8::from(label_factors[0].2)),
            TaskSpec::Multilabel { .. } => SampleLabel::Multilabel(
                label_factors
                    .iter()
                    .filter(|&&(_, _, y)| y)
                    .map(|&(j, _, _)| j)
                    .collect(),
            ),
        };
        samples.push(Sample {
            ti,
            ts,
            note_ids,
            label,
        });
    }

    let dataset = Dataset {
        header: DatasetHeader {
            version: DATASET_VERSION,
            task,
            d1: spec.d1,
            l: spec.l,
            d2: spec.d2,
            d3_max: spec.d3_max,
            vocab: spec.vocab,
            n_labels,
            n_samples: samples.len(),
        },
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}
