//! Minibatch assembly: dense modality tensors, padded note ids with an
//! attention mask, and the label block.

use crate::error::Result;
use crate::rng::RngStream;
use crate::tensor::Tensor;

use super::{Dataset, SampleLabel, PAD_ID};

/// Labels of one batch in tensor form.
#[derive(Debug, Clone)]
pub enum LabelBlock {
    /// `[B]` of 0/1.
    Binary(Tensor),
    /// `[B, N]` multi-hot.
    Multilabel(Tensor),
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub i_ti: Tensor,
    pub i_ts: Tensor,
    /// Flattened `[B, note_len]` ids, padded with `PAD_ID`.
    pub note_ids: Vec<usize>,
    pub note_len: usize,
    /// `[B, note_len]` with 1.0 on real tokens, 0.0 on padding.
    pub note_mask: Tensor,
    pub labels: LabelBlock,
    /// Positions of the batch rows in the source dataset order.
    pub source_rows: Vec<usize>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.i_ti.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cut a dataset into batches of `batch_size` (last partial batch kept),
/// optionally shuffling sample order first. Note sequences are padded to
/// the longest sequence of their batch.
pub fn batches(
    dataset: &Dataset,
    batch_size: usize,
    shuffle: Option<&mut RngStream>,
) -> Result<Vec<SampleBatch>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(rng) = shuffle {
        rng.shuffle(&mut order);
    }
    let h = &dataset.header;
    let mut out = Vec::with_capacity(dataset.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let b = chunk.len();
        let mut ti = Vec::with_capacity(b * h.d1);
        let mut ts = Vec::with_capacity(b * h.l * h.d2);
        let note_len = chunk
            .iter()
            .map(|&i| dataset.samples[i].note_ids.len())
            .max()
            .unwrap_or(1);
        let mut note_ids = vec![PAD_ID; b * note_len];
        let mut mask = vec![0.0; b * note_len];
        let mut binary = Vec::with_capacity(b);
        let mut multi = vec![0.0; b * h.n_labels];
        for (row, &i) in chunk.iter().enumerate() {
            let s = &dataset.samples[i];
            ti.extend_from_slice(&s.ti);
            for step in &s.ts {
                ts.extend_from_slice(step);
            }
            for (pos, &id) in s.note_ids.iter().enumerate() {
                note_ids[row * note_len + pos] = id;
                mask[row * note_len + pos] = 1.0;
            }
            match &s.label {
                SampleLabel::Binary(y) => binary.push(f64::from(*y)),
                SampleLabel::Multilabel(ids) => {
                    for &l in ids {
                        multi[row * h.n_labels + l] = 1.0;
                    }
                }
            }
        }
        let labels = match dataset.header.task {
            super::TaskKind::ArfBinary => LabelBlock::Binary(Tensor::from_vec(binary)),
            super::TaskKind::DiagnosesMultilabel => {
                LabelBlock::Multilabel(Tensor::new(vec![b, h.n_labels], multi)?)
            }
        };
        out.push(SampleBatch {
            i_ti: Tensor::new(vec![b, h.d1], ti)?,
            i_ts: Tensor::new(vec![b, h.l, h.d2], ts)?,
            note_ids,
            note_len,
            note_mask: Tensor::new(vec![b, note_len], mask)?,
            labels,
            source_rows: chunk.to_vec(),
        });
    }
    Ok(out)
}
