//! The training loop: deterministic batching, Adam updates, per-epoch
//! validation, best-checkpoint selection, and final test evaluation.
//!
//! Everything that draws randomness pulls a named stream from the run
//! seed, so a (seed, config, dataset) triple fixes every logged number.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{batches, split, Dataset, LabelBlock, TaskKind};
use crate::error::{Error, Result};
use crate::layers::VisitParams;
use crate::metrics::{aupr, auroc, topk_recall, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::optim::Adam;
use crate::rng::RngState;
use crate::tensor::Graph;

/// One history line per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: MetricsReport,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: MetricsReport,
}

/// Worker threads for evaluation fan-out: available parallelism, capped by
/// the `FUSION_NUM_THREADS` environment variable.
pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var("FUSION_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(8);
    available.min(cap).max(1)
}

struct BatchEval {
    scores: Vec<f64>,
    truths: Vec<f64>,
    loss_sum: f64,
    n: usize,
}

/// Evaluate a frozen model on a dataset. Batches fan out over worker
/// threads; partial results reduce in batch order, so the outcome does not
/// depend on the thread count.
pub fn evaluate(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<MetricsReport> {
    let batch_list = batches(dataset, batch_size, None)?;
    let threads = worker_threads().min(batch_list.len().max(1));
    let mut partials: Vec<Option<Result<BatchEval>>> = Vec::new();
    partials.resize_with(batch_list.len(), || None);

    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (chunk_idx, chunk) in batch_list
            .chunks(batch_list.len().div_ceil(threads))
            .enumerate()
        {
            let model_ref = &model;
            handles.push((
                chunk_idx,
                chunk.len(),
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|batch| {
                            let mut g = Graph::new();
                            // dropout is identity at eval; the stream is never drawn
                            let mut rng = RngState::new(0).stream("eval");
                            let scores = model_ref.forward(&mut g, batch, &mut rng, false)?;
                            let loss = model_ref.loss(&mut g, &scores, &batch.labels)?;
                            let truths = match &batch.labels {
                                LabelBlock::Binary(y) => y.values().to_vec(),
                                LabelBlock::Multilabel(y) => y.values().to_vec(),
                            };
                            Ok(BatchEval {
                                scores: scores.values().to_vec(),
                                truths,
                                loss_sum: loss.item()? * batch.len() as f64,
                                n: batch.len(),
                            })
                        })
                        .collect::<Vec<Result<BatchEval>>>()
                }),
            ));
        }
        let chunk_size = batch_list.len().div_ceil(threads);
        for (chunk_idx, _, handle) in handles {
            let results = handle.join().expect("evaluation worker panicked");
            for (offset, res) in results.into_iter().enumerate() {
                partials[chunk_idx * chunk_size + offset] = Some(res);
            }
        }
    });

    let mut scores = Vec::with_capacity(dataset.len());
    let mut truths = Vec::with_capacity(dataset.len());
    let mut loss_sum = 0.0;
    let mut n = 0usize;
    for partial in partials {
        let p = partial.expect("every batch evaluated")?;
        scores.extend(p.scores);
        truths.extend(p.truths);
        loss_sum += p.loss_sum;
        n += p.n;
    }
    let loss = if n > 0 { loss_sum / n as f64 } else { 0.0 };

    let truth_flags: Vec<bool> = truths.iter().map(|&v| v != 0.0).collect();
    match dataset.header.task {
        TaskKind::ArfBinary => Ok(MetricsReport {
            auroc: auroc(&scores, &truth_flags).ok(),
            aupr: aupr(&scores, &truth_flags).ok(),
            recall_at_10: None,
            recall_at_20: None,
            recall_at_30: None,
            loss,
            n_samples: n,
        }),
        TaskKind::DiagnosesMultilabel => {
            let n_labels = dataset.header.n_labels;
            let recall = |k: usize| {
                if k <= n_labels {
                    topk_recall(&scores, &truth_flags, n_labels, k).ok()
                } else {
                    None
                }
            };
            Ok(MetricsReport {
                // micro-averaged over all (sample, label) scores
                auroc: auroc(&scores, &truth_flags).ok(),
                aupr: aupr(&scores, &truth_flags).ok(),
                recall_at_10: recall(10),
                recall_at_20: recall(20),
                recall_at_30: recall(30),
                loss,
                n_samples: n,
            })
        }
    }
}

/// Validation metric steering best-checkpoint selection: AUROC for the
/// binary task, top-30 recall (falling back to the largest available k,
/// then negated loss) for the multi-label task.
fn selection_score(task: TaskKind, report: &MetricsReport) -> f64 {
    match task {
        TaskKind::ArfBinary => report.auroc.unwrap_or(f64::NEG_INFINITY),
        TaskKind::DiagnosesMultilabel => report
            .recall_at_30
            .or(report.recall_at_20)
            .or(report.recall_at_10)
            .unwrap_or(-report.loss),
    }
}

fn snapshot(model: &mut Model) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit_params("model", &mut |_, t| out.extend_from_slice(t.values()));
    out
}

fn restore(model: &mut Model, values: &[f64]) {
    let mut offset = 0usize;
    model.visit_params("model", &mut |_, t| {
        let n = t.numel();
        t.values_mut().copy_from_slice(&values[offset..offset + n]);
        offset += n;
    });
}

/// Train on the 70% split, select the best epoch on the 15% validation
/// split, and report on the held-out 15%. With `out_dir` set, writes
/// `history.jsonl` (one record per epoch), the best checkpoint to
/// `checkpoint.bin`, and the test report to `test_metrics.json`.
pub fn train(
    config: &ModelConfig,
    dataset: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if config.task != dataset.header.task {
        return Err(Error::InvalidConfig(format!(
            "config task {:?} does not match dataset task {:?}",
            config.task, dataset.header.task
        )));
    }
    let (train_split, valid_split, test_split) = split(dataset, config.seed)?;
    let mut model = Model::build(config, &dataset.header)?;
    let mut adam = Adam::new(&mut model, config.learning_rate);
    let rng_root = RngState::new(config.seed);

    let mut history_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::io::BufWriter::new(std::fs::File::create(
                dir.join("history.jsonl"),
            )?))
        }
        None => None,
    };
    let checkpoint_path: Option<PathBuf> = out_dir.map(|d| d.join("checkpoint.bin"));

    let mut history = Vec::with_capacity(config.epochs);
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_values = snapshot(&mut model);
    let mut global_step = 0u64;

    for epoch in 0..config.epochs {
        let mut shuffle_rng = rng_root.stream_indexed("shuffle", epoch as u64);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batches(&train_split, config.batch_size, Some(&mut shuffle_rng))? {
            let mut g = Graph::new();
            let mut dropout_rng = rng_root.stream_indexed("dropout", global_step);
            let scores = model.forward(&mut g, &batch, &mut dropout_rng, true)?;
            let loss = model.loss(&mut g, &scores, &batch.labels)?;
            let loss_value = loss.item()?;
            if !loss_value.is_finite() {
                // keep the best checkpoint reached so far
                if let Some(path) = &checkpoint_path {
                    restore(&mut model, &best_values);
                    checkpoint::save(path, &mut model)?;
                }
                return Err(Error::Diverged {
                    epoch,
                    step: global_step as usize,
                });
            }
            let grads = g.backward(&loss)?;
            adam.step(&mut model, &grads)?;
            loss_sum += loss_value * batch.len() as f64;
            seen += batch.len();
            global_step += 1;
        }
        let train_loss = loss_sum / seen as f64;
        let valid = evaluate(&model, &valid_split, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            valid,
        };
        if let Some(file) = history_file.as_mut() {
            serde_json::to_writer(&mut *file, &record)?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        let score = selection_score(config.task, &record.valid);
        if score > best_score {
            best_score = score;
            best_epoch = epoch;
            best_values = snapshot(&mut model);
        }
        history.push(record);
    }

    restore(&mut model, &best_values);
    let test = evaluate(&model, &test_split, config.batch_size)?;
    if let Some(dir) = out_dir {
        checkpoint::save(&dir.join("checkpoint.bin"), &mut model)?;
        std::fs::write(
            dir.join("test_metrics.json"),
            serde_json::to_string_pretty(&test)?,
        )?;
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        test,
    })
}
