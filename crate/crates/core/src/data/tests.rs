use super::*;
use crate::rng::RngState;

fn toy_spec(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        seed,
        n_samples: 40,
        d1: 4,
        l: 6,
        d2: 3,
        d3_max: 12,
        vocab: 64,
        task: TaskSpec::Binary { positive_rate: 0.4 },
        signal: vec![SignalPlan {
            modality: Modality::TimeSeries,
            strength: 1.0,
        }],
    }
}

#[test]
fn generation_is_byte_identical_for_same_seed() {
    let dir = std::env::temp_dir().join("fusion-data-test-determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let a_path = dir.join("a.jsonl");
    let b_path = dir.join("b.jsonl");
    generate(&toy_spec(7)).unwrap().write(&a_path).unwrap();
    generate(&toy_spec(7)).unwrap().write(&b_path).unwrap();
    let a = std::fs::read(&a_path).unwrap();
    let b = std::fs::read(&b_path).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let c = generate(&toy_spec(8)).unwrap();
    assert_ne!(generate(&toy_spec(7)).unwrap(), c);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn round_trip_is_field_exact() {
    let dir = std::env::temp_dir().join("fusion-data-test-roundtrip");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("d.jsonl");
    let ds = generate(&toy_spec(11)).unwrap();
    ds.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(ds, back);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn samples_are_complete_and_well_formed() {
    let ds = generate(&toy_spec(13)).unwrap();
    for s in &ds.samples {
        assert_eq!(s.ti.len(), 4);
        assert_eq!(s.ts.len(), 6);
        assert_eq!(s.note_ids[0], CLS_ID);
        assert!(s.note_ids.len() >= 2 && s.note_ids.len() <= 12);
        assert!(s.note_ids.iter().all(|&id| id < 64));
    }
}

#[test]
fn binary_positive_rate_matches_target() {
    let mut spec = toy_spec(17);
    spec.n_samples = 10_000;
    let ds = generate(&spec).unwrap();
    let positives = ds
        .samples
        .iter()
        .filter(|s| matches!(s.label, SampleLabel::Binary(1)))
        .count();
    let rate = positives as f64 / ds.len() as f64;
    assert!((rate - 0.4).abs() < 0.03, "positive rate {rate}");
}

#[test]
fn multilabel_prior_matches_target() {
    let mut spec = toy_spec(19);
    spec.n_samples = 10_000;
    spec.task = TaskSpec::Multilabel {
        n_labels: 16,
        positive_rate: 0.1,
    };
    let ds = generate(&spec).unwrap();
    let mut active = 0usize;
    for s in &ds.samples {
        if let SampleLabel::Multilabel(ids) = &s.label {
            active += ids.len();
        }
    }
    let rate = active as f64 / (ds.len() * 16) as f64;
    assert!((rate - 0.1).abs() < 0.03, "label prior {rate}");
}

#[test]
fn spec_validation_rejects_bad_inputs() {
    let mut spec = toy_spec(1);
    spec.signal.clear();
    assert!(generate(&spec).is_err());

    let mut spec = toy_spec(1);
    spec.signal[0].strength = 1.5;
    assert!(generate(&spec).is_err());

    let mut spec = toy_spec(1);
    spec.vocab = 8;
    assert!(generate(&spec).is_err());

    let mut spec = toy_spec(1);
    spec.task = TaskSpec::Binary { positive_rate: 0.0 };
    assert!(generate(&spec).is_err());
}

#[test]
fn split_sizes_follow_largest_remainder() {
    let mut spec = toy_spec(23);
    spec.n_samples = 1000;
    let ds = generate(&spec).unwrap();
    let (train, valid, test) = split(&ds, 5).unwrap();
    assert_eq!((train.len(), valid.len(), test.len()), (700, 150, 150));

    let mut spec = toy_spec(23);
    spec.n_samples = 10;
    let ds = generate(&spec).unwrap();
    let (train, valid, test) = split(&ds, 5).unwrap();
    // 7.0 / 1.5 / 1.5 floors to 7/1/1; the leftover goes to the earlier
    // of the tied fractional parts
    assert_eq!((train.len(), valid.len(), test.len()), (7, 2, 1));
}

#[test]
fn split_is_a_deterministic_partition() {
    let mut spec = toy_spec(29);
    spec.n_samples = 101;
    let ds = generate(&spec).unwrap();
    let (a1, b1, c1) = split(&ds, 9).unwrap();
    let (a2, b2, c2) = split(&ds, 9).unwrap();
    assert_eq!(a1, a2);
    assert_eq!(b1, b2);
    assert_eq!(c1, c2);

    let mut seen: Vec<&Sample> = Vec::new();
    seen.extend(a1.samples.iter());
    seen.extend(b1.samples.iter());
    seen.extend(c1.samples.iter());
    assert_eq!(seen.len(), 101);
    let mut matched = [false; 101];
    for s in seen {
        let idx = ds
            .samples
            .iter()
            .position(|o| o == s)
            .expect("split sample comes from the source");
        // mark the first unmatched copy
        let slot = matched
            .iter()
            .enumerate()
            .position(|(i, &m)| !m && ds.samples[i] == ds.samples[idx])
            .unwrap();
        matched[slot] = true;
    }
    assert!(matched.iter().all(|&m| m));
}

#[test]
fn split_rejects_tiny_datasets() {
    let mut spec = toy_spec(31);
    spec.n_samples = 2;
    let ds = generate(&spec).unwrap();
    assert!(split(&ds, 1).is_err());
}

#[test]
fn batches_pad_and_mask_notes() {
    let ds = generate(&toy_spec(37)).unwrap();
    let bs = batches(&ds, 4, None).unwrap();
    assert_eq!(bs.len(), 10);
    assert!(bs.iter().all(|b| b.len() == 4));
    for (bi, b) in bs.iter().enumerate() {
        for row in 0..b.len() {
            let src = &ds.samples[bi * 4 + row];
            let n = src.note_ids.len();
            for pos in 0..b.note_len {
                let id = b.note_ids[row * b.note_len + pos];
                let m = b.note_mask.values()[row * b.note_len + pos];
                if pos < n {
                    assert_eq!(id, src.note_ids[pos]);
                    assert_eq!(m, 1.0);
                } else {
                    assert_eq!(id, PAD_ID);
                    assert_eq!(m, 0.0);
                }
            }
        }
    }
}

#[test]
fn batches_keep_file_order_without_shuffle_and_keep_partial_tail() {
    let mut spec = toy_spec(41);
    spec.n_samples = 10;
    let ds = generate(&spec).unwrap();
    let bs = batches(&ds, 4, None).unwrap();
    assert_eq!(
        bs.iter().map(|b| b.len()).collect::<Vec<_>>(),
        vec![4, 4, 2]
    );
    let rows: Vec<usize> = bs.iter().flat_map(|b| b.source_rows.clone()).collect();
    assert_eq!(rows, (0..10).collect::<Vec<_>>());
}

#[test]
fn shuffled_batches_are_seed_deterministic() {
    let ds = generate(&toy_spec(43)).unwrap();
    let mut r1 = RngState::new(77).stream("shuffle");
    let mut r2 = RngState::new(77).stream("shuffle");
    let b1 = batches(&ds, 8, Some(&mut r1)).unwrap();
    let b2 = batches(&ds, 8, Some(&mut r2)).unwrap();
    let rows1: Vec<usize> = b1.iter().flat_map(|b| b.source_rows.clone()).collect();
    let rows2: Vec<usize> = b2.iter().flat_map(|b| b.source_rows.clone()).collect();
    assert_eq!(rows1, rows2);
    let mut sorted = rows1.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..40).collect::<Vec<_>>());
}

#[test]
fn no_signal_strengths_leave_pure_noise() {
    // strength-zero plan is allowed and embeds nothing
    let mut spec = toy_spec(47);
    spec.signal = vec![SignalPlan {
        modality: Modality::TimeSeries,
        strength: 0.0,
    }];
    let ds = generate(&spec).unwrap();
    assert_eq!(ds.len(), 40);
}

#[test]
fn no_signal_data_keeps_any_model_at_chance() {
    let mut spec = toy_spec(53);
    spec.n_samples = 2000;
    spec.signal = vec![SignalPlan {
        modality: Modality::TimeSeries,
        strength: 0.0,
    }];
    let ds = generate(&spec).unwrap();
    let config = crate::model::ModelConfig {
        model_name: "Ti".into(),
        d1_encoded: 8,
        dropout: 0.0,
        learning_rate: 1e-2,
        epochs: 4,
        batch_size: 64,
        seed: 3,
        ..crate::model::ModelConfig::default()
    };
    let outcome = crate::train::train(&config, &ds, None).unwrap();
    let auroc = outcome.test.auroc.unwrap();
    assert!((0.4..=0.6).contains(&auroc), "null-data auroc {auroc}");
}
