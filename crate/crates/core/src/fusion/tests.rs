use super::*;
use crate::rng::RngState;
use crate::tensor::{grad_check, Graph};

fn randn(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = RngState::new(seed).stream("fus-test");
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gaussian()).collect()).unwrap()
}

fn zeroed_gate(main_dim: usize, ti_dim: usize, aux_dim: usize) -> AttentionGate {
    let mut rng = RngState::new(0).stream("init");
    let mut gate = AttentionGate::new(main_dim, ti_dim, aux_dim, &mut rng);
    gate.visit_params("z", &mut |_, t| {
        for v in t.values_mut() {
            *v = 0.0;
        }
    });
    gate
}

/// Gate whose displacement is a constant row (gates forced to 1 via bias,
/// shift weights zero, shift bias = `disp_row`).
fn constant_displacement_gate(main_dim: usize, disp_row: &[f64], beta: f64) -> AttentionGate {
    let mut gate = zeroed_gate(main_dim, 2, main_dim);
    gate.gate_ti.bias.values_mut()[0] = 1.0;
    gate.gate_aux.bias.values_mut()[0] = 1.0;
    gate.shift.bias.values_mut().copy_from_slice(disp_row);
    gate.beta.values_mut()[0] = beta;
    gate
}

fn triple_with_main_norm(main_dim: usize, main_norm: f64) -> EncodedTriple {
    // main = (norm, 0, 0, ...)
    let mut main = vec![0.0; main_dim];
    main[0] = main_norm;
    EncodedTriple {
        e_ti: Tensor::matrix(1, 2, vec![0.5, -0.5]).unwrap(),
        e_ts: Tensor::matrix(1, main_dim, vec![0.25; main_dim]).unwrap(),
        e_nt: Tensor::matrix(1, main_dim, main).unwrap(),
        main: MainModality::Notes,
    }
}

#[test]
fn alpha_is_norm_ratio_times_beta() {
    // ‖E_nt‖ = 2, ‖H‖ = 4, beta = 1 ⇒ alpha = 0.5
    let gate = constant_displacement_gate(3, &[4.0, 0.0, 0.0], 1.0);
    let triple = triple_with_main_norm(3, 2.0);
    let mut g = Graph::new();
    let detail = gate.forward_detailed(&mut g, &triple).unwrap();
    assert!((detail.alpha.values()[0] - 0.5).abs() < 1e-12);
    // M = E_nt + 0.5·H
    assert!((detail.fused.values()[0] - (2.0 + 0.5 * 4.0)).abs() < 1e-12);
}

#[test]
fn alpha_caps_at_one() {
    // ‖E_nt‖ = 2, ‖H‖ = 4, beta = 10 ⇒ min(5, 1) = 1
    let gate = constant_displacement_gate(3, &[4.0, 0.0, 0.0], 10.0);
    let triple = triple_with_main_norm(3, 2.0);
    let mut g = Graph::new();
    let detail = gate.forward_detailed(&mut g, &triple).unwrap();
    assert_eq!(detail.alpha.values()[0], 1.0);
}

#[test]
fn zero_gates_and_bias_return_main_exactly() {
    let gate = zeroed_gate(3, 2, 3);
    let triple = triple_with_main_norm(3, 2.0);
    let mut g = Graph::new();
    let detail = gate.forward_detailed(&mut g, &triple).unwrap();
    assert_eq!(detail.g1.values(), &[0.0]);
    assert_eq!(detail.g2.values(), &[0.0]);
    assert_eq!(detail.alpha.values(), &[0.0]);
    assert_eq!(detail.fused.values(), triple.e_nt.values());
    assert!(detail.fused.is_finite());
}

#[test]
fn beta_zero_returns_main_exactly() {
    let mut rng = RngState::new(3).stream("init");
    let mut gate = AttentionGate::new(4, 2, 4, &mut rng);
    gate.beta.values_mut()[0] = 0.0;
    let triple = EncodedTriple {
        e_ti: randn(vec![3, 2], 4),
        e_ts: randn(vec![3, 4], 5),
        e_nt: randn(vec![3, 4], 6),
        main: MainModality::Notes,
    };
    let mut g = Graph::new();
    let fused = gate.forward(&mut g, &triple).unwrap();
    assert_eq!(fused.values(), triple.e_nt.values());
}

#[test]
fn gates_are_nonnegative_and_alpha_in_unit_interval() {
    for seed in 0..20u64 {
        let mut rng = RngState::new(seed).stream("init");
        let gate = AttentionGate::new(4, 2, 4, &mut rng);
        let triple = EncodedTriple {
            e_ti: randn(vec![5, 2], seed * 3 + 100),
            e_ts: randn(vec![5, 4], seed * 3 + 101),
            e_nt: randn(vec![5, 4], seed * 3 + 102),
            main: MainModality::Notes,
        };
        let mut g = Graph::new();
        let detail = gate.forward_detailed(&mut g, &triple).unwrap();
        for &v in detail.g1.values().iter().chain(detail.g2.values()) {
            assert!(v >= 0.0);
        }
        for &a in detail.alpha.values() {
            assert!((0.0..=1.0).contains(&a), "alpha {a} out of range");
        }
    }
}

#[test]
fn main_switch_is_a_pure_role_swap() {
    // same parameters, swapped roles ⇒ bit-identical output
    let mut rng = RngState::new(9).stream("init");
    let gate = AttentionGate::new(4, 2, 4, &mut rng);
    let e_ti = randn(vec![3, 2], 10);
    let x = randn(vec![3, 4], 11);
    let y = randn(vec![3, 4], 12);
    let mut g = Graph::new();
    let with_notes = gate
        .forward(
            &mut g,
            &EncodedTriple {
                e_ti: e_ti.clone(),
                e_ts: y.clone(),
                e_nt: x.clone(),
                main: MainModality::Notes,
            },
        )
        .unwrap();
    let with_ts = gate
        .forward(
            &mut g,
            &EncodedTriple {
                e_ti,
                e_ts: x,
                e_nt: y,
                main: MainModality::TimeSeries,
            },
        )
        .unwrap();
    assert_eq!(with_notes.values(), with_ts.values());
}

#[test]
fn gate_is_differentiable_at_interior_points() {
    // check points where ‖H‖ > 1e-6, both gates strictly positive, and the
    // cap inactive, as the kinked boundaries are not differentiable
    let mut checked = 0;
    for seed in 0..40u64 {
        let mut rng = RngState::new(seed).stream("init");
        let mut gate = AttentionGate::new(3, 2, 3, &mut rng);
        // nudge the draw toward the interior: positive gate biases keep the
        // ReLUs live, a moderate beta keeps the cap inactive
        gate.gate_ti.bias.values_mut()[0] = 0.5;
        gate.gate_aux.bias.values_mut()[0] = 0.5;
        gate.beta.values_mut()[0] = 0.2;
        let e_ti = randn(vec![2, 2], seed + 500);
        let e_ts = randn(vec![2, 3], seed + 600);
        let e_nt = randn(vec![2, 3], seed + 700);
        let triple = EncodedTriple {
            e_ti: e_ti.clone(),
            e_ts: e_ts.clone(),
            e_nt: e_nt.clone(),
            main: MainModality::Notes,
        };
        let mut g = Graph::new();
        let detail = gate.forward_detailed(&mut g, &triple).unwrap();
        let interior = detail.g1.values().iter().all(|&v| v > 1e-3)
            && detail.g2.values().iter().all(|&v| v > 1e-3)
            && detail.alpha.values().iter().all(|&a| a < 1.0 - 1e-6)
            && {
                let mut g2 = Graph::new();
                let n = g2.l2_norm(&detail.displacement).unwrap();
                n.values().iter().all(|&v| v > 1e-6)
            };
        if !interior {
            continue;
        }
        checked += 1;
        let gate_for_fd = gate.clone();
        let err = grad_check(
            |g, inputs| {
                let fd_gate = AttentionGate {
                    gate_ti: gate_for_fd.gate_ti.clone(),
                    gate_aux: gate_for_fd.gate_aux.clone(),
                    shift: gate_for_fd.shift.clone(),
                    beta: inputs[3].clone(),
                };
                let triple = EncodedTriple {
                    e_ti: inputs[0].clone(),
                    e_ts: inputs[1].clone(),
                    e_nt: inputs[2].clone(),
                    main: MainModality::Notes,
                };
                let fused = fd_gate.forward(g, &triple)?;
                let sq = g.mul(&fused, &fused)?;
                g.sum_all(&sq)
            },
            &[e_ti, e_ts, e_nt, gate.beta.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "seed {seed}: gate gradcheck {err}");
        if checked >= 5 {
            break;
        }
    }
    assert!(checked >= 3, "too few interior points sampled: {checked}");
}

#[test]
fn early_fuse_shape_and_losslessness() {
    let i_ti = randn(vec![2, 4], 20);
    let i_ts = randn(vec![2, 5, 6], 21);
    let mut g = Graph::new();
    let fused = early_fuse(&mut g, &i_ti, &i_ts).unwrap();
    assert_eq!(fused.shape(), &[2, 5, 10]);
    for l in 0..5 {
        let step = g.index_axis(&fused, 1, l).unwrap();
        let ti_part = g.slice_last(&step, 0, 4).unwrap();
        assert_eq!(ti_part.values(), i_ti.values());
        let ts_part = g.slice_last(&step, 4, 10).unwrap();
        for b in 0..2 {
            for c in 0..6 {
                assert_eq!(
                    ts_part.values()[b * 6 + c],
                    i_ts.values()[(b * 5 + l) * 6 + c]
                );
            }
        }
    }
}

#[test]
fn early_fuse_single_step_is_plain_concat() {
    let i_ti = randn(vec![3, 2], 22);
    let i_ts = randn(vec![3, 1, 4], 23);
    let mut g = Graph::new();
    let fused = early_fuse(&mut g, &i_ti, &i_ts).unwrap();
    assert_eq!(fused.shape(), &[3, 1, 6]);
    for b in 0..3 {
        assert_eq!(
            &fused.values()[b * 6..b * 6 + 2],
            &i_ti.values()[b * 2..b * 2 + 2]
        );
        assert_eq!(
            &fused.values()[b * 6 + 2..b * 6 + 6],
            &i_ts.values()[b * 4..b * 4 + 4]
        );
    }
}

#[test]
fn tensor_fuse_basis_vectors_give_one_hot() {
    let a = Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap();
    let b = Tensor::matrix(1, 4, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
    let mut g = Graph::new();
    let outer = g.outer_product(&a, &b).unwrap();
    assert_eq!(outer.shape(), &[1, 12]);
    for (i, &v) in outer.values().iter().enumerate() {
        assert_eq!(v, if i == 6 { 1.0 } else { 0.0 }); // row 1 of 3, col 2 of 4
    }
}

#[test]
fn tensor_fuse_matches_double_loop_oracle() {
    let mut rng = RngState::new(25).stream("init");
    let proj = Linear::new(6, 5, &mut rng);
    let a = randn(vec![2, 2], 26);
    let b = randn(vec![2, 3], 27);
    let mut g = Graph::new();
    let fused = tensor_fuse(&mut g, &a, &b, &proj).unwrap();
    assert_eq!(fused.shape(), &[2, 5]);
    for r in 0..2 {
        let mut outer = [0.0; 6];
        for i in 0..2 {
            for j in 0..3 {
                outer[i * 3 + j] = a.values()[r * 2 + i] * b.values()[r * 3 + j];
            }
        }
        for o in 0..5 {
            let mut s = proj.bias.values()[o];
            for (i, &x) in outer.iter().enumerate() {
                s += x * proj.weight.values()[i * 5 + o];
            }
            assert!((fused.values()[r * 5 + o] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn tensor_fuse_rejects_mismatched_projection() {
    let mut rng = RngState::new(28).stream("init");
    let proj = Linear::new(7, 5, &mut rng);
    let a = randn(vec![2, 2], 29);
    let b = randn(vec![2, 3], 30);
    let mut g = Graph::new();
    assert!(tensor_fuse(&mut g, &a, &b, &proj).is_err());
}

#[test]
fn attention_fuse_singleton_key() {
    let mut rng = RngState::new(31).stream("init");
    let attn = MultiHeadAttention::new(4, 1, &mut rng).unwrap();
    let main_seq = randn(vec![2, 1, 4], 32);
    let aux_seq = randn(vec![2, 3, 4], 33);
    let mut g = Graph::new();
    let fused = attention_fuse(&mut g, &main_seq, &aux_seq, &attn).unwrap();
    assert_eq!(fused.shape(), &[2, 4]);
    // single key ⇒ every query yields wo(wv(key)), so pooling changes nothing
    let key = g.reshape(&main_seq, vec![2, 4]).unwrap();
    let v = attn.wv.forward(&mut g, &key).unwrap();
    let expect = attn.wo.forward(&mut g, &v).unwrap();
    for (a, b) in fused.values().iter().zip(expect.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_fuse_identical_keys_ignore_query_content() {
    let mut rng = RngState::new(34).stream("init");
    let attn = MultiHeadAttention::new(4, 2, &mut rng).unwrap();
    let one_row = randn(vec![1, 1, 4], 35);
    let mut rows = Vec::new();
    for _ in 0..3 {
        rows.extend_from_slice(one_row.values());
    }
    let main_seq = Tensor::new(vec![1, 3, 4], rows).unwrap();
    let mut g = Graph::new();
    let a = attention_fuse(&mut g, &main_seq, &randn(vec![1, 2, 4], 36), &attn).unwrap();
    let b = attention_fuse(&mut g, &main_seq, &randn(vec![1, 2, 4], 37), &attn).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-12);
    }
}
