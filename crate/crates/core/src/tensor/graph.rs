//! The computation graph and its forward primitives.
//!
//! Nodes are appended in topological order; every node stores its inputs,
//! its forward value, and whatever context the matching backward rule needs.
//! The tape is single-use: `backward` consumes it.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::shape::{axis_runs, broadcast, broadcast_strides, numel, CoordIter};
use super::Tensor;

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Clamp floor for `log` and denominator guards, matching the loss guards.
pub const LOG_CLAMP: f64 = 1e-12;
/// Inputs above this are flattened before `exp` so finite stays finite.
pub const EXP_CLAMP: f64 = 700.0;

/// Handle to a node of one specific graph instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    pub(crate) graph: u64,
    pub(crate) index: usize,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Matmul {
        a: usize,
        b: usize,
        transpose_b: bool,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Recip {
        a: usize,
    },
    ConcatLast {
        inputs: Vec<usize>,
    },
    Relu {
        a: usize,
    },
    Sigmoid {
        a: usize,
    },
    Tanh {
        a: usize,
    },
    SoftmaxLast {
        a: usize,
    },
    Log {
        a: usize,
    },
    Exp {
        a: usize,
    },
    L2NormLast {
        a: usize,
    },
    ScalarMin {
        a: usize,
        cap: f64,
    },
    Scale {
        a: usize,
        factor: f64,
    },
    SliceLast {
        a: usize,
        start: usize,
    },
    Reshape {
        a: usize,
    },
    MeanAxis {
        a: usize,
        axis: usize,
    },
    MaxAxis {
        a: usize,
        argmax: Vec<usize>,
    },
    IndexAxis {
        a: usize,
        axis: usize,
        index: usize,
    },
    Outer {
        a: usize,
        b: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        a: usize,
        mask: Vec<f64>,
    },
    Conv1dSame {
        x: usize,
        kernel: usize,
    },
}

pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub needs_grad: bool,
    pub param_id: Option<u64>,
}

/// Single-use reverse-mode tape.
pub struct Graph {
    pub(crate) id: u64,
    pub(crate) nodes: Vec<Node>,
    pub(crate) param_nodes: HashMap<u64, usize>,
    pub(crate) consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool) -> usize {
        let index = self.nodes.len();
        self.nodes.push(Node {
            op,
            shape,
            values,
            needs_grad,
            param_id: None,
        });
        index
    }

    /// Node index for an input tensor, registering a leaf on first sight.
    /// A parameter re-registered in the same graph resolves to its existing
    /// leaf, so repeated uses accumulate into one gradient.
    fn node_of(&mut self, t: &Tensor) -> usize {
        if let Some(id) = t.node_id() {
            if id.graph == self.id {
                return id.index;
            }
        }
        if let Some(pid) = t.param_id() {
            if let Some(&idx) = self.param_nodes.get(&pid) {
                return idx;
            }
        }
        let idx = self.push(
            Op::Leaf,
            t.shape().to_vec(),
            t.values().to_vec(),
            t.requires_grad(),
        );
        if let Some(pid) = t.param_id() {
            self.nodes[idx].param_id = Some(pid);
            self.param_nodes.insert(pid, idx);
        }
        idx
    }

    /// Register a tensor as a graph leaf and return a handle-carrying copy.
    pub fn var(&mut self, t: &Tensor) -> Tensor {
        let idx = self.node_of(t);
        let mut out = t.clone();
        out = out.with_node(
            NodeId {
                graph: self.id,
                index: idx,
            },
            t.requires_grad(),
        );
        out
    }

    /// Wrap a freshly computed result: records the node only when some input
    /// requires a gradient, otherwise returns a detached tensor.
    fn emit(
        &mut self,
        op: Op,
        shape: Vec<usize>,
        values: Vec<f64>,
        any_grad: bool,
    ) -> Result<Tensor> {
        let t = Tensor::new(shape.clone(), values.clone())?;
        if !any_grad {
            return Ok(t);
        }
        let idx = self.push(op, shape, values, true);
        Ok(t.with_node(
            NodeId {
                graph: self.id,
                index: idx,
            },
            true,
        ))
    }

    fn grad_of(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    // ---- primitives ----

    /// Matrix product. `a` is `[..., m, k]`; `b` is either a plain matrix
    /// applied to every leading row, or batched with the same leading
    /// extents as `a`. With `transpose_b` the last two axes of `b` are read
    /// transposed (used for attention scores).
    pub fn matmul_t(&mut self, a: &Tensor, b: &Tensor, transpose_b: bool) -> Result<Tensor> {
        let (ash, bsh) = (a.shape(), b.shape());
        let mismatch = || Error::ShapeMismatch {
            kind: "matmul",
            lhs: ash.to_vec(),
            rhs: bsh.to_vec(),
        };
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (bk, n) = if transpose_b {
            (bsh[bsh.len() - 1], bsh[bsh.len() - 2])
        } else {
            (bsh[bsh.len() - 2], bsh[bsh.len() - 1])
        };
        if bk != k {
            return Err(mismatch());
        }
        let batched = bsh.len() > 2;
        if batched && bsh[..bsh.len() - 2] != ash[..ash.len() - 2] {
            return Err(mismatch());
        }
        let batch: usize = ash[..ash.len() - 2].iter().product();
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let a_off = bi * m * k;
            let b_off = if batched { bi * k * n } else { 0 };
            gemm(
                &mut out[bi * m * n..(bi + 1) * m * n],
                &a.values()[a_off..a_off + m * k],
                &b.values()[b_off..b_off + k * n],
                m,
                n,
                k,
                transpose_b,
            );
        }
        let mut out_shape = ash[..ash.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let (ia, ib) = (self.node_of(a), self.node_of(b));
        let any = self.grad_of(ia) || self.grad_of(ib);
        self.emit(
            Op::Matmul {
                a: ia,
                b: ib,
                transpose_b,
            },
            out_shape,
            out,
            any,
        )
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.matmul_t(a, b, false)
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.broadcast_binary(a, b, "add", |x, y| x + y, |ia, ib| Op::Add { a: ia, b: ib })
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.broadcast_binary(a, b, "mul", |x, y| x * y, |ia, ib| Op::Mul { a: ia, b: ib })
    }

    fn broadcast_binary(
        &mut self,
        a: &Tensor,
        b: &Tensor,
        kind: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Tensor> {
        let out_shape = broadcast(kind, a.shape(), b.shape())?;
        let sa = broadcast_strides(a.shape(), &out_shape);
        let sb = broadcast_strides(b.shape(), &out_shape);
        let mut out = vec![0.0; numel(&out_shape)];
        let mut it = CoordIter::new(&out_shape);
        let (av, bv) = (a.values(), b.values());
        let mut flat = 0usize;
        loop {
            out[flat] = f(av[it.offset(&sa)], bv[it.offset(&sb)]);
            flat += 1;
            if !it.advance() {
                break;
            }
        }
        let (ia, ib) = (self.node_of(a), self.node_of(b));
        let any = self.grad_of(ia) || self.grad_of(ib);
        self.emit(op(ia, ib), out_shape, out, any)
    }

    /// Elementwise reciprocal, denominator magnitude clamped to `LOG_CLAMP`.
    pub fn recip(&mut self, a: &Tensor) -> Result<Tensor> {
        let out = a
            .values()
            .iter()
            .map(|&x| {
                let guarded = if x.abs() < LOG_CLAMP {
                    LOG_CLAMP.copysign(if x == 0.0 { 1.0 } else { x })
                } else {
                    x
                };
                1.0 / guarded
            })
            .collect();
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::Recip { a: ia }, a.shape().to_vec(), out, any)
    }

    /// Concatenate along the last axis. All leading extents must agree.
    pub fn concat_last(&mut self, parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_last: no inputs");
        let first = parts[0].shape();
        if first.is_empty() {
            return Err(Error::EmptyAxis { kind: "concat" });
        }
        let lead = &first[..first.len() - 1];
        let mut total_last = 0usize;
        for p in parts {
            let sh = p.shape();
            if sh.is_empty() || &sh[..sh.len() - 1] != lead {
                return Err(Error::ShapeMismatch {
                    kind: "concat",
                    lhs: first.to_vec(),
                    rhs: sh.to_vec(),
                });
            }
            total_last += sh[sh.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total_last];
        let mut col = 0usize;
        for p in parts {
            let w = p.shape()[p.rank() - 1];
            for r in 0..rows {
                out[r * total_last + col..r * total_last + col + w]
                    .copy_from_slice(&p.values()[r * w..(r + 1) * w]);
            }
            col += w;
        }
        let ids: Vec<usize> = parts.iter().map(|p| self.node_of(p)).collect();
        let any = ids.iter().any(|&i| self.grad_of(i));
        let mut out_shape = lead.to_vec();
        out_shape.push(total_last);
        self.emit(Op::ConcatLast { inputs: ids }, out_shape, out, any)
    }

    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, |x| x.max(0.0), |ia| Op::Relu { a: ia })
    }

    pub fn sigmoid(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, stable_sigmoid, |ia| Op::Sigmoid { a: ia })
    }

    pub fn tanh(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, f64::tanh, |ia| Op::Tanh { a: ia })
    }

    /// Natural log with the input clamped to at least `LOG_CLAMP`.
    pub fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, |x| x.max(LOG_CLAMP).ln(), |ia| Op::Log { a: ia })
    }

    /// Exponential with the input flattened above `EXP_CLAMP`.
    pub fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        self.unary(a, |x| x.min(EXP_CLAMP).exp(), |ia| Op::Exp { a: ia })
    }

    fn unary(
        &mut self,
        a: &Tensor,
        f: impl Fn(f64) -> f64,
        op: impl Fn(usize) -> Op,
    ) -> Result<Tensor> {
        let out = a.values().iter().map(|&x| f(x)).collect();
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(op(ia), a.shape().to_vec(), out, any)
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax_last(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.rank() == 0 {
            return Err(Error::EmptyAxis { kind: "softmax" });
        }
        let width = a.shape()[a.rank() - 1];
        let mut out = vec![0.0; a.numel()];
        for (row_out, row_in) in out.chunks_mut(width).zip(a.values().chunks(width)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in row_out.iter_mut().zip(row_in) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::SoftmaxLast { a: ia }, a.shape().to_vec(), out, any)
    }

    /// L2 norm over the last axis: `[..., d]` → `[...]`, scalar for vectors.
    pub fn l2_norm(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.rank() == 0 {
            return Err(Error::EmptyAxis { kind: "l2_norm" });
        }
        let width = a.shape()[a.rank() - 1];
        let out: Vec<f64> = a
            .values()
            .chunks(width)
            .map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        let out_shape = a.shape()[..a.rank() - 1].to_vec();
        self.emit(Op::L2NormLast { a: ia }, out_shape, out, any)
    }

    /// Elementwise `min(x, cap)` against a constant.
    pub fn scalar_min(&mut self, a: &Tensor, cap: f64) -> Result<Tensor> {
        let out = a.values().iter().map(|&x| x.min(cap)).collect();
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::ScalarMin { a: ia, cap }, a.shape().to_vec(), out, any)
    }

    /// Multiply by a constant scalar.
    pub fn scale(&mut self, a: &Tensor, factor: f64) -> Result<Tensor> {
        let out = a.values().iter().map(|&x| x * factor).collect();
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::Scale { a: ia, factor }, a.shape().to_vec(), out, any)
    }

    /// Slice `[start, end)` of the last axis.
    pub fn slice_last(&mut self, a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
        if a.rank() == 0 {
            return Err(Error::EmptyAxis { kind: "slice" });
        }
        let width = a.shape()[a.rank() - 1];
        if start >= end || end > width {
            return Err(Error::InvalidShape {
                kind: "slice",
                shape: a.shape().to_vec(),
                reason: format!("range {start}..{end} out of last axis {width}"),
            });
        }
        let w = end - start;
        let rows = a.numel() / width;
        let mut out = vec![0.0; rows * w];
        for r in 0..rows {
            out[r * w..(r + 1) * w]
                .copy_from_slice(&a.values()[r * width + start..r * width + end]);
        }
        let mut out_shape = a.shape().to_vec();
        *out_shape.last_mut().unwrap() = w;
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::SliceLast { a: ia, start }, out_shape, out, any)
    }

    pub fn reshape(&mut self, a: &Tensor, new_shape: Vec<usize>) -> Result<Tensor> {
        if numel(&new_shape) != a.numel() || new_shape.contains(&0) {
            return Err(Error::InvalidShape {
                kind: "reshape",
                shape: new_shape,
                reason: format!("element count must stay {}", a.numel()),
            });
        }
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::Reshape { a: ia }, new_shape, a.values().to_vec(), any)
    }

    pub fn mean_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        let (out_shape, out, _) = reduce_axis(a, axis, "mean")?;
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::MeanAxis { a: ia, axis }, out_shape, out, any)
    }

    pub fn max_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        let (out_shape, out, argmax) = reduce_axis(a, axis, "max")?;
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::MaxAxis { a: ia, argmax }, out_shape, out, any)
    }

    /// Pick one index along an axis, dropping that axis.
    pub fn index_axis(&mut self, a: &Tensor, axis: usize, index: usize) -> Result<Tensor> {
        if axis >= a.rank() || index >= a.shape()[axis] {
            return Err(Error::InvalidShape {
                kind: "index_axis",
                shape: a.shape().to_vec(),
                reason: format!("index {index} on axis {axis}"),
            });
        }
        let (outer, extent, inner) = axis_runs(a.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let src = (o * extent + index) * inner;
            out[o * inner..(o + 1) * inner].copy_from_slice(&a.values()[src..src + inner]);
        }
        let mut out_shape = a.shape().to_vec();
        out_shape.remove(axis);
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::IndexAxis { a: ia, axis, index }, out_shape, out, any)
    }

    /// Last entry along an axis (`index_axis` at `extent - 1`).
    pub fn last_axis(&mut self, a: &Tensor, axis: usize) -> Result<Tensor> {
        if axis >= a.rank() {
            return Err(Error::InvalidShape {
                kind: "last_axis",
                shape: a.shape().to_vec(),
                reason: format!("axis {axis}"),
            });
        }
        self.index_axis(a, axis, a.shape()[axis] - 1)
    }

    /// Per-row outer product: `[B, da] × [B, db]` → `[B, da·db]` flattened.
    pub fn outer_product(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0] {
            return Err(Error::ShapeMismatch {
                kind: "outer_product",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (batch, da, db) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; batch * da * db];
        for r in 0..batch {
            for i in 0..da {
                let ai = a.values()[r * da + i];
                for j in 0..db {
                    out[r * da * db + i * db + j] = ai * b.values()[r * db + j];
                }
            }
        }
        let (ia, ib) = (self.node_of(a), self.node_of(b));
        let any = self.grad_of(ia) || self.grad_of(ib);
        self.emit(Op::Outer { a: ia, b: ib }, vec![batch, da * db], out, any)
    }

    /// Row lookups into an embedding table `[V, d]`. Output shape is
    /// `ids_shape + [d]`; gradients scatter-add into the table.
    pub fn embedding_lookup(
        &mut self,
        table: &Tensor,
        ids: &[usize],
        ids_shape: &[usize],
    ) -> Result<Tensor> {
        if table.rank() != 2 {
            return Err(Error::InvalidShape {
                kind: "embedding",
                shape: table.shape().to_vec(),
                reason: "table must be rank 2".into(),
            });
        }
        let (vocab, dim) = (table.shape()[0], table.shape()[1]);
        if ids.len() != numel(ids_shape) {
            return Err(Error::InvalidShape {
                kind: "embedding",
                shape: ids_shape.to_vec(),
                reason: format!("{} ids for {} slots", ids.len(), numel(ids_shape)),
            });
        }
        let mut out = vec![0.0; ids.len() * dim];
        for (slot, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(Error::TokenOutOfVocab { id, vocab });
            }
            out[slot * dim..(slot + 1) * dim]
                .copy_from_slice(&table.values()[id * dim..(id + 1) * dim]);
        }
        let mut out_shape = ids_shape.to_vec();
        out_shape.push(dim);
        let it = self.node_of(table);
        let any = self.grad_of(it);
        self.emit(
            Op::Embedding {
                table: it,
                ids: ids.to_vec(),
            },
            out_shape,
            out,
            any,
        )
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(
        &mut self,
        x: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        eps: f64,
    ) -> Result<Tensor> {
        if x.rank() == 0 {
            return Err(Error::EmptyAxis { kind: "layer_norm" });
        }
        let width = x.shape()[x.rank() - 1];
        if gamma.shape() != [width] || beta.shape() != [width] {
            return Err(Error::ShapeMismatch {
                kind: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let rows = x.numel() / width;
        let mut out = vec![0.0; x.numel()];
        let mut means = vec![0.0; rows];
        let mut inv_stds = vec![0.0; rows];
        for r in 0..rows {
            let row = &x.values()[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            means[r] = mean;
            inv_stds[r] = inv_std;
            for c in 0..width {
                out[r * width + c] =
                    (row[c] - mean) * inv_std * gamma.values()[c] + beta.values()[c];
            }
        }
        let (ix, ig, ib) = (self.node_of(x), self.node_of(gamma), self.node_of(beta));
        let any = self.grad_of(ix) || self.grad_of(ig) || self.grad_of(ib);
        self.emit(
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                mean: means,
                inv_std: inv_stds,
            },
            x.shape().to_vec(),
            out,
            any,
        )
    }

    /// Inverted dropout: keeps each entry with probability `1 - p` and
    /// rescales by `1/(1-p)` at train time. Identity when `train` is false
    /// or `p == 0`, bit-exactly.
    pub fn dropout(
        &mut self,
        a: &Tensor,
        p: f64,
        rng: &mut RngStream,
        train: bool,
    ) -> Result<Tensor> {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0, 1)");
        if !train || p == 0.0 {
            let ia = self.node_of(a);
            let any = self.grad_of(ia);
            return self.emit(
                Op::Dropout {
                    a: ia,
                    mask: Vec::new(),
                },
                a.shape().to_vec(),
                a.values().to_vec(),
                any,
            );
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..a.numel())
            .map(|_| {
                if rng.next_f64() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let out = a.values().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let ia = self.node_of(a);
        let any = self.grad_of(ia);
        self.emit(Op::Dropout { a: ia, mask }, a.shape().to_vec(), out, any)
    }

    /// 1-D convolution over the middle (time) axis with zero "same" padding.
    /// `x` is `[B, L, c_in]`, `kernel` is `[k, c_in, c_out]`, `k` odd.
    pub fn conv1d_same(&mut self, x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || kernel.rank() != 3 || kernel.shape()[1] != x.shape()[2] {
            return Err(Error::ShapeMismatch {
                kind: "conv1d",
                lhs: x.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        let k = kernel.shape()[0];
        if k.is_multiple_of(2) {
            return Err(Error::InvalidShape {
                kind: "conv1d",
                shape: kernel.shape().to_vec(),
                reason: "same padding requires an odd kernel width".into(),
            });
        }
        let (batch, len, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let c_out = kernel.shape()[2];
        let pad = (k - 1) / 2;
        let mut out = vec![0.0; batch * len * c_out];
        for b in 0..batch {
            for t in 0..len {
                for dk in 0..k {
                    let s = t + dk;
                    if s < pad || s - pad >= len {
                        continue;
                    }
                    let src = s - pad;
                    for ci in 0..c_in {
                        let xv = x.values()[(b * len + src) * c_in + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        for co in 0..c_out {
                            out[(b * len + t) * c_out + co] +=
                                xv * kernel.values()[(dk * c_in + ci) * c_out + co];
                        }
                    }
                }
            }
        }
        let (ix, ik) = (self.node_of(x), self.node_of(kernel));
        let any = self.grad_of(ix) || self.grad_of(ik);
        self.emit(
            Op::Conv1dSame { x: ix, kernel: ik },
            vec![batch, len, c_out],
            out,
            any,
        )
    }

    // ---- derived helpers (compositions of the primitives above) ----

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let n = a.numel();
        let flat = self.reshape(a, vec![n])?;
        let mean = self.mean_axis(&flat, 0)?;
        self.scale(&mean, n as f64)
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.rank() == 0 {
            return Err(Error::EmptyAxis { kind: "sum" });
        }
        let axis = a.rank() - 1;
        let n = a.shape()[axis];
        let mean = self.mean_axis(a, axis)?;
        self.scale(&mean, n as f64)
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, a: &Tensor) -> Result<Tensor> {
        let neg = self.scale(a, -1.0)?;
        let one = Tensor::scalar(1.0);
        self.add(&neg, &one)
    }

    /// Elementwise `max(x, floor)` against a constant.
    pub fn scalar_max(&mut self, a: &Tensor, floor: f64) -> Result<Tensor> {
        let neg = self.scale(a, -1.0)?;
        let capped = self.scalar_min(&neg, -floor)?;
        self.scale(&capped, -1.0)
    }
}

/// `out[m,n] += a[m,k] @ b[k,n]`, reading `b` as `[n,k]` when `tb` is set.
fn gemm(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize, tb: bool) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            if tb {
                for j in 0..n {
                    out[i * n + j] += av * b[j * k + p];
                }
            } else {
                for j in 0..n {
                    out[i * n + j] += av * b[p * n + j];
                }
            }
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean or max over one axis, returning (out_shape, values, argmax flats).
fn reduce_axis(
    a: &Tensor,
    axis: usize,
    kind: &'static str,
) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    if axis >= a.rank() {
        return Err(Error::InvalidShape {
            kind: if kind == "mean" {
                "mean_axis"
            } else {
                "max_axis"
            },
            shape: a.shape().to_vec(),
            reason: format!("axis {axis} out of rank {}", a.rank()),
        });
    }
    let (outer, extent, inner) = axis_runs(a.shape(), axis);
    let mut out = vec![0.0; outer * inner];
    let mut argmax = Vec::new();
    if kind == "max" {
        argmax = vec![0usize; outer * inner];
    }
    for o in 0..outer {
        for i in 0..inner {
            if kind == "mean" {
                let mut s = 0.0;
                for e in 0..extent {
                    s += a.values()[(o * extent + e) * inner + i];
                }
                out[o * inner + i] = s / extent as f64;
            } else {
                let mut best = f64::NEG_INFINITY;
                let mut best_flat = 0usize;
                for e in 0..extent {
                    let flat = (o * extent + e) * inner + i;
                    let v = a.values()[flat];
                    if v > best {
                        best = v;
                        best_flat = flat;
                    }
                }
                out[o * inner + i] = best;
                argmax[o * inner + i] = best_flat;
            }
        }
    }
    let mut out_shape = a.shape().to_vec();
    out_shape.remove(axis);
    Ok((out_shape, out, argmax))
}
