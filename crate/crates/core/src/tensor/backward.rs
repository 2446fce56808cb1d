//! Reverse pass over the tape.

use crate::error::{Error, Result};

use super::graph::{Graph, Op, EXP_CLAMP, LOG_CLAMP};
use super::shape::{axis_runs, broadcast_strides, CoordIter};
use super::{Gradients, Tensor};

impl Graph {
    /// Run one backward pass from a scalar loss and consume the tape.
    /// Every gradient tensor mirrors its node's shape; registered leaves
    /// that the loss never reaches keep zero gradients.
    pub fn backward(&mut self, loss: &Tensor) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        let loss_idx = match loss.node_id() {
            Some(id) if id.graph == self.id => id.index,
            _ => return Err(Error::LossNotInGraph),
        };
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n)
            .map(|i| {
                if self.nodes[i].needs_grad {
                    Some(vec![0.0; self.nodes[i].values.len()])
                } else {
                    None
                }
            })
            .collect();
        if let Some(g) = grads[loss_idx].as_mut() {
            g[0] = 1.0;
        }

        for i in (0..=loss_idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let by_node = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|buf| {
                    Tensor::new(self.nodes[i].shape.clone(), buf).expect("grad shape matches node")
                })
            })
            .collect();
        Ok(Gradients {
            graph_id: self.id,
            by_node,
            param_nodes: self.param_nodes.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}

            Op::Matmul { a, b, transpose_b } => {
                let (ash, bsh) = (&self.nodes[*a].shape, &self.nodes[*b].shape);
                let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
                let n = node.shape[node.shape.len() - 1];
                let batch: usize = ash[..ash.len() - 2].iter().product();
                let batched = bsh.len() > 2;
                let av = &self.nodes[*a].values;
                let bv = &self.nodes[*b].values;
                for bi in 0..batch {
                    let (ga, go) = (bi * m * k, bi * m * n);
                    let gb = if batched { bi * k * n } else { 0 };
                    if let Some(da) = grads[*a].as_mut() {
                        if *transpose_b {
                            // out = A Bᵀ, B stored [n, k]: dA += G B
                            mm_nn(
                                &mut da[ga..ga + m * k],
                                &g[go..go + m * n],
                                &bv[gb..gb + k * n],
                                m,
                                k,
                                n,
                            );
                        } else {
                            // dA += G Bᵀ, B stored [k, n]
                            mm_nt(
                                &mut da[ga..ga + m * k],
                                &g[go..go + m * n],
                                &bv[gb..gb + k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                    if let Some(db) = grads[*b].as_mut() {
                        if *transpose_b {
                            // dB[n,k] += Gᵀ A
                            mm_tn(
                                &mut db[gb..gb + k * n],
                                &g[go..go + m * n],
                                &av[ga..ga + m * k],
                                n,
                                k,
                                m,
                            );
                        } else {
                            // dB[k,n] += Aᵀ G
                            mm_tn(
                                &mut db[gb..gb + k * n],
                                &av[ga..ga + m * k],
                                &g[go..go + m * n],
                                k,
                                n,
                                m,
                            );
                        }
                    }
                }
            }

            Op::Add { a, b } => {
                let sa = broadcast_strides(&self.nodes[*a].shape, &node.shape);
                let sb = broadcast_strides(&self.nodes[*b].shape, &node.shape);
                let (need_a, need_b) = (grads[*a].is_some(), grads[*b].is_some());
                let mut it = CoordIter::new(&node.shape);
                let mut flat = 0usize;
                loop {
                    if need_a {
                        let off = it.offset(&sa);
                        grads[*a].as_mut().unwrap()[off] += g[flat];
                    }
                    if need_b {
                        let off = it.offset(&sb);
                        grads[*b].as_mut().unwrap()[off] += g[flat];
                    }
                    flat += 1;
                    if !it.advance() {
                        break;
                    }
                }
            }

            Op::Mul { a, b } => {
                let sa = broadcast_strides(&self.nodes[*a].shape, &node.shape);
                let sb = broadcast_strides(&self.nodes[*b].shape, &node.shape);
                let av = &self.nodes[*a].values;
                let bv = &self.nodes[*b].values;
                let (need_a, need_b) = (grads[*a].is_some(), grads[*b].is_some());
                let mut it = CoordIter::new(&node.shape);
                let mut flat = 0usize;
                loop {
                    let (oa, ob) = (it.offset(&sa), it.offset(&sb));
                    if need_a {
                        grads[*a].as_mut().unwrap()[oa] += g[flat] * bv[ob];
                    }
                    if need_b {
                        grads[*b].as_mut().unwrap()[ob] += g[flat] * av[oa];
                    }
                    flat += 1;
                    if !it.advance() {
                        break;
                    }
                }
            }

            Op::Recip { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    let xv = &self.nodes[*a].values;
                    for (j, dv) in da.iter_mut().enumerate() {
                        if xv[j].abs() >= LOG_CLAMP {
                            let y = node.values[j];
                            *dv += -g[j] * y * y;
                        }
                    }
                }
            }

            Op::ConcatLast { inputs } => {
                let total = *node.shape.last().unwrap();
                let rows = node.values.len() / total;
                let mut col = 0usize;
                for &inp in inputs {
                    let w = *self.nodes[inp].shape.last().unwrap();
                    if let Some(di) = grads[inp].as_mut() {
                        for r in 0..rows {
                            for c in 0..w {
                                di[r * w + c] += g[r * total + col + c];
                            }
                        }
                    }
                    col += w;
                }
            }

            Op::Relu { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    let xv = &self.nodes[*a].values;
                    for j in 0..da.len() {
                        if xv[j] > 0.0 {
                            da[j] += g[j];
                        }
                    }
                }
            }

            Op::Sigmoid { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    for j in 0..da.len() {
                        let s = node.values[j];
                        da[j] += g[j] * s * (1.0 - s);
                    }
                }
            }

            Op::Tanh { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    for j in 0..da.len() {
                        let t = node.values[j];
                        da[j] += g[j] * (1.0 - t * t);
                    }
                }
            }

            Op::SoftmaxLast { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    let width = *node.shape.last().unwrap();
                    for r in 0..node.values.len() / width {
                        let s = &node.values[r * width..(r + 1) * width];
                        let gr = &g[r * width..(r + 1) * width];
                        let dot: f64 = s.iter().zip(gr).map(|(si, gi)| si * gi).sum();
                        for c in 0..width {
                            da[r * width + c] += s[c] * (gr[c] - dot);
                        }
                    }
                }
            }

            Op::Log { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    let xv = &self.nodes[*a].values;
                    for j in 0..da.len() {
                        if xv[j] > LOG_CLAMP {
                            da[j] += g[j] / xv[j];
                        }
                    }
                }
            }

            Op::Exp { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    let xv = &self.nodes[*a].values;
                    for j in 0..da.len() {
                        if xv[j] < EXP_CLAMP {
                            da[j] += g[j] * node.values[j];
                        }
                    }
                }
            }

            Op::L2NormLast { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    let width = *self.nodes[*a].shape.last().unwrap();
                    let xv = &self.nodes[*a].values;
                    for r in 0..node.values.len() {
                        let norm = node.values[r];
                        if norm > 0.0 {
                            for c in 0..width {
                                da[r * width + c] += g[r] * xv[r * width + c] / norm;
                            }
                        }
                    }
                }
            }

            Op::ScalarMin { a, cap } => {
                if let Some(da) = grads[*a].as_mut() {
                    let xv = &self.nodes[*a].values;
                    for j in 0..da.len() {
                        if xv[j] < *cap {
                            da[j] += g[j];
                        }
                    }
                }
            }

            Op::Scale { a, factor } => {
                if let Some(da) = grads[*a].as_mut() {
                    for j in 0..da.len() {
                        da[j] += g[j] * factor;
                    }
                }
            }

            Op::SliceLast { a, start } => {
                if let Some(da) = grads[*a].as_mut() {
                    let src_w = *self.nodes[*a].shape.last().unwrap();
                    let w = *node.shape.last().unwrap();
                    for r in 0..node.values.len() / w {
                        for c in 0..w {
                            da[r * src_w + start + c] += g[r * w + c];
                        }
                    }
                }
            }

            Op::Reshape { a } => {
                if let Some(da) = grads[*a].as_mut() {
                    for j in 0..da.len() {
                        da[j] += g[j];
                    }
                }
            }

            Op::MeanAxis { a, axis } => {
                if let Some(da) = grads[*a].as_mut() {
                    let (outer, extent, inner) = axis_runs(&self.nodes[*a].shape, *axis);
                    let scale = 1.0 / extent as f64;
                    for o in 0..outer {
                        for e in 0..extent {
                            for i2 in 0..inner {
                                da[(o * extent + e) * inner + i2] += g[o * inner + i2] * scale;
                            }
                        }
                    }
                }
            }

            Op::MaxAxis { a, argmax } => {
                if let Some(da) = grads[*a].as_mut() {
                    for (oi, &flat) in argmax.iter().enumerate() {
                        da[flat] += g[oi];
                    }
                }
            }

            Op::IndexAxis { a, axis, index } => {
                if let Some(da) = grads[*a].as_mut() {
                    let (outer, extent, inner) = axis_runs(&self.nodes[*a].shape, *axis);
                    for o in 0..outer {
                        for i2 in 0..inner {
                            da[(o * extent + index) * inner + i2] += g[o * inner + i2];
                        }
                    }
                }
            }

            Op::Outer { a, b } => {
                let da_w = *self.nodes[*a].shape.last().unwrap();
                let db_w = *self.nodes[*b].shape.last().unwrap();
                let batch = self.nodes[*a].shape[0];
                let av = &self.nodes[*a].values;
                let bv = &self.nodes[*b].values;
                for r in 0..batch {
                    for i2 in 0..da_w {
                        for j in 0..db_w {
                            let gv = g[r * da_w * db_w + i2 * db_w + j];
                            if let Some(da) = grads[*a].as_mut() {
                                da[r * da_w + i2] += gv * bv[r * db_w + j];
                            }
                            if let Some(db) = grads[*b].as_mut() {
                                db[r * db_w + j] += gv * av[r * da_w + i2];
                            }
                        }
                    }
                }
            }

            Op::Embedding { table, ids } => {
                if let Some(dt) = grads[*table].as_mut() {
                    let dim = self.nodes[*table].shape[1];
                    for (slot, &id) in ids.iter().enumerate() {
                        for c in 0..dim {
                            dt[id * dim + c] += g[slot * dim + c];
                        }
                    }
                }
            }

            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let width = *node.shape.last().unwrap();
                let rows = node.values.len() / width;
                let xv = &self.nodes[*x].values;
                let gv = &self.nodes[*gamma].values;
                for r in 0..rows {
                    let (mu, istd) = (mean[r], inv_std[r]);
                    let row = &xv[r * width..(r + 1) * width];
                    let gr = &g[r * width..(r + 1) * width];
                    // dxhat and the two row means the closed form needs
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for c in 0..width {
                        let xhat = (row[c] - mu) * istd;
                        let dxhat = gr[c] * gv[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    let inv_w = 1.0 / width as f64;
                    for c in 0..width {
                        let xhat = (row[c] - mu) * istd;
                        let dxhat = gr[c] * gv[c];
                        if let Some(dx) = grads[*x].as_mut() {
                            dx[r * width + c] +=
                                istd * (dxhat - inv_w * sum_dxhat - xhat * inv_w * sum_dxhat_xhat);
                        }
                        if let Some(dg) = grads[*gamma].as_mut() {
                            dg[c] += gr[c] * xhat;
                        }
                        if let Some(db) = grads[*beta].as_mut() {
                            db[c] += gr[c];
                        }
                    }
                }
            }

            Op::Dropout { a, mask } => {
                if let Some(da) = grads[*a].as_mut() {
                    if mask.is_empty() {
                        for j in 0..da.len() {
                            da[j] += g[j];
                        }
                    } else {
                        for j in 0..da.len() {
                            da[j] += g[j] * mask[j];
                        }
                    }
                }
            }

            Op::Conv1dSame { x, kernel } => {
                let xsh = &self.nodes[*x].shape;
                let ksh = &self.nodes[*kernel].shape;
                let (batch, len, c_in) = (xsh[0], xsh[1], xsh[2]);
                let (k, c_out) = (ksh[0], ksh[2]);
                let pad = (k - 1) / 2;
                let xv = &self.nodes[*x].values;
                let kv = &self.nodes[*kernel].values;
                for b in 0..batch {
                    for t in 0..len {
                        for dk in 0..k {
                            let s = t + dk;
                            if s < pad || s - pad >= len {
                                continue;
                            }
                            let src = s - pad;
                            for ci in 0..c_in {
                                let x_flat = (b * len + src) * c_in + ci;
                                for co in 0..c_out {
                                    let gv = g[(b * len + t) * c_out + co];
                                    let k_flat = (dk * c_in + ci) * c_out + co;
                                    if let Some(dx) = grads[*x].as_mut() {
                                        dx[x_flat] += gv * kv[k_flat];
                                    }
                                    if let Some(dkr) = grads[*kernel].as_mut() {
                                        dkr[k_flat] += gv * xv[x_flat];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn mm_nn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    // out[m,n] += a[m,k] b[k,n]
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
}

fn mm_nt(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    // out[m,n] += a[m,k] bᵀ where b is stored [n,k]
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[j * k + p];
            }
            out[i * n + j] += s;
        }
    }
}

fn mm_tn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    // out[m,n] += aᵀ b where a is stored [k,m], b is stored [k,n]
    for p in 0..k {
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
}
