//! Temporal CNN: two same-padded conv1d+ReLU layers, global max-pool over
//! time, then the projection.

use crate::error::Result;
use crate::layers::{Linear, VisitParams};
use crate::rng::RngStream;
use crate::tensor::{Graph, Tensor};

use super::TsEncoding;

pub const KERNEL_WIDTH: usize = 3;

#[derive(Debug, Clone)]
pub struct CnnEncoder {
    pub kernel1: Tensor,
    pub bias1: Tensor,
    pub kernel2: Tensor,
    pub bias2: Tensor,
    pub proj: Linear,
}

fn conv_kernel(k: usize, c_in: usize, c_out: usize, rng: &mut RngStream) -> Tensor {
    let bound = (6.0 / ((k * c_in) as f64 + (k * c_out) as f64)).sqrt();
    let values = (0..k * c_in * c_out)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor::param(vec![k, c_in, c_out], values).expect("kernel dims")
}

impl CnnEncoder {
    pub fn new(in_dim: usize, channels: usize, out_dim: usize, rng: &mut RngStream) -> Self {
        Self {
            kernel1: conv_kernel(KERNEL_WIDTH, in_dim, channels, rng),
            bias1: Tensor::param(vec![channels], vec![0.0; channels]).expect("bias dims"),
            kernel2: conv_kernel(KERNEL_WIDTH, channels, channels, rng),
            bias2: Tensor::param(vec![channels], vec![0.0; channels]).expect("bias dims"),
            proj: Linear::new(channels, out_dim, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.kernel1.shape()[2]
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<TsEncoding> {
        let k1 = g.var(&self.kernel1);
        let b1 = g.var(&self.bias1);
        let k2 = g.var(&self.kernel2);
        let b2 = g.var(&self.bias2);
        let y = g.conv1d_same(x, &k1)?;
        let y = g.add(&y, &b1)?;
        let y = g.relu(&y)?;
        let y = g.conv1d_same(&y, &k2)?;
        let y = g.add(&y, &b2)?;
        let seq = g.relu(&y)?;
        let pooled_pre = g.max_axis(&seq, 1)?;
        let proj = self.proj.forward(g, &pooled_pre)?;
        let pooled = g.relu(&proj)?;
        Ok(TsEncoding { pooled, seq })
    }
}

impl VisitParams for CnnEncoder {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.kernel1"), &mut self.kernel1);
        f(format!("{prefix}.bias1"), &mut self.bias1);
        f(format!("{prefix}.kernel2"), &mut self.kernel2);
        f(format!("{prefix}.bias2"), &mut self.bias2);
        self.proj.visit_params(&format!("{prefix}.proj"), f);
    }
}
