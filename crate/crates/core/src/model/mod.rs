//! Full models: configuration, the name registry, and assembled forward
//! passes from raw batch to prediction scores.

mod config;
mod registry;

pub use config::{FusionKind, ModelConfig, TextDims};
pub use registry::{describe, gated_pair_names, registry, resolve, ModelSpec};

use crate::data::{DatasetHeader, LabelBlock, SampleBatch, TaskKind};
use crate::encoders::{
    CnnEncoder, LstmEncoder, StarEncoder, TextEncoder, TiEncoder, TransformerTsEncoder, TsEncoder,
    TsVariant,
};
use crate::error::{Error, Result};
use crate::fusion::{
    attention_fuse, early_fuse, tensor_fuse, AttentionGate, EncodedTriple, MainModality,
};
use crate::heads::{bce_loss, predict_binary, predict_multilabel};
use crate::layers::{Linear, MultiHeadAttention, VisitParams};
use crate::rng::{RngState, RngStream};
use crate::tensor::{Graph, Tensor};

/// Architecture-specific components of a built model.
#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum ModelKind {
    SingleTi {
        encoder: TiEncoder,
    },
    SingleTs {
        encoder: TsEncoder,
    },
    SingleText {
        encoder: TextEncoder,
    },
    /// Time-invariant features repeated along time and concatenated into
    /// the sequence encoder; no text path.
    EarlyFused {
        encoder: TsEncoder,
    },
    Gated {
        ti: TiEncoder,
        ts: TsEncoder,
        text: TextEncoder,
        gate: AttentionGate,
        main: MainModality,
    },
    /// Outer product of the early-fused sequence representation and the
    /// text representation, projected.
    TensorFused {
        ts: TsEncoder,
        text: TextEncoder,
        proj: Linear,
        main: MainModality,
    },
    /// Cross-attention between the early-fused sequence states and the
    /// text token states, the main side serving keys and values.
    AttnFused {
        ts: TsEncoder,
        text: TextEncoder,
        proj_ts: Linear,
        proj_text: Linear,
        attn: MultiHeadAttention,
        main: MainModality,
    },
}

#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub spec: ModelSpec,
    pub header: DatasetHeader,
    pub kind: ModelKind,
    pub head: Linear,
}

impl Model {
    /// Assemble a model for a dataset. The registry resolves the name to
    /// its fusion strategy and main modality; explicit `fusion`/`main`
    /// entries in the configuration must agree with the resolution.
    pub fn build(config: &ModelConfig, header: &DatasetHeader) -> Result<Model> {
        let spec = resolve(&config.model_name)?;
        if let Some(f) = config.fusion {
            if f != spec.fusion {
                return Err(Error::InvalidConfig(format!(
                    "config says fusion {f:?} but `{}` resolves to {:?}",
                    config.model_name, spec.fusion
                )));
            }
        }
        if let Some(m) = config.main {
            if Some(m) != spec.main {
                return Err(Error::InvalidConfig(format!(
                    "config says main {m:?} but `{}` resolves to {:?}",
                    config.model_name, spec.main
                )));
            }
        }
        if spec.ts_variant == Some(TsVariant::TransformerEncoder)
            && config.d2_encoded != config.ts_hidden
        {
            return Err(Error::InvalidConfig(format!(
                "transformer encoder has no output projection: d2_encoded ({}) must equal ts_hidden ({})",
                config.d2_encoded, config.ts_hidden
            )));
        }
        if spec.uses_text && header.d3_max > config.text.max_positions {
            return Err(Error::InvalidConfig(format!(
                "dataset notes up to {} tokens exceed {} text positions",
                header.d3_max, config.text.max_positions
            )));
        }

        let mut rng = RngState::new(config.seed).stream("init");
        let ts_in = if matches!(
            spec.fusion,
            FusionKind::Early | FusionKind::Tensor | FusionKind::Attention
        ) {
            header.d1 + header.d2
        } else {
            header.d2
        };
        let build_ts = |rng: &mut RngStream| -> Result<TsEncoder> {
            Ok(match spec.ts_variant.expect("ts variant required") {
                TsVariant::Lstm => TsEncoder::Lstm(LstmEncoder::new(
                    ts_in,
                    config.ts_hidden,
                    config.d2_encoded,
                    rng,
                )),
                TsVariant::Cnn => TsEncoder::Cnn(CnnEncoder::new(
                    ts_in,
                    config.ts_hidden,
                    config.d2_encoded,
                    rng,
                )),
                TsVariant::StarTransformer => TsEncoder::Star(StarEncoder::new(
                    ts_in,
                    config.ts_hidden,
                    config.ts_heads,
                    config.ts_layers,
                    config.d2_encoded,
                    rng,
                )?),
                TsVariant::TransformerEncoder => TsEncoder::Transformer(TransformerTsEncoder::new(
                    ts_in,
                    config.ts_hidden,
                    config.ts_layers,
                    config.ts_heads,
                    header.l,
                    config.dropout,
                    rng,
                )?),
            })
        };
        let build_text = |rng: &mut RngStream| -> Result<TextEncoder> {
            TextEncoder::new(
                header.vocab,
                config.text.width,
                config.text.layers,
                config.text.heads,
                config.text.max_positions,
                config.dropout,
                rng,
            )
        };

        let kind = match spec.fusion {
            FusionKind::None => {
                if spec.uses_ti {
                    ModelKind::SingleTi {
                        encoder: TiEncoder::new(header.d1, config.d1_encoded, &mut rng),
                    }
                } else if spec.uses_ts {
                    ModelKind::SingleTs {
                        encoder: build_ts(&mut rng)?,
                    }
                } else {
                    ModelKind::SingleText {
                        encoder: build_text(&mut rng)?,
                    }
                }
            }
            FusionKind::Early => ModelKind::EarlyFused {
                encoder: build_ts(&mut rng)?,
            },
            FusionKind::AttentionGate => {
                let ti = TiEncoder::new(header.d1, config.d1_encoded, &mut rng);
                let ts = build_ts(&mut rng)?;
                let text = build_text(&mut rng)?;
                let main = spec.main.expect("gated pair has a main modality");
                let (main_dim, aux_dim) = match main {
                    MainModality::Notes => (text.width(), ts.out_dim()),
                    MainModality::TimeSeries => (ts.out_dim(), text.width()),
                };
                let gate = AttentionGate::new(main_dim, config.d1_encoded, aux_dim, &mut rng);
                ModelKind::Gated {
                    ti,
                    ts,
                    text,
                    gate,
                    main,
                }
            }
            FusionKind::Tensor => {
                let ts = build_ts(&mut rng)?;
                let text = build_text(&mut rng)?;
                let proj = Linear::new(ts.out_dim() * text.width(), config.d2_encoded, &mut rng);
                ModelKind::TensorFused {
                    ts,
                    text,
                    proj,
                    main: spec.main.expect("pair has a main modality"),
                }
            }
            FusionKind::Attention => {
                let ts = build_ts(&mut rng)?;
                let text = build_text(&mut rng)?;
                let width = config.d2_encoded;
                let proj_ts = Linear::new(ts.seq_dim(), width, &mut rng);
                let proj_text = Linear::new(text.width(), width, &mut rng);
                let attn = MultiHeadAttention::new(width, config.ts_heads, &mut rng)?;
                ModelKind::AttnFused {
                    ts,
                    text,
                    proj_ts,
                    proj_text,
                    attn,
                    main: spec.main.expect("pair has a main modality"),
                }
            }
        };

        let fused_dim = match &kind {
            ModelKind::SingleTi { encoder } => encoder.out_dim(),
            ModelKind::SingleTs { encoder } | ModelKind::EarlyFused { encoder } => {
                encoder.out_dim()
            }
            ModelKind::SingleText { encoder } => encoder.width(),
            ModelKind::Gated { gate, .. } => gate.main_dim(),
            ModelKind::TensorFused { proj, .. } => proj.out_dim(),
            ModelKind::AttnFused { attn, .. } => attn.dim(),
        };
        let n_out = match config.task {
            TaskKind::ArfBinary => 1,
            TaskKind::DiagnosesMultilabel => header.n_labels,
        };
        let head = Linear::new(fused_dim, n_out, &mut rng);

        let mut resolved = config.clone();
        resolved.fusion = Some(spec.fusion);
        resolved.main = spec.main;
        Ok(Model {
            config: resolved,
            spec,
            header: header.clone(),
            kind,
            head,
        })
    }

    /// Fused representation of a batch, before the prediction head.
    fn fused(
        &self,
        g: &mut Graph,
        batch: &SampleBatch,
        rng: &mut RngStream,
        train: bool,
    ) -> Result<Tensor> {
        let b = batch.len();
        match &self.kind {
            ModelKind::SingleTi { encoder } => encoder.forward(g, &batch.i_ti),
            ModelKind::SingleTs { encoder } => {
                Ok(encoder.forward(g, &batch.i_ts, rng, train)?.pooled)
            }
            ModelKind::SingleText { encoder } => Ok(encoder
                .forward(
                    g,
                    &batch.note_ids,
                    &batch.note_mask,
                    b,
                    batch.note_len,
                    rng,
                    train,
                )?
                .pooled),
            ModelKind::EarlyFused { encoder } => {
                let fused_in = early_fuse(g, &batch.i_ti, &batch.i_ts)?;
                Ok(encoder.forward(g, &fused_in, rng, train)?.pooled)
            }
            ModelKind::Gated {
                ti,
                ts,
                text,
                gate,
                main,
            } => {
                let e_ti = ti.forward(g, &batch.i_ti)?;
                let e_ts = ts.forward(g, &batch.i_ts, rng, train)?.pooled;
                let e_nt = text
                    .forward(
                        g,
                        &batch.note_ids,
                        &batch.note_mask,
                        b,
                        batch.note_len,
                        rng,
                        train,
                    )?
                    .pooled;
                gate.forward(
                    g,
                    &EncodedTriple {
                        e_ti,
                        e_ts,
                        e_nt,
                        main: *main,
                    },
                )
            }
            ModelKind::TensorFused {
                ts,
                text,
                proj,
                main,
            } => {
                let fused_in = early_fuse(g, &batch.i_ti, &batch.i_ts)?;
                let e_t = ts.forward(g, &fused_in, rng, train)?.pooled;
                let e_nt = text
                    .forward(
                        g,
                        &batch.note_ids,
                        &batch.note_mask,
                        b,
                        batch.note_len,
                        rng,
                        train,
                    )?
                    .pooled;
                match main {
                    MainModality::TimeSeries => tensor_fuse(g, &e_t, &e_nt, proj),
                    MainModality::Notes => tensor_fuse(g, &e_nt, &e_t, proj),
                }
            }
            ModelKind::AttnFused {
                ts,
                text,
                proj_ts,
                proj_text,
                attn,
                main,
            } => {
                let fused_in = early_fuse(g, &batch.i_ti, &batch.i_ts)?;
                let ts_seq = ts.forward(g, &fused_in, rng, train)?.seq;
                let nt_seq = text
                    .forward(
                        g,
                        &batch.note_ids,
                        &batch.note_mask,
                        b,
                        batch.note_len,
                        rng,
                        train,
                    )?
                    .seq;
                let ts_proj = proj_ts.forward(g, &ts_seq)?;
                let nt_proj = proj_text.forward(g, &nt_seq)?;
                match main {
                    MainModality::TimeSeries => attention_fuse(g, &ts_proj, &nt_proj, attn),
                    MainModality::Notes => attention_fuse(g, &nt_proj, &ts_proj, attn),
                }
            }
        }
    }

    /// Prediction scores: `[B]` probabilities for binary, `[B, N]` softmax
    /// rows for multi-label.
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &SampleBatch,
        rng: &mut RngStream,
        train: bool,
    ) -> Result<Tensor> {
        let fused = self.fused(g, batch, rng, train)?;
        let fused = g.dropout(&fused, self.config.dropout, rng, train)?;
        match self.config.task {
            TaskKind::ArfBinary => predict_binary(g, &fused, &self.head),
            TaskKind::DiagnosesMultilabel => predict_multilabel(g, &fused, &self.head),
        }
    }

    pub fn loss(&self, g: &mut Graph, scores: &Tensor, labels: &LabelBlock) -> Result<Tensor> {
        match labels {
            LabelBlock::Binary(y) => bce_loss(g, scores, y),
            LabelBlock::Multilabel(y) => bce_loss(g, scores, y),
        }
    }

    /// Parameter names in visiting order.
    pub fn param_names(&mut self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params("model", &mut |name, _| names.push(name));
        names
    }
}

impl VisitParams for Model {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        match &mut self.kind {
            ModelKind::SingleTi { encoder } => encoder.visit_params(&format!("{prefix}.ti"), f),
            ModelKind::SingleTs { encoder } => encoder.visit_params(&format!("{prefix}.ts"), f),
            ModelKind::SingleText { encoder } => encoder.visit_params(&format!("{prefix}.text"), f),
            ModelKind::EarlyFused { encoder } => encoder.visit_params(&format!("{prefix}.ts"), f),
            ModelKind::Gated {
                ti, ts, text, gate, ..
            } => {
                ti.visit_params(&format!("{prefix}.ti"), f);
                ts.visit_params(&format!("{prefix}.ts"), f);
                text.visit_params(&format!("{prefix}.text"), f);
                gate.visit_params(&format!("{prefix}.gate"), f);
            }
            ModelKind::TensorFused { ts, text, proj, .. } => {
                ts.visit_params(&format!("{prefix}.ts"), f);
                text.visit_params(&format!("{prefix}.text"), f);
                proj.visit_params(&format!("{prefix}.proj"), f);
            }
            ModelKind::AttnFused {
                ts,
                text,
                proj_ts,
                proj_text,
                attn,
                ..
            } => {
                // the pooled-output projection is unused by this strategy
                ts.visit_seq_params(&format!("{prefix}.ts"), f);
                text.visit_params(&format!("{prefix}.text"), f);
                proj_ts.visit_params(&format!("{prefix}.proj_ts"), f);
                proj_text.visit_params(&format!("{prefix}.proj_text"), f);
                attn.visit_params(&format!("{prefix}.attn"), f);
            }
        }
        self.head.visit_params(&format!("{prefix}.head"), f);
    }
}
