//! The named-model registry.
//!
//! Names follow the convention that the first component of a fusion pair
//! is the main modality's encoder: `LstmBert` runs attention gating with
//! the time series as the main modality, `BertLstm` with the notes.
//! Suffixes `[TF]` and `[AT]` swap the gating for tensor or cross-attention
//! fusion on any pair; `F-` prefixes are early fusion of the time-invariant
//! and time-series inputs into a single sequence encoder, without text.

use crate::encoders::TsVariant;
use crate::error::{Error, Result};
use crate::fusion::MainModality;

use super::config::FusionKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: &'static str,
    pub fusion: FusionKind,
    pub main: Option<MainModality>,
    pub ts_variant: Option<TsVariant>,
    pub uses_ti: bool,
    pub uses_ts: bool,
    pub uses_text: bool,
}

const TS_NAMES: [(&str, TsVariant); 4] = [
    ("Lstm", TsVariant::Lstm),
    ("Cnn", TsVariant::Cnn),
    ("Star", TsVariant::StarTransformer),
    ("Encoder", TsVariant::TransformerEncoder),
];

fn single_ti() -> ModelSpec {
    ModelSpec {
        name: "Ti",
        fusion: FusionKind::None,
        main: None,
        ts_variant: None,
        uses_ti: true,
        uses_ts: false,
        uses_text: false,
    }
}

fn single_text() -> ModelSpec {
    ModelSpec {
        name: "Bert",
        fusion: FusionKind::None,
        main: None,
        ts_variant: None,
        uses_ti: false,
        uses_ts: false,
        uses_text: true,
    }
}

/// Every registered model, in listing order.
pub fn registry() -> Vec<ModelSpec> {
    let mut out = vec![single_ti()];
    for (name, variant) in TS_NAMES {
        out.push(ModelSpec {
            name,
            fusion: FusionKind::None,
            main: None,
            ts_variant: Some(variant),
            uses_ti: false,
            uses_ts: true,
            uses_text: false,
        });
    }
    out.push(single_text());
    for (name, variant) in TS_NAMES {
        out.push(ModelSpec {
            name: early_name(name),
            fusion: FusionKind::Early,
            main: None,
            ts_variant: Some(variant),
            uses_ti: true,
            uses_ts: true,
            uses_text: false,
        });
    }
    for (ts_name, variant) in TS_NAMES {
        for (fusion, suffix) in [
            (FusionKind::AttentionGate, ""),
            (FusionKind::Tensor, "[TF]"),
            (FusionKind::Attention, "[AT]"),
        ] {
            out.push(ModelSpec {
                name: pair_name(ts_name, true, suffix),
                fusion,
                main: Some(MainModality::TimeSeries),
                ts_variant: Some(variant),
                uses_ti: true,
                uses_ts: true,
                uses_text: true,
            });
            out.push(ModelSpec {
                name: pair_name(ts_name, false, suffix),
                fusion,
                main: Some(MainModality::Notes),
                ts_variant: Some(variant),
                uses_ti: true,
                uses_ts: true,
                uses_text: true,
            });
        }
    }
    out
}

fn early_name(ts: &str) -> &'static str {
    match ts {
        "Lstm" => "F-Lstm",
        "Cnn" => "F-Cnn",
        "Star" => "F-Star",
        "Encoder" => "F-Encoder",
        _ => unreachable!(),
    }
}

fn pair_name(ts: &str, ts_main: bool, suffix: &str) -> &'static str {
    match (ts, ts_main, suffix) {
        ("Lstm", true, "") => "LstmBert",
        ("Lstm", false, "") => "BertLstm",
        ("Cnn", true, "") => "CnnBert",
        ("Cnn", false, "") => "BertCnn",
        ("Star", true, "") => "StarBert",
        ("Star", false, "") => "BertStar",
        ("Encoder", true, "") => "EncoderBert",
        ("Encoder", false, "") => "BertEncoder",
        ("Lstm", true, "[TF]") => "LstmBert[TF]",
        ("Lstm", false, "[TF]") => "BertLstm[TF]",
        ("Cnn", true, "[TF]") => "CnnBert[TF]",
        ("Cnn", false, "[TF]") => "BertCnn[TF]",
        ("Star", true, "[TF]") => "StarBert[TF]",
        ("Star", false, "[TF]") => "BertStar[TF]",
        ("Encoder", true, "[TF]") => "EncoderBert[TF]",
        ("Encoder", false, "[TF]") => "BertEncoder[TF]",
        ("Lstm", true, "[AT]") => "LstmBert[AT]",
        ("Lstm", false, "[AT]") => "BertLstm[AT]",
        ("Cnn", true, "[AT]") => "CnnBert[AT]",
        ("Cnn", false, "[AT]") => "BertCnn[AT]",
        ("Star", true, "[AT]") => "StarBert[AT]",
        ("Star", false, "[AT]") => "BertStar[AT]",
        ("Encoder", true, "[AT]") => "EncoderBert[AT]",
        ("Encoder", false, "[AT]") => "BertEncoder[AT]",
        _ => unreachable!(),
    }
}

/// The eight attention-gating pair models.
pub fn gated_pair_names() -> Vec<&'static str> {
    registry()
        .into_iter()
        .filter(|s| s.fusion == FusionKind::AttentionGate)
        .map(|s| s.name)
        .collect()
}

pub fn resolve(name: &str) -> Result<ModelSpec> {
    registry()
        .into_iter()
        .find(|spec| spec.name == name)
        .ok_or_else(|| Error::UnknownModel {
            name: name.to_string(),
            valid: registry()
                .iter()
                .map(|s| s.name)
                .collect::<Vec<_>>()
                .join(", "),
        })
}

/// Human-readable registry line for `list-models`.
pub fn describe(spec: &ModelSpec) -> String {
    let fusion = match spec.fusion {
        FusionKind::AttentionGate => "attention gating",
        FusionKind::Tensor => "tensor fusion",
        FusionKind::Attention => "cross-attention fusion",
        FusionKind::Early => "early fusion (ti + ts)",
        FusionKind::None => "single modality",
    };
    let main = match spec.main {
        Some(MainModality::Notes) => ", main: notes",
        Some(MainModality::TimeSeries) => ", main: time series",
        None => "",
    };
    let encoder = match spec.ts_variant {
        Some(v) => format!(", ts encoder: {v:?}"),
        None => String::new(),
    };
    let text = if spec.uses_text { ", text encoder" } else { "" };
    format!("{:<18} {fusion}{main}{encoder}{text}", spec.name)
}
