//! Closed-form bias-parameter accounting for bias-only fine-tuning.
//!
//! Per encoder layer the tuned biases are the four attention biases
//! (`b_q, b_k, b_v, b_o`), the two FFN biases and two layer-norm biases. A
//! decoder layer in an encoder-decoder stack adds cross-attention and a third
//! layer norm. A classifier head is tuned in full.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{is_bias, BiasTarget, Model, ModelConfig, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    EncoderOnly,
    DecoderOnly,
    EncoderDecoder,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::EncoderOnly => "encoder-only",
            Family::DecoderOnly => "decoder-only",
            Family::EncoderDecoder => "encoder-decoder",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder-only" => Ok(Family::EncoderOnly),
            "decoder-only" => Ok(Family::DecoderOnly),
            "encoder-decoder" => Ok(Family::EncoderDecoder),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub family: Family,
    pub d_model: usize,
    /// FFN inner width; its bias contributes `d_ff` entries per layer.
    pub d_ff: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub has_classifier_head: bool,
    pub head_hidden: usize,
    pub n_labels: usize,
    /// Layer norms outside the blocks (embedding LN, or final LN in a
    /// pre-LN stack), each contributing `d_model` bias entries.
    pub model_layer_norms: usize,
    /// Tied LM-head bias entries, reported as an extra and never part of the
    /// savings fraction.
    pub lm_head_bias: usize,
}

impl ArchSpec {
    pub fn new(family: Family, d_model: usize, n_enc_layers: usize, n_dec_layers: usize) -> Self {
        Self {
            family,
            d_model,
            d_ff: 4 * d_model,
            n_enc_layers,
            n_dec_layers,
            has_classifier_head: false,
            head_hidden: d_model,
            n_labels: 0,
            model_layer_norms: 0,
            lm_head_bias: 0,
        }
    }

    pub fn with_classifier_head(mut self, n_labels: usize) -> Self {
        self.has_classifier_head = true;
        self.head_hidden = self.d_model;
        self.n_labels = n_labels;
        self
    }

    pub fn with_model_layer_norms(mut self, n: usize) -> Self {
        self.model_layer_norms = n;
        self
    }

    /// Accounting for a desk-scale [`Model`] config. The LM head bias is an
    /// extra; the classifier pooler and output layer form the head.
    pub fn from_model_config(cfg: &ModelConfig) -> Self {
        let mut a = match cfg.kind {
            ModelKind::EncoderClassifier => {
                ArchSpec::new(Family::EncoderOnly, cfg.d_model, cfg.n_layers, 0).with_classifier_head(cfg.n_classes)
            }
            ModelKind::CausalLm => {
                let mut a = ArchSpec::new(Family::DecoderOnly, cfg.d_model, 0, cfg.n_layers);
                a.lm_head_bias = cfg.vocab_size;
                a
            }
        };
        a.d_ff = cfg.d_ff;
        a.model_layer_norms = 1;
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 {
            return Err(Error::Config("d_model must be positive".into()));
        }
        match self.family {
            Family::EncoderOnly if self.n_dec_layers != 0 => {
                Err(Error::Config("encoder-only architecture cannot have decoder layers".into()))
            }
            Family::DecoderOnly if self.n_enc_layers != 0 => {
                Err(Error::Config("decoder-only architecture cannot have encoder layers".into()))
            }
            _ if self.has_classifier_head && (self.n_labels == 0 || self.head_hidden == 0) => {
                Err(Error::Config("classifier head needs n_labels and head_hidden > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Named architecture presets.
pub const PRESETS: [&str; 3] = ["encdec-large", "enc-base", "enc-large"];

/// `encdec-large`: d=1024, 12+12 layers, per-layer biases only.
/// `enc-base` / `enc-large`: d=768×12 and d=1024×24 encoders with an
/// embedding layer norm and a two-label classifier head.
pub fn preset(name: &str) -> Result<ArchSpec> {
    match name {
        "encdec-large" => Ok(ArchSpec::new(Family::EncoderDecoder, 1024, 12, 12)),
        "enc-base" => Ok(ArchSpec::new(Family::EncoderOnly, 768, 12, 0)
            .with_classifier_head(2)
            .with_model_layer_norms(1)),
        "enc-large" => Ok(ArchSpec::new(Family::EncoderOnly, 1024, 24, 0)
            .with_classifier_head(2)
            .with_model_layer_norms(1)),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BiasGroup {
    pub name: String,
    pub count: usize,
    /// Entries of this group that are key biases.
    pub key_bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BiasInventory {
    pub groups: Vec<BiasGroup>,
    /// Tuned entries excluded from the total.
    pub extras: Vec<BiasGroup>,
    pub total: usize,
    pub key_bias: usize,
}

impl BiasInventory {
    pub fn group(&self, name: &str) -> Option<&BiasGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Per-group counts of the parameters a bias-only fine-tuning run trains.
pub fn bias_inventory(arch: &ArchSpec) -> Result<BiasInventory> {
    arch.validate()?;
    let d = arch.d_model;
    let ffn = arch.d_ff + d;
    let mut groups = Vec::new();
    let mut push = |name: &str, count: usize, key_bias: usize| {
        if count > 0 {
            groups.push(BiasGroup {
                name: name.to_string(),
                count,
                key_bias,
            });
        }
    };
    let (le, ld) = (arch.n_enc_layers, arch.n_dec_layers);
    push("encoder.attention", le * 4 * d, le * d);
    push("encoder.ffn", le * ffn, 0);
    push("encoder.layer_norm", le * 2 * d, 0);
    push("decoder.self_attention", ld * 4 * d, ld * d);
    let decoder_norms = if arch.family == Family::EncoderDecoder {
        push("decoder.cross_attention", ld * 4 * d, ld * d);
        3
    } else {
        2
    };
    push("decoder.ffn", ld * ffn, 0);
    push("decoder.layer_norm", ld * decoder_norms * d, 0);
    push("model.layer_norm", arch.model_layer_norms * d, 0);
    if arch.has_classifier_head {
        let h = arch.head_hidden;
        push("classifier_head", h * d + h + arch.n_labels * h + arch.n_labels, 0);
    }
    let total = groups.iter().map(|g| g.count).sum();
    let key_bias = groups.iter().map(|g| g.key_bias).sum();
    let mut extras = Vec::new();
    if arch.lm_head_bias > 0 {
        extras.push(BiasGroup {
            name: "lm_head.bias".into(),
            count: arch.lm_head_bias,
            key_bias: 0,
        });
    }
    Ok(BiasInventory {
        groups,
        extras,
        total,
        key_bias,
    })
}

/// Fraction of bias-only trainable parameters that are key biases.
pub fn bk_savings(arch: &ArchSpec) -> Result<f64> {
    let inv = bias_inventory(arch)?;
    Ok(if inv.total == 0 {
        0.0
    } else {
        inv.key_bias as f64 / inv.total as f64
    })
}

/// Freeze mask for bias-only fine-tuning: every bias (and the whole
/// classifier head) trains, everything else is frozen. `freeze_bk`
/// additionally freezes the key biases; `tune_biases = false` leaves only the
/// classifier head trainable. The LM head bias is always frozen.
pub fn apply_bitfit_mask(model: &mut Model, freeze_bk: bool, tune_biases: bool) {
    let classifier = model.config.kind == ModelKind::EncoderClassifier;
    model.unfreeze_all();
    model.freeze_where(|name| {
        if name.starts_with("head.") {
            return !classifier;
        }
        !(tune_biases && is_bias(name)) || (freeze_bk && BiasTarget::Key.matches(name))
    });
}
