//! Analytic gradients against central finite differences over a small grid
//! of models, plus the key-bias gradient magnitude.

use serde::{Deserialize, Serialize};

use super::mutation::{pretrained_like, PretrainedLike};
use super::report::{fmt_num, Report, Table};
use crate::attention::AttnForm;
use crate::error::{Error, Result};
use crate::grad::{backward_batch, finite_diff_grad_batch, relative_error, Example, Targets};
use crate::linalg::Rng;
use crate::model::{BiasTarget, Model, ModelConfig, ModelKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub d_model: usize,
    pub n_layers: usize,
    /// Kept small: finite differences cost two forward passes per entry.
    pub vocab_size: usize,
    pub heads: Vec<usize>,
    pub kinds: Vec<ModelKind>,
    pub forms: Vec<AttnForm>,
    pub spread: PretrainedLike,
    pub seq_len: usize,
    pub batch_size: usize,
    pub step: f64,
    /// Gradient pairs with both norms below this agree by definition.
    pub abs_floor: f64,
    pub rel_tol: f64,
    pub key_bias_max: f64,
    /// Lower bound on the median query/value bias gradient max-norm.
    pub min_median: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d_model: 16,
            n_layers: 2,
            vocab_size: 32,
            heads: vec![1, 2, 4],
            kinds: vec![ModelKind::CausalLm, ModelKind::EncoderClassifier],
            forms: vec![AttnForm::Full],
            spread: PretrainedLike::default(),
            seq_len: 8,
            batch_size: 2,
            step: 1e-5,
            abs_floor: 1e-9,
            rel_tol: 1e-6,
            key_bias_max: 1e-10,
            min_median: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckCase {
    pub kind: ModelKind,
    pub form: AttnForm,
    pub n_heads: usize,
    pub seed: u64,
    /// Worst norm-wise relative error over all parameters.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub key_bias: f64,
    pub query_bias: f64,
    pub value_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckResult {
    pub cases: Vec<GradcheckCase>,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl GradcheckResult {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_key_bias(&self) -> f64 {
        self.cases.iter().map(|c| c.key_bias).fold(0.0, f64::max)
    }

    pub fn median_query_bias(&self) -> f64 {
        median(&mut self.cases.iter().map(|c| c.query_bias).collect::<Vec<_>>())
    }

    pub fn median_value_bias(&self) -> f64 {
        median(&mut self.cases.iter().map(|c| c.value_bias).collect::<Vec<_>>())
    }

    pub fn passed(&self, cfg: &GradcheckConfig) -> bool {
        !self.cases.is_empty()
            && self.max_rel_error() <= cfg.rel_tol
            && self.max_key_bias() <= cfg.key_bias_max
            && self.median_query_bias() >= cfg.min_median
            && self.median_value_bias() >= cfg.min_median
    }
}

fn batch_for(config: &ModelConfig, cfg: &GradcheckConfig, rng: &mut Rng) -> Vec<Example> {
    (0..cfg.batch_size)
        .map(|_| {
            let tokens: Vec<usize> = (0..cfg.seq_len).map(|_| rng.below(config.vocab_size)).collect();
            let targets = match config.kind {
                ModelKind::CausalLm => Targets::Tokens((0..cfg.seq_len).map(|_| rng.below(config.vocab_size)).collect()),
                ModelKind::EncoderClassifier => Targets::Class(rng.below(config.n_classes)),
            };
            Example::new(tokens, targets)
        })
        .collect()
}

pub fn check_model(model: &Model, batch: &[Example], cfg: &GradcheckConfig) -> Result<(f64, String)> {
    let (_, grads) = backward_batch(model, batch)?;
    let mut worst = (0.0, String::new());
    for name in model.names() {
        let Some(g) = grads.get(name) else { continue };
        let fd = finite_diff_grad_batch(model, batch, name, cfg.step)?;
        let err = relative_error(g, &fd, cfg.abs_floor)?;
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, name.to_string());
        }
    }
    Ok(worst)
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckResult> {
    if cfg.seq_len == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("seq_len and batch_size must be positive".into()));
    }
    let mut cases = Vec::new();
    let mut index = 0u64;
    for &kind in &cfg.kinds {
        for &form in &cfg.forms {
            for &n_heads in &cfg.heads {
                let mut config = match kind {
                    ModelKind::CausalLm => ModelConfig::causal_lm(cfg.d_model, n_heads, cfg.n_layers, cfg.seq_len),
                    ModelKind::EncoderClassifier => ModelConfig::classifier(cfg.d_model, n_heads, cfg.n_layers, cfg.seq_len, 2),
                }
                .with_form(form);
                config.vocab_size = cfg.vocab_size;
                let seed = cfg.seed.wrapping_add(index);
                index += 1;
                let model = pretrained_like(&config, seed, cfg.spread)?;
                let batch = batch_for(&config, cfg, &mut Rng::new(seed ^ 0xba7c));
                let (max_rel_error, worst_param) = check_model(&model, &batch, cfg)?;
                let (_, grads) = backward_batch(&model, &batch)?;
                cases.push(GradcheckCase {
                    kind,
                    form,
                    n_heads,
                    seed,
                    max_rel_error,
                    worst_param,
                    key_bias: grads.max_norm_where(|n| BiasTarget::Key.matches(n)),
                    query_bias: grads.max_norm_where(|n| BiasTarget::Query.matches(n)),
                    value_bias: grads.max_norm_where(|n| BiasTarget::Value.matches(n)),
                });
            }
        }
    }
    Ok(GradcheckResult { cases })
}

fn kind_label(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::CausalLm => "causal-lm",
        ModelKind::EncoderClassifier => "encoder-classifier",
    }
}

pub fn gradcheck_report(cfg: &GradcheckConfig) -> Result<Report> {
    let r = run_gradcheck(cfg)?;
    let mut t = Table::new([
        "model",
        "attn_form",
        "heads",
        "seed",
        "max_rel_error",
        "worst_param",
        "max_abs_grad_b_k",
        "max_abs_grad_b_q",
        "max_abs_grad_b_v",
    ]);
    for c in &r.cases {
        t.push([
            kind_label(c.kind).to_string(),
            format!("{:?}", c.form).to_lowercase(),
            c.n_heads.to_string(),
            c.seed.to_string(),
            fmt_num(c.max_rel_error),
            c.worst_param.clone(),
            fmt_num(c.key_bias),
            fmt_num(c.query_bias),
            fmt_num(c.value_bias),
        ]);
    }
    let seeds = r.cases.iter().map(|c| c.seed).collect();
    let mut rep = Report::new(
        "gradcheck",
        "Analytic gradients against finite differences",
        "key-bias gradient check (no published table)",
        cfg,
        seeds,
        t,
    )?;
    rep.summarize("worst relative error", fmt_num(r.max_rel_error()));
    rep.summarize("max |dL/db_k|", fmt_num(r.max_key_bias()));
    rep.summarize("median max |dL/db_q|", fmt_num(r.median_query_bias()));
    rep.summarize("median max |dL/db_v|", fmt_num(r.median_value_bias()));
    rep.passed = r.passed(cfg);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grid_passes() {
        let cfg = GradcheckConfig {
            heads: vec![2],
            seq_len: 4,
            ..Default::default()
        };
        let r = run_gradcheck(&cfg).unwrap();
        assert_eq!(r.cases.len(), 2);
        assert!(r.passed(&cfg), "{r:?}");
    }

    #[test]
    fn reduced_form_has_exactly_zero_key_gradient() {
        let cfg = GradcheckConfig {
            heads: vec![4],
            kinds: vec![ModelKind::CausalLm],
            forms: vec![AttnForm::Reduced],
            seq_len: 4,
            ..Default::default()
        };
        let r = run_gradcheck(&cfg).unwrap();
        assert_eq!(r.max_key_bias(), 0.0);
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
