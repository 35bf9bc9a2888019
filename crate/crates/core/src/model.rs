//! A small pre-LN transformer (encoder classifier or causal byte LM) whose
//! parameters live in a name-keyed registry, so biases can be frozen,
//! mutated, counted and serialized by name.
//!
//! Parameter names:
//!
//! ```text
//! embed.tok                 d × vocab   (column per token)
//! embed.pos                 d × max_seq
//! layer{i}.ln1.{gain,bias}  d × 1
//! layer{i}.self_attn.{w_q,w_k,w_v,w_o}  d × d
//! layer{i}.self_attn.{b_q,b_k,b_v,b_o}  d × 1
//! layer{i}.ln2.{gain,bias}  d × 1
//! layer{i}.ffn.{w1,b1,w2,b2}
//! final_ln.{gain,bias}      d × 1
//! head.dense.{w,b}          d × d, d × 1   (classifier pooler only)
//! head.{w,b}                out × d, out × 1
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{self, AttentionInput, AttentionParams, AttnForm, MultiHeadCache};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng, Scalar};

pub mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint};

/// Tanh-approximation GELU constants.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
pub const GELU_CUBIC: f64 = 0.044715;

/// Standard deviation of the normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    EncoderClassifier,
    CausalLm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq: usize,
    /// Output classes; ignored for the language model.
    pub n_classes: usize,
    pub attn_form: AttnForm,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Byte-level causal LM with `d_ff = 4·d_model`.
    pub fn causal_lm(d_model: usize, n_heads: usize, n_layers: usize, max_seq: usize) -> Self {
        Self {
            kind: ModelKind::CausalLm,
            d_model,
            n_heads,
            n_layers,
            d_ff: 4 * d_model,
            vocab_size: 256,
            max_seq,
            n_classes: 0,
            attn_form: AttnForm::Full,
            ln_eps: 1e-5,
        }
    }

    /// Byte-level encoder classifier with `d_ff = 4·d_model`.
    pub fn classifier(d_model: usize, n_heads: usize, n_layers: usize, max_seq: usize, n_classes: usize) -> Self {
        Self {
            kind: ModelKind::EncoderClassifier,
            n_classes,
            ..Self::causal_lm(d_model, n_heads, n_layers, max_seq)
        }
    }

    pub fn with_form(mut self, form: AttnForm) -> Self {
        self.attn_form = form;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq", self.max_seq),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.kind == ModelKind::EncoderClassifier && self.n_classes < 2 {
            return Err(Error::Config("a classifier needs at least 2 classes".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    /// Rows of the output head.
    pub fn n_outputs(&self) -> usize {
        match self.kind {
            ModelKind::CausalLm => self.vocab_size,
            ModelKind::EncoderClassifier => self.n_classes,
        }
    }

    /// Canonical parameter names and shapes in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let d = self.d_model;
        let mut out = vec![
            ("embed.tok".to_string(), (d, self.vocab_size)),
            ("embed.pos".to_string(), (d, self.max_seq)),
        ];
        for i in 0..self.n_layers {
            let mut push = |suffix: &str, shape| out.push((format!("layer{i}.{suffix}"), shape));
            push("ln1.gain", (d, 1));
            push("ln1.bias", (d, 1));
            for w in ["w_q", "w_k", "w_v", "w_o"] {
                push(&format!("self_attn.{w}"), (d, d));
            }
            for b in ["b_q", "b_k", "b_v", "b_o"] {
                push(&format!("self_attn.{b}"), (d, 1));
            }
            push("ln2.gain", (d, 1));
            push("ln2.bias", (d, 1));
            push("ffn.w1", (self.d_ff, d));
            push("ffn.b1", (self.d_ff, 1));
            push("ffn.w2", (d, self.d_ff));
            push("ffn.b2", (d, 1));
        }
        out.push(("final_ln.gain".into(), (d, 1)));
        out.push(("final_ln.bias".into(), (d, 1)));
        if self.kind == ModelKind::EncoderClassifier {
            out.push(("head.dense.w".into(), (d, d)));
            out.push(("head.dense.b".into(), (d, 1)));
        }
        out.push(("head.w".into(), (self.n_outputs(), d)));
        out.push(("head.b".into(), (self.n_outputs(), 1)));
        out
    }
}

/// Whether a parameter name denotes a bias vector (attention, FFN, layer
/// norm or head bias).
pub fn is_bias(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    last.starts_with("b_") || last == "b1" || last == "b2" || last == "b" || last == "bias"
}

/// Layer-free group of a name: `layer3.self_attn.b_k` → `self_attn.b_k`.
pub fn param_group(name: &str) -> &str {
    match name.strip_prefix("layer") {
        Some(rest) => rest.split_once('.').map(|(_, g)| g).unwrap_or(name),
        None => name,
    }
}

pub type ParamMap<T = f64> = BTreeMap<String, Matrix<T>>;

/// Transformer with named parameters and a freeze mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    params: ParamMap,
    frozen: BTreeSet<String>,
}

impl Model {
    /// Assembles a model from an explicit parameter map, checking that the
    /// names and shapes match `config` exactly.
    pub fn from_params(config: ModelConfig, params: ParamMap) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for config, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let m = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if m.shape() != *shape {
                return Err(Error::shape("parameter shape", *shape, m.shape()));
            }
        }
        Ok(Self {
            config,
            params,
            frozen: BTreeSet::new(),
        })
    }

    pub fn params(&self) -> &ParamMap {
        &self.params
    }

    pub fn param(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Replaces one parameter; the shape must not change.
    pub fn set_param(&mut self, name: &str, value: Matrix) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape("set_param", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn freeze(&mut self, name: &str) -> Result<()> {
        if !self.params.contains_key(name) {
            return Err(Error::UnknownParameter(name.to_string()));
        }
        self.frozen.insert(name.to_string());
        Ok(())
    }

    /// Freezes every parameter whose name satisfies `pred`.
    pub fn freeze_where(&mut self, pred: impl Fn(&str) -> bool) {
        let names: Vec<String> = self.params.keys().filter(|n| pred(n)).cloned().collect();
        self.frozen.extend(names);
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn total_params(&self) -> usize {
        self.params.values().map(Matrix::len).sum()
    }

    /// Parameter map converted to another precision.
    pub fn params_as<T: Scalar>(&self) -> ParamMap<T> {
        self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }
}

/// Fresh model: weights `N(0, 0.02²)`, biases zero, layer-norm gains one.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let mut params = ParamMap::new();
    for (name, (r, c)) in config.param_shapes() {
        let m = if name.ends_with(".gain") {
            Matrix::filled(r, c, 1.0)
        } else if is_bias(&name) {
            Matrix::zeros(r, c)
        } else {
            crate::linalg::sample_normal(&mut rng, INIT_STD, r, c)
        };
        params.insert(name, m);
    }
    Model::from_params(config.clone(), params)
}

/// Precision used for a forward evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F64,
    F32Forward,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32-forward" | "f32" => Ok(Precision::F32Forward),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F64 => "f64",
            Precision::F32Forward => "f32-forward",
        })
    }
}

/// Saved statistics of one layer norm (per column).
#[derive(Debug, Clone)]
pub struct LnCache<T = f64> {
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
}

/// Intermediates of one transformer block.
#[derive(Debug, Clone)]
pub struct LayerTrace<T = f64> {
    pub ln1: LnCache<T>,
    pub attn_input: AttentionInput<T>,
    pub heads: Vec<AttentionParams<T>>,
    pub attn: MultiHeadCache<T>,
    pub ln2: LnCache<T>,
    /// Second layer-norm output fed to the FFN.
    pub ffn_in: Matrix<T>,
    pub ffn_pre: Matrix<T>,
    pub ffn_act: Matrix<T>,
}

/// Every intermediate of a forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T = f64> {
    pub tokens: Vec<usize>,
    pub layers: Vec<LayerTrace<T>>,
    pub final_ln: LnCache<T>,
    /// Final layer-norm output, `d_model × seq`.
    pub hidden: Matrix<T>,
    /// Classifier pooler activation `tanh(W h₀ + b)`.
    pub pooled: Option<Matrix<T>>,
    /// `vocab × seq` for the LM, `n_classes × 1` for the classifier.
    pub logits: Matrix<T>,
}

fn get<'a, T>(params: &'a ParamMap<T>, name: &str) -> Result<&'a Matrix<T>> {
    params
        .get(name)
        .ok_or_else(|| Error::UnknownParameter(name.to_string()))
}

fn layer_norm<T: Scalar>(x: &Matrix<T>, gain: &Matrix<T>, bias: &Matrix<T>, eps: f64) -> (Matrix<T>, LnCache<T>) {
    let (d, n) = x.shape();
    let dt = T::from_f64(d as f64);
    let eps = T::from_f64(eps);
    let mut xhat = Matrix::zeros(d, n);
    let mut inv_std = Vec::with_capacity(n);
    for j in 0..n {
        let mut mean = T::ZERO;
        for i in 0..d {
            mean += x.get(i, j);
        }
        mean = mean / dt;
        let mut var = T::ZERO;
        for i in 0..d {
            let c = x.get(i, j) - mean;
            var += c * c;
        }
        var = var / dt;
        let r = T::ONE / (var + eps).sqrt();
        for i in 0..d {
            xhat.set(i, j, (x.get(i, j) - mean) * r);
        }
        inv_std.push(r);
    }
    let mut y = Matrix::zeros(d, n);
    for i in 0..d {
        let (g, b) = (gain.get(i, 0), bias.get(i, 0));
        for j in 0..n {
            y.set(i, j, g * xhat.get(i, j) + b);
        }
    }
    (y, LnCache { xhat, inv_std })
}

/// Tanh-approximation GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_SQRT_2_OVER_PI);
    let a = T::from_f64(GELU_CUBIC);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + a * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub(crate) fn check_tokens(config: &ModelConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    if tokens.len() > config.max_seq {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max_seq: config.max_seq,
        });
    }
    if let Some((position, &token)) = tokens.iter().enumerate().find(|(_, &t)| t >= config.vocab_size) {
        return Err(Error::TokenOutOfRange {
            token,
            position,
            vocab: config.vocab_size,
        });
    }
    Ok(())
}

/// Layer-`i` attention heads sliced out of the full-width projections.
pub(crate) fn layer_heads<T: Scalar>(params: &ParamMap<T>, config: &ModelConfig, i: usize) -> Result<Vec<AttentionParams<T>>> {
    let p = |s: &str| get(params, &format!("layer{i}.self_attn.{s}"));
    attention::split_heads(
        p("w_q")?,
        p("b_q")?,
        p("w_k")?,
        p("b_k")?,
        p("w_v")?,
        p("b_v")?,
        config.n_heads,
        true,
    )
}

/// Runs the network on one sequence and records every intermediate.
pub fn trace_with<T: Scalar>(config: &ModelConfig, params: &ParamMap<T>, tokens: &[usize]) -> Result<Trace<T>> {
    check_tokens(config, tokens)?;
    let d = config.d_model;
    let seq = tokens.len();
    let tok = get(params, "embed.tok")?;
    let pos = get(params, "embed.pos")?;
    let mut x = Matrix::zeros(d, seq);
    for (t, &id) in tokens.iter().enumerate() {
        for i in 0..d {
            x.set(i, t, tok.get(i, id) + pos.get(i, t));
        }
    }

    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let p = |s: &str| get(params, &format!("layer{i}.{s}"));
        let (a, ln1) = layer_norm(&x, p("ln1.gain")?, p("ln1.bias")?, config.ln_eps);
        let attn_input = match config.kind {
            ModelKind::CausalLm => AttentionInput::causal_self(a),
            ModelKind::EncoderClassifier => AttentionInput::self_attention(a),
        };
        let heads = layer_heads(params, config, i)?;
        let (attn_out, attn) = attention::multi_head_forward(
            &heads,
            p("self_attn.w_o")?,
            p("self_attn.b_o")?,
            &attn_input,
            config.attn_form,
        )?;
        x.add_assign(&attn_out)?;

        let (ffn_in, ln2) = layer_norm(&x, p("ln2.gain")?, p("ln2.bias")?, config.ln_eps);
        let ffn_pre = p("ffn.w1")?.matmul(&ffn_in)?.add_outer_bias(p("ffn.b1")?)?;
        let ffn_act = ffn_pre.map(gelu);
        let ffn_out = p("ffn.w2")?.matmul(&ffn_act)?.add_outer_bias(p("ffn.b2")?)?;
        x.add_assign(&ffn_out)?;

        layers.push(LayerTrace {
            ln1,
            attn_input,
            heads,
            attn,
            ln2,
            ffn_in,
            ffn_pre,
            ffn_act,
        });
    }

    let (hidden, final_ln) = layer_norm(&x, get(params, "final_ln.gain")?, get(params, "final_ln.bias")?, config.ln_eps);
    let (pooled, logits) = match config.kind {
        ModelKind::CausalLm => (
            None,
            get(params, "head.w")?.matmul(&hidden)?.add_outer_bias(get(params, "head.b")?)?,
        ),
        ModelKind::EncoderClassifier => {
            let first = hidden.col(0);
            let pooled = get(params, "head.dense.w")?
                .matmul(&first)?
                .add_outer_bias(get(params, "head.dense.b")?)?
                .map(|v| v.tanh());
            let logits = get(params, "head.w")?.matmul(&pooled)?.add_outer_bias(get(params, "head.b")?)?;
            (Some(pooled), logits)
        }
    };
    Ok(Trace {
        tokens: tokens.to_vec(),
        layers,
        final_ln,
        hidden,
        pooled,
        logits,
    })
}

/// Double-precision trace of `model` on `tokens`.
pub fn trace(model: &Model, tokens: &[usize]) -> Result<Trace> {
    trace_with(&model.config, &model.params, tokens)
}

/// Logits: `vocab × seq` for the LM, `n_classes × 1` for the classifier.
pub fn forward(model: &Model, tokens: &[usize]) -> Result<Matrix> {
    Ok(trace(model, tokens)?.logits)
}

/// Final hidden states (`d_model × seq`) evaluated at `precision`, returned in
/// double precision.
pub fn hidden_states(model: &Model, tokens: &[usize], precision: Precision) -> Result<Matrix> {
    match precision {
        Precision::F64 => Ok(trace(model, tokens)?.hidden),
        Precision::F32Forward => {
            let params = model.params_as::<f32>();
            Ok(trace_with(&model.config, &params, tokens)?.hidden.cast())
        }
    }
}

/// Evaluator that caches a down-cast copy of the parameters, for repeated
/// single-precision evaluation.
pub struct HiddenStateEvaluator<'a> {
    model: &'a Model,
    f32_params: Option<ParamMap<f32>>,
}

impl<'a> HiddenStateEvaluator<'a> {
    pub fn new(model: &'a Model, precision: Precision) -> Self {
        let f32_params = (precision == Precision::F32Forward).then(|| model.params_as::<f32>());
        Self { model, f32_params }
    }

    pub fn hidden(&self, tokens: &[usize]) -> Result<Matrix> {
        match &self.f32_params {
            None => Ok(trace(self.model, tokens)?.hidden),
            Some(p) => Ok(trace_with(&self.model.config, p, tokens)?.hidden.cast()),
        }
    }
}

/// Which attention bias a mutation overwrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BiasTarget {
    #[serde(rename = "b_k")]
    Key,
    #[serde(rename = "b_q")]
    Query,
    #[serde(rename = "b_v")]
    Value,
}

impl BiasTarget {
    pub const ALL: [BiasTarget; 3] = [BiasTarget::Key, BiasTarget::Query, BiasTarget::Value];

    pub fn suffix(self) -> &'static str {
        match self {
            BiasTarget::Key => "b_k",
            BiasTarget::Query => "b_q",
            BiasTarget::Value => "b_v",
        }
    }

    /// Does `name` denote this bias in a self- or cross-attention block?
    pub fn matches(self, name: &str) -> bool {
        name.strip_suffix(self.suffix())
            .map(|rest| rest.ends_with("self_attn.") || rest.ends_with("cross_attn."))
            .unwrap_or(false)
    }
}

impl FromStr for BiasTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "b_k" => Ok(BiasTarget::Key),
            "b_q" => Ok(BiasTarget::Query),
            "b_v" => Ok(BiasTarget::Value),
            other => Err(Error::UnknownTarget(other.to_string())),
        }
    }
}

impl fmt::Display for BiasTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

/// Replacement values written into the targeted bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasFill {
    Zeros,
    Ones,
    Tens,
    /// i.i.d. `U[-5, 5)`.
    Uniform,
}

impl BiasFill {
    pub const ALL: [BiasFill; 4] = [BiasFill::Zeros, BiasFill::Ones, BiasFill::Tens, BiasFill::Uniform];

    pub fn label(self) -> &'static str {
        match self {
            BiasFill::Zeros => "0",
            BiasFill::Ones => "1",
            BiasFill::Tens => "10",
            BiasFill::Uniform => "[-5,5]",
        }
    }
}

impl FromStr for BiasFill {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" | "0" => Ok(BiasFill::Zeros),
            "ones" | "1" => Ok(BiasFill::Ones),
            "tens" | "10" => Ok(BiasFill::Tens),
            "uniform" | "[-5,5]" => Ok(BiasFill::Uniform),
            other => Err(Error::Config(format!("unknown fill `{other}`"))),
        }
    }
}

/// One bias overwrite: which bias, what values, and the seed for random fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSpec {
    pub target: BiasTarget,
    pub fill: BiasFill,
    #[serde(default)]
    pub seed: u64,
}

impl MutationSpec {
    pub fn new(target: BiasTarget, fill: BiasFill, seed: u64) -> Self {
        Self { target, fill, seed }
    }
}

/// Copy of `model` with the targeted bias overwritten in every attention
/// block of every layer.
pub fn apply_mutation(model: &Model, spec: &MutationSpec) -> Result<Model> {
    let mut out = model.clone();
    let mut rng = Rng::new(spec.seed);
    let names: Vec<String> = out.names().filter(|n| spec.target.matches(n)).map(String::from).collect();
    for name in names {
        let m = out.param_mut(&name).expect("name taken from the model");
        for v in m.data_mut() {
            *v = match spec.fill {
                BiasFill::Zeros => 0.0,
                BiasFill::Ones => 1.0,
                BiasFill::Tens => 10.0,
                BiasFill::Uniform => rng.uniform(-5.0, 5.0),
            };
        }
    }
    Ok(out)
}

/// Parameter counts, overall and per layer-free name group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub groups: BTreeMap<String, usize>,
}

impl ParamCount {
    pub fn group(&self, name: &str) -> usize {
        self.groups.get(name).copied().unwrap_or(0)
    }
}

/// Exact parameter counts; `trainable_only` skips frozen names.
pub fn count_params(model: &Model, trainable_only: bool) -> ParamCount {
    let mut groups = BTreeMap::new();
    let mut total = 0;
    for (name, m) in model.params() {
        if trainable_only && model.is_frozen(name) {
            continue;
        }
        total += m.len();
        *groups.entry(param_group(name).to_string()).or_insert(0) += m.len();
    }
    ParamCount { total, groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_uniform;

    fn small_lm() -> ModelConfig {
        ModelConfig::causal_lm(16, 4, 2, 12)
    }

    /// Parameter count from the architecture alone.
    fn closed_form_count(c: &ModelConfig) -> usize {
        let d = c.d_model;
        let per_layer = 4 * d * d + 4 * d + 2 * d * c.d_ff + c.d_ff + d + 4 * d;
        let head = match c.kind {
            ModelKind::CausalLm => c.vocab_size * d + c.vocab_size,
            ModelKind::EncoderClassifier => d * d + d + c.n_classes * d + c.n_classes,
        };
        d * c.vocab_size + d * c.max_seq + c.n_layers * per_layer + 2 * d + head
    }

    #[test]
    fn init_is_deterministic_and_counts_match() {
        let cfg = ModelConfig::causal_lm(32, 4, 2, 16);
        let a = init_model(&cfg, 3).unwrap();
        let b = init_model(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_model(&cfg, 4).unwrap());
        assert_eq!(count_params(&a, false).total, closed_form_count(&cfg));
        let cls = ModelConfig::classifier(32, 4, 2, 16, 3);
        assert_eq!(count_params(&init_model(&cls, 1).unwrap(), false).total, closed_form_count(&cls));
    }

    #[test]
    fn init_biases_zero_and_gains_one() {
        let m = init_model(&small_lm(), 9).unwrap();
        for (name, p) in m.params() {
            if is_bias(name) {
                assert!(p.data().iter().all(|&v| v == 0.0), "{name}");
            }
            if name.ends_with(".gain") {
                assert!(p.data().iter().all(|&v| v == 1.0), "{name}");
            }
        }
        let w = m.param("layer0.self_attn.w_q").unwrap();
        let std = (w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - INIT_STD).abs() < 0.005, "{std}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small_lm();
        c.n_heads = 3;
        assert!(init_model(&c, 0).is_err());
        let mut c = small_lm();
        c.d_model = 0;
        assert!(c.validate().is_err());
        assert!(ModelConfig::classifier(8, 2, 1, 4, 1).validate().is_err());
    }

    #[test]
    fn bias_name_classification() {
        for n in ["layer0.self_attn.b_k", "layer1.ffn.b1", "layer0.ln1.bias", "head.b", "head.dense.b", "final_ln.bias"] {
            assert!(is_bias(n), "{n}");
        }
        for n in ["layer0.self_attn.w_k", "embed.tok", "head.w", "layer0.ln1.gain", "layer0.ffn.w2"] {
            assert!(!is_bias(n), "{n}");
        }
        assert_eq!(param_group("layer11.self_attn.b_k"), "self_attn.b_k");
        assert_eq!(param_group("head.w"), "head.w");
    }

    #[test]
    fn lm_shapes_and_token_validation() {
        let m = init_model(&small_lm(), 1).unwrap();
        assert_eq!(forward(&m, &[65]).unwrap().shape(), (256, 1));
        assert_eq!(forward(&m, &[1, 2, 3]).unwrap().shape(), (256, 3));
        assert!(matches!(forward(&m, &[256]), Err(Error::TokenOutOfRange { .. })));
        assert!(matches!(forward(&m, &[0; 13]), Err(Error::SequenceTooLong { .. })));
        assert!(matches!(forward(&m, &[]), Err(Error::EmptySequence)));
        let t = trace(&m, &[1, 2, 3, 4]).unwrap();
        assert_eq!(t.hidden.shape(), (16, 4));
        for l in &t.layers {
            assert_eq!(l.ffn_in.shape(), (16, 4));
        }
    }

    #[test]
    fn classifier_output_shape() {
        let m = init_model(&ModelConfig::classifier(16, 2, 1, 8, 3), 1).unwrap();
        assert_eq!(forward(&m, &[0, 65, 66]).unwrap().shape(), (3, 1));
    }

    #[test]
    fn causal_mask_hides_future_tokens() {
        let mut m = init_model(&small_lm(), 2).unwrap();
        let w = sample_uniform(&mut Rng::new(5), -0.5, 0.5, 16, 16).unwrap();
        m.set_param("layer0.self_attn.w_q", w).unwrap();
        let a = forward(&m, &[10, 20, 30, 40, 50]).unwrap();
        let b = forward(&m, &[10, 20, 30, 99, 7]).unwrap();
        for t in 0..3 {
            assert_eq!(a.col(t), b.col(t));
        }
        assert_ne!(a.col(3), b.col(3));
    }

    fn randomized(cfg: &ModelConfig, seed: u64) -> Model {
        let mut m = init_model(cfg, seed).unwrap();
        let mut rng = Rng::new(seed ^ 0xABCD);
        let names: Vec<String> = m.names().map(String::from).collect();
        for n in names {
            let (r, c) = m.param(&n).unwrap().shape();
            let scale = if is_bias(&n) { 0.5 } else { 0.2 };
            let v = m.param(&n).unwrap().add(&sample_uniform(&mut rng, -scale, scale, r, c).unwrap()).unwrap();
            m.set_param(&n, v).unwrap();
        }
        m
    }

    #[test]
    fn deep_stack_forms_agree() {
        let cfg = ModelConfig::causal_lm(64, 4, 12, 32);
        let full = randomized(&cfg, 21);
        let mut reduced = full.clone();
        reduced.config.attn_form = AttnForm::Reduced;
        let tokens: Vec<usize> = (0..32).map(|i| (i * 37 + 5) % 256).collect();
        let a = forward(&full, &tokens).unwrap();
        let b = forward(&reduced, &tokens).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-8);
    }

    #[test]
    fn reduced_forward_ignores_key_bias_bitwise() {
        let cfg = small_lm().with_form(AttnForm::Reduced);
        let m = randomized(&cfg, 4);
        let mutated = apply_mutation(&m, &MutationSpec::new(BiasTarget::Key, BiasFill::Uniform, 8)).unwrap();
        let tokens = [3, 1, 4, 1, 5, 9, 2, 6];
        let a = forward(&m, &tokens).unwrap();
        let b = forward(&mutated, &tokens).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mutation_fills() {
        let m = randomized(&small_lm(), 6);
        let z = apply_mutation(&m, &MutationSpec::new(BiasTarget::Key, BiasFill::Zeros, 0)).unwrap();
        for (n, p) in z.params() {
            if BiasTarget::Key.matches(n) {
                assert!(p.data().iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(p, m.param(n).unwrap(), "{n} must be untouched");
            }
        }
        let t = apply_mutation(&m, &MutationSpec::new(BiasTarget::Value, BiasFill::Tens, 0)).unwrap();
        assert!(t.param("layer1.self_attn.b_v").unwrap().data().iter().all(|&v| v == 10.0));
        let spec = MutationSpec::new(BiasTarget::Query, BiasFill::Uniform, 17);
        let u1 = apply_mutation(&m, &spec).unwrap();
        let u2 = apply_mutation(&m, &spec).unwrap();
        assert_eq!(u1, u2);
        let q = u1.param("layer0.self_attn.b_q").unwrap();
        assert!(q.data().iter().all(|v| (-5.0..5.0).contains(v)));
        // Original untouched.
        assert_eq!(m, randomized(&small_lm(), 6));
        assert!(matches!("b_o".parse::<BiasTarget>(), Err(Error::UnknownTarget(_))));
        assert!(BiasTarget::Key.matches("layer0.cross_attn.b_k"));
        assert!(!BiasTarget::Key.matches("layer0.ffn.b_k"));
    }

    #[test]
    fn key_bias_mutation_barely_moves_output_but_value_bias_does() {
        let cfg = ModelConfig::causal_lm(32, 4, 3, 16);
        let m = randomized(&cfg, 8);
        let tokens = [72, 101, 108, 108, 111, 32, 119];
        let base = forward(&m, &tokens).unwrap();
        for fill in BiasFill::ALL {
            let k = apply_mutation(&m, &MutationSpec::new(BiasTarget::Key, fill, 1)).unwrap();
            assert!(forward(&k, &tokens).unwrap().max_abs_diff(&base).unwrap() <= 1e-8);
        }
        let fresh = init_model(&cfg, 8).unwrap();
        let fresh_base = forward(&fresh, &tokens).unwrap();
        let v = apply_mutation(&fresh, &MutationSpec::new(BiasTarget::Value, BiasFill::Tens, 1)).unwrap();
        assert!(forward(&v, &tokens).unwrap().max_abs_diff(&fresh_base).unwrap() >= 0.1);
    }

    #[test]
    fn counts_with_freezing() {
        let cfg = ModelConfig::classifier(16, 2, 3, 8, 2);
        let mut m = init_model(&cfg, 0).unwrap();
        let total_bias: usize = m.params().iter().filter(|(n, _)| n.contains(".b")).map(|(_, p)| p.len()).sum();
        m.freeze_where(|n| !n.contains(".b"));
        assert_eq!(count_params(&m, true).total, total_bias);
        let before = count_params(&m, true).total;
        m.freeze_where(|n| BiasTarget::Key.matches(n));
        assert_eq!(before - count_params(&m, true).total, cfg.n_layers * cfg.d_model);
        assert_eq!(count_params(&m, true).group("self_attn.b_k"), 0);
        assert_eq!(count_params(&m, false).group("self_attn.b_k"), 3 * 16);
        assert!(m.freeze("nope").is_err());

        let zero = ModelConfig::causal_lm(8, 2, 0, 4);
        let z = init_model(&zero, 0).unwrap();
        assert_eq!(count_params(&z, false).total, 8 * 256 + 8 * 4 + 2 * 8 + 256 * 8 + 256);
    }

    #[test]
    fn f32_forward_stays_close() {
        let m = randomized(&small_lm(), 12);
        let tokens = [9, 8, 7, 6, 5];
        let a = hidden_states(&m, &tokens, Precision::F64).unwrap();
        let b = hidden_states(&m, &tokens, Precision::F32Forward).unwrap();
        let diff = a.max_abs_diff(&b).unwrap();
        assert!(diff > 0.0 && diff < 1e-4, "{diff}");
        let eval = HiddenStateEvaluator::new(&m, Precision::F32Forward);
        assert_eq!(eval.hidden(&tokens).unwrap(), b);
    }
}
