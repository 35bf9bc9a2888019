//! Hand-written reverse-mode gradients for [`Model`], a central-difference
//! oracle, and Adam with freeze-mask support.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::attention::{self, AttentionInput};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{self, gelu_grad, LnCache, Model, ModelKind, Trace};

/// Training target(s) of one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Targets {
    /// One target token per position (language modelling).
    Tokens(Vec<usize>),
    /// One label for the whole sequence (classification).
    Class(usize),
}

impl Targets {
    fn count(&self) -> usize {
        match self {
            Targets::Tokens(t) => t.len(),
            Targets::Class(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub targets: Targets,
}

impl Example {
    pub fn new(tokens: Vec<usize>, targets: Targets) -> Self {
        Self { tokens, targets }
    }
}

/// Gradient of the loss with respect to each named parameter. Frozen
/// parameters are absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap(BTreeMap<String, Matrix>);

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Matrix) {
        self.0.insert(name.into(), g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `‖g‖₂` over every entry of every parameter.
    pub fn global_norm(&self) -> f64 {
        self.0
            .values()
            .map(|m| m.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.0.values_mut() {
            for v in m.data_mut() {
                *v *= s;
            }
        }
    }

    fn accumulate(&mut self, other: GradientMap) -> Result<()> {
        for (k, v) in other.0 {
            match self.0.get_mut(&k) {
                Some(acc) => acc.add_assign(&v)?,
                None => {
                    self.0.insert(k, v);
                }
            }
        }
        Ok(())
    }

    /// Largest `max_norm` among parameters whose name satisfies `pred`.
    pub fn max_norm_where(&self, pred: impl Fn(&str) -> bool) -> f64 {
        self.0
            .iter()
            .filter(|(k, _)| pred(k))
            .map(|(_, m)| m.max_norm())
            .fold(0.0, f64::max)
    }
}

/// Rescales `grads` so the global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut GradientMap, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

fn check_targets(model: &Model, ex: &Example) -> Result<()> {
    match &ex.targets {
        Targets::Tokens(t) => {
            if model.config.kind != ModelKind::CausalLm {
                return Err(Error::Config("token targets need a causal LM".into()));
            }
            if t.len() != ex.tokens.len() {
                return Err(Error::shape("targets", (ex.tokens.len(), 1), (t.len(), 1)));
            }
            if let Some(&bad) = t.iter().find(|&&v| v >= model.config.vocab_size) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    n_classes: model.config.vocab_size,
                });
            }
        }
        Targets::Class(c) => {
            if model.config.kind != ModelKind::EncoderClassifier {
                return Err(Error::Config("class targets need a classifier".into()));
            }
            if *c >= model.config.n_classes {
                return Err(Error::LabelOutOfRange {
                    label: *c,
                    n_classes: model.config.n_classes,
                });
            }
        }
    }
    Ok(())
}

/// Summed cross-entropy of logit columns against target rows, and
/// `softmax − onehot` as the logit gradient.
fn cross_entropy(logits: &Matrix, targets: &[usize]) -> (f64, Matrix) {
    let p = logits.softmax_cols();
    let mut d = p.clone();
    let mut loss = 0.0;
    for (t, &target) in targets.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for i in 0..logits.rows() {
            max = max.max(logits.get(i, t));
        }
        let mut total = 0.0;
        for i in 0..logits.rows() {
            total += (logits.get(i, t) - max).exp();
        }
        loss += max + total.ln() - logits.get(target, t);
        d.set(target, t, d.get(target, t) - 1.0);
    }
    (loss, d)
}

fn target_slice(targets: &Targets) -> Vec<usize> {
    match targets {
        Targets::Tokens(t) => t.clone(),
        Targets::Class(c) => vec![*c],
    }
}

/// Summed (not averaged) cross-entropy of one example.
fn loss_sum(model: &Model, ex: &Example) -> Result<f64> {
    check_targets(model, ex)?;
    let logits = model::forward(model, &ex.tokens)?;
    Ok(cross_entropy(&logits, &target_slice(&ex.targets)).0)
}

/// Mean cross-entropy over every target position in `batch`.
pub fn loss(model: &Model, batch: &[Example]) -> Result<f64> {
    let count: usize = batch.iter().map(|e| e.targets.count()).sum();
    if count == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let sums: Vec<f64> = batch.par_iter().map(|e| loss_sum(model, e)).collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / count as f64)
}

fn layer_norm_backward(dy: &Matrix, cache: &LnCache, gain: &Matrix) -> (Matrix, Matrix, Matrix) {
    let (d, n) = dy.shape();
    let mut dx = Matrix::zeros(d, n);
    let mut d_gain = Matrix::zeros(d, 1);
    let mut d_bias = Matrix::zeros(d, 1);
    for i in 0..d {
        let mut gsum = 0.0;
        let mut bsum = 0.0;
        for j in 0..n {
            gsum += dy.get(i, j) * cache.xhat.get(i, j);
            bsum += dy.get(i, j);
        }
        d_gain.set(i, 0, gsum);
        d_bias.set(i, 0, bsum);
    }
    let mut dxhat = vec![0.0; d];
    for j in 0..n {
        let mut mean1 = 0.0;
        let mut mean2 = 0.0;
        for i in 0..d {
            dxhat[i] = dy.get(i, j) * gain.get(i, 0);
            mean1 += dxhat[i];
            mean2 += dxhat[i] * cache.xhat.get(i, j);
        }
        mean1 /= d as f64;
        mean2 /= d as f64;
        for i in 0..d {
            dx.set(i, j, cache.inv_std[j] * (dxhat[i] - mean1 - cache.xhat.get(i, j) * mean2));
        }
    }
    (dx, d_gain, d_bias)
}

/// Gradients of the summed loss of one example, for every parameter.
fn example_grads(model: &Model, ex: &Example) -> Result<(f64, GradientMap)> {
    check_targets(model, ex)?;
    let cfg = &model.config;
    let tr: Trace = model::trace(model, &ex.tokens)?;
    let (loss, d_logits) = cross_entropy(&tr.logits, &target_slice(&ex.targets));
    let mut g = GradientMap::new();
    let p = |n: &str| model.param(n);

    // Output head.
    let mut dx = match cfg.kind {
        ModelKind::CausalLm => {
            g.insert("head.w", d_logits.matmul_nt(&tr.hidden)?);
            g.insert("head.b", d_logits.row_sums());
            p("head.w")?.matmul_tn(&d_logits)?
        }
        ModelKind::EncoderClassifier => {
            let pooled = tr.pooled.as_ref().expect("classifier trace has a pooler");
            g.insert("head.w", d_logits.matmul_nt(pooled)?);
            g.insert("head.b", d_logits.clone());
            let d_pooled = p("head.w")?.matmul_tn(&d_logits)?;
            let d_z = d_pooled.hadamard(&pooled.map(|v| 1.0 - v * v))?;
            let first = tr.hidden.col(0);
            g.insert("head.dense.w", d_z.matmul_nt(&first)?);
            g.insert("head.dense.b", d_z.clone());
            let d_first = p("head.dense.w")?.matmul_tn(&d_z)?;
            let mut d_hidden = Matrix::zeros(cfg.d_model, ex.tokens.len());
            for i in 0..cfg.d_model {
                d_hidden.set(i, 0, d_first.get(i, 0));
            }
            d_hidden
        }
    };

    let (d_res, d_gain, d_bias) = layer_norm_backward(&dx, &tr.final_ln, p("final_ln.gain")?);
    g.insert("final_ln.gain", d_gain);
    g.insert("final_ln.bias", d_bias);
    dx = d_res;

    for (i, layer) in tr.layers.iter().enumerate().rev() {
        let name = |s: &str| format!("layer{i}.{s}");

        // Feed-forward residual branch.
        let w2 = p(&name("ffn.w2"))?;
        g.insert(name("ffn.w2"), dx.matmul_nt(&layer.ffn_act)?);
        g.insert(name("ffn.b2"), dx.row_sums());
        let d_act = w2.matmul_tn(&dx)?;
        let d_pre = d_act.hadamard(&layer.ffn_pre.map(gelu_grad))?;
        g.insert(name("ffn.w1"), d_pre.matmul_nt(&layer.ffn_in)?);
        g.insert(name("ffn.b1"), d_pre.row_sums());
        let d_ffn_in = p(&name("ffn.w1"))?.matmul_tn(&d_pre)?;
        let (d_ln2, d_gain, d_bias) = layer_norm_backward(&d_ffn_in, &layer.ln2, p(&name("ln2.gain"))?);
        g.insert(name("ln2.gain"), d_gain);
        g.insert(name("ln2.bias"), d_bias);
        dx.add_assign(&d_ln2)?;

        // Attention residual branch.
        g.insert(name("self_attn.w_o"), dx.matmul_nt(&layer.attn.concat)?);
        g.insert(name("self_attn.b_o"), dx.row_sums());
        let d_concat = p(&name("self_attn.w_o"))?.matmul_tn(&dx)?;
        let dh = cfg.head_dim();
        let input: &AttentionInput = &layer.attn_input;
        let mut d_a = Matrix::zeros(cfg.d_model, ex.tokens.len());
        let mut parts: BTreeMap<&str, Vec<Matrix>> = BTreeMap::new();
        for (h, (params, cache)) in layer.heads.iter().zip(&layer.attn.heads).enumerate() {
            let d_out = d_concat.slice_rows(h * dh, (h + 1) * dh);
            let hg = attention::attend_backward(params, input, cache, &d_out)?;
            d_a.add_assign(&hg.d_h)?;
            d_a.add_assign(&hg.d_c)?;
            for (k, m) in [
                ("w_q", hg.w_q),
                ("b_q", hg.b_q),
                ("w_k", hg.w_k),
                ("b_k", hg.b_k),
                ("w_v", hg.w_v),
                ("b_v", hg.b_v),
            ] {
                parts.entry(k).or_default().push(m);
            }
        }
        for (k, ms) in parts {
            g.insert(name(&format!("self_attn.{k}")), Matrix::vstack(&ms)?);
        }
        let (d_ln1, d_gain, d_bias) = layer_norm_backward(&d_a, &layer.ln1, p(&name("ln1.gain"))?);
        g.insert(name("ln1.gain"), d_gain);
        g.insert(name("ln1.bias"), d_bias);
        dx.add_assign(&d_ln1)?;
    }

    let mut d_tok = Matrix::zeros(cfg.d_model, cfg.vocab_size);
    let mut d_pos = Matrix::zeros(cfg.d_model, cfg.max_seq);
    for (t, &id) in ex.tokens.iter().enumerate() {
        for r in 0..cfg.d_model {
            let v = dx.get(r, t);
            d_tok.set(r, id, d_tok.get(r, id) + v);
            d_pos.set(r, t, d_pos.get(r, t) + v);
        }
    }
    g.insert("embed.tok", d_tok);
    g.insert("embed.pos", d_pos);

    g.0.retain(|k, _| !model.is_frozen(k));
    Ok((loss, g))
}

/// Mean cross-entropy of one sequence and its gradient.
pub fn backward(model: &Model, tokens: &[usize], targets: &Targets) -> Result<(f64, GradientMap)> {
    backward_batch(model, &[Example::new(tokens.to_vec(), targets.clone())])
}

/// Mean cross-entropy over every target position in `batch` and its
/// gradient. Examples are differentiated in parallel and summed in order, so
/// the result does not depend on the thread count.
pub fn backward_batch(model: &Model, batch: &[Example]) -> Result<(f64, GradientMap)> {
    let count: usize = batch.iter().map(|e| e.targets.count()).sum();
    if count == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let per_example: Vec<(f64, GradientMap)> =
        batch.par_iter().map(|e| example_grads(model, e)).collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grads = GradientMap::new();
    for (l, g) in per_example {
        total += l;
        grads.accumulate(g)?;
    }
    let inv = 1.0 / count as f64;
    grads.scale(inv);
    Ok((total * inv, grads))
}

/// Central differences `(L(θ+h) − L(θ−h)) / 2h` for every entry of `param`,
/// using the batch-mean loss.
pub fn finite_diff_grad_batch(model: &Model, batch: &[Example], param: &str, h: f64) -> Result<Matrix> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = model.clone();
    let original = model.param(param)?.clone();
    let mut out = Matrix::zeros(original.rows(), original.cols());
    for idx in 0..original.len() {
        let theta = original.data()[idx];
        probe.param_mut(param).expect("checked above").data_mut()[idx] = theta + h;
        let plus = loss(&probe, batch)?;
        probe.param_mut(param).expect("checked above").data_mut()[idx] = theta - h;
        let minus = loss(&probe, batch)?;
        probe.param_mut(param).expect("checked above").data_mut()[idx] = theta;
        out.data_mut()[idx] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Single-sequence form of [`finite_diff_grad_batch`].
pub fn finite_diff_grad(model: &Model, tokens: &[usize], targets: &Targets, param: &str, h: f64) -> Result<Matrix> {
    finite_diff_grad_batch(model, &[Example::new(tokens.to_vec(), targets.clone())], param, h)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; pairs whose norms are
/// both below `abs_floor` count as agreeing exactly.
pub fn relative_error(a: &Matrix, b: &Matrix, abs_floor: f64) -> Result<f64> {
    let diff = a.sub(b)?.frobenius();
    let scale = a.frobenius().max(b.frobenius());
    if scale <= abs_floor {
        return Ok(0.0);
    }
    Ok(diff / scale)
}

/// Adam moments, step counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update of every unfrozen parameter that has a
/// gradient. Frozen parameters and their moments are left untouched.
pub fn adam_step(model: &mut Model, grads: &GradientMap, state: &mut AdamState) -> Result<()> {
    if !(state.lr > 0.0) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    for (name, g) in grads.iter() {
        let p = model.param(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads.iter() {
        if model.is_frozen(name) {
            continue;
        }
        let (r, c) = g.shape();
        let m = state.first.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
        let v = state.second.entry(name.clone()).or_insert_with(|| Matrix::zeros(r, c));
        let p = model.param_mut(name).expect("validated above");
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * gi;
            vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = md[i] / c1;
            let v_hat = vd[i] / c2;
            pd[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
