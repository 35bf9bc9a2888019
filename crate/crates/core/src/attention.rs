//! Dot-product attention with query, key and value biases, in three
//! algebraically equivalent formulations.
//!
//! With `q = W_q h + b_q`, `K = W_k C + b_k 1ᵀ` and `V = W_v C + b_v 1ᵀ`:
//!
//! * [`attn_full`] evaluates `V σ(qᵀK)ᵀ` literally.
//! * [`attn_bv_extracted`] pulls the value bias out of the convex
//!   combination: `W_v C σ(qᵀK)ᵀ + b_v`.
//! * [`attn_reduced`] additionally drops the key bias, which only adds the
//!   per-query constant `qᵀb_k` to every score of a column and is therefore
//!   annihilated by the softmax: `W_v C σ(qᵀ W_k C)ᵀ + b_v`.
//!
//! Queries are the columns of `h`; each column is processed independently.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mask, Matrix, Scalar};

/// Which attention formulation a model evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnForm {
    /// Literal `V σ(qᵀK)ᵀ`, reads `b_k`.
    Full,
    /// Key-bias-free form; `b_k` is never read.
    Reduced,
}

impl std::fmt::Display for AttnForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttnForm::Full => "full",
            AttnForm::Reduced => "reduced",
        })
    }
}

/// Projection weights (`head_dim × model_dim`) and biases (`head_dim × 1`)
/// of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T = f64> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub b_q: Matrix<T>,
    pub b_k: Matrix<T>,
    pub b_v: Matrix<T>,
    /// Multiply scores by `1/√head_dim`.
    pub scale_enabled: bool,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(
        w_q: Matrix<T>,
        w_k: Matrix<T>,
        w_v: Matrix<T>,
        b_q: Matrix<T>,
        b_k: Matrix<T>,
        b_v: Matrix<T>,
        scale_enabled: bool,
    ) -> Result<Self> {
        let p = Self {
            w_q,
            w_k,
            w_v,
            b_q,
            b_k,
            b_v,
            scale_enabled,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.w_q.shape();
        for w in [&self.w_k, &self.w_v] {
            if w.shape() != shape {
                return Err(Error::shape("attention weights", shape, w.shape()));
            }
        }
        for b in [&self.b_q, &self.b_k, &self.b_v] {
            if b.shape() != (shape.0, 1) {
                return Err(Error::shape("attention bias", (shape.0, 1), b.shape()));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn model_dim(&self) -> usize {
        self.w_q.cols()
    }

    fn score_scale(&self) -> T {
        if self.scale_enabled {
            T::from_f64(1.0 / (self.head_dim() as f64).sqrt())
        } else {
            T::ONE
        }
    }

    fn check_input(&self, input: &AttentionInput<T>) -> Result<()> {
        let d = self.model_dim();
        if input.h.rows() != d {
            return Err(Error::shape("attention query input", (d, input.h.cols()), input.h.shape()));
        }
        if input.c.rows() != d {
            return Err(Error::shape("attention context", (d, input.c.cols()), input.c.shape()));
        }
        Ok(())
    }
}

/// Queries `h` (`d × m`) attending to context `c` (`d × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInput<T = f64> {
    pub h: Matrix<T>,
    pub c: Matrix<T>,
    pub mask: Mask,
}

impl<T: Scalar> AttentionInput<T> {
    pub fn new(h: Matrix<T>, c: Matrix<T>) -> Result<Self> {
        if h.rows() != c.rows() {
            return Err(Error::shape("attention input", h.shape(), c.shape()));
        }
        Ok(Self {
            h,
            c,
            mask: Mask::None,
        })
    }

    /// Causal self-attention: every position is both a query and a key, and
    /// position `t` only sees positions `≤ t`.
    pub fn causal_self(x: Matrix<T>) -> Self {
        Self {
            h: x.clone(),
            c: x,
            mask: Mask::Causal,
        }
    }

    /// Unmasked self-attention.
    pub fn self_attention(x: Matrix<T>) -> Self {
        Self {
            h: x.clone(),
            c: x,
            mask: Mask::None,
        }
    }
}

/// Intermediates of one head kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache<T = f64> {
    pub form: AttnForm,
    /// `W_q h + b_q`, `head_dim × m`.
    pub q: Matrix<T>,
    /// Keys used in the scores: `W_k C + b_k 1ᵀ` (full) or `W_k C` (reduced).
    pub k: Matrix<T>,
    /// Values combined by the distribution: `W_v C + b_v 1ᵀ` (full) or `W_v C` (reduced).
    pub v: Matrix<T>,
    /// Attention distribution, `n × m`, columns sum to one.
    pub p: Matrix<T>,
}

fn scores<T: Scalar>(k: &Matrix<T>, q: &Matrix<T>, scale: T) -> Result<Matrix<T>> {
    let s = k.matmul_tn_compensated(q)?;
    Ok(if scale == T::ONE { s } else { s.scale(scale) })
}

fn query<T: Scalar>(params: &AttentionParams<T>, input: &AttentionInput<T>) -> Result<Matrix<T>> {
    params.w_q.matmul(&input.h)?.add_outer_bias(&params.b_q)
}

/// Evaluates one head in the requested formulation and returns the
/// intermediates needed for differentiation.
pub fn attend<T: Scalar>(
    params: &AttentionParams<T>,
    input: &AttentionInput<T>,
    form: AttnForm,
) -> Result<(Matrix<T>, AttentionCache<T>)> {
    params.validate()?;
    params.check_input(input)?;
    if input.mask == Mask::Causal && input.h.cols() != input.c.cols() {
        return Err(Error::shape("causal attention", input.h.shape(), input.c.shape()));
    }
    let q = query(params, input)?;
    let wk_c = params.w_k.matmul(&input.c)?;
    let wv_c = params.w_v.matmul(&input.c)?;
    let (out, k, v, p) = match form {
        AttnForm::Full => {
            let k = wk_c.add_outer_bias(&params.b_k)?;
            let v = wv_c.add_outer_bias(&params.b_v)?;
            let p = scores(&k, &q, params.score_scale())?.softmax_cols_masked(input.mask);
            (v.matmul(&p)?, k, v, p)
        }
        AttnForm::Reduced => {
            let p = scores(&wk_c, &q, params.score_scale())?.softmax_cols_masked(input.mask);
            let out = wv_c.matmul(&p)?.add_outer_bias(&params.b_v)?;
            (out, wk_c, wv_c, p)
        }
    };
    Ok((out, AttentionCache { form, q, k, v, p }))
}

/// Attention distribution `σ(qᵀK)` as an `n × m` matrix (one column per query).
pub fn attn_distribution<T: Scalar>(params: &AttentionParams<T>, input: &AttentionInput<T>) -> Result<Matrix<T>> {
    params.validate()?;
    params.check_input(input)?;
    let q = query(params, input)?;
    let k = params.w_k.matmul(&input.c)?.add_outer_bias(&params.b_k)?;
    Ok(scores(&k, &q, params.score_scale())?.softmax_cols_masked(input.mask))
}

/// `V σ(qᵀK)ᵀ` with every bias in place.
pub fn attn_full<T: Scalar>(params: &AttentionParams<T>, input: &AttentionInput<T>) -> Result<Matrix<T>> {
    Ok(attend(params, input, AttnForm::Full)?.0)
}

/// `W_v C σ(qᵀK)ᵀ + b_v`: the value bias moved outside the convex combination.
pub fn attn_bv_extracted<T: Scalar>(params: &AttentionParams<T>, input: &AttentionInput<T>) -> Result<Matrix<T>> {
    let p = attn_distribution(params, input)?;
    params.w_v.matmul(&input.c)?.matmul(&p)?.add_outer_bias(&params.b_v)
}

/// `W_v C σ((W_q h + b_q)ᵀ W_k C)ᵀ + b_v`. Never reads `b_k`.
pub fn attn_reduced<T: Scalar>(params: &AttentionParams<T>, input: &AttentionInput<T>) -> Result<Matrix<T>> {
    Ok(attend(params, input, AttnForm::Reduced)?.0)
}

/// Gradients of one head.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub w_q: Matrix,
    pub b_q: Matrix,
    pub w_k: Matrix,
    /// Zero for the reduced form.
    pub b_k: Matrix,
    pub w_v: Matrix,
    pub b_v: Matrix,
    /// Gradient with respect to the queries `h`.
    pub d_h: Matrix,
    /// Gradient with respect to the context `C`.
    pub d_c: Matrix,
}

/// Reverse pass through [`attend`] given the output gradient `d_out`.
pub fn attend_backward(
    params: &AttentionParams,
    input: &AttentionInput,
    cache: &AttentionCache,
    d_out: &Matrix,
) -> Result<AttentionGrads> {
    let p = &cache.p;
    // Output = v·p (+ b_v for the reduced form).
    let d_v = d_out.matmul_nt(p)?;
    let d_p = cache.v.matmul_tn(d_out)?;
    let (n, m) = p.shape();
    // Softmax backward from the saved probabilities: dz = p ⊙ (g − ⟨p, g⟩).
    let mut d_s = Matrix::zeros(n, m);
    for j in 0..m {
        let mut inner = 0.0;
        for i in 0..n {
            inner += p.get(i, j) * d_p.get(i, j);
        }
        for i in 0..n {
            d_s.set(i, j, p.get(i, j) * (d_p.get(i, j) - inner));
        }
    }
    if params.scale_enabled {
        d_s = d_s.scale(params.score_scale());
    }
    let d_q = cache.k.matmul(&d_s)?;
    let d_k = cache.q.matmul_nt(&d_s)?;

    let b_v = match cache.form {
        AttnForm::Full => d_v.row_sums(),
        AttnForm::Reduced => d_out.row_sums(),
    };
    let b_k = match cache.form {
        AttnForm::Full => d_k.row_sums(),
        AttnForm::Reduced => Matrix::zeros(params.head_dim(), 1),
    };
    let mut d_c = params.w_k.matmul_tn(&d_k)?;
    d_c.add_assign(&params.w_v.matmul_tn(&d_v)?)?;
    Ok(AttentionGrads {
        w_q: d_q.matmul_nt(&input.h)?,
        b_q: d_q.row_sums(),
        w_k: d_k.matmul_nt(&input.c)?,
        b_k,
        w_v: d_v.matmul_nt(&input.c)?,
        b_v,
        d_h: params.w_q.matmul_tn(&d_q)?,
        d_c,
    })
}

/// Splits full-width `d × d` projections into `n_heads` per-head parameter
/// sets of `d/n_heads` rows each.
#[allow(clippy::too_many_arguments)]
pub fn split_heads<T: Scalar>(
    w_q: &Matrix<T>,
    b_q: &Matrix<T>,
    w_k: &Matrix<T>,
    b_k: &Matrix<T>,
    w_v: &Matrix<T>,
    b_v: &Matrix<T>,
    n_heads: usize,
    scale_enabled: bool,
) -> Result<Vec<AttentionParams<T>>> {
    let d = w_q.rows();
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::Config(format!("d={d} is not divisible into {n_heads} heads")));
    }
    let dh = d / n_heads;
    (0..n_heads)
        .map(|h| {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            AttentionParams::new(
                w_q.slice_rows(lo, hi),
                w_k.slice_rows(lo, hi),
                w_v.slice_rows(lo, hi),
                b_q.slice_rows(lo, hi),
                b_k.slice_rows(lo, hi),
                b_v.slice_rows(lo, hi),
                scale_enabled,
            )
        })
        .collect()
}

/// Per-head caches plus the concatenated head outputs.
#[derive(Debug, Clone)]
pub struct MultiHeadCache<T = f64> {
    pub heads: Vec<AttentionCache<T>>,
    pub concat: Matrix<T>,
}

fn check_heads<T: Scalar>(heads: &[AttentionParams<T>], w_o: &Matrix<T>, b_o: &Matrix<T>) -> Result<usize> {
    let first = heads
        .first()
        .ok_or_else(|| Error::Config("multi-head attention needs at least one head".into()))?;
    let d = first.model_dim();
    if d % heads.len() != 0 {
        return Err(Error::Config(format!("d={d} is not divisible into {} heads", heads.len())));
    }
    let dh = d / heads.len();
    for h in heads {
        h.validate()?;
        if h.head_dim() != dh || h.model_dim() != d {
            return Err(Error::shape("attention head", (dh, d), h.w_q.shape()));
        }
    }
    if w_o.shape() != (d, d) {
        return Err(Error::shape("output projection", (d, d), w_o.shape()));
    }
    if b_o.shape() != (d, 1) {
        return Err(Error::shape("output bias", (d, 1), b_o.shape()));
    }
    Ok(d)
}

/// Runs every head, concatenates their outputs along the feature axis and
/// applies `W_o · concat + b_o`.
pub fn multi_head_forward<T: Scalar>(
    heads: &[AttentionParams<T>],
    w_o: &Matrix<T>,
    b_o: &Matrix<T>,
    input: &AttentionInput<T>,
    form: AttnForm,
) -> Result<(Matrix<T>, MultiHeadCache<T>)> {
    check_heads(heads, w_o, b_o)?;
    let mut outs = Vec::with_capacity(heads.len());
    let mut caches = Vec::with_capacity(heads.len());
    for h in heads {
        let (o, c) = attend(h, input, form)?;
        outs.push(o);
        caches.push(c);
    }
    let concat = Matrix::vstack(&outs)?;
    let out = w_o.matmul(&concat)?.add_outer_bias(b_o)?;
    Ok((out, MultiHeadCache { heads: caches, concat }))
}

/// Multi-head attention output only.
pub fn multi_head_attn<T: Scalar>(
    heads: &[AttentionParams<T>],
    w_o: &Matrix<T>,
    b_o: &Matrix<T>,
    input: &AttentionInput<T>,
    form: AttnForm,
) -> Result<Matrix<T>> {
    Ok(multi_head_forward(heads, w_o, b_o, input, form)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sample_uniform, Rng};

    fn scalar(x: f64) -> Matrix {
        Matrix::from_rows(&[[x]])
    }

    fn unit_instance(b_k: f64) -> (AttentionParams, AttentionInput) {
        let params = AttentionParams::new(
            scalar(1.0),
            scalar(1.0),
            scalar(1.0),
            scalar(0.0),
            scalar(b_k),
            scalar(0.0),
            false,
        )
        .unwrap();
        let input = AttentionInput::new(scalar(1.0), Matrix::from_rows(&[[0.0, 3f64.ln()]])).unwrap();
        (params, input)
    }

    /// Builds q, K and V entry by entry and evaluates the convex combination
    /// with a textbook softmax; shares no code with the module under test.
    fn oracle_attention(p: &AttentionParams, input: &AttentionInput) -> Vec<Vec<f64>> {
        let d = p.head_dim();
        let dm = p.model_dim();
        let (m, n) = (input.h.cols(), input.c.cols());
        let s = if p.scale_enabled { 1.0 / (d as f64).sqrt() } else { 1.0 };
        let affine = |w: &Matrix, b: &Matrix, x: &Matrix, col: usize| -> Vec<f64> {
            (0..d)
                .map(|r| (0..dm).map(|c| w.get(r, c) * x.get(c, col)).sum::<f64>() + b.get(r, 0))
                .collect()
        };
        let keys: Vec<Vec<f64>> = (0..n).map(|j| affine(&p.w_k, &p.b_k, &input.c, j)).collect();
        let vals: Vec<Vec<f64>> = (0..n).map(|j| affine(&p.w_v, &p.b_v, &input.c, j)).collect();
        (0..m)
            .map(|col| {
                let q = affine(&p.w_q, &p.b_q, &input.h, col);
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|k| s * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let top = logits.iter().cloned().fold(f64::MIN, f64::max);
                let w: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
                let total: f64 = w.iter().sum();
                (0..d)
                    .map(|r| (0..n).map(|j| vals[j][r] * w[j] / total).sum())
                    .collect()
            })
            .collect()
    }

    pub(crate) fn random_instance(rng: &mut Rng, d: usize, n: usize, m: usize, scale: bool) -> (AttentionParams, AttentionInput) {
        let mut u = |r, c| sample_uniform(rng, -10.0, 10.0, r, c).unwrap();
        let params = AttentionParams::new(u(d, d), u(d, d), u(d, d), u(d, 1), u(d, 1), u(d, 1), scale).unwrap();
        let h = sample_uniform(rng, -1.0, 1.0, d, m).unwrap();
        let c = sample_uniform(rng, -1.0, 1.0, d, n).unwrap();
        (params, AttentionInput::new(h, c).unwrap())
    }

    #[test]
    fn hand_instance_distribution_and_outputs() {
        let (p, x) = unit_instance(0.0);
        let dist = attn_distribution(&p, &x).unwrap();
        assert!((dist.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((dist.get(1, 0) - 0.75).abs() < 1e-15);
        let expected = 0.75 * 3f64.ln();
        assert!((expected - 0.823959).abs() < 1e-6);
        for out in [attn_full(&p, &x), attn_bv_extracted(&p, &x), attn_reduced(&p, &x)] {
            assert!((out.unwrap().get(0, 0) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn reduced_ignores_key_bias_bitwise() {
        let (p5, x) = unit_instance(5.0);
        let (pm, _) = unit_instance(-100.0);
        let a = attn_reduced(&p5, &x).unwrap();
        let b = attn_reduced(&pm, &x).unwrap();
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
        assert!((a.get(0, 0) - 0.823959).abs() < 1e-6);
    }

    #[test]
    fn single_key_is_identity_softmax() {
        let mut rng = Rng::new(1);
        let (p, mut x) = random_instance(&mut rng, 4, 1, 3, true);
        x.c = sample_uniform(&mut rng, -1.0, 1.0, 4, 1).unwrap();
        let dist = attn_distribution(&p, &x).unwrap();
        assert!(dist.data().iter().all(|&v| v == 1.0));
        let v = p.w_v.matmul(&x.c).unwrap().add_outer_bias(&p.b_v).unwrap();
        let out = attn_full(&p, &x).unwrap();
        for j in 0..3 {
            assert_eq!(out.col(j), v);
        }
    }

    #[test]
    fn key_bias_does_not_move_distribution() {
        let mut rng = Rng::new(2);
        let (p, x) = random_instance(&mut rng, 6, 9, 4, true);
        let mut p2 = p.clone();
        p2.b_k = sample_uniform(&mut rng, -5.0, 5.0, 6, 1).unwrap();
        let a = attn_distribution(&p, &x).unwrap();
        let b = attn_distribution(&p2, &x).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
    }

    #[test]
    fn full_matches_independent_oracle() {
        let mut rng = Rng::new(8);
        let (p, x) = random_instance(&mut rng, 8, 16, 3, true);
        let out = attn_full(&p, &x).unwrap();
        let oracle = oracle_attention(&p, &x);
        for (j, col) in oracle.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                assert!((out.get(i, j) - v).abs() <= 1e-12 * (1.0 + v.abs()), "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_value_path_yields_bias() {
        let mut rng = Rng::new(4);
        let (mut p, x) = unit_instance(0.3);
        p.w_v = scalar(0.0);
        p.b_v = scalar(7.0);
        let out = attn_bv_extracted(&p, &x).unwrap();
        assert_eq!(out.get(0, 0), 7.0);
        let (mut p, x) = random_instance(&mut rng, 1, 5, 2, false);
        p.w_v = scalar(0.0);
        p.b_v = scalar(7.0);
        assert!(attn_bv_extracted(&p, &x).unwrap().data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn zero_query_gives_uniform_attention() {
        let mut rng = Rng::new(6);
        let (mut p, x) = random_instance(&mut rng, 3, 5, 2, true);
        p.w_q = Matrix::zeros(3, 3);
        p.b_q = Matrix::zeros(3, 1);
        let out = attn_reduced(&p, &x).unwrap();
        let expected = p.w_v.matmul(&x.c).unwrap().row_means().add(&p.b_v).unwrap();
        for j in 0..2 {
            assert!(out.col(j).max_abs_diff(&expected).unwrap() < 1e-14);
        }
    }

    #[test]
    fn value_bias_is_purely_additive() {
        let mut rng = Rng::new(10);
        let (p, x) = random_instance(&mut rng, 5, 7, 3, true);
        let mut p2 = p.clone();
        let delta = sample_uniform(&mut rng, -5.0, 5.0, 5, 1).unwrap();
        p2.b_v = p.b_v.add(&delta).unwrap();
        let diff = attn_full(&p2, &x).unwrap().sub(&attn_full(&p, &x).unwrap()).unwrap();
        for j in 0..3 {
            assert!(diff.col(j).max_abs_diff(&delta).unwrap() < 1e-12);
        }
    }

    #[test]
    fn query_bias_changes_distribution() {
        let mut rng = Rng::new(12);
        let (p, x) = random_instance(&mut rng, 4, 6, 2, true);
        let mut p2 = p.clone();
        p2.b_q = sample_uniform(&mut rng, -5.0, 5.0, 4, 1).unwrap();
        let a = attn_distribution(&p, &x).unwrap();
        let b = attn_distribution(&p2, &x).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-6);
    }

    #[test]
    fn shape_errors() {
        let (p, _) = unit_instance(0.0);
        let bad = AttentionInput::new(Matrix::zeros(2, 1), Matrix::zeros(2, 3)).unwrap();
        assert!(attn_full(&p, &bad).is_err());
        assert!(AttentionInput::new(Matrix::<f64>::zeros(2, 1), Matrix::zeros(3, 1)).is_err());
        assert!(AttentionParams::new(
            Matrix::<f64>::zeros(2, 2),
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 1),
            Matrix::zeros(3, 1),
            Matrix::zeros(2, 1),
            true
        )
        .is_err());
    }

    #[test]
    fn multi_head_reduces_to_single_head() {
        let mut rng = Rng::new(14);
        let (p, x) = random_instance(&mut rng, 6, 5, 3, true);
        let single = attn_full(&p, &x).unwrap();
        let multi = multi_head_attn(
            &[p.clone()],
            &Matrix::identity(6),
            &Matrix::zeros(6, 1),
            &x,
            AttnForm::Full,
        )
        .unwrap();
        assert_eq!(single, multi);
    }

    #[test]
    fn multi_head_forms_agree_under_random_key_bias() {
        let mut rng = Rng::new(15);
        let d = 8;
        let mut u = |r, c| sample_uniform(&mut rng, -1.0, 1.0, r, c).unwrap();
        let heads = split_heads(&u(d, d), &u(d, 1), &u(d, d), &u(d, 1), &u(d, d), &u(d, 1), 2, true).unwrap();
        let (w_o, b_o) = (u(d, d), u(d, 1));
        let x = AttentionInput::new(u(d, 4), u(d, 6)).unwrap();
        let full = multi_head_attn(&heads, &w_o, &b_o, &x, AttnForm::Full).unwrap();
        let reduced = multi_head_attn(&heads, &w_o, &b_o, &x, AttnForm::Reduced).unwrap();
        assert!(full.max_abs_diff(&reduced).unwrap() <= 1e-12);
    }

    #[test]
    fn multi_head_projection_bias_only() {
        let mut rng = Rng::new(16);
        let d = 4;
        let zero = Matrix::zeros(d, d);
        let mut u = |r, c| sample_uniform(&mut rng, -1.0, 1.0, r, c).unwrap();
        let heads = split_heads(&u(d, d), &u(d, 1), &u(d, d), &u(d, 1), &zero, &Matrix::zeros(d, 1), 2, true).unwrap();
        let b_o = Matrix::filled(d, 1, 2.5);
        let x = AttentionInput::new(u(d, 3), u(d, 5)).unwrap();
        let out = multi_head_attn(&heads, &u(d, d), &b_o, &x, AttnForm::Full).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn multi_head_rejects_indivisible_width() {
        let mut rng = Rng::new(17);
        let d = 6;
        let mut u = |r, c| sample_uniform(&mut rng, -1.0, 1.0, r, c).unwrap();
        assert!(split_heads(&u(d, d), &u(d, 1), &u(d, d), &u(d, 1), &u(d, d), &u(d, 1), 4, true).is_err());
        let (p, x) = random_instance(&mut Rng::new(3), 6, 2, 1, true);
        let err = multi_head_attn(&[p.clone(), p.clone(), p.clone(), p], &Matrix::identity(6), &Matrix::zeros(6, 1), &x, AttnForm::Full);
        assert!(err.is_err());
    }

    #[test]
    fn causal_masking_keeps_forms_equivalent() {
        let mut rng = Rng::new(18);
        let (p, x) = random_instance(&mut rng, 4, 5, 5, true);
        let causal = AttentionInput { mask: Mask::Causal, ..x };
        let a = attn_full(&p, &causal).unwrap();
        let b = attn_reduced(&p, &causal).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
        let dist = attn_distribution(&p, &causal).unwrap();
        assert_eq!(dist.get(4, 0), 0.0);
    }
}
