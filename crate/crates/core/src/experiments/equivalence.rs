//! Randomized agreement check of the full, value-bias-extracted and reduced
//! attention forms.

use serde::{Deserialize, Serialize};

use super::report::{fmt_num, Report, Table};
use crate::attention::{attn_bv_extracted, attn_full, attn_reduced, AttentionInput, AttentionParams};
use crate::error::{Error, Result};
use crate::linalg::{sample_uniform, Rng};

pub const REDUCED_TOL: f64 = 1e-12;
pub const EXTRACTED_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivalenceConfig {
    pub trials: usize,
    pub seed: u64,
    pub max_d: usize,
    /// Largest context length n.
    pub max_n: usize,
    /// Largest number of query columns m.
    pub max_m: usize,
    /// Parameters are drawn from `U[-param_range, param_range)`.
    pub param_range: f64,
    /// Inputs `h`, `C` are drawn from `U[-input_range, input_range)`.
    pub input_range: f64,
    pub scale_enabled: bool,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 7,
            max_d: 64,
            max_n: 128,
            max_m: 4,
            param_range: 10.0,
            input_range: 10.0,
            scale_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Worst {
    pub diff: f64,
    pub trial: usize,
    pub dims: (usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceResult {
    pub trials: usize,
    pub reduced: Worst,
    pub extracted: Worst,
    pub reduced_failures: usize,
    pub extracted_failures: usize,
}

impl EquivalenceResult {
    pub fn passed(&self) -> bool {
        self.reduced_failures == 0 && self.extracted_failures == 0
    }
}

/// Draws one random instance `(params, input)` with dimensions `(d, n, m)`.
pub fn random_instance(rng: &mut Rng, cfg: &EquivalenceConfig) -> Result<(AttentionParams, AttentionInput)> {
    let d = 1 + rng.below(cfg.max_d);
    let n = 1 + rng.below(cfg.max_n);
    let m = 1 + rng.below(cfg.max_m);
    let r = cfg.param_range;
    let mut u = |rows, cols| sample_uniform(rng, -r, r, rows, cols);
    let params = AttentionParams::new(u(d, d)?, u(d, d)?, u(d, d)?, u(d, 1)?, u(d, 1)?, u(d, 1)?, cfg.scale_enabled)?;
    let h = sample_uniform(rng, -cfg.input_range, cfg.input_range, d, m)?;
    let c = sample_uniform(rng, -cfg.input_range, cfg.input_range, d, n)?;
    Ok((params, AttentionInput::new(h, c)?))
}

/// Runs `cfg.trials` seeded instances. Disagreements are counted, not
/// raised.
pub fn run_equivalence_suite(cfg: &EquivalenceConfig) -> Result<EquivalenceResult> {
    if cfg.trials == 0 || cfg.max_d == 0 || cfg.max_n == 0 || cfg.max_m == 0 {
        return Err(Error::Config("trials and dimension bounds must be positive".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let none = Worst {
        diff: 0.0,
        trial: 0,
        dims: (0, 0, 0),
    };
    let mut out = EquivalenceResult {
        trials: cfg.trials,
        reduced: none.clone(),
        extracted: none,
        reduced_failures: 0,
        extracted_failures: 0,
    };
    for trial in 0..cfg.trials {
        let (p, x) = random_instance(&mut rng, cfg)?;
        let dims = (p.head_dim(), x.c.cols(), x.h.cols());
        let full = attn_full(&p, &x)?;
        let red = full.max_abs_diff(&attn_reduced(&p, &x)?)?;
        let ext = full.max_abs_diff(&attn_bv_extracted(&p, &x)?)?;
        if red > REDUCED_TOL {
            out.reduced_failures += 1;
        }
        if ext > EXTRACTED_TOL {
            out.extracted_failures += 1;
        }
        if red > out.reduced.diff {
            out.reduced = Worst { diff: red, trial, dims };
        }
        if ext > out.extracted.diff {
            out.extracted = Worst { diff: ext, trial, dims };
        }
    }
    Ok(out)
}

pub fn equivalence_report(cfg: &EquivalenceConfig) -> Result<Report> {
    let r = run_equivalence_suite(cfg)?;
    let mut t = Table::new(["comparison", "tolerance", "worst_max_diff", "worst_trial", "worst_d", "worst_n", "worst_m", "failures"]);
    for (label, tol, w, f) in [
        ("full vs reduced", REDUCED_TOL, &r.reduced, r.reduced_failures),
        ("full vs bv_extracted", EXTRACTED_TOL, &r.extracted, r.extracted_failures),
    ] {
        t.push([
            label.to_string(),
            fmt_num(tol),
            fmt_num(w.diff),
            w.trial.to_string(),
            w.dims.0.to_string(),
            w.dims.1.to_string(),
            w.dims.2.to_string(),
            f.to_string(),
        ]);
    }
    let mut rep = Report::new(
        "equivalence",
        "Attention form equivalence",
        "key-bias elimination derivation (full, value-bias-extracted and reduced forms)",
        cfg,
        vec![cfg.seed],
        t,
    )?;
    rep.summarize("trials", cfg.trials.to_string());
    rep.summarize("worst full vs reduced", fmt_num(r.reduced.diff));
    rep.summarize("worst full vs bv_extracted", fmt_num(r.extracted.diff));
    rep.passed = r.passed();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn default_suite_has_no_failures() {
        let r = run_equivalence_suite(&EquivalenceConfig::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.reduced.diff > 0.0);
    }

    #[test]
    fn single_scalar_trial_is_exact() {
        let cfg = EquivalenceConfig {
            trials: 1,
            max_d: 1,
            max_n: 2,
            max_m: 1,
            ..Default::default()
        };
        let r = run_equivalence_suite(&cfg).unwrap();
        assert!(r.reduced.diff <= 1e-15 && r.extracted.diff <= 1e-15);
    }

    #[test]
    fn hand_instance_forms_agree() {
        let one = Matrix::filled(1, 1, 1.0);
        let zero = Matrix::zeros(1, 1);
        let p = AttentionParams::new(one.clone(), one.clone(), one.clone(), zero.clone(), zero.clone(), zero, false).unwrap();
        let x = AttentionInput::new(one, Matrix::from_rows(&[vec![0.0, 3f64.ln()]])).unwrap();
        let f = attn_full(&p, &x).unwrap();
        assert!(f.max_abs_diff(&attn_reduced(&p, &x).unwrap()).unwrap() <= 1e-15);
        assert!(f.max_abs_diff(&attn_bv_extracted(&p, &x).unwrap()).unwrap() <= 1e-15);
    }

    #[test]
    fn unscaled_scores_still_agree() {
        let cfg = EquivalenceConfig {
            trials: 200,
            scale_enabled: false,
            input_range: 1.0,
            param_range: 1.0,
            ..Default::default()
        };
        assert!(run_equivalence_suite(&cfg).unwrap().passed());
    }

    #[test]
    fn rejects_empty_config() {
        let cfg = EquivalenceConfig {
            trials: 0,
            ..Default::default()
        };
        assert!(run_equivalence_suite(&cfg).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = EquivalenceConfig {
            trials: 20,
            ..Default::default()
        };
        let a = equivalence_report(&cfg).unwrap();
        assert_eq!(a.to_markdown().unwrap(), equivalence_report(&cfg).unwrap().to_markdown().unwrap());
        assert_eq!(a.table.rows.len(), 2);
    }
}
