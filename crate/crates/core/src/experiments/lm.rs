//! Byte-level language-model ablation: train the same model from the same
//! seed with and without the key bias and compare final test losses.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{fmt_num, Report, Table};
use super::stats::{welch_t_test, WelchTest};
use super::train::{train, TrainConfig};
use crate::attention::AttnForm;
use crate::error::{Error, Result};
use crate::grad::{loss, Example, Targets};
use crate::linalg::Rng;
use crate::model::{init_model, save_checkpoint, BiasTarget, Model, ModelConfig};

/// Smallest accepted corpus, in bytes.
pub const MIN_CORPUS_BYTES: usize = 100_000;

const SUBJECTS: [&str; 12] = [
    "the cat", "a dog", "the old man", "my sister", "the river", "a small bird", "the teacher", "our neighbour",
    "the wind", "a stranger", "the child", "the farmer",
];
const VERBS: [&str; 10] = [
    "sees", "follows", "carries", "remembers", "finds", "watches", "loves", "paints", "calls", "answers",
];
const OBJECTS: [&str; 12] = [
    "the moon", "a red apple", "the letter", "an open door", "the garden", "a quiet song", "the bridge", "a blue boat",
    "the market", "a long road", "the lamp", "a cold morning",
];
const TAILS: [&str; 8] = [
    "", " at night", " in the rain", " every day", " with care", " near the hill", " before dinner", " again",
];

/// Deterministic pseudo-English text of exactly `n_bytes` bytes: simple
/// subject-verb-object sentences with optional adverbials, so a byte LM has
/// structure to learn.
pub fn synthetic_corpus(seed: u64, n_bytes: usize) -> Vec<u8> {
    let mut rng = Rng::new(seed);
    let mut out = String::with_capacity(n_bytes + 64);
    while out.len() < n_bytes {
        let s = SUBJECTS[rng.below(SUBJECTS.len())];
        let v = VERBS[rng.below(VERBS.len())];
        let o = OBJECTS[rng.below(OBJECTS.len())];
        let t = TAILS[rng.below(TAILS.len())];
        let mut sentence = format!("{s} {v} {o}{t}. ");
        sentence[..1].make_ascii_uppercase();
        out.push_str(&sentence);
        if rng.below(6) == 0 {
            out.push('\n');
        }
    }
    out.truncate(n_bytes);
    out.into_bytes()
}

/// Byte corpus split into training (first 90%) and test (last 10%) parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub bytes: Vec<u8>,
    pub split: usize,
}

impl Corpus {
    pub fn new(bytes: Vec<u8>, origin: &Path) -> Result<Self> {
        if bytes.len() < MIN_CORPUS_BYTES {
            return Err(Error::CorpusTooSmall {
                path: origin.to_path_buf(),
                len: bytes.len(),
                min: MIN_CORPUS_BYTES,
            });
        }
        let split = bytes.len() * 9 / 10;
        Ok(Self { bytes, split })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::new(bytes, path)
    }

    pub fn train(&self) -> &[u8] {
        &self.bytes[..self.split]
    }

    pub fn test(&self) -> &[u8] {
        &self.bytes[self.split..]
    }
}

fn window(data: &[u8], start: usize, seq_len: usize) -> Example {
    let w = &data[start..start + seq_len + 1];
    let tokens = w[..seq_len].iter().map(|&b| b as usize).collect();
    let targets = w[1..].iter().map(|&b| b as usize).collect();
    Example::new(tokens, Targets::Tokens(targets))
}

/// `n` evenly spaced next-byte windows over `data`.
pub fn fixed_windows(data: &[u8], seq_len: usize, n: usize) -> Vec<Example> {
    let span = data.len() - seq_len - 1;
    (0..n).map(|i| window(data, i * span / n.max(1), seq_len)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub seeds: Vec<u64>,
    /// Read this corpus instead of generating one.
    pub corpus: Option<PathBuf>,
    pub corpus_seed: u64,
    pub corpus_bytes: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub seq_len: usize,
    pub train: TrainConfig,
    pub eval_windows: usize,
    /// Leading steps over which the two arms' training losses are compared.
    pub curve_steps: usize,
    pub curve_tol: f64,
    pub drift_tol: f64,
    pub alpha: f64,
    /// Save each with-key-bias model here as `lm-seed{seed}.abl`.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            corpus: None,
            corpus_seed: 11,
            corpus_bytes: 120_000,
            d_model: 64,
            n_heads: 4,
            n_layers: 4,
            seq_len: 32,
            train: TrainConfig {
                steps: 2000,
                batch_size: 4,
                lr: 1e-3,
            },
            eval_windows: 64,
            curve_steps: 10,
            curve_tol: 1e-6,
            drift_tol: 1e-6,
            alpha: 0.05,
            checkpoint_dir: None,
        }
    }
}

impl LmConfig {
    pub fn model_config(&self, form: AttnForm) -> ModelConfig {
        ModelConfig::causal_lm(self.d_model, self.n_heads, self.n_layers, self.seq_len).with_form(form)
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        match &self.corpus {
            Some(p) => Corpus::load(p),
            None => Corpus::new(synthetic_corpus(self.corpus_seed, self.corpus_bytes), Path::new("<synthetic>")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    WithBk,
    WithoutBk,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::WithBk => "with b_k",
            Arm::WithoutBk => "without b_k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed: u64,
    pub initial_test_loss: f64,
    pub final_test_loss: f64,
    pub train_losses: Vec<f64>,
    /// Largest entry-wise change of any key bias; zero for the arm without
    /// key bias, whose key biases are frozen and unread.
    pub bk_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub runs: Vec<ArmRun>,
    pub test: WelchTest,
    /// Per seed, the largest training-loss gap between the arms over the
    /// first `curve_steps` steps.
    pub curve_gaps: Vec<(u64, f64)>,
}

impl AblationReport {
    pub fn final_losses(&self, arm: Arm) -> Vec<f64> {
        self.runs.iter().filter(|r| r.arm == arm).map(|r| r.final_test_loss).collect()
    }

    pub fn max_bk_drift(&self) -> f64 {
        self.runs.iter().filter(|r| r.arm == Arm::WithBk).map(|r| r.bk_drift).fold(0.0, f64::max)
    }

    pub fn max_curve_gap(&self) -> f64 {
        self.curve_gaps.iter().map(|g| g.1).fold(0.0, f64::max)
    }
}

fn max_bias_change(before: &Model, after: &Model) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for name in before.names().filter(|n| BiasTarget::Key.matches(n)) {
        worst = worst.max(before.param(name)?.sub(after.param(name)?)?.max_norm());
    }
    Ok(worst)
}

/// Trains one arm from `seed`. Both arms share the initialization and the
/// batch order for a given seed.
pub fn train_arm(cfg: &LmConfig, corpus: &Corpus, arm: Arm, seed: u64) -> Result<(Model, ArmRun)> {
    let form = match arm {
        Arm::WithBk => AttnForm::Full,
        Arm::WithoutBk => AttnForm::Reduced,
    };
    let mut model = init_model(&cfg.model_config(form), seed)?;
    if arm == Arm::WithoutBk {
        model.freeze_where(|n| BiasTarget::Key.matches(n));
    }
    let initial = model.clone();
    let test_set = fixed_windows(corpus.test(), cfg.seq_len, cfg.eval_windows);
    let initial_test_loss = loss(&model, &test_set)?;
    let data = corpus.train();
    let seq_len = cfg.seq_len;
    let mut rng = Rng::new(seed ^ 0xba7c_4e5d);
    let train_losses = train(&mut model, &cfg.train, &mut rng, |r, n| {
        (0..n).map(|_| window(data, r.below(data.len() - seq_len - 1), seq_len)).collect()
    })?;
    let final_test_loss = loss(&model, &test_set)?;
    let bk_drift = max_bias_change(&initial, &model)?;
    let run = ArmRun {
        arm,
        seed,
        initial_test_loss,
        final_test_loss,
        train_losses,
        bk_drift,
    };
    Ok((model, run))
}

/// Runs both arms for every seed and tests the final test losses for a
/// difference in means.
pub fn run_lm_ablation(cfg: &LmConfig) -> Result<AblationReport> {
    if cfg.seeds.len() < 2 {
        return Err(Error::Config("the ablation needs at least two seeds per arm".into()));
    }
    let corpus = cfg.load_corpus()?;
    let jobs: Vec<(u64, Arm)> = cfg.seeds.iter().flat_map(|&s| [(s, Arm::WithBk), (s, Arm::WithoutBk)]).collect();
    let results: Vec<(Model, ArmRun)> = jobs
        .par_iter()
        .map(|&(seed, arm)| train_arm(cfg, &corpus, arm, seed))
        .collect::<Result<_>>()?;
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (model, run) in results.iter().filter(|(_, r)| r.arm == Arm::WithBk) {
            save_checkpoint(model, dir.join(format!("lm-seed{}.abl", run.seed)))?;
        }
    }
    let runs: Vec<ArmRun> = results.into_iter().map(|(_, r)| r).collect();
    let curve_gaps = runs
        .chunks(2)
        .map(|pair| {
            let n = cfg.curve_steps.min(pair[0].train_losses.len());
            let gap = (0..n)
                .map(|i| (pair[0].train_losses[i] - pair[1].train_losses[i]).abs())
                .fold(0.0, f64::max);
            (pair[0].seed, gap)
        })
        .collect();
    let with: Vec<f64> = runs.iter().filter(|r| r.arm == Arm::WithBk).map(|r| r.final_test_loss).collect();
    let without: Vec<f64> = runs.iter().filter(|r| r.arm == Arm::WithoutBk).map(|r| r.final_test_loss).collect();
    let test = welch_t_test(&with, &without)?;
    Ok(AblationReport { runs, test, curve_gaps })
}

pub fn lm_ablation_report(cfg: &LmConfig) -> Result<Report> {
    let r = run_lm_ablation(cfg)?;
    let mut t = Table::new(["arm", "seed", "initial_test_loss", "final_test_loss", "bk_drift", "curve_gap"]);
    for run in &r.runs {
        let gap = r.curve_gaps.iter().find(|g| g.0 == run.seed).map_or(0.0, |g| g.1);
        t.push([
            run.arm.label().to_string(),
            run.seed.to_string(),
            fmt_num(run.initial_test_loss),
            fmt_num(run.final_test_loss),
            fmt_num(run.bk_drift),
            fmt_num(gap),
        ]);
    }
    let mut layout = Table::new(["model", "mean final test loss", "runs"]);
    for arm in [Arm::WithBk, Arm::WithoutBk] {
        let xs = r.final_losses(arm);
        layout.push([arm.label().to_string(), fmt_num(super::stats::mean(&xs)), xs.len().to_string()]);
    }
    let mut rep = Report::new(
        "train-lm",
        "Language-model training with and without the key bias",
        "from-scratch pre-training ablation table (mean over seeds, t-test)",
        cfg,
        cfg.seeds.clone(),
        t,
    )?;
    rep.layout = Some(layout);
    let significant = r.test.significant(cfg.alpha);
    rep.summarize("Welch t", fmt_num(r.test.t));
    rep.summarize("degrees of freedom", fmt_num(r.test.df));
    rep.summarize("two-tailed p", fmt_num(r.test.p));
    rep.summarize(
        &format!("difference significant at p <= {}", cfg.alpha),
        if significant { "yes" } else { "no" },
    );
    rep.summarize("max b_k drift (with b_k)", fmt_num(r.max_bk_drift()));
    rep.summarize(
        &format!("max training-loss gap over first {} steps", cfg.curve_steps),
        fmt_num(r.max_curve_gap()),
    );
    rep.passed = !significant && r.max_bk_drift() <= cfg.drift_tol && r.max_curve_gap() <= cfg.curve_tol;
    Ok(rep)
}
