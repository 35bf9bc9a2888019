//! Synthetic sequence classification and the classifier bias-mutation
//! experiment.
//!
//! Each example is a CLS token (byte 0) followed by `content_len` bytes
//! drawn from a small alphabet. The label is a function of how many times
//! the marker byte occurs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{fmt_num, Report, Table};
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::grad::{Example, Targets};
use crate::linalg::Rng;
use crate::model::{apply_mutation, forward, init_model, BiasFill, BiasTarget, Model, ModelConfig, MutationSpec};

pub const CLS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Marker count is odd.
    Parity,
    /// Marker count exceeds half the content length.
    Majority,
    /// Marker count is at least `count`.
    AtLeast { count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerTask {
    pub content_len: usize,
    pub marker: u8,
    /// Bytes drawn for content; each position is the marker with
    /// probability one half, otherwise a uniform non-marker byte from here.
    pub alphabet: Vec<u8>,
    pub rule: LabelRule,
}

impl Default for MarkerTask {
    fn default() -> Self {
        Self {
            content_len: 7,
            marker: 0x41,
            alphabet: b"BCDEFGHIJKLMNOP".to_vec(),
            rule: LabelRule::Majority,
        }
    }
}

impl MarkerTask {
    pub fn describe(&self) -> String {
        let rule = match self.rule {
            LabelRule::Parity => "parity".to_string(),
            LabelRule::Majority => "majority".to_string(),
            LabelRule::AtLeast { count } => format!("at least {count}"),
        };
        format!("{rule} of 0x{:02X} over {} bytes", self.marker, self.content_len)
    }

    pub fn seq_len(&self) -> usize {
        self.content_len + 1
    }

    pub fn label(&self, tokens: &[usize]) -> usize {
        let count = tokens.iter().skip(1).filter(|&&t| t == self.marker as usize).count();
        match self.rule {
            LabelRule::Parity => count % 2,
            LabelRule::Majority => usize::from(2 * count > self.content_len),
            LabelRule::AtLeast { count: k } => usize::from(count >= k),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Example {
        let mut tokens = Vec::with_capacity(self.seq_len());
        tokens.push(CLS);
        for _ in 0..self.content_len {
            let t = if rng.below(2) == 0 {
                self.marker
            } else {
                self.alphabet[rng.below(self.alphabet.len())]
            };
            tokens.push(t as usize);
        }
        let label = self.label(&tokens);
        Example::new(tokens, Targets::Class(label))
    }

    pub fn dataset(&self, seed: u64, n: usize) -> Vec<Example> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.content_len == 0 || self.alphabet.is_empty() || self.alphabet.contains(&self.marker) || self.alphabet.contains(&0) {
            return Err(Error::Config(
                "task needs content_len > 0 and a non-empty alphabet without the marker or byte 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub seed: u64,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub task: MarkerTask,
    pub train: TrainConfig,
    pub n_eval: usize,
    pub eval_seed: u64,
    /// Training must reach this eval accuracy or the run fails.
    pub min_accuracy: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            task: MarkerTask::default(),
            train: TrainConfig {
                steps: 400,
                batch_size: 32,
                lr: 3e-3,
            },
            n_eval: 1000,
            eval_seed: 1_000_003,
            min_accuracy: 0.95,
        }
    }
}

impl ClassifierConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::classifier(self.d_model, self.n_heads, self.n_layers, self.task.seq_len(), 2)
    }

    pub fn eval_set(&self) -> Vec<Example> {
        self.task.dataset(self.eval_seed, self.n_eval)
    }
}

/// Predictions, accuracy and top-2 logit margins on a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub margins: Vec<f64>,
    pub accuracy: f64,
}

pub fn evaluate(model: &Model, data: &[Example]) -> Result<Evaluation> {
    let scored: Vec<(usize, f64, bool)> = data
        .par_iter()
        .map(|ex| {
            let logits = forward(model, &ex.tokens)?;
            let mut order: Vec<usize> = (0..logits.rows()).collect();
            order.sort_by(|&a, &b| logits.get(b, 0).total_cmp(&logits.get(a, 0)).then(a.cmp(&b)));
            let margin = logits.get(order[0], 0) - logits.get(order[1], 0);
            let correct = ex.targets == Targets::Class(order[0]);
            Ok((order[0], margin, correct))
        })
        .collect::<Result<_>>()?;
    let correct = scored.iter().filter(|s| s.2).count();
    Ok(Evaluation {
        predictions: scored.iter().map(|s| s.0).collect(),
        margins: scored.iter().map(|s| s.1).collect(),
        accuracy: correct as f64 / data.len().max(1) as f64,
    })
}

/// Trains the synthetic classifier from scratch; fails unless the eval
/// accuracy reaches `cfg.min_accuracy`.
pub fn train_classifier(cfg: &ClassifierConfig) -> Result<(Model, Evaluation)> {
    cfg.task.validate()?;
    let mut model = init_model(&cfg.model_config(), cfg.seed)?;
    let mut rng = Rng::new(cfg.seed.wrapping_add(0x7261_696e));
    let task = cfg.task.clone();
    train(&mut model, &cfg.train, &mut rng, |r, n| (0..n).map(|_| task.sample(r)).collect())?;
    let eval = evaluate(&model, &cfg.eval_set())?;
    if eval.accuracy < cfg.min_accuracy {
        return Err(Error::Training(format!(
            "classifier reached {:.4} eval accuracy, below the {:.2} gate",
            eval.accuracy, cfg.min_accuracy
        )));
    }
    Ok((model, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierMutationConfig {
    pub classifier: ClassifierConfig,
    pub targets: Vec<BiasTarget>,
    pub fill: BiasFill,
    pub mutation_seeds: Vec<u64>,
    /// Predictions whose top-2 margin exceeds this must survive a key-bias
    /// mutation.
    pub margin: f64,
    /// Required drop of the mean value-bias accuracy over mutation seeds.
    pub min_value_drop: f64,
}

impl Default for ClassifierMutationConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            targets: BiasTarget::ALL.to_vec(),
            fill: BiasFill::Uniform,
            mutation_seeds: (0..5).collect(),
            margin: 1e-6,
            min_value_drop: 0.20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MutationOutcome {
    pub target: BiasTarget,
    pub seed: u64,
    pub accuracy: f64,
    /// Predictions that flipped although the unmutated margin exceeded the
    /// configured threshold.
    pub confident_flips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierMutationResult {
    pub base_accuracy: f64,
    pub outcomes: Vec<MutationOutcome>,
}

impl ClassifierMutationResult {
    pub fn mean_accuracy(&self, target: BiasTarget) -> Option<f64> {
        let xs: Vec<f64> = self.outcomes.iter().filter(|o| o.target == target).map(|o| o.accuracy).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// Key-bias mutations leave every confident prediction and the
    /// accuracy unchanged.
    pub fn key_bias_invariant(&self) -> bool {
        self.outcomes
            .iter()
            .filter(|o| o.target == BiasTarget::Key)
            .all(|o| o.confident_flips == 0 && o.accuracy == self.base_accuracy)
    }

    /// Mean query-bias accuracy lies strictly between the key- and
    /// value-bias means.
    pub fn query_between(&self) -> Option<bool> {
        let (k, q, v) = (
            self.mean_accuracy(BiasTarget::Key)?,
            self.mean_accuracy(BiasTarget::Query)?,
            self.mean_accuracy(BiasTarget::Value)?,
        );
        Some(v < q && q < k)
    }
}

/// Mutates a trained classifier and re-evaluates it.
pub fn mutate_classifier(
    model: &Model,
    eval_set: &[Example],
    targets: &[BiasTarget],
    fill: BiasFill,
    seeds: &[u64],
    margin: f64,
) -> Result<ClassifierMutationResult> {
    let base = evaluate(model, eval_set)?;
    let mut outcomes = Vec::new();
    for &target in targets {
        for &seed in seeds {
            let mutated = apply_mutation(model, &MutationSpec::new(target, fill, seed))?;
            let e = evaluate(&mutated, eval_set)?;
            let confident_flips = (0..eval_set.len())
                .filter(|&i| base.margins[i] > margin && base.predictions[i] != e.predictions[i])
                .count();
            outcomes.push(MutationOutcome {
                target,
                seed,
                accuracy: e.accuracy,
                confident_flips,
            });
        }
    }
    Ok(ClassifierMutationResult {
        base_accuracy: base.accuracy,
        outcomes,
    })
}

/// Trains the classifier, then applies every configured mutation.
pub fn run_classifier_mutation(cfg: &ClassifierMutationConfig) -> Result<ClassifierMutationResult> {
    let (model, _) = train_classifier(&cfg.classifier)?;
    mutate_classifier(&model, &cfg.classifier.eval_set(), &cfg.targets, cfg.fill, &cfg.mutation_seeds, cfg.margin)
}

pub fn classifier_mutation_report(cfg: &ClassifierMutationConfig) -> Result<Report> {
    let r = run_classifier_mutation(cfg)?;
    let mut t = Table::new(["target", "fill", "seed", "accuracy", "delta", "confident_flips"]);
    t.push([
        "none".to_string(),
        "-".into(),
        "-".into(),
        fmt_num(r.base_accuracy),
        "0".into(),
        "0".into(),
    ]);
    for o in &r.outcomes {
        t.push([
            o.target.to_string(),
            cfg.fill.label().to_string(),
            o.seed.to_string(),
            fmt_num(o.accuracy),
            fmt_num(o.accuracy - r.base_accuracy),
            o.confident_flips.to_string(),
        ]);
    }
    let mut columns = vec!["task".to_string(), "unmutated".to_string()];
    columns.extend(cfg.targets.iter().map(|t| format!("{t} <- {}", cfg.fill.label())));
    let mut layout = Table::new(columns);
    let mut row = vec![cfg.classifier.task.describe(), fmt_num(r.base_accuracy)];
    row.extend(cfg.targets.iter().map(|&t| r.mean_accuracy(t).map_or("-".into(), fmt_num)));
    layout.push(row);

    let mut seeds = vec![cfg.classifier.seed, cfg.classifier.eval_seed];
    seeds.extend(&cfg.mutation_seeds);
    let mut rep = Report::new(
        "classify-mutate",
        "Classifier accuracy under bias mutation",
        "trained-classifier corruption table (accuracy before and after overwriting one bias)",
        cfg,
        seeds,
        t,
    )?;
    rep.layout = Some(layout);
    rep.summarize("eval accuracy before mutation", fmt_num(r.base_accuracy));
    let mut passed = true;
    if cfg.targets.contains(&BiasTarget::Key) {
        let ok = r.key_bias_invariant();
        passed &= ok;
        rep.summarize("b_k predictions unchanged", if ok { "yes" } else { "no" });
    }
    if let Some(v) = r.mean_accuracy(BiasTarget::Value) {
        let drop = r.base_accuracy - v;
        let smallest = r
            .outcomes
            .iter()
            .filter(|o| o.target == BiasTarget::Value)
            .map(|o| r.base_accuracy - o.accuracy)
            .fold(f64::INFINITY, f64::min);
        passed &= drop >= cfg.min_value_drop;
        rep.summarize("mean b_v accuracy drop", fmt_num(drop));
        rep.summarize("smallest single-draw b_v accuracy drop", fmt_num(smallest));
    }
    if let Some(between) = r.query_between() {
        rep.summarize("mean b_q accuracy strictly between b_k and b_v", if between { "yes" } else { "no" });
        rep.note("The b_q ordering is reported for comparison only; it is not a pass criterion.");
    }
    rep.passed = passed;
    Ok(rep)
}
