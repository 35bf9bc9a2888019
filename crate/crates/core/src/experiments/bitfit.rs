//! Bias-only fine-tuning of a pre-trained classifier, with and without the
//! key biases frozen.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::classifier::{evaluate, train_classifier, ClassifierConfig, LabelRule, MarkerTask};
use super::report::{fmt_num, Report, Table};
use super::stats::{welch_t_test, WelchTest};
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::{sample_normal, Rng};
use crate::model::{count_params, load_checkpoint, Model, ModelKind, INIT_STD};
use crate::paramcount::apply_bitfit_mask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BitfitConfig {
    /// Pre-trained classifier; trained from `pretrain` when absent.
    pub checkpoint: Option<PathBuf>,
    pub pretrain: ClassifierConfig,
    /// Downstream task. The default counts a byte the pre-trained model never
    /// saw as a marker, so bias-only tuning does not saturate.
    pub task: MarkerTask,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub n_eval: usize,
    pub eval_seed: u64,
    pub alpha: f64,
}

impl Default for BitfitConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            pretrain: ClassifierConfig::default(),
            task: MarkerTask {
                marker: 0x51,
                rule: LabelRule::AtLeast { count: 3 },
                ..MarkerTask::default()
            },
            seeds: (0..5).collect(),
            train: TrainConfig {
                steps: 300,
                batch_size: 32,
                lr: 1e-2,
            },
            n_eval: 1000,
            eval_seed: 2_000_003,
            alpha: 0.05,
        }
    }
}

impl BitfitConfig {
    pub fn pretrained(&self) -> Result<Model> {
        let model = match &self.checkpoint {
            Some(p) => load_checkpoint(p)?,
            None => train_classifier(&self.pretrain)?.0,
        };
        if model.config.kind != ModelKind::EncoderClassifier {
            return Err(Error::Config("bias-only fine-tuning needs a classifier checkpoint".into()));
        }
        if model.config.max_seq < self.task.seq_len() {
            return Err(Error::Config(format!(
                "checkpoint max_seq {} is shorter than the task's {} tokens",
                model.config.max_seq,
                self.task.seq_len()
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BitfitRun {
    pub freeze_bk: bool,
    pub trainable: usize,
    /// Eval accuracy per seed, in seed order.
    pub accuracies: Vec<f64>,
}

/// Fine-tunes copies of `pretrained` on `cfg.task`, one per seed, training
/// only biases and the classifier head (whose output layer is re-drawn from
/// the seed). With `freeze_bk` the key biases are frozen as well.
pub fn run_bitfit(cfg: &BitfitConfig, pretrained: &Model, freeze_bk: bool) -> Result<BitfitRun> {
    cfg.task.validate()?;
    let eval_set = cfg.task.dataset(cfg.eval_seed, cfg.n_eval);
    let mut accuracies = Vec::with_capacity(cfg.seeds.len());
    let mut trainable = 0;
    for &seed in &cfg.seeds {
        let mut model = pretrained.clone();
        let mut rng = Rng::new(seed);
        let (r, c) = model.param("head.w")?.shape();
        model.set_param("head.w", sample_normal(&mut rng, INIT_STD, r, c))?;
        model.set_param("head.b", crate::linalg::Matrix::zeros(r, 1))?;
        apply_bitfit_mask(&mut model, freeze_bk, true);
        trainable = count_params(&model, true).total;
        let task = cfg.task.clone();
        train(&mut model, &cfg.train, &mut rng, |r, n| (0..n).map(|_| task.sample(r)).collect())?;
        accuracies.push(evaluate(&model, &eval_set)?.accuracy);
    }
    Ok(BitfitRun {
        freeze_bk,
        trainable,
        accuracies,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BitfitComparison {
    pub tuned_bk: BitfitRun,
    pub frozen_bk: BitfitRun,
    /// Trainable entries when every bias is frozen (classifier head only).
    pub head_only: usize,
    pub test: WelchTest,
    pub n_layers: usize,
    pub d_model: usize,
}

impl BitfitComparison {
    pub fn count_drop_matches(&self) -> bool {
        self.tuned_bk.trainable - self.frozen_bk.trainable == self.n_layers * self.d_model
    }
}

pub fn compare_bitfit(cfg: &BitfitConfig) -> Result<BitfitComparison> {
    let pretrained = cfg.pretrained()?;
    let tuned_bk = run_bitfit(cfg, &pretrained, false)?;
    let frozen_bk = run_bitfit(cfg, &pretrained, true)?;
    let mut head = pretrained.clone();
    apply_bitfit_mask(&mut head, true, false);
    let test = welch_t_test(&tuned_bk.accuracies, &frozen_bk.accuracies)?;
    Ok(BitfitComparison {
        tuned_bk,
        frozen_bk,
        head_only: count_params(&head, true).total,
        test,
        n_layers: pretrained.config.n_layers,
        d_model: pretrained.config.d_model,
    })
}

pub fn bitfit_report(cfg: &BitfitConfig) -> Result<Report> {
    let c = compare_bitfit(cfg)?;
    let mut t = Table::new(["b_k", "seed", "eval_accuracy", "trainable_params"]);
    for run in [&c.tuned_bk, &c.frozen_bk] {
        for (seed, acc) in cfg.seeds.iter().zip(&run.accuracies) {
            t.push([
                if run.freeze_bk { "frozen" } else { "tuned" }.to_string(),
                seed.to_string(),
                fmt_num(*acc),
                run.trainable.to_string(),
            ]);
        }
    }
    let mut layout = Table::new(["setting", "trainable params", "mean eval accuracy"]);
    for (label, run) in [("bias-only", &c.tuned_bk), ("bias-only, b_k frozen", &c.frozen_bk)] {
        layout.push([
            label.to_string(),
            run.trainable.to_string(),
            fmt_num(super::stats::mean(&run.accuracies)),
        ]);
    }
    let mut seeds = vec![cfg.pretrain.seed, cfg.eval_seed];
    seeds.extend(&cfg.seeds);
    let mut rep = Report::new(
        "bitfit",
        "Bias-only fine-tuning with and without key biases",
        "bias-only fine-tuning tables (trainable parameters and task metric)",
        cfg,
        seeds,
        t,
    )?;
    rep.layout = Some(layout);
    rep.summarize("downstream task", cfg.task.describe());
    rep.summarize("trainable params saved by freezing b_k", (c.tuned_bk.trainable - c.frozen_bk.trainable).to_string());
    rep.summarize("trainable params with all biases frozen (head only)", c.head_only.to_string());
    rep.summarize("Welch t", fmt_num(c.test.t));
    rep.summarize("two-tailed p", fmt_num(c.test.p));
    let significant = c.test.significant(cfg.alpha);
    rep.summarize(
        &format!("difference significant at p <= {}", cfg.alpha),
        if significant { "yes" } else { "no" },
    );
    rep.passed = !significant && c.count_drop_matches();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::mutation::pretrained_like;

    fn quick() -> BitfitConfig {
        BitfitConfig {
            seeds: vec![0, 1],
            train: TrainConfig {
                steps: 5,
                batch_size: 4,
                lr: 1e-2,
            },
            n_eval: 50,
            ..Default::default()
        }
    }

    #[test]
    fn freezing_key_bias_removes_layers_times_width() {
        let cfg = quick();
        let model = pretrained_like(&cfg.pretrain.model_config(), 1, Default::default()).unwrap();
        let tuned = run_bitfit(&cfg, &model, false).unwrap();
        let frozen = run_bitfit(&cfg, &model, true).unwrap();
        assert_eq!(tuned.trainable - frozen.trainable, model.config.n_layers * model.config.d_model);
        assert_eq!(tuned.accuracies.len(), 2);
        // Key-bias gradients are rounding-level, so both settings predict alike.
        assert_eq!(tuned.accuracies, frozen.accuracies);
    }

    #[test]
    fn lm_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.abl");
        let lm = crate::model::init_model(&crate::model::ModelConfig::causal_lm(8, 2, 1, 8), 0).unwrap();
        crate::model::save_checkpoint(&lm, &path).unwrap();
        let cfg = BitfitConfig {
            checkpoint: Some(path),
            ..quick()
        };
        assert!(matches!(cfg.pretrained(), Err(Error::Config(_))));
    }
}
