//! A short version of the language-model ablation: the same byte-level LM
//! trained with the key bias and with the reduced, key-bias-free attention.
//! `attnbias train-lm` runs the full 2000-step, three-seed version.

use attnbias::experiments::lm::Arm;
use attnbias::experiments::train::TrainConfig;
use attnbias::experiments::{run_lm_ablation, LmConfig};

fn main() -> attnbias::Result<()> {
    let cfg = LmConfig {
        d_model: 32,
        n_layers: 2,
        train: TrainConfig {
            steps: 150,
            batch_size: 4,
            lr: 2e-3,
        },
        eval_windows: 16,
        ..Default::default()
    };
    let r = run_lm_ablation(&cfg)?;
    for run in &r.runs {
        println!(
            "{:<12} seed {}: test loss {:.4} -> {:.4}",
            run.arm.label(),
            run.seed,
            run.initial_test_loss,
            run.final_test_loss
        );
    }
    println!("with b_k:    {:?}", r.final_losses(Arm::WithBk));
    println!("without b_k: {:?}", r.final_losses(Arm::WithoutBk));
    println!("Welch p = {:.3}, max b_k drift = {:.3e}", r.test.p, r.max_bk_drift());
    Ok(())
}
