//! Bias-only fine-tuning of a pre-trained classifier, with the key biases
//! tuned and frozen.

use attnbias::experiments::{compare_bitfit, BitfitConfig};

fn main() -> attnbias::Result<()> {
    let cfg = BitfitConfig {
        seeds: vec![0, 1, 2],
        ..Default::default()
    };
    println!("fine-tuning task: {}", cfg.task.describe());
    let c = compare_bitfit(&cfg)?;
    println!("trainable, b_k tuned:  {}", c.tuned_bk.trainable);
    println!("trainable, b_k frozen: {}", c.frozen_bk.trainable);
    println!("trainable, head only:  {}", c.head_only);
    println!("accuracy, b_k tuned:  {:?}", c.tuned_bk.accuracies);
    println!("accuracy, b_k frozen: {:?}", c.frozen_bk.accuracies);
    println!("Welch p = {:.3}", c.test.p);
    Ok(())
}
