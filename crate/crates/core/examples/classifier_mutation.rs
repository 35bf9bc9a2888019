//! Trains a small encoder classifier, then overwrites its biases with
//! U[-5,5] values and re-evaluates.

use attnbias::experiments::{run_classifier_mutation, ClassifierMutationConfig};
use attnbias::model::BiasTarget;

fn main() -> attnbias::Result<()> {
    let cfg = ClassifierMutationConfig::default();
    println!("task: {}", cfg.classifier.task.describe());
    let r = run_classifier_mutation(&cfg)?;
    println!("unmutated accuracy: {:.4}", r.base_accuracy);
    for t in BiasTarget::ALL {
        println!("{t} <- U[-5,5]: mean accuracy {:.4}", r.mean_accuracy(t).unwrap_or(f64::NAN));
    }
    println!("key bias changed no confident prediction: {}", r.key_bias_invariant());
    Ok(())
}
