//! Overwrites q/k/v biases of a small model and reports how far the final
//! hidden states move, at double and single precision.

use attnbias::experiments::{mutation_report, MutationConfig};

fn main() -> attnbias::Result<()> {
    let cfg = MutationConfig {
        n_layers: 4,
        n_inputs: 20,
        max_len: 40,
        max_seq: 40,
        ..Default::default()
    };
    let report = mutation_report(&cfg)?;
    print!("{}", report.to_markdown()?);
    Ok(())
}
