//! Backprop against central differences on a tiny language model, and the
//! size of the key-bias gradient next to the other biases.

use attnbias::experiments::mutation::{pretrained_like, PretrainedLike};
use attnbias::grad::{backward_batch, finite_diff_grad_batch, relative_error, Example, Targets};
use attnbias::model::{BiasTarget, ModelConfig};

fn main() -> attnbias::Result<()> {
    let mut cfg = ModelConfig::causal_lm(16, 4, 2, 8);
    cfg.vocab_size = 32;
    let model = pretrained_like(&cfg, 0, PretrainedLike::default())?;
    let batch = vec![
        Example::new(vec![3, 1, 4, 1, 5, 9], Targets::Tokens(vec![1, 4, 1, 5, 9, 2])),
        Example::new(vec![2, 7, 1, 8], Targets::Tokens(vec![7, 1, 8, 2])),
    ];

    let (loss, grads) = backward_batch(&model, &batch)?;
    println!("loss = {loss:.6}");
    for name in ["layer0.self_attn.w_q", "layer1.ffn.b1", "head.w", "embed.pos"] {
        let fd = finite_diff_grad_batch(&model, &batch, name, 1e-5)?;
        let err = relative_error(grads.get(name).expect("trainable"), &fd, 1e-9)?;
        println!("{name:<22} relative error {err:.3e}");
    }
    for target in BiasTarget::ALL {
        println!("max |dL/d{target}| = {:.3e}", grads.max_norm_where(|n| target.matches(n)));
    }
    Ok(())
}
