//! Evaluates one attention head in all three forms and shows that the key
//! bias drops out.

use attnbias::attention::{attn_bv_extracted, attn_full, attn_reduced, AttentionInput, AttentionParams};
use attnbias::linalg::{sample_uniform, Rng};

fn main() -> attnbias::Result<()> {
    let mut rng = Rng::new(42);
    let (d, n, m) = (8, 12, 3);
    let mut u = |rows, cols| sample_uniform(&mut rng, -2.0, 2.0, rows, cols);
    let params = AttentionParams::new(u(d, d)?, u(d, d)?, u(d, d)?, u(d, 1)?, u(d, 1)?, u(d, 1)?, true)?;
    let input = AttentionInput::new(u(d, m)?, u(d, n)?)?;

    let full = attn_full(&params, &input)?;
    let extracted = attn_bv_extracted(&params, &input)?;
    let reduced = attn_reduced(&params, &input)?;
    println!("output shape: {:?}", full.shape());
    println!("max |full - bv_extracted| = {:.3e}", full.max_abs_diff(&extracted)?);
    println!("max |full - reduced|      = {:.3e}", full.max_abs_diff(&reduced)?);

    // A wildly different key bias leaves the full form unchanged up to rounding.
    let mut moved = params.clone();
    moved.b_k = moved.b_k.map(|v| 100.0 * v + 7.0);
    let shifted = attn_full(&moved, &input)?;
    println!("max |full - full with b_k moved| = {:.3e}", full.max_abs_diff(&shifted)?);
    Ok(())
}
