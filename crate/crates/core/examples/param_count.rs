//! Bias-parameter inventory for the named presets and a custom decoder.

use attnbias::experiments::report::fmt_pct;
use attnbias::paramcount::{bias_inventory, bk_savings, preset, ArchSpec, Family, PRESETS};

fn show(label: &str, arch: &ArchSpec) -> attnbias::Result<()> {
    let inv = bias_inventory(arch)?;
    println!("{label}: {} trainable, {} key-bias entries, share {}", inv.total, inv.key_bias, fmt_pct(bk_savings(arch)?));
    for g in &inv.groups {
        println!("  {:<24} {:>8}", g.name, g.count);
    }
    Ok(())
}

fn main() -> attnbias::Result<()> {
    for name in PRESETS {
        show(name, &preset(name)?)?;
    }
    let decoder = ArchSpec::new(Family::DecoderOnly, 768, 0, 12).with_model_layer_norms(1);
    show("decoder-only d=768 x12", &decoder)
}
