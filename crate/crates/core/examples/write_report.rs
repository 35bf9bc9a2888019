//! Runs a short equivalence sweep and writes it as markdown and as CSV with
//! its metadata sidecar.

use attnbias::cli::{write_report, Format};
use attnbias::experiments::{equivalence_report, EquivalenceConfig};

fn main() -> attnbias::Result<()> {
    let cfg = EquivalenceConfig {
        trials: 100,
        ..Default::default()
    };
    let report = equivalence_report(&cfg)?;
    let out = std::env::temp_dir().join("attnbias-reports");
    for format in [Format::Md, Format::Csv] {
        println!("wrote {}", write_report(&report, &out, format)?.display());
    }
    print!("{}", report.table.to_csv()?);
    Ok(())
}
