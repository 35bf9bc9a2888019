//! Command-line front end. Each subcommand resolves its config (defaults,
//! then `--config`, then flags), runs one experiment and writes its report.
//!
//! Exit codes: 0 when the run's criteria hold, 1 when an experiment fails
//! its criteria or training misses its gate, 2 for usage, config and input
//! errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::experiments::report::{fmt_pct, Report, Table};
use crate::experiments::{
    bitfit_report, classifier_mutation_report, equivalence_report, gradcheck_report, lm_ablation_report, mutation_report,
    BitfitConfig, ClassifierMutationConfig, EquivalenceConfig, GradcheckConfig, LmConfig, MutationConfig,
};
use crate::model::Precision;
use crate::paramcount::{bias_inventory, bk_savings, preset, ArchSpec, Family, PRESETS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "attnbias", version, about = "Attention bias experiments and bias-parameter accounting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Md,
    Csv,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Overrides the config's seed (or first seed of a seed list).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for report files.
    #[arg(long, global = true, default_value = "reports")]
    pub out: PathBuf,
    /// JSON config for the subcommand; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Forward precision (mutate only).
    #[arg(long, global = true, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    #[arg(long, global = true, value_enum, default_value = "md")]
    pub format: Format,
    /// Worker threads for seeds and trials.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random-instance check that the three attention forms agree.
    Equivalence {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Output tolerance after overwriting q/k/v biases of a model.
    Mutate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy of a trained classifier after overwriting its biases.
    ClassifyMutate,
    /// Analytic gradients against finite differences.
    Gradcheck,
    /// Byte-level LM trained with and without key biases.
    TrainLm {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
    },
    /// Bias-only fine-tuning with and without frozen key biases.
    Bitfit {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Bias-parameter inventory and key-bias share of an architecture.
    Count(CountArgs),
}

#[derive(Debug, Args)]
pub struct CountArgs {
    /// One of encdec-large, enc-base, enc-large.
    #[arg(long, conflicts_with_all = ["family", "d_model"])]
    pub preset: Option<String>,
    #[arg(long, requires = "d_model")]
    pub family: Option<Family>,
    #[arg(long, requires = "family")]
    pub d_model: Option<usize>,
    /// FFN width; defaults to 4·d_model.
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub enc_layers: usize,
    #[arg(long, default_value_t = 0)]
    pub dec_layers: usize,
    /// Adds a classifier head with this many labels.
    #[arg(long)]
    pub labels: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub model_layer_norms: usize,
}

impl CountArgs {
    pub fn arch(&self) -> Result<ArchSpec> {
        if let Some(name) = &self.preset {
            return preset(name);
        }
        let (Some(family), Some(d)) = (self.family, self.d_model) else {
            return Err(Error::Config(format!(
                "count needs --preset ({}) or --family with --d-model",
                PRESETS.join(", ")
            )));
        };
        let mut a = ArchSpec::new(family, d, self.enc_layers, self.dec_layers).with_model_layer_norms(self.model_layer_norms);
        if let Some(ff) = self.d_ff {
            a.d_ff = ff;
        }
        if let Some(n) = self.labels {
            a = a.with_classifier_head(n);
        }
        a.validate()?;
        Ok(a)
    }
}

/// Reads a JSON config, or the defaults when `path` is `None`.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Replaces a seed list by consecutive seeds starting at `first`.
fn reseed(seeds: &mut [u64], first: u64) {
    for (i, s) in seeds.iter_mut().enumerate() {
        *s = first.wrapping_add(i as u64);
    }
}

fn count_report(arch: &ArchSpec) -> Result<Report> {
    let inv = bias_inventory(arch)?;
    let share = bk_savings(arch)?;
    let mut t = Table::new(["group", "trainable", "b_k"]);
    for g in &inv.groups {
        t.push([g.name.clone(), g.count.to_string(), g.key_bias.to_string()]);
    }
    t.push(["total".to_string(), inv.total.to_string(), inv.key_bias.to_string()]);
    let mut rep = Report::new(
        "count",
        "Bias-only trainable parameters and key-bias share",
        "trainable-parameter savings from dropping b_k",
        arch,
        Vec::new(),
        t,
    )?;
    for e in &inv.extras {
        rep.note(format!("{} ({} entries) is tuned but excluded from the total", e.name, e.count));
    }
    rep.summarize("b_k share", fmt_pct(share));
    rep.passed = true;
    Ok(rep)
}

fn run_command(cli: &Cli) -> Result<Report> {
    let g = &cli.global;
    let config = g.config.as_deref();
    if g.precision.is_some() && !matches!(cli.command, Command::Mutate { .. }) {
        return Err(Error::Config("--precision applies only to `mutate`".into()));
    }
    match &cli.command {
        Command::Equivalence { trials } => {
            let mut cfg: EquivalenceConfig = load_config(config)?;
            if let Some(t) = trials {
                cfg.trials = *t;
            }
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            equivalence_report(&cfg)
        }
        Command::Mutate { checkpoint } => {
            let mut cfg: MutationConfig = load_config(config)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            if let Some(p) = g.precision {
                cfg.precisions = vec![p];
            }
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            mutation_report(&cfg)
        }
        Command::ClassifyMutate => {
            let mut cfg: ClassifierMutationConfig = load_config(config)?;
            if let Some(s) = g.seed {
                cfg.classifier.seed = s;
            }
            classifier_mutation_report(&cfg)
        }
        Command::Gradcheck => {
            let mut cfg: GradcheckConfig = load_config(config)?;
            if let Some(s) = g.seed {
                cfg.seed = s;
            }
            gradcheck_report(&cfg)
        }
        Command::TrainLm {
            steps,
            corpus,
            checkpoint_dir,
        } => {
            let mut cfg: LmConfig = load_config(config)?;
            if let Some(s) = g.seed {
                reseed(&mut cfg.seeds, s);
            }
            if let Some(n) = steps {
                cfg.train.steps = *n;
            }
            if corpus.is_some() {
                cfg.corpus = corpus.clone();
            }
            if checkpoint_dir.is_some() {
                cfg.checkpoint_dir = checkpoint_dir.clone();
            }
            lm_ablation_report(&cfg)
        }
        Command::Bitfit { checkpoint } => {
            let mut cfg: BitfitConfig = load_config(config)?;
            if let Some(s) = g.seed {
                reseed(&mut cfg.seeds, s);
            }
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            bitfit_report(&cfg)
        }
        Command::Count(args) => {
            let arch = match config {
                Some(p) if args.preset.is_none() && args.family.is_none() => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    let a: ArchSpec =
                        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    a.validate()?;
                    a
                }
                _ => args.arch()?,
            };
            count_report(&arch)
        }
    }
}

/// Writes the report as `<name>.md`, or `<name>.csv` plus `<name>.meta.json`,
/// returning the primary file.
pub fn write_report(rep: &Report, out: &Path, format: Format) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |path: PathBuf, body: String| -> Result<PathBuf> {
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    match format {
        Format::Md => write(out.join(format!("{}.md", rep.name)), rep.to_markdown()?),
        Format::Csv => {
            write(out.join(format!("{}.meta.json", rep.name)), rep.metadata_json()?)?;
            write(out.join(format!("{}.csv", rep.name)), rep.table.to_csv()?)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Training(_) => EXIT_FAILED,
        Error::Config(_)
        | Error::Io { .. }
        | Error::Checkpoint(_)
        | Error::ConfigMismatch { .. }
        | Error::CorpusTooSmall { .. }
        | Error::UnknownTarget(_) => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code. Report paths and summaries go to stdout,
/// diagnostics and wall-clock time to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    if cli.global.jobs == 0 {
        let _ = writeln!(err, "error: --jobs must be at least 1");
        return EXIT_USAGE;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.global.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let start = Instant::now();
    let result = pool.install(|| run_command(&cli)).and_then(|rep| {
        let path = write_report(&rep, &cli.global.out, cli.global.format)?;
        Ok((rep, path))
    });
    let elapsed = start.elapsed();
    match result {
        Ok((rep, path)) => {
            for (k, v) in &rep.summary {
                let _ = writeln!(out, "{k}: {v}");
            }
            let status = if rep.passed { "pass" } else { "FAIL" };
            let _ = writeln!(out, "{status}: {}", path.display());
            let _ = writeln!(err, "wall-clock: {:.2} s", elapsed.as_secs_f64());
            if rep.passed {
                EXIT_OK
            } else {
                EXIT_FAILED
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
