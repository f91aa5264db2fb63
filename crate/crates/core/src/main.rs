use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nslab::harness::{default_spec, run_experiment, ExperimentSpec};

#[derive(Parser)]
#[command(name = "nslab", version, about = "Navier-Stokes weak-Lebesgue laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weak and Banach-envelope norms of the example profiles
    Norm(Common),
    /// Heat-semigroup smoothing exponents
    SemigroupRate(Common),
    /// One Picard scheme with its norm ledger
    Picard(Common),
    /// Strong-continuity membership sweeps over the example catalogue
    Xsigma(Common),
    /// Residual of the differential form of the equation
    VerifyStrong(Common),
    /// Cross-scheme agreement and continuation
    Uniqueness(Common),
    /// Small-time decay of the weighted r-norm
    Brezis(Common),
    /// Horizon-uniform Duhamel estimate ratios
    CriticalConstants(Common),
    /// A list of experiments run in order
    Suite(Common),
}

#[derive(Args)]
struct Common {
    /// JSON manifest; defaults to a desk-scale manifest for the subcommand
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized probe families
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Norm(c) => ("norm", c),
            Command::SemigroupRate(c) => ("semigroup-rate", c),
            Command::Picard(c) => ("picard", c),
            Command::Xsigma(c) => ("xsigma", c),
            Command::VerifyStrong(c) => ("verify-strong", c),
            Command::Uniqueness(c) => ("uniqueness", c),
            Command::Brezis(c) => ("brezis", c),
            Command::CriticalConstants(c) => ("critical-constants", c),
            Command::Suite(c) => ("suite", c),
        }
    }
}

fn load(kind: &str, c: &Common) -> Result<ExperimentSpec, String> {
    let mut spec = match &c.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let spec = ExperimentSpec::from_json(&text).map_err(|e| e.to_string())?;
            if spec.experiment.kind() != kind {
                return Err(format!("manifest describes `{}`, not `{kind}`", spec.experiment.kind()));
            }
            spec
        }
        None => default_spec(kind, c.seed.unwrap_or(0)).map_err(|e| e.to_string())?,
    };
    if let Some(seed) = c.seed {
        spec.seed = seed;
    }
    if let Some(out) = &c.out {
        spec.out = Some(out.clone());
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = cli.command.parts();
    let spec = match load(kind, common) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("invalid manifest: {e}");
            return ExitCode::from(3);
        }
    };
    let out = spec.out.clone().unwrap_or_else(|| PathBuf::from("out").join(kind));
    let code = run_experiment(&spec, &out);
    if let Ok(summary) = std::fs::read_to_string(out.join("summary.txt")) {
        print!("{summary}");
    }
    ExitCode::from(code as u8)
}
