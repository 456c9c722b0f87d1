use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsssm::config::{Overrides, Precision, RunConfig};
use rsssm::harness;
use rsssm::model::Variant;
use rsssm::Error;

#[derive(Parser, Debug)]
#[command(name = "rsssm", version, about = "Train, evaluate and probe dual-path SSM video segmenters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; missing keys take defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, value_name = "f32|f64", value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// V-SSM, Bi-V-SSM, No-CwAP or RS-SSM.
    #[arg(long, value_name = "TAG", value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Stop gradients from flowing into the FFT feature path.
    #[arg(long)]
    detach_spectrum: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and save its checkpoint and step log.
    Train(#[command(flatten)] Common),
    /// Evaluate a checkpoint on the eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/model.ckpt`.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Compare every gradient of a tiny model against finite differences.
    Gradcheck(#[command(flatten)] Common),
    /// Time the selective scan over increasing sequence lengths.
    Bench(#[command(flatten)] Common),
    /// Train and evaluate all four variants over several seeds.
    Ablate(#[command(flatten)] Common),
    /// Dump gate heatmaps and spectrum features of a checkpoint.
    InspectGates {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn resolve(c: &Common) -> rsssm::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: c.seed,
        precision: c.precision,
        steps: c.steps,
        out: c.out.clone(),
        variant: c.variant,
        detach_spectrum: c.detach_spectrum,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> rsssm::Result<String> {
    match cli.command {
        Command::Train(c) => harness::cmd_train(&resolve(&c)?),
        Command::Eval { common, checkpoint } => harness::cmd_eval(&resolve(&common)?, checkpoint.as_deref()),
        Command::Gradcheck(c) => harness::cmd_gradcheck(&resolve(&c)?),
        Command::Bench(c) => harness::cmd_bench(&resolve(&c)?),
        Command::Ablate(c) => harness::cmd_ablate(&resolve(&c)?),
        Command::InspectGates { common, checkpoint } => harness::cmd_inspect_gates(&resolve(&common)?, checkpoint.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::GradCheck { .. } | Error::NonFinite { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
