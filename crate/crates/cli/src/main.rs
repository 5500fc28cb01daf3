use std::path::PathBuf;
use std::process::ExitCode;

use canine_core::geometry::{LabelSpace, MergeMap3};
use canine_lab::commands::{self, ClassifyArgs, DistillArgs, KappaArgs, MetricsArgs, SynthArgs};
use canine_lab::{server, CliError, CliResult};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "canine-lab", version, about = "Sector classification, agreement and distillation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assign sectors to annotated canine points.
    Classify {
        /// Annotation JSON (one document, an array, or JSON lines).
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// five, four or three; all three when omitted.
        #[arg(long)]
        space: Option<LabelSpace>,
        /// Merge of the five sectors into A/B/C.
        #[arg(long, default_value = MergeMap3::MESIAL_RISK)]
        preset: String,
    },
    /// Agreement tables from a JSON-lines ratings file.
    Kappa {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON object mapping rater id to group.
        #[arg(long)]
        grouping: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the plain-text tables here.
        #[arg(long)]
        text: Option<PathBuf>,
        /// Seed of the bootstrap intervals.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// Analytic instead of bootstrap intervals for Fleiss' kappa.
        #[arg(long)]
        analytic: bool,
        /// Use complete phases only instead of requiring every rating.
        #[arg(long)]
        partial: bool,
    },
    /// Classification metrics from JSON-lines predictions.
    Metrics {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        text: Option<PathBuf>,
        /// Reference values to compare against; differences are reported.
        #[arg(long)]
        expect: Option<PathBuf>,
    },
    /// Train teacher and student on a dataset manifest.
    Distill {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset manifest.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the rating-study HTTP service.
    Serve {
        #[arg(long, alias = "in")]
        studies: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Classify { input, out, space, preset } => {
            commands::classify(&ClassifyArgs { input, out, space, preset }).map(|_| ())
        }
        Command::Kappa { input, grouping, out, text, seed, replicates, analytic, partial } => {
            commands::kappa(&KappaArgs { input, grouping, out, text, seed, replicates, analytic, partial })
        }
        Command::Metrics { input, out, text, expect } => {
            commands::metrics(&MetricsArgs { input, out, text, expect }).map(|_| ())
        }
        Command::Distill { input, config, out, seed } => {
            commands::distill(&DistillArgs { input, config, out, seed }).map(|_| ())
        }
        Command::Synth { config, out, seed, n } => commands::synth(&SynthArgs { config, out, seed, n }),
        Command::Serve { studies, port, host } => server::serve(&studies, &host, port),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.kind.exit_code() as u8)
}
