//! Command-line surface: analytic cost reports, ledger verification, a
//! demo forward pass, the toy training loop, and the evaluation analyses.
//!
//! Exit codes: 0 success, 1 contract/input failure (structured JSON error
//! on stderr), 2 usage errors (flag parsing).

mod commands;
mod ppm;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{AnalyzeFormat, CostFormat, CostQuery};

#[derive(Parser)]
#[command(name = "pheye", version, about = "Toy high-resolution VLM with an exact multiplication-count cost model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic multiplication counts and efficiency ratios
    Cost(CostArgs),
    /// Reconcile instrumented ledgers against the analytic counts; exits
    /// nonzero on any delta
    Verify,
    /// Build a model from a config file, encode an image, run one forward
    /// pass, and dump counts and checksums
    DemoForward {
        /// Flat key=value configuration file
        #[arg(long)]
        config: PathBuf,
        /// Binary PPM (P6) or PGM (P5) image
        #[arg(long)]
        image: PathBuf,
    },
    /// Train on the synthetic rectangle task and emit a JSON-lines log
    TrainToy {
        /// Training stage preset (1, 2, or 3)
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
        /// Optimization steps
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Seed; defaults to $PHEYE_SEED, then 0
        #[arg(long)]
        seed: Option<u64>,
        /// Optional geometry configuration file
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluation analyses over JSON-lines inputs
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
struct CostArgs {
    /// N_T: text tokens
    #[arg(long)]
    nt: u64,
    /// N_I: vision tokens (also N, the monolithic full-resolution count)
    #[arg(long)]
    ni: u64,
    /// D: language model width
    #[arg(long)]
    d: u64,
    /// D_ViT: vision encoder width
    #[arg(long)]
    dvit: u64,
    /// I: cross-attention insertion interval
    #[arg(long)]
    i: u64,
    /// P: sub-images for the tiled encoder; N' = (N-1)/(P-1) + 1
    #[arg(long, default_value_t = 10)]
    p: u64,
    /// Emit JSON (default)
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    /// Emit CSV
    #[arg(long)]
    csv: bool,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Accuracy per relative-area tertile, table-shaped
    Tertiles {
        /// JSON-lines of annotated samples
        #[arg(long)]
        samples: PathBuf,
        /// Low,high model-id pair for a delta row (repeatable)
        #[arg(long, value_parser = parse_pair)]
        pair: Vec<(String, String)>,
        /// Emit JSON instead of CSV
        #[arg(long)]
        json: bool,
    },
    /// Per-layer global attention mass
    Attention {
        /// JSON-lines of recorded attention distributions
        #[arg(long)]
        maps: PathBuf,
        /// Number of leading global tokens in each distribution
        #[arg(long)]
        global_count: usize,
        /// Optional annotated samples for a per-tertile breakdown
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Emit JSON instead of CSV
        #[arg(long)]
        json: bool,
    },
}

fn parse_pair(raw: &str) -> Result<(String, String), String> {
    match raw.split_once(',') {
        Some((low, high)) if !low.is_empty() && !high.is_empty() => {
            Ok((low.to_string(), high.to_string()))
        }
        _ => Err("expected LOW,HIGH model ids".into()),
    }
}

fn default_seed() -> u64 {
    std::env::var("PHEYE_SEED")
        .ok()
        .and_then(|value| value.parse().ok())
        .unwrap_or(0)
}

fn run() -> anyhow::Result<i32> {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Cost(args) => {
            let format = if args.csv { CostFormat::Csv } else { CostFormat::Json };
            let query = CostQuery {
                n_text: args.nt,
                n_vision: args.ni,
                lm_dim: args.d,
                vit_dim: args.dvit,
                interval: args.i,
                sub_images: args.p,
            };
            commands::cmd_cost(&query, format, &mut out)?;
            Ok(0)
        }
        Command::Verify => {
            let all_exact = commands::cmd_verify(&mut out)?;
            Ok(if all_exact { 0 } else { 1 })
        }
        Command::DemoForward { config, image } => {
            commands::cmd_demo_forward(&config, &image, &mut out)?;
            Ok(0)
        }
        Command::TrainToy {
            stage,
            steps,
            seed,
            config,
        } => {
            let seed = seed.unwrap_or_else(default_seed);
            commands::cmd_train_toy(stage, steps, seed, config.as_deref(), &mut out)?;
            Ok(0)
        }
        Command::Analyze(AnalyzeCommand::Tertiles { samples, pair, json }) => {
            let format = if json { AnalyzeFormat::Json } else { AnalyzeFormat::Csv };
            commands::cmd_analyze_tertiles(&samples, &pair, format, &mut out)?;
            Ok(0)
        }
        Command::Analyze(AnalyzeCommand::Attention {
            maps,
            global_count,
            samples,
            json,
        }) => {
            let format = if json { AnalyzeFormat::Json } else { AnalyzeFormat::Csv };
            commands::cmd_analyze_attention(&maps, global_count, samples.as_deref(), format, &mut out)?;
            Ok(0)
        }
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(error) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{error:#}") }));
            std::process::exit(1);
        }
    }
}
