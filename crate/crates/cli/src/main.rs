//! `valleyforge` — deterministic JSONL data pipeline for a tiled
//! multimodal training setup: tiling plans, token budgets, sequence
//! packing, curriculum schedules, reasoning-data mixing, and the
//! evaluation harness.
//!
//! Exit codes: 0 success, 1 operational error, 2 input/config validation
//! failure (diagnostics as JSON lines on stderr). Log verbosity comes
//! from `VALLEYFORGE_LOG`.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{CliError, Ctx, ShardSpec};
use valleyforge_core::budget::BudgetMode;
use valleyforge_core::curriculum::Stage;

#[derive(Parser)]
#[command(
    name = "valleyforge",
    version,
    about = "Multimodal training data pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; all randomized commands derive sub-seeds from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Process one shard, `i/N`: records are partitioned by stable id hash.
    #[arg(long, global = true)]
    shard: Option<ShardSpec>,

    /// Validate inputs and report counts without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute tiling plans for a sample file.
    Tile { input: PathBuf, output: PathBuf },

    /// Compute per-sample token budgets.
    Budget {
        input: PathBuf,
        output: PathBuf,
        /// train clamps the eagle branch to the tiling output.
        #[arg(long, default_value = "train", value_parser = commands::parse_mode)]
        mode: BudgetMode,
        /// Count untiled multi-image/video frames at their letterboxed
        /// effective token count.
        #[arg(long)]
        letterbox_untiled: bool,
    },

    /// Pack budgeted samples into fixed-cap sequences.
    Pack {
        /// Budget manifest, or bare `{id, len}` lines.
        input: PathBuf,
        output: PathBuf,
        /// Also write throughput stats to this path.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Never mix modalities inside one pack.
        #[arg(long)]
        segregate_modality: bool,
    },

    /// Produce the ordered, lr-annotated sample schedule for one stage.
    Schedule {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, value_parser = commands::parse_stage)]
        stage: Stage,
        /// Uniform mixing instead of the annealed two-phase order.
        #[arg(long)]
        uniform: bool,
    },

    /// Mix reasoning and direct-answer instruction data.
    MixCot {
        #[arg(long)]
        cot: PathBuf,
        #[arg(long)]
        non_cot: PathBuf,
        output: PathBuf,
    },

    /// Score cyclic multiple-choice responses (plus optional captions).
    Eval {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        /// Caption candidates (`{id, text}` lines); requires --references.
        #[arg(long, requires = "references")]
        candidates: Option<PathBuf>,
        /// Caption references (`{id, text}` lines, repeatable ids).
        #[arg(long, requires = "candidates")]
        references: Option<PathBuf>,
        output: PathBuf,
    },

    /// Aggregate corpus statistics over a budget manifest.
    Stats {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 256)]
        bucket_width: u64,
    },

    /// Report projector tensor shapes and parameter totals.
    ProjectorReport { output: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config =
        config::load(cli.config.as_deref(), cli.seed.unwrap_or(0)).map_err(
            |error| match error {
                config::ConfigError::UnknownKeys(keys) => CliError::Data(
                    keys.into_iter()
                        .map(|key| serde_json::json!({"error": "unknown config key", "key": key}))
                        .collect(),
                ),
                config::ConfigError::Invalid(message) => {
                    CliError::Data(vec![serde_json::json!({"error": message})])
                }
                config::ConfigError::Io(error) => CliError::Op(error),
            },
        )?;

    let ctx = Ctx {
        config,
        seed: cli.seed,
        shard: cli.shard,
        dry_run: cli.dry_run,
    };

    match &cli.command {
        Command::Tile { input, output } => commands::cmd_tile(input, output, &ctx),
        Command::Budget {
            input,
            output,
            mode,
            letterbox_untiled,
        } => commands::cmd_budget(input, output, *mode, *letterbox_untiled, &ctx),
        Command::Pack {
            input,
            output,
            stats_out,
            segregate_modality,
        } => commands::cmd_pack(
            input,
            output,
            stats_out.as_deref(),
            *segregate_modality,
            &ctx,
        ),
        Command::Schedule {
            input,
            output,
            stage,
            uniform,
        } => commands::cmd_schedule(input, output, *stage, *uniform, &ctx),
        Command::MixCot {
            cot,
            non_cot,
            output,
        } => commands::cmd_mix_cot(cot, non_cot, output, &ctx),
        Command::Eval {
            questions,
            responses,
            candidates,
            references,
            output,
        } => {
            let captions = match (candidates, references) {
                (Some(c), Some(r)) => Some((c.as_path(), r.as_path())),
                _ => None,
            };
            commands::cmd_eval(questions, responses, captions, output, &ctx)
        }
        Command::Stats {
            input,
            output,
            bucket_width,
        } => commands::cmd_stats(input, output, *bucket_width, &ctx),
        Command::ProjectorReport { output } => commands::cmd_projector_report(output, &ctx),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("VALLEYFORGE_LOG")).init();

    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Data(diagnostics)) => {
            for diagnostic in diagnostics {
                eprintln!("{diagnostic}");
            }
            std::process::exit(2);
        }
        Err(CliError::Op(error)) => {
            eprintln!("error: {error:#}");
            std::process::exit(1);
        }
    }
}
