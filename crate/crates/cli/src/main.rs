//! `vrl`: command-line pipeline for variation-structured scene-graph
//! prediction — graph construction, scene synthesis, training, evaluation,
//! ablations and episode inspection.

mod commands;
mod manifest;
mod runcfg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "vrl",
    version,
    about = "Scene-graph prediction with variation-structured reinforcement learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a semantic action graph from phrase counts.
    BuildGraph {
        /// Tab-separated phrase counts: `A<TAB>subj<TAB>attr<TAB>count` or
        /// `P<TAB>subj<TAB>pred<TAB>obj<TAB>count`.
        #[arg(long)]
        counts: PathBuf,
        /// Keep phrases with count >= this threshold (inclusive).
        #[arg(long, default_value_t = 30)]
        min_count: u64,
        /// Output graph file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic scenes from a graph.
    GenScenes {
        #[arg(long)]
        graph: PathBuf,
        /// Root seed; scene i uses an independent substream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of scenes.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Optional TOML file with generator parameters.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output scene file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy according to a run config and write metrics, a model
    /// checkpoint and a run manifest into the output directory.
    Train {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint on a scene set.
    Evaluate {
        /// Run config (TOML); supplies graph, variant and feature dims.
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint; defaults to `<out_dir>/model.ckpt`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scene set to evaluate; defaults to the config's scene file.
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Training scenes for a zero-shot split of the evaluated scenes.
        #[arg(long)]
        train_scenes: Option<PathBuf>,
        /// Worker threads for scene-parallel evaluation.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write the report JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every policy variant over several seeds and emit a
    /// comparison CSV (one recall row per variant per seed).
    Ablate {
        /// Run config (TOML); supplies graph, training scenes and schedules.
        #[arg(long)]
        config: PathBuf,
        /// Test scene set.
        #[arg(long)]
        scenes: PathBuf,
        /// Number of seeds (0, 1, ..., seeds-1 offset from the config seed).
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Worker threads for scene-parallel evaluation.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output CSV; defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump an episode trace with per-step variation-structured action sets
    /// as JSON.
    Inspect {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint; omitted = freshly initialized network.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Scene set; defaults to the config's scene file.
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Index of the scene to trace.
        #[arg(long, default_value_t = 0)]
        scene_index: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildGraph {
            counts,
            min_count,
            out,
        } => commands::build_graph(&counts, min_count, &out),
        Command::GenScenes {
            graph,
            seed,
            count,
            params,
            out,
        } => commands::gen_scenes(&graph, seed, count, params.as_deref(), &out),
        Command::Train { config, out_dir } => commands::train(&config, out_dir.as_deref()),
        Command::Evaluate {
            config,
            model,
            scenes,
            train_scenes,
            jobs,
            out,
        } => commands::evaluate(
            &config,
            model.as_deref(),
            scenes.as_deref(),
            train_scenes.as_deref(),
            jobs,
            out.as_deref(),
        ),
        Command::Ablate {
            config,
            scenes,
            seeds,
            jobs,
            out,
        } => commands::ablate(&config, &scenes, seeds, jobs, out.as_deref()),
        Command::Inspect {
            config,
            model,
            scenes,
            scene_index,
        } => commands::inspect(&config, model.as_deref(), scenes.as_deref(), scene_index),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
