//! `vadgate`: run the engine, re-evaluate runs, sweep parameters and
//! generate synthetic datasets.
//!
//! Exit status: 0 on success, 2 for usage and configuration problems
//! (unreadable spec, missing input paths, incomplete live endpoints), 1 for
//! failures during a run.

mod backend;
mod spec;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use vadgate::eval::metrics::Metrics;
use vadgate::eval::report::emit_report;
use vadgate::eval::sweep::{run_sweep, write_sweep_csv, SweepGrid};
use vadgate::pipeline::RunOptions;
use vadgate::providers::manifest::Annotations;
use vadgate::providers::synthetic::SyntheticWorld;
use vadgate::timeline::read_jsonl;

use crate::backend::{load_fixtures, Backend};
use crate::spec::{Overrides, ProviderKind, RunSpec};

/// An error the operator can fix by changing the invocation; exits with 2.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "vadgate", version, about = "Selective-inference video anomaly scoring")]
struct Cli {
    /// Run spec (TOML). Without it the built-in synthetic demo is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the spec seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    provider: Option<ProviderKind>,
    /// Parallel sweep points; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the resolved spec and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// More logging (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score every video of the spec, then write the report.
    Run {
        /// Output directory; overrides `paths.out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a checkpoint after every video.
        #[arg(long)]
        checkpoint: bool,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Recompute metrics from a stored timeline.
    Eval {
        #[arg(long)]
        timeline: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Defaults to the timeline's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every point of a parameter grid and tabulate the metrics.
    Sweep {
        /// Grid file (TOML): one array per swept engine parameter.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset (RCVD files, manifest, annotations).
    Gen {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = ["warn", "info", "debug"][cli.verbose.min(2) as usize];
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.chain().any(|e| e.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let out = match &cli.command {
        Command::Run { out, .. } | Command::Sweep { out, .. } | Command::Gen { out, .. } => out.clone(),
        Command::Eval { .. } => None,
    };
    let overrides = Overrides {
        seed: cli.seed,
        provider: cli.provider,
        out,
    };
    let load = || RunSpec::load(cli.config.as_deref())?.resolve(&overrides);
    match cli.command {
        Command::Run { checkpoint, resume, .. } => cmd_run(load()?, cli.dry_run, checkpoint, resume),
        Command::Eval {
            timeline,
            annotations,
            out,
        } => cmd_eval(&timeline, &annotations, out, cli.dry_run),
        Command::Sweep { grid, .. } => cmd_sweep(load()?, &grid, cli.jobs, cli.dry_run),
        Command::Gen { videos, frames, .. } => cmd_gen(load()?, videos, frames, cli.dry_run),
    }
}

fn prepare_out(spec: &RunSpec) -> anyhow::Result<&Path> {
    let out = spec.paths.out.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("spec.toml"), spec.to_toml()?)?;
    Ok(out)
}

fn print_metrics(m: &Metrics) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(m)?);
    Ok(())
}

fn cmd_run(spec: RunSpec, dry_run: bool, checkpoint: bool, resume: bool) -> anyhow::Result<()> {
    if dry_run {
        print!("{}", spec.to_toml()?);
        return Ok(());
    }
    spec.check_paths()?;
    let fixtures = load_fixtures(spec.paths.prompts.as_deref())?;
    let backend = Backend::open(&spec)?;
    let out = prepare_out(&spec)?;
    let options = RunOptions {
        artifacts: Some(out.to_path_buf()),
        checkpoint: checkpoint || resume,
        resume,
    };
    let state = backend.execute(&spec.engine, fixtures, &options)?;
    let entries: Vec<_> = state.timeline.entries().cloned().collect();
    match backend.annotations() {
        Some(annotations) => {
            // Kept beside the timeline so `eval` can recompute from the directory alone.
            annotations.save(&out.join("annotations.json"))?;
            print_metrics(&emit_report(&entries, annotations, state.stats.reasoner_calls, out)?)?
        }
        None => tracing::warn!("no annotations found; metrics skipped"),
    }
    eprintln!(
        "{} frames, {} escalated, {} reasoner calls; artifacts in {}",
        state.stats.frames_total,
        state.stats.frames_conscious,
        state.stats.reasoner_calls,
        out.display()
    );
    Ok(())
}

fn cmd_eval(timeline: &Path, annotations: &Path, out: Option<PathBuf>, dry_run: bool) -> anyhow::Result<()> {
    for p in [timeline, annotations] {
        if !p.exists() {
            return Err(UsageError::new(format!("{} does not exist", p.display())).into());
        }
    }
    let out = out.unwrap_or_else(|| timeline.parent().unwrap_or(Path::new(".")).to_path_buf());
    if dry_run {
        println!(
            "timeline = {:?}\nannotations = {:?}\nout = {:?}",
            timeline, annotations, out
        );
        return Ok(());
    }
    let entries = read_jsonl(timeline)?;
    let annotations = Annotations::load(annotations)?;
    // The reasoner call count only lives in the run's stats.
    let stats = timeline.with_file_name("stats.json");
    let reasoner_calls = match std::fs::read_to_string(&stats) {
        Ok(text) => serde_json::from_str::<serde_json::Value>(&text)?["reasoner_calls"]
            .as_u64()
            .unwrap_or(0) as usize,
        Err(_) => 0,
    };
    std::fs::create_dir_all(&out)?;
    print_metrics(&emit_report(&entries, &annotations, reasoner_calls, &out)?)
}

fn cmd_sweep(spec: RunSpec, grid_path: &Path, jobs: Option<usize>, dry_run: bool) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(grid_path)
        .map_err(|e| UsageError::new(format!("cannot read grid {}: {e}", grid_path.display())))?;
    let grid: SweepGrid = toml::from_str(&text).map_err(|e| UsageError::new(format!("bad grid: {e}")))?;
    let points = grid
        .points(&spec.engine)
        .map_err(|e| UsageError::new(format!("bad grid: {e}")))?;
    if dry_run {
        print!("{}", spec.to_toml()?);
        for p in &points {
            println!("# point {:?}", p.params);
        }
        return Ok(());
    }
    spec.check_paths()?;
    let fixtures = load_fixtures(spec.paths.prompts.as_deref())?;
    let backend = Backend::open(&spec)?;
    let annotations = backend
        .annotations()
        .ok_or_else(|| UsageError::new("sweeps need annotations"))?;
    let out = prepare_out(&spec)?;
    std::fs::write(out.join("grid.toml"), &text)?;
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = run_sweep(&points, jobs, |cfg| {
        let state = backend.execute(cfg, fixtures.clone(), &RunOptions::default())?;
        let entries: Vec<_> = state.timeline.entries().cloned().collect();
        Metrics::compute(&entries, annotations, state.stats.reasoner_calls)
    })?;
    let path = out.join("sweep.csv");
    write_sweep_csv(&rows, &path)?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    eprintln!("{} points ({failed} failed); table in {}", rows.len(), path.display());
    Ok(())
}

fn cmd_gen(mut spec: RunSpec, videos: Option<usize>, frames: Option<usize>, dry_run: bool) -> anyhow::Result<()> {
    if let Some(v) = videos {
        spec.synthetic.videos = v;
    }
    if let Some(f) = frames {
        spec.synthetic.frames_per_video = f;
    }
    if dry_run {
        print!("{}", spec.to_toml()?);
        return Ok(());
    }
    let world = SyntheticWorld::new(spec.synthetic.world.clone()).map_err(|e| UsageError::new(e.to_string()))?;
    let dataset = world.generate(spec.synthetic.videos, spec.synthetic.frames_per_video)?;
    let out = prepare_out(&spec)?;
    dataset.write(out)?;
    eprintln!(
        "{} videos, {} frames written to {}",
        dataset.videos.len(),
        dataset.total_frames(),
        out.display()
    );
    Ok(())
}
