//! `swarmform` command-line runner.
//!
//! Exit codes: 0 success, 1 configuration, input or I/O error, 2 a run timed out.
//! Log verbosity comes from `SWARMFORM_LOG` (env_logger syntax, default `warn`).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use swarmform::engine::trace::{JsonlSink, Trace};
use swarmform::engine::{write_metrics, Simulation};
use swarmform::par::Execution;
use swarmform::render::render_frames;
use swarmform::study::sweep;
use swarmform::{load_scenario, EstimatorKind, ScenarioConfig};

#[derive(Parser)]
#[command(name = "swarmform", version, about = "Row-based swarm shape formation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, writing trace.jsonl and metrics.csv.
    Run(RunArgs),
    /// Check that scenario files load and plan.
    Validate {
        #[arg(long = "scenario", required = true, num_args = 1..)]
        scenarios: Vec<PathBuf>,
    },
    /// Run a loss × seed grid, writing one metrics row per run to sweep.csv.
    Sweep(SweepArgs),
    /// Render SVG snapshots of a recorded trace.
    Render(RenderArgs),
}

#[derive(Args)]
struct Overrides {
    #[arg(long, value_name = "PATH")]
    scenario: PathBuf,
    #[arg(long, value_name = "complementary|ekf")]
    estimator: Option<EstimatorKind>,
    #[arg(long, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "P")]
    loss: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Overrides,
    /// Seeds as a comma list; `a-b` spans an inclusive range.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_seeds, num_args = 1..)]
    seed: Vec<Seeds>,
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    loss: Vec<f64>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long, value_name = "PATH")]
    trace: PathBuf,
    /// Ticks between frames; the final tick is always drawn.
    #[arg(long, default_value_t = 200)]
    stride: u64,
    #[arg(long, default_value = "frames", value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed `{t}`: {e}"));
    match s.split_once('-') {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a > b {
                return Err(format!("empty seed range `{s}`"));
            }
            Ok(Seeds((a..=b).collect()))
        }
        None => Ok(Seeds(vec![num(s)?])),
    }
}

/// Outcome of a command that completed without an error.
enum Outcome {
    Done,
    Timeout,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SWARMFORM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { scenarios } => cmd_validate(&scenarios),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Render(args) => cmd_render(args),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Timeout) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(common: &Overrides) -> Result<ScenarioConfig> {
    let path = &common.scenario;
    let text = fs::read_to_string(path).with_context(|| format!("cannot read scenario {}", path.display()))?;
    let mut config = load_scenario(&text).with_context(|| format!("invalid scenario {}", path.display()))?;
    if let Some(kind) = common.estimator {
        config.sim.estimator = kind;
    }
    Ok(config)
}

/// Opens `dir/name` for writing, refusing to clobber unless forced.
fn create(dir: &Path, name: &str, force: bool) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    if path.exists() && !force {
        bail!("{} already exists (pass --force to overwrite)", path.display());
    }
    let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn cmd_run(args: RunArgs) -> Result<Outcome> {
    let mut config = load(&args.common)?;
    if let Some(seed) = args.seed {
        config.sim.seed = seed;
    }
    if let Some(p) = args.loss {
        config.comms.loss_probability = p;
    }
    let sim = Simulation::new(config).context("scenario rejected")?;
    let out = &args.common.out;
    // Both files are claimed before the run so a refusal costs nothing.
    let trace = create(out, "trace.jsonl", args.common.force)?;
    let metrics = create(out, "metrics.csv", args.common.force)?;
    let mut sink = JsonlSink::new(trace);
    let report = sim.run_with(&mut sink)?;
    write_metrics(&[report.metrics()], metrics)?;
    info!(
        "seed {} finished after {} ticks, {} collisions, digest {:016x}",
        report.seed, report.ticks, report.collisions, report.digest
    );
    if report.timeout {
        warn!("timed out after {} ticks", report.ticks);
        return Ok(Outcome::Timeout);
    }
    println!("completed at tick {}", report.completion_tick.unwrap_or(report.ticks));
    Ok(Outcome::Done)
}

fn cmd_validate(paths: &[PathBuf]) -> Result<Outcome> {
    for path in paths {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read scenario {}", path.display()))?;
        let config = load_scenario(&text).with_context(|| format!("invalid scenario {}", path.display()))?;
        let n = config.robot_count();
        Simulation::new(config).with_context(|| format!("invalid scenario {}", path.display()))?;
        println!("{}: ok ({n} robots)", path.display());
    }
    Ok(Outcome::Done)
}

fn cmd_sweep(args: SweepArgs) -> Result<Outcome> {
    let config = load(&args.common)?;
    let seeds: Vec<u64> = args.seed.into_iter().flat_map(|s| s.0).collect();
    let csv = create(&args.common.out, "sweep.csv", args.common.force)?;
    let runs = sweep(&config, &args.loss, &seeds, Execution::default())?;
    let rows: Vec<_> = runs.into_iter().map(|r| r.row).collect();
    write_metrics(&rows, csv)?;
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    let timeouts = rows.iter().filter(|r| r.timeout_flag).count();
    println!("{} runs, {failed} failed, {timeouts} timed out", rows.len());
    if failed > 0 {
        bail!("{failed} of {} runs failed; see the error column", rows.len());
    }
    Ok(if timeouts > 0 { Outcome::Timeout } else { Outcome::Done })
}

fn cmd_render(args: RenderArgs) -> Result<Outcome> {
    let file = File::open(&args.trace).with_context(|| format!("cannot read trace {}", args.trace.display()))?;
    let trace = Trace::read(BufReader::new(file)).with_context(|| format!("bad trace {}", args.trace.display()))?;
    let frames = render_frames(&trace, args.stride)?;
    for frame in &frames {
        let mut w = create(&args.out, &format!("frame_{:06}.svg", frame.tick), args.force)?;
        w.write_all(frame.svg.as_bytes())?;
        w.flush()?;
    }
    println!("{} frames written to {}", frames.len(), args.out.display());
    Ok(Outcome::Done)
}
