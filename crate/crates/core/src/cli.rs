//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on validation or runtime failure, 2 on usage
//! errors.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::alloc::build_pipeline;
use crate::bench::{run_bench, solver_slopes, write_csv, BenchConfig, Solver};
use crate::error::Result;
use crate::io::{
    read_any, write_plan, Mode, RunConfig, DEFAULT_POOL_MULTIPLIER, DEFAULT_W_MAX, DEFAULT_W_MIN,
};
use crate::kernel::{condition, materialize_kernel_capped, DEFAULT_KERNEL_CAP};
use crate::select::{compare_traces, greedy_feature_space, greedy_kernel_space};

/// Relative tolerance on per-step gains for the oracle check.
pub const ORACLE_GAIN_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "lddr", version, about = "Budget-aware video frame selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select frames and allocate visual tokens; writes a JSON plan.
    Select(SelectArgs),
    /// Compare the feature-space solver against the kernel-space reference.
    OracleCheck(OracleArgs),
    /// Time both solvers over a range of frame counts.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Embedding file (binary, or JSON when the name ends in .json).
    #[arg(long)]
    embeddings: PathBuf,
    /// Frame-equivalent budget F.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    #[arg(long, value_enum, default_value_t = Mode::Dynamic)]
    mode: Mode,
    #[arg(long, default_value_t = crate::gd::DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = DEFAULT_W_MIN)]
    wmin: u32,
    #[arg(long, default_value_t = DEFAULT_W_MAX)]
    wmax: u32,
    #[arg(long = "pool-mult", default_value_t = DEFAULT_POOL_MULTIPLIER)]
    pool_mult: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    chunks: u64,
    /// Source frame height in pixels, used for target resolutions.
    #[arg(long = "frame-height", default_value_t = 448)]
    frame_height: u32,
    /// Source frame width in pixels.
    #[arg(long = "frame-width", default_value_t = 448)]
    frame_width: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    budget: u64,
    /// Adds `perturb * (t + 1) / T` to kernel diagonal entry `t` (test hook).
    #[arg(long, default_value_t = 0.0)]
    perturb: f64,
    #[arg(long, default_value_t = DEFAULT_KERNEL_CAP)]
    cap: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096,8192")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    dim: usize,
    #[arg(long, default_value_t = 32)]
    budget: usize,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SolverChoice::Both)]
    solver: SolverChoice,
    /// Allow the kernel solver above the materialization cap.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SolverChoice {
    Feature,
    Kernel,
    Both,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.command {
        Command::Select(a) => cmd_select(a),
        Command::OracleCheck(a) => cmd_oracle_check(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_select(a: SelectArgs) -> Result<i32> {
    let config = RunConfig {
        frame_budget: a.frames as usize,
        mode: a.mode,
        w_min: a.wmin,
        w_max: a.wmax,
        tau: a.tau,
        pool_multiplier: a.pool_mult,
        chunks: a.chunks as usize,
        seed: 0,
        frame_height: a.frame_height,
        frame_width: a.frame_width,
    };
    config.validate()?;
    let set = read_any(&a.embeddings)?;
    let start = Instant::now();
    let out = build_pipeline(&set, &config)?;
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    write_plan(&out, &a.out)?;
    println!(
        "k*={} total_tokens={} budget={} elapsed_ms={elapsed:.3}",
        out.plan.k_star(),
        out.plan.total_tokens(),
        out.plan.budget()
    );
    Ok(0)
}

fn cmd_oracle_check(a: OracleArgs) -> Result<i32> {
    let set = read_any(&a.embeddings)?;
    let features = condition(set)?;
    let mut kernel = materialize_kernel_capped(&features, a.cap)?;
    let n = kernel.nrows();
    if a.perturb != 0.0 {
        for t in 0..n {
            kernel[(t, t)] += a.perturb * (t + 1) as f64 / n as f64;
        }
    }
    let budget = a.budget as usize;
    let fast = greedy_feature_space(&features, budget)?;
    let reference = greedy_kernel_space(&kernel, budget)?;
    let cmp = compare_traces(&fast, &reference, ORACLE_GAIN_TOL);
    if cmp.passed() {
        println!(
            "PASS steps={} max_gain_deviation={:.3e}",
            fast.len(),
            cmp.max_gain_deviation
        );
        Ok(0)
    } else {
        let step = match (cmp.first_divergence, cmp.first_gain_violation) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("comparison failed without a step"),
        };
        let show = |tr: &crate::types::SelectionTrace| {
            tr.selected()
                .get(step)
                .map_or("-".to_string(), |i| i.to_string())
        };
        println!(
            "FAIL step={step} feature_frame={} kernel_frame={} max_gain_deviation={:.3e}",
            show(&fast),
            show(&reference),
            cmp.max_gain_deviation
        );
        Ok(1)
    }
}

fn cmd_bench(a: BenchArgs) -> Result<i32> {
    let solvers = match a.solver {
        SolverChoice::Feature => vec![Solver::Feature],
        SolverChoice::Kernel => vec![Solver::Kernel],
        SolverChoice::Both => vec![Solver::Feature, Solver::Kernel],
    };
    let cfg = BenchConfig {
        sizes: a.sizes,
        dim: a.dim,
        budget: a.budget,
        reps: a.reps as usize,
        seed: a.seed,
        solvers,
        force: a.force,
        ..BenchConfig::default()
    };
    let rows = run_bench(&cfg)?;
    if let Some(path) = &a.out {
        write_csv(&rows, path)?;
    }
    for r in &rows {
        println!(
            "size={} solver={} median_ms={:.3} p10_ms={:.3} p90_ms={:.3}",
            r.size,
            r.solver.name(),
            r.median_ms,
            r.p10_ms,
            r.p90_ms
        );
    }
    if cfg.sizes.len() >= 2 {
        for (solver, slope) in solver_slopes(&rows) {
            println!("slope {}={slope:.3}", solver.name());
        }
    }
    Ok(0)
}
