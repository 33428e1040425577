//! Runtime-scaling benchmark for the two greedy solvers.
//!
//! Each size gets a seeded synthetic embedding set; the timed region covers
//! feature conditioning plus selection (and kernel construction for the
//! sample-space solver), starting from an owned embedding set as a caller that
//! just loaded one would hold. Data generation and the per-run copy of the
//! input are not timed. Each (size, solver) pair
//! gets one untimed warm-up run before the timed repetitions.

use std::fmt::Write as _;
use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kernel::{condition, materialize_kernel_capped, DEFAULT_KERNEL_CAP};
use crate::linalg::Matrix;
use crate::select::{greedy_feature_space, greedy_kernel_space};
use crate::types::EmbeddingSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum Solver {
    Feature,
    Kernel,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Feature => "feature",
            Solver::Kernel => "kernel",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub dim: usize,
    pub budget: usize,
    pub reps: usize,
    pub seed: u64,
    pub solvers: Vec<Solver>,
    /// Run the kernel solver even above `kernel_cap`.
    pub force: bool,
    pub kernel_cap: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![512, 1024, 2048, 4096, 8192],
            dim: 512,
            budget: 32,
            reps: 3,
            seed: 0,
            solvers: vec![Solver::Feature, Solver::Kernel],
            force: false,
            kernel_cap: DEFAULT_KERNEL_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    pub solver: Solver,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
}

/// Gaussian frame directions and a Gaussian query.
pub fn synthetic_embeddings(frames: usize, dim: usize, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            if v.iter().any(|&x| x != 0.0) {
                return v;
            }
        }
    };
    let mut data = Vec::with_capacity(frames * dim);
    for _ in 0..frames {
        data.extend(draw(dim));
    }
    let query = draw(dim);
    let frames = Matrix::from_vec(frames, dim, data).expect("sized buffer");
    EmbeddingSet::new(frames, query).expect("gaussian rows are finite and non-zero")
}

fn time_once(set: &EmbeddingSet, solver: Solver, budget: usize, cap: usize) -> Result<f64> {
    let owned = set.clone();
    let start = Instant::now();
    let features = condition(owned)?;
    let trace = match solver {
        Solver::Feature => greedy_feature_space(&features, budget)?,
        Solver::Kernel => {
            let kernel = materialize_kernel_capped(&features, cap)?;
            greedy_kernel_space(&kernel, budget)?
        }
    };
    black_box(&trace);
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if cfg.sizes.is_empty() || cfg.solvers.is_empty() {
        return Err(Error::Config(
            "need at least one size and one solver".into(),
        ));
    }
    if let Some(&s) = cfg.sizes.iter().find(|&&s| s < cfg.budget || s == 0) {
        return Err(Error::InvalidBudget {
            budget: cfg.budget,
            frames: s,
        });
    }
    let cap = if cfg.force {
        usize::MAX
    } else {
        cfg.kernel_cap
    };
    if cfg.solvers.contains(&Solver::Kernel) {
        if let Some(&s) = cfg.sizes.iter().find(|&&s| s > cap) {
            return Err(Error::CapExceeded {
                what: "kernel benchmark size",
                size: s as u128,
                limit: cap as u128,
            });
        }
    }

    let sets: Vec<EmbeddingSet> = cfg
        .sizes
        .iter()
        .map(|&size| synthetic_embeddings(size, cfg.dim, cfg.seed.wrapping_add(size as u64)))
        .collect();
    // One solver's sweep at a time, so the large kernel allocations do not
    // disturb the feature-space timings.
    let mut rows = Vec::with_capacity(cfg.sizes.len() * cfg.solvers.len());
    for &solver in &cfg.solvers {
        for (&size, set) in cfg.sizes.iter().zip(&sets) {
            time_once(set, solver, cfg.budget, cap)?; // warm-up
            let mut samples = (0..cfg.reps)
                .map(|_| time_once(set, solver, cfg.budget, cap))
                .collect::<Result<Vec<f64>>>()?;
            samples.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                size,
                solver,
                median_ms: median(&samples),
                p10_ms: percentile(&samples, 0.1),
                p90_ms: percentile(&samples, 0.9),
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln(y)` against `ln(x)`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fitted log-log slope of median time against size, per solver.
pub fn solver_slopes(rows: &[BenchRow]) -> Vec<(Solver, f64)> {
    let mut solvers: Vec<Solver> = Vec::new();
    for r in rows {
        if !solvers.contains(&r.solver) {
            solvers.push(r.solver);
        }
    }
    solvers
        .into_iter()
        .map(|s| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.solver == s)
                .map(|r| (r.size as f64, r.median_ms))
                .collect();
            (s, fit_loglog_slope(&pts))
        })
        .collect()
}

pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("size,solver,median_ms,p10_ms,p90_ms\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            r.size,
            r.solver.name(),
            r.median_ms,
            r.p10_ms,
            r.p90_ms
        );
    }
    out
}

pub fn write_csv(rows: &[BenchRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&x| (x, 3.0 * x * x))
            .collect();
        assert!((fit_loglog_slope(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn percentiles() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.1), 1.0);
        assert_eq!(percentile(&s, 0.9), 9.0);
        assert_eq!(median(&s), 5.5);
        assert_eq!(median(&[2.0]), 2.0);
    }

    #[test]
    fn synthetic_is_seeded() {
        assert_eq!(synthetic_embeddings(4, 3, 9), synthetic_embeddings(4, 3, 9));
        assert_ne!(
            synthetic_embeddings(4, 3, 9),
            synthetic_embeddings(4, 3, 10)
        );
    }

    #[test]
    fn small_sweep_has_one_row_per_pair() {
        let cfg = BenchConfig {
            sizes: vec![16, 32],
            dim: 8,
            budget: 4,
            reps: 2,
            ..BenchConfig::default()
        };
        let rows = run_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows
            .iter()
            .all(|r| r.median_ms > 0.0 && r.p10_ms <= r.p90_ms));
        assert_eq!(render_csv(&rows).lines().count(), 5);
    }

    #[test]
    fn kernel_cap_requires_force() {
        let cfg = BenchConfig {
            sizes: vec![16],
            dim: 4,
            budget: 2,
            reps: 1,
            kernel_cap: 8,
            ..BenchConfig::default()
        };
        assert!(matches!(run_bench(&cfg), Err(Error::CapExceeded { .. })));
        assert!(run_bench(&BenchConfig { force: true, ..cfg }).is_ok());
    }

    #[test]
    fn zero_reps_rejected() {
        let cfg = BenchConfig {
            reps: 0,
            ..BenchConfig::default()
        };
        assert!(run_bench(&cfg).is_err());
    }
}
