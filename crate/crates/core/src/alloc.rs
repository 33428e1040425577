//! Budget-aware retention and per-frame token allocation.
//!
//! Candidates are ranked by density-aware importance. For a prefix of size
//! `k` each frame's share of the budget is its score over the prefix total,
//! clamped to `[w_min, w_max]`. The plan keeps the largest prefix whose
//! clamped grants fit the budget.

use crate::error::{Error, Result};
use crate::gd::score_selection;
use crate::io::{Mode, RunConfig};
use crate::kernel::build_phi;
use crate::select::{chunked_select, greedy_feature_space};
use crate::types::{
    AllocationPlan, EmbeddingSet, ImportanceTable, Resolution, SelectionTrace, PATCH_PX,
};

/// Source frame size used to derive target resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSize {
    pub height: u32,
    pub width: u32,
}

/// Relative slack applied before flooring a token share.
const FLOOR_SLACK: f64 = 1e-12;

fn check_bounds(w_min: u32, w_max: u32) -> Result<()> {
    if w_min == 0 || w_min > w_max {
        return Err(Error::InvalidBounds { w_min, w_max });
    }
    Ok(())
}

/// Clamped integer grants for the top-`prefix_k` candidates, in rank order,
/// and whether they fit in `budget`.
pub fn prefix_allocation(
    scores: &ImportanceTable,
    budget: u64,
    w_min: u32,
    w_max: u32,
    prefix_k: usize,
) -> Result<(Vec<u32>, bool)> {
    check_bounds(w_min, w_max)?;
    if prefix_k == 0 || prefix_k > scores.len() {
        return Err(Error::InvalidBudget {
            budget: prefix_k,
            frames: scores.len(),
        });
    }
    let ranking = scores.ranking();
    Ok(allocate_ranked(
        scores,
        &ranking[..prefix_k],
        budget,
        w_min,
        w_max,
    ))
}

fn allocate_ranked(
    scores: &ImportanceTable,
    prefix: &[usize],
    budget: u64,
    w_min: u32,
    w_max: u32,
) -> (Vec<u32>, bool) {
    let values = scores.density_aware();
    let total: f64 = prefix.iter().map(|&i| values[i]).sum();
    let budget_f = budget as f64;
    let k = prefix.len() as f64;
    let tokens: Vec<u32> = prefix
        .iter()
        .map(|&i| {
            let raw = if total > 0.0 {
                budget_f * values[i] / total
            } else {
                budget_f / k
            };
            // shares that are integral in exact arithmetic can land a few ulps low
            let w = (raw.clamp(f64::from(w_min), f64::from(w_max)) * (1.0 + FLOOR_SLACK)).floor()
                as u32;
            let w = w.min(w_max);
            w.max(w_min)
        })
        .collect();
    let used: u64 = tokens.iter().map(|&w| u64::from(w)).sum();
    (tokens, used <= budget)
}

/// Patch-grid resolution closest to the source aspect ratio whose patch count
/// fits in `tokens`.
pub fn tokens_to_resolution(tokens: u32, frame: FrameSize) -> Resolution {
    let w = u64::from(tokens.max(1));
    let aspect = f64::from(frame.height.max(1)) / f64::from(frame.width.max(1));
    let mut rows = ((w as f64 * aspect).sqrt().round() as u64).max(1);
    let cols = (w / rows).max(1);
    while rows > 1 && rows * cols > w {
        rows -= 1;
    }
    Resolution {
        height_px: rows as u32 * PATCH_PX,
        width_px: cols as u32 * PATCH_PX,
    }
}

/// Keeps the largest feasible prefix of the ranked candidates.
///
/// Feasibility is not monotone in `k` once grants hit `w_min`, so every `k` is
/// tried from the largest down and the first feasible one wins.
pub fn largest_feasible_prefix(
    scores: &ImportanceTable,
    budget: u64,
    w_min: u32,
    w_max: u32,
    frame: FrameSize,
) -> Result<AllocationPlan> {
    check_bounds(w_min, w_max)?;
    if budget < u64::from(w_min) {
        return Err(Error::BudgetTooSmall { budget, w_min });
    }
    let ranking = scores.ranking();
    for k in (1..=ranking.len()).rev() {
        let prefix = &ranking[..k];
        let (tokens, feasible) = allocate_ranked(scores, prefix, budget, w_min, w_max);
        if feasible {
            let retained = prefix.iter().map(|&i| scores.frames()[i]).collect();
            let resolutions = tokens
                .iter()
                .map(|&w| tokens_to_resolution(w, frame))
                .collect();
            return AllocationPlan::new(retained, tokens, resolutions, budget, w_min, w_max);
        }
    }
    // k = 1 always fits when budget >= w_min
    Err(Error::BudgetTooSmall { budget, w_min })
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub config: RunConfig,
    pub frame_count: usize,
    pub candidate_pool: usize,
    pub trace: SelectionTrace,
    pub scores: ImportanceTable,
    pub plan: AllocationPlan,
}

fn select(
    features: &crate::types::ConditionedFeatures,
    pool: usize,
    chunks: usize,
) -> Result<SelectionTrace> {
    if chunks <= 1 {
        return greedy_feature_space(features, pool);
    }
    let per_chunk = pool / chunks;
    if per_chunk == 0 {
        return Err(Error::InvalidPartition(format!(
            "{pool} frames cannot be split over {chunks} chunks"
        )));
    }
    chunked_select(features, chunks, per_chunk)
}

/// Runs selection, scoring and allocation end to end.
pub fn build_pipeline(embeddings: &EmbeddingSet, config: &RunConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let t = embeddings.frame_count();
    let frames = config.frame_budget;
    let budget = config.token_budget();
    let frame = FrameSize {
        height: config.frame_height,
        width: config.frame_width,
    };
    let pool = match config.mode {
        Mode::Fixed => {
            if frames > t {
                return Err(Error::InvalidBudget {
                    budget: frames,
                    frames: t,
                });
            }
            frames
        }
        Mode::Dynamic => config.candidate_pool(t),
    };
    // chunked selection takes the same count from every chunk
    let pool = if config.chunks > 1 {
        pool / config.chunks * config.chunks
    } else {
        pool
    };

    let features = build_phi(embeddings)?;
    let trace = select(&features, pool, config.chunks)?;
    let scores = score_selection(&features, trace.selected(), config.tau)?;

    let plan = match config.mode {
        Mode::Fixed => {
            let ranking = scores.ranking();
            let retained: Vec<usize> = ranking.iter().map(|&i| scores.frames()[i]).collect();
            let tokens = vec![config.w_max; retained.len()];
            let resolutions = tokens
                .iter()
                .map(|&w| tokens_to_resolution(w, frame))
                .collect();
            AllocationPlan::new(
                retained,
                tokens,
                resolutions,
                budget,
                config.w_min,
                config.w_max,
            )?
        }
        Mode::Dynamic => {
            largest_feasible_prefix(&scores, budget, config.w_min, config.w_max, frame)?
        }
    };

    Ok(PipelineOutput {
        config: config.clone(),
        frame_count: t,
        candidate_pool: pool,
        trace,
        scores,
        plan,
    })
}
