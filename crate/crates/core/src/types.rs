//! Domain types shared by every stage of the pipeline.
//!
//! Every constructor validates its invariants and returns an error instead of
//! building an inconsistent value. All types are immutable once built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

/// Residual gains at or below this value mean the feature rows are exhausted.
pub const EPS_RANK: f64 = 1e-10;

/// Diagonal jitter added to Gram matrices before log-determinants.
pub const EPS_JITTER: f64 = 1e-8;

/// Side length in pixels of one visual token patch.
pub const PATCH_PX: u32 = 14;

/// Tolerance for the orthonormality check on feature-space bases.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

const NORM_TOL: f64 = 1e-9;

/// Raw encoder output: one embedding per frame plus the query embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    frames: Matrix,
    query: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(frames: Matrix, query: Vec<f64>) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(Error::Empty("frame embeddings"));
        }
        if frames.ncols() == 0 {
            return Err(Error::Empty("embedding dimension"));
        }
        if query.len() != frames.ncols() {
            return Err(Error::DimensionMismatch {
                context: "query embedding",
                expected: frames.ncols(),
                actual: query.len(),
            });
        }
        for (t, row) in frames.rows_iter().enumerate() {
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("frame {t}, component {c}"),
                });
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroNorm {
                    what: "frame",
                    index: t,
                });
            }
        }
        if let Some(c) = query.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("query, component {c}"),
            });
        }
        if query.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroNorm {
                what: "query",
                index: 0,
            });
        }
        Ok(Self { frames, query })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn query(&self) -> &[f64] {
        &self.query
    }

    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn into_parts(self) -> (Matrix, Vec<f64>) {
        (self.frames, self.query)
    }
}

/// Query-conditioned frame features: row `t` is the unit frame direction
/// scaled by the frame's normalized relevance.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedFeatures {
    phi: Matrix,
    relevance: Vec<f64>,
    row_norms_sq: Vec<f64>,
}

impl ConditionedFeatures {
    pub fn new(phi: Matrix, relevance: Vec<f64>) -> Result<Self> {
        let norms = phi.rows_iter().map(|row| dot(row, row)).collect();
        Self::with_norms(phi, relevance, norms)
    }

    /// [`ConditionedFeatures::new`] for callers that already hold the squared
    /// row norms.
    pub(crate) fn with_norms(
        phi: Matrix,
        relevance: Vec<f64>,
        row_norms_sq: Vec<f64>,
    ) -> Result<Self> {
        if phi.nrows() == 0 {
            return Err(Error::Empty("conditioned features"));
        }
        for (context, len) in [
            ("relevance vector", relevance.len()),
            ("row norms", row_norms_sq.len()),
        ] {
            if len != phi.nrows() {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: phi.nrows(),
                    actual: len,
                });
            }
        }
        for (t, (&r, &nsq)) in relevance.iter().zip(&row_norms_sq).enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Invariant(format!(
                    "relevance {r} of frame {t} outside [0, 1]"
                )));
            }
            if !nsq.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("feature row {t}"),
                });
            }
            if (nsq.sqrt() - r).abs() > NORM_TOL * r.max(1.0) {
                return Err(Error::Invariant(format!(
                    "feature row {t} has norm {} but relevance {r}",
                    nsq.sqrt()
                )));
            }
        }
        Ok(Self {
            phi,
            relevance,
            row_norms_sq,
        })
    }

    /// Wraps a feature matrix whose row norms already lie in `[0, 1]`, taking
    /// each norm as the frame's relevance.
    pub fn from_phi(phi: Matrix) -> Result<Self> {
        let relevance = phi
            .rows_iter()
            .map(|r| {
                let n = dot(r, r).sqrt();
                if n > 1.0 && n <= 1.0 + NORM_TOL {
                    1.0
                } else {
                    n
                }
            })
            .collect();
        Self::new(phi, relevance)
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn relevance(&self) -> &[f64] {
        &self.relevance
    }

    pub fn row_norms_sq(&self) -> &[f64] {
        &self.row_norms_sq
    }

    pub fn frame_count(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// Features restricted to the contiguous frame range `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> ConditionedFeatures {
        let idx: Vec<usize> = (start..end).collect();
        ConditionedFeatures {
            phi: self.phi.select_rows(&idx),
            relevance: self.relevance[start..end].to_vec(),
            row_norms_sq: self.row_norms_sq[start..end].to_vec(),
        }
    }
}

/// Direction vectors recorded by a greedy run.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    /// Orthonormal feature-space directions, one row per step.
    Feature(Matrix),
    /// Sample-space vectors from the kernel recursion (not orthonormal).
    Sample(Matrix),
    /// Independent feature-space bases, one per temporal chunk.
    Chunked(Vec<Matrix>),
}

impl Basis {
    pub fn steps(&self) -> usize {
        match self {
            Basis::Feature(m) | Basis::Sample(m) => m.nrows(),
            Basis::Chunked(ms) => ms.iter().map(Matrix::nrows).sum(),
        }
    }
}

/// Ordered output of greedy MAP inference.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    selected: Vec<usize>,
    gains: Vec<f64>,
    basis: Basis,
    exhausted: bool,
}

impl SelectionTrace {
    pub fn new(
        selected: Vec<usize>,
        gains: Vec<f64>,
        basis: Basis,
        exhausted: bool,
    ) -> Result<Self> {
        if gains.len() != selected.len() {
            return Err(Error::DimensionMismatch {
                context: "trace gains",
                expected: selected.len(),
                actual: gains.len(),
            });
        }
        if basis.steps() != selected.len() {
            return Err(Error::DimensionMismatch {
                context: "trace basis",
                expected: selected.len(),
                actual: basis.steps(),
            });
        }
        check_distinct(&selected, usize::MAX)?;
        if let Some((i, g)) = gains.iter().enumerate().find(|(_, g)| !(**g > EPS_RANK)) {
            return Err(Error::Invariant(format!(
                "gain {g} at step {i} is not above the rank threshold"
            )));
        }
        match &basis {
            Basis::Feature(m) => check_orthonormal(m)?,
            Basis::Chunked(ms) => ms.iter().try_for_each(check_orthonormal)?,
            Basis::Sample(_) => {}
        }
        Ok(Self {
            selected,
            gains,
            basis,
            exhausted,
        })
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Sum of log gains: the log-volume of the selected set.
    pub fn log_volume(&self) -> f64 {
        self.gains.iter().map(|g| g.ln()).sum()
    }
}

pub(crate) fn check_distinct(indices: &[usize], frames: usize) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(indices.len());
    for &i in indices {
        if i >= frames {
            return Err(Error::IndexOutOfRange { index: i, frames });
        }
        if !seen.insert(i) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    Ok(())
}

fn check_orthonormal(m: &Matrix) -> Result<()> {
    for i in 0..m.nrows() {
        for j in i..m.nrows() {
            let expect = if i == j { 1.0 } else { 0.0 };
            let dev = (dot(m.row(i), m.row(j)) - expect).abs();
            if dev > ORTHONORMAL_TOL {
                return Err(Error::Invariant(format!(
                    "basis rows {i} and {j} deviate from orthonormal by {dev:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Per-frame importance over a selected set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    frames: Vec<usize>,
    gd: Vec<f64>,
    rho: Vec<f64>,
    score: Vec<f64>,
    tau: f64,
}

impl ImportanceTable {
    /// Builds the table and computes `gd * rho^tau`, with `0^0 = 1`.
    pub fn new(frames: Vec<usize>, gd: Vec<f64>, rho: Vec<f64>, tau: f64) -> Result<Self> {
        let n = frames.len();
        if n == 0 {
            return Err(Error::Empty("importance table"));
        }
        for (context, v) in [("gd scores", &gd), ("density prior", &rho)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    actual: v.len(),
                });
            }
        }
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!(
                "tau must be finite and >= 0, got {tau}"
            )));
        }
        check_distinct(&frames, usize::MAX)?;
        for (t, (&g, &r)) in gd.iter().zip(&rho).enumerate() {
            if !(g >= 0.0 && g.is_finite()) || !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Invariant(format!(
                    "negative or non-finite score at entry {t}: gd={g}, rho={r}"
                )));
            }
        }
        let mean = rho.iter().sum::<f64>() / n as f64;
        if (mean - 1.0).abs() > NORM_TOL {
            return Err(Error::Invariant(format!(
                "density prior mean is {mean}, not 1"
            )));
        }
        let score = gd
            .iter()
            .zip(&rho)
            .map(|(&g, &r)| if tau == 0.0 { g } else { g * r.powf(tau) })
            .collect();
        Ok(Self {
            frames,
            gd,
            rho,
            score,
            tau,
        })
    }

    /// Table with a flat prior, so the density-aware score equals `scores`.
    pub fn flat(frames: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        let rho = vec![1.0; scores.len()];
        Self::new(frames, scores, rho, 1.0)
    }

    pub fn frames(&self) -> &[usize] {
        &self.frames
    }

    pub fn gd(&self) -> &[f64] {
        &self.gd
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn density_aware(&self) -> &[f64] {
        &self.score
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Entry positions sorted by density-aware score, descending; equal
    /// scores go to the lower frame index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.score[b]
                .total_cmp(&self.score[a])
                .then(self.frames[a].cmp(&self.frames[b]))
        });
        order
    }

    /// Position of `frame` in the table.
    pub fn position(&self, frame: usize) -> Option<usize> {
        self.frames.iter().position(|&f| f == frame)
    }
}

/// Target pixel resolution for one retained frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub height_px: u32,
    pub width_px: u32,
}

impl Resolution {
    /// Number of patches covering this resolution.
    pub fn patches(&self) -> u64 {
        u64::from(self.height_px.div_ceil(PATCH_PX)) * u64::from(self.width_px.div_ceil(PATCH_PX))
    }
}

/// Final retention and token assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    retained: Vec<usize>,
    tokens: Vec<u32>,
    resolutions: Vec<Resolution>,
    total_tokens: u64,
    budget: u64,
    w_min: u32,
    w_max: u32,
}

impl AllocationPlan {
    /// `retained` is in GD rank order; `tokens` and `resolutions` align with it.
    pub fn new(
        retained: Vec<usize>,
        tokens: Vec<u32>,
        resolutions: Vec<Resolution>,
        budget: u64,
        w_min: u32,
        w_max: u32,
    ) -> Result<Self> {
        if w_min == 0 || w_min > w_max {
            return Err(Error::InvalidBounds { w_min, w_max });
        }
        for (context, len) in [
            ("plan tokens", tokens.len()),
            ("plan resolutions", resolutions.len()),
        ] {
            if len != retained.len() {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: retained.len(),
                    actual: len,
                });
            }
        }
        check_distinct(&retained, usize::MAX)?;
        for (i, (&w, res)) in tokens.iter().zip(&resolutions).enumerate() {
            if w < w_min || w > w_max {
                return Err(Error::Invariant(format!(
                    "frame {} gets {w} tokens outside [{w_min}, {w_max}]",
                    retained[i]
                )));
            }
            if res.height_px == 0
                || res.width_px == 0
                || res.height_px % PATCH_PX != 0
                || res.width_px % PATCH_PX != 0
            {
                return Err(Error::Invariant(format!(
                    "resolution {}x{} of frame {} is not a positive multiple of {PATCH_PX}",
                    res.height_px, res.width_px, retained[i]
                )));
            }
            if res.patches() > u64::from(w) {
                return Err(Error::Invariant(format!(
                    "resolution of frame {} needs {} patches but only {w} tokens were granted",
                    retained[i],
                    res.patches()
                )));
            }
        }
        let total_tokens: u64 = tokens.iter().map(|&w| u64::from(w)).sum();
        if total_tokens > budget {
            return Err(Error::Invariant(format!(
                "total tokens {total_tokens} exceed budget {budget}"
            )));
        }
        Ok(Self {
            retained,
            tokens,
            resolutions,
            total_tokens,
            budget,
            w_min,
            w_max,
        })
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn resolutions(&self) -> &[Resolution] {
        &self.resolutions
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn bounds(&self) -> (u32, u32) {
        (self.w_min, self.w_max)
    }

    pub fn k_star(&self) -> usize {
        self.retained.len()
    }

    /// Positions into the rank-ordered lists, sorted by frame index.
    pub fn temporal_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.retained.len()).collect();
        order.sort_by_key(|&i| self.retained[i]);
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_set_rejects_zero_rows_and_query() {
        let frames = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            EmbeddingSet::new(frames, vec![1.0, 0.0]),
            Err(Error::ZeroNorm {
                what: "frame",
                index: 1
            })
        ));
        let frames = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(
            EmbeddingSet::new(frames, vec![0.0, 0.0]),
            Err(Error::ZeroNorm { what: "query", .. })
        ));
    }

    #[test]
    fn embedding_set_rejects_non_finite_and_mismatch() {
        let frames = Matrix::from_rows(&[[1.0, f64::NAN]]).unwrap();
        assert!(matches!(
            EmbeddingSet::new(frames, vec![1.0, 0.0]),
            Err(Error::NonFinite { .. })
        ));
        let frames = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(matches!(
            EmbeddingSet::new(frames, vec![1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn features_check_norm_against_relevance() {
        let phi = Matrix::from_rows(&[[0.6, 0.8], [0.0, 0.5]]).unwrap();
        assert!(ConditionedFeatures::new(phi.clone(), vec![1.0, 0.5]).is_ok());
        assert!(ConditionedFeatures::new(phi.clone(), vec![1.0, 0.4]).is_err());
        let big = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        assert!(ConditionedFeatures::from_phi(big).is_err());
    }

    #[test]
    fn trace_rejects_duplicates_and_small_gains() {
        let basis = Basis::Sample(Matrix::zeros(2, 3));
        assert!(matches!(
            SelectionTrace::new(vec![1, 1], vec![1.0, 1.0], basis.clone(), false),
            Err(Error::DuplicateIndex(1))
        ));
        assert!(SelectionTrace::new(vec![0, 1], vec![1.0, 0.0], basis, false).is_err());
    }

    #[test]
    fn trace_checks_feature_orthonormality() {
        let skew = Matrix::from_rows(&[[1.0, 0.0], [0.6, 0.8]]).unwrap();
        assert!(
            SelectionTrace::new(vec![0, 1], vec![1.0, 1.0], Basis::Feature(skew), false).is_err()
        );
        let ok = Matrix::identity(2);
        assert!(SelectionTrace::new(vec![0, 1], vec![1.0, 1.0], Basis::Feature(ok), false).is_ok());
    }

    #[test]
    fn importance_zero_pow_zero_is_one() {
        let t = ImportanceTable::new(vec![0, 1], vec![0.5, 0.25], vec![0.0, 2.0], 0.0).unwrap();
        assert_eq!(t.density_aware(), &[0.5, 0.25]);
    }

    #[test]
    fn importance_rejects_bad_prior_mean() {
        assert!(ImportanceTable::new(vec![0, 1], vec![1.0, 1.0], vec![1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_frame_index() {
        let t = ImportanceTable::flat(vec![9, 3, 5], vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(t.ranking(), vec![2, 1, 0]);
    }

    #[test]
    fn plan_rejects_overspend_and_bad_resolution() {
        let r = Resolution {
            height_px: 448,
            width_px: 448,
        };
        assert!(
            AllocationPlan::new(vec![0, 1], vec![1024, 1024], vec![r, r], 2047, 256, 1024).is_err()
        );
        assert!(
            AllocationPlan::new(vec![0, 1], vec![1024, 1024], vec![r, r], 2048, 256, 1024).is_ok()
        );
        let odd = Resolution {
            height_px: 450,
            width_px: 448,
        };
        assert!(AllocationPlan::new(vec![0], vec![1024], vec![odd], 2048, 256, 1024).is_err());
        let big = Resolution {
            height_px: 462,
            width_px: 448,
        };
        assert!(AllocationPlan::new(vec![0], vec![1024], vec![big], 2048, 256, 1024).is_err());
    }
}
