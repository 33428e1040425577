//! Greedy DPP MAP inference.
//!
//! [`greedy_feature_space`] is the production solver: it keeps an orthonormal
//! basis of the selected feature directions and a residual gain per frame, so
//! one step costs at most `O(T d)` and the kernel is never formed.
//! [`greedy_kernel_space`] runs the classic Cholesky-style recursion on an
//! explicit `T x T` kernel and exists as the equivalence oracle.
//! [`exhaustive_map`] enumerates every subset for tiny instances.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, logdet_jittered, Matrix};
use crate::types::{Basis, ConditionedFeatures, SelectionTrace, EPS_JITTER, EPS_RANK};

/// Largest number of subsets [`exhaustive_map`] will enumerate.
pub const EXHAUSTIVE_CAP: u128 = 1_000_000;

/// Relative drift of `|v|^2 / d_j` from 1 that triggers a second
/// orthogonalization pass.
const REORTHO_TRIGGER: f64 = 1e-4;

/// Largest asymmetry tolerated in a kernel passed to the reference solver.
const SYMMETRY_TOL: f64 = 1e-8;

fn check_budget(budget: usize, frames: usize) -> Result<()> {
    if budget == 0 || budget > frames {
        return Err(Error::InvalidBudget { budget, frames });
    }
    Ok(())
}

/// Index of the largest unselected gain; the lowest index wins ties.
#[inline]
fn argmax_open(gains: &[f64], taken: &[bool]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (t, (&g, &done)) in gains.iter().zip(taken).enumerate() {
        if done {
            continue;
        }
        match best {
            Some((_, b)) if g <= b => {}
            _ => best = Some((t, g)),
        }
    }
    best
}

/// Feature-space greedy MAP inference over the conditioned features.
pub fn greedy_feature_space(
    features: &ConditionedFeatures,
    budget: usize,
) -> Result<SelectionTrace> {
    check_budget(budget, features.frame_count())?;
    greedy_rows(features.phi(), features.row_norms_sq(), budget)
}

/// Heap entry: a frame's gain after the first `fresh` basis vectors have
/// been projected out. Orders by gain, then by lower frame index.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    frame: usize,
    fresh: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.frame.cmp(&self.frame))
    }
}

/// Feature-space greedy MAP inference on raw rows. `norms_sq[t]` must be the
/// squared norm of row `t`.
///
/// Gains only shrink as the basis grows, so a stale gain is an upper bound.
/// Frames sit in a max-heap keyed by their last computed gain and are brought
/// up to date only when they reach the top. Updates apply the same
/// subtract-and-clamp sequence as an eager sweep, so the result is identical
/// to updating every frame at every step.
pub fn greedy_rows(phi: &Matrix, norms_sq: &[f64], budget: usize) -> Result<SelectionTrace> {
    let t_count = phi.nrows();
    let dim = phi.ncols();
    check_budget(budget, t_count)?;
    if norms_sq.len() != t_count {
        return Err(Error::DimensionMismatch {
            context: "row norms",
            expected: t_count,
            actual: norms_sq.len(),
        });
    }

    let mut heap: BinaryHeap<Candidate> = norms_sq
        .iter()
        .enumerate()
        .map(|(frame, &gain)| Candidate {
            gain,
            frame,
            fresh: 0,
        })
        .collect();
    let mut basis = Matrix::zeros(budget, dim);
    let mut selected = Vec::with_capacity(budget);
    let mut picked_gains = Vec::with_capacity(budget);
    let mut exhausted = false;
    let mut v = vec![0.0; dim];

    for step in 0..budget {
        let Some((j, dj)) = pop_best(&mut heap, phi, &basis, step) else {
            break;
        };
        if dj <= EPS_RANK {
            exhausted = true;
            break;
        }

        let phi_j = phi.row(j);
        v.copy_from_slice(phi_j);
        for k in 0..step {
            let ck = basis.row(k);
            axpy(-dot(ck, phi_j), ck, &mut v);
        }
        let vsq = dot(&v, &v);
        let scale = if (vsq / dj - 1.0).abs() > REORTHO_TRIGGER {
            for k in 0..step {
                let ck = basis.row(k);
                let p = dot(ck, &v);
                axpy(-p, ck, &mut v);
            }
            dot(&v, &v).sqrt()
        } else {
            dj.sqrt()
        };
        let c = basis.row_mut(step);
        for (ci, vi) in c.iter_mut().zip(&v) {
            *ci = vi / scale;
        }

        selected.push(j);
        picked_gains.push(dj);
    }

    let basis = basis.select_rows(&(0..selected.len()).collect::<Vec<_>>());
    SelectionTrace::new(selected, picked_gains, Basis::Feature(basis), exhausted)
}

/// Removes and returns the frame with the largest current gain, given the
/// first `step` basis rows.
fn pop_best(
    heap: &mut BinaryHeap<Candidate>,
    phi: &Matrix,
    basis: &Matrix,
    step: usize,
) -> Option<(usize, f64)> {
    loop {
        let mut top = heap.pop()?;
        if top.fresh == step {
            // every other key bounds its frame's gain from above
            return Some((top.frame, top.gain));
        }
        let row = phi.row(top.frame);
        for k in top.fresh..step {
            let p = dot(row, basis.row(k));
            top.gain = (top.gain - p * p).max(0.0);
        }
        top.fresh = step;
        heap.push(top);
    }
}

/// Sample-space greedy MAP inference on an explicit PSD kernel.
pub fn greedy_kernel_space(kernel: &Matrix, budget: usize) -> Result<SelectionTrace> {
    let n = kernel.nrows();
    if kernel.ncols() != n {
        return Err(Error::NonSquareKernel {
            rows: n,
            cols: kernel.ncols(),
        });
    }
    for s in 0..n {
        for t in (s + 1)..n {
            let deviation = (kernel[(s, t)] - kernel[(t, s)]).abs();
            if deviation > SYMMETRY_TOL {
                return Err(Error::AsymmetricKernel {
                    row: s,
                    col: t,
                    deviation,
                });
            }
        }
    }
    check_budget(budget, n)?;

    let mut gains: Vec<f64> = (0..n).map(|t| kernel[(t, t)]).collect();
    let mut taken = vec![false; n];
    let mut e = Matrix::zeros(budget, n);
    let mut selected = Vec::with_capacity(budget);
    let mut picked_gains = Vec::with_capacity(budget);
    let mut exhausted = false;
    let mut v = vec![0.0; n];

    for step in 0..budget {
        let Some((j, dj)) = argmax_open(&gains, &taken) else {
            break;
        };
        if dj <= EPS_RANK {
            exhausted = true;
            break;
        }
        v.copy_from_slice(kernel.row(j));
        for k in 0..step {
            let ek = e.row(k);
            axpy(-ek[j], ek, &mut v);
        }
        let root = dj.sqrt();
        let ei = e.row_mut(step);
        for (x, vi) in ei.iter_mut().zip(&v) {
            *x = vi / root;
        }

        taken[j] = true;
        selected.push(j);
        picked_gains.push(dj);

        let ei = e.row(step);
        for t in 0..n {
            if !taken[t] {
                gains[t] = (gains[t] - ei[t] * ei[t]).max(0.0);
            }
        }
    }

    let e = e.select_rows(&(0..selected.len()).collect::<Vec<_>>());
    SelectionTrace::new(selected, picked_gains, Basis::Sample(e), exhausted)
}

/// Jittered log-determinant of the principal kernel submatrix on `subset`.
/// Returns negative infinity if the factorization breaks down.
pub fn subset_logdet(kernel: &Matrix, subset: &[usize]) -> f64 {
    logdet_jittered(&kernel.principal(subset), EPS_JITTER).unwrap_or(f64::NEG_INFINITY)
}

/// Exact size-`budget` MAP by enumeration. Ties keep the lexicographically
/// first subset.
pub fn exhaustive_map(kernel: &Matrix, budget: usize) -> Result<(Vec<usize>, f64)> {
    let n = kernel.nrows();
    if kernel.ncols() != n {
        return Err(Error::NonSquareKernel {
            rows: n,
            cols: kernel.ncols(),
        });
    }
    check_budget(budget, n)?;
    let count = binomial(n as u128, budget as u128);
    if count > EXHAUSTIVE_CAP {
        return Err(Error::CapExceeded {
            what: "subset enumeration",
            size: count,
            limit: EXHAUSTIVE_CAP,
        });
    }

    let mut combo: Vec<usize> = (0..budget).collect();
    let mut best = combo.clone();
    let mut best_ld = subset_logdet(kernel, &combo);
    while next_combination(&mut combo, n) {
        let ld = subset_logdet(kernel, &combo);
        if ld > best_ld {
            best_ld = ld;
            best.copy_from_slice(&combo);
        }
    }
    Ok((best, best_ld))
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
        if acc > EXHAUSTIVE_CAP * 1_000 {
            return acc;
        }
    }
    acc
}

/// Advances to the next lexicographic k-combination of `0..n`.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Contiguous chunk boundaries: `chunks` spans of near-equal size, larger
/// spans first.
pub fn chunk_bounds(frames: usize, chunks: usize) -> Vec<(usize, usize)> {
    let base = frames / chunks;
    let extra = frames % chunks;
    let mut start = 0;
    (0..chunks)
        .map(|c| {
            let len = base + usize::from(c < extra);
            let span = (start, start + len);
            start += len;
            span
        })
        .collect()
}

/// Runs the feature-space solver independently on each temporal chunk and
/// concatenates the per-chunk selections in chunk order.
pub fn chunked_select(
    features: &ConditionedFeatures,
    chunks: usize,
    per_chunk: usize,
) -> Result<SelectionTrace> {
    let t = features.frame_count();
    if chunks == 0 || per_chunk == 0 {
        return Err(Error::InvalidPartition(format!(
            "chunks ({chunks}) and frames per chunk ({per_chunk}) must be positive"
        )));
    }
    if chunks > t {
        return Err(Error::InvalidPartition(format!(
            "{chunks} chunks over only {t} frames"
        )));
    }
    let bounds = chunk_bounds(t, chunks);
    if let Some(&(s, e)) = bounds.iter().find(|(s, e)| e - s < per_chunk) {
        return Err(Error::InvalidPartition(format!(
            "chunk [{s}, {e}) has fewer than {per_chunk} frames"
        )));
    }

    let mut selected = Vec::with_capacity(chunks * per_chunk);
    let mut gains = Vec::with_capacity(chunks * per_chunk);
    let mut bases = Vec::with_capacity(chunks);
    let mut exhausted = false;
    for (start, end) in bounds {
        let trace = greedy_feature_space(&features.slice(start, end), per_chunk)?;
        selected.extend(trace.selected().iter().map(|&i| i + start));
        gains.extend_from_slice(trace.gains());
        exhausted |= trace.exhausted();
        if let Basis::Feature(m) = trace.basis() {
            bases.push(m.clone());
        }
    }
    SelectionTrace::new(selected, gains, Basis::Chunked(bases), exhausted)
}

/// Outcome of diffing two traces step by step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceComparison {
    /// First step where the selected frame (or trace length) differs.
    pub first_divergence: Option<usize>,
    /// Largest relative gain deviation over the common prefix.
    pub max_gain_deviation: f64,
    /// First step whose relative gain deviation exceeds the tolerance.
    pub first_gain_violation: Option<usize>,
}

impl TraceComparison {
    pub fn passed(&self) -> bool {
        self.first_divergence.is_none() && self.first_gain_violation.is_none()
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both are zero.
pub fn relative_deviation(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn compare_traces(a: &SelectionTrace, b: &SelectionTrace, rel_tol: f64) -> TraceComparison {
    let common = a.len().min(b.len());
    let mut first_divergence = (0..common).find(|&i| a.selected()[i] != b.selected()[i]);
    if first_divergence.is_none() && a.len() != b.len() {
        first_divergence = Some(common);
    }
    let prefix = first_divergence.unwrap_or(common);
    let mut max_gain_deviation: f64 = 0.0;
    let mut first_gain_violation = None;
    for i in 0..prefix {
        let dev = relative_deviation(a.gains()[i], b.gains()[i]);
        max_gain_deviation = max_gain_deviation.max(dev);
        if dev > rel_tol && first_gain_violation.is_none() {
            first_gain_violation = Some(i);
        }
    }
    TraceComparison {
        first_divergence,
        max_gain_deviation,
        first_gain_violation,
    }
}
