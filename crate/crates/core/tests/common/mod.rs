//! Instance generators and independent oracles shared by the integration
//! tests. Nothing here calls into the solver code paths it is used to check.

#![allow(dead_code)]

use lddr::io::{Mode, RunConfig};
use lddr::kernel::build_phi;
use lddr::linalg::Matrix;
use lddr::types::{ConditionedFeatures, EmbeddingSet, ImportanceTable};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_set<R: Rng>(rng: &mut R, t: usize, d: usize) -> EmbeddingSet {
    loop {
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        let q: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if let Ok(set) = EmbeddingSet::new(Matrix::from_rows(&rows).unwrap(), q) {
            return set;
        }
    }
}

pub fn gaussian_features<R: Rng>(rng: &mut R, t: usize, d: usize) -> ConditionedFeatures {
    build_phi(&gaussian_set(rng, t, d)).unwrap()
}

/// Random subset of `0..t` of the given size, in random order.
pub fn random_subset<R: Rng>(rng: &mut R, t: usize, size: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, t, size).into_vec()
}

pub fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.nrows(), m.ncols(), m.as_slice())
}

/// `det(Phi_S Phi_S^T + jitter I)` by LU decomposition; 1 for the empty set.
pub fn gram_det(features: &ConditionedFeatures, subset: &[usize], jitter: f64) -> f64 {
    if subset.is_empty() {
        return 1.0;
    }
    let rows = to_dmatrix(&features.phi().select_rows(subset));
    let g = &rows * rows.transpose() + DMatrix::identity(subset.len(), subset.len()) * jitter;
    g.determinant()
}

/// Natural log of the jittered Gram determinant by LU.
pub fn gram_logdet(features: &ConditionedFeatures, subset: &[usize], jitter: f64) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let rows = to_dmatrix(&features.phi().select_rows(subset));
    let g = &rows * rows.transpose() + DMatrix::identity(subset.len(), subset.len()) * jitter;
    let lu = g.lu();
    let u = lu.u();
    (0..subset.len()).map(|i| u[(i, i)].abs().ln()).sum()
}

/// Squared distance from `phi_t` to the span of `others`, via SVD least squares.
pub fn projection_residual(features: &ConditionedFeatures, t: usize, others: &[usize]) -> f64 {
    let target = nalgebra::DVector::from_row_slice(features.phi().row(t));
    if others.is_empty() {
        return target.norm_squared();
    }
    let a = to_dmatrix(&features.phi().select_rows(others)).transpose();
    let svd = a.clone().svd(true, true);
    let x = svd.solve(&target, 1e-12).unwrap();
    (target - a * x).norm_squared()
}

pub fn relative(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Allocation rule restated independently: rank by score (ties to the lower
/// frame), share the budget within the prefix, clamp, floor.
pub fn oracle_grants(
    frames: &[usize],
    scores: &[f64],
    budget: u64,
    w_min: u32,
    w_max: u32,
    k: usize,
) -> Vec<u64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(frames[a].cmp(&frames[b]))
    });
    let prefix = &order[..k];
    let sum: f64 = prefix.iter().map(|&i| scores[i]).sum();
    prefix
        .iter()
        .map(|&i| {
            let share = if sum > 0.0 {
                budget as f64 * scores[i] / sum
            } else {
                budget as f64 / k as f64
            };
            let clamped = share.max(w_min as f64).min(w_max as f64);
            ((clamped * (1.0 + 1e-12)).floor() as u64).clamp(w_min as u64, w_max as u64)
        })
        .collect()
}

/// Largest k whose grants fit, by trying every k.
pub fn oracle_kstar(
    frames: &[usize],
    scores: &[f64],
    budget: u64,
    w_min: u32,
    w_max: u32,
) -> Option<usize> {
    (1..=scores.len())
        .filter(|&k| {
            oracle_grants(frames, scores, budget, w_min, w_max, k)
                .iter()
                .sum::<u64>()
                <= budget
        })
        .max()
}

pub fn flat_table(scores: &[f64]) -> ImportanceTable {
    ImportanceTable::flat((0..scores.len()).collect(), scores.to_vec()).unwrap()
}

pub fn config(mode: Mode, frames: usize) -> RunConfig {
    RunConfig {
        frame_budget: frames,
        mode,
        ..RunConfig::default()
    }
}
