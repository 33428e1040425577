//! Query-conditioned features and the explicit L-ensemble kernel.
//!
//! Frames are unit-normalized, scored against the query by cosine similarity,
//! and the scores are min-max normalized into `[0, 1]`. Row `t` of the feature
//! matrix is the unit frame direction scaled by that normalized relevance, so
//! the kernel `L = diag(r) S diag(r)` factors as `phi * phi^T`.

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::types::{ConditionedFeatures, EmbeddingSet};

/// Largest frame count for which the dense kernel is built by default.
pub const DEFAULT_KERNEL_CAP: usize = 20_000;

/// Unit-normalizes every frame embedding.
pub fn normalize_frames(embeddings: &EmbeddingSet) -> Matrix {
    let mut out = embeddings.frames().clone();
    normalize_rows(&mut out);
    out
}

fn normalize_rows(m: &mut Matrix) {
    for t in 0..m.nrows() {
        let row = m.row_mut(t);
        let norm = dot(row, row).sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Cosine similarity of each (unit) frame row with the query.
pub fn compute_relevance(normalized_frames: &Matrix, query: &[f64]) -> Vec<f64> {
    let qn = dot(query, query).sqrt();
    normalized_frames
        .rows_iter()
        .map(|row| dot(row, query) / qn)
        .collect()
}

/// Maps `raw` affinely onto `[0, 1]`. A constant input carries no query signal
/// and maps to all ones.
pub fn minmax_normalize(raw: &[f64]) -> Vec<f64> {
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return vec![1.0; raw.len()];
    }
    let span = hi - lo;
    raw.iter()
        .map(|&v| {
            if v == hi {
                1.0
            } else {
                ((v - lo) / span).clamp(0.0, 1.0)
            }
        })
        .collect()
}

/// Builds the query-conditioned feature matrix for an embedding set.
pub fn build_phi(embeddings: &EmbeddingSet) -> Result<ConditionedFeatures> {
    condition(embeddings.clone())
}

/// Same as [`build_phi`], but conditions the frame buffer in place.
///
/// Two sweeps over the rows: normalize and score each row while it is hot,
/// then scale it by its relevance and take its squared norm.
pub fn condition(embeddings: EmbeddingSet) -> Result<ConditionedFeatures> {
    let (mut phi, query) = embeddings.into_parts();
    let qn = dot(&query, &query).sqrt();
    let raw: Vec<f64> = (0..phi.nrows())
        .map(|t| {
            let row = phi.row_mut(t);
            let norm = dot(row, row).sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            dot(row, &query) / qn
        })
        .collect();
    let relevance = minmax_normalize(&raw);
    // backwards, so the rows the first sweep touched last are still cached
    let mut norms = vec![0.0; relevance.len()];
    for t in (0..relevance.len()).rev() {
        let row = phi.row_mut(t);
        row.iter_mut().for_each(|v| *v *= relevance[t]);
        norms[t] = dot(row, row);
    }
    ConditionedFeatures::with_norms(phi, relevance, norms)
}

/// Dense kernel `L[s][t] = <phi_s, phi_t>` with the default size cap.
pub fn materialize_kernel(features: &ConditionedFeatures) -> Result<Matrix> {
    materialize_kernel_capped(features, DEFAULT_KERNEL_CAP)
}

/// Dense kernel, refusing more than `cap` frames.
pub fn materialize_kernel_capped(features: &ConditionedFeatures, cap: usize) -> Result<Matrix> {
    let t = features.frame_count();
    if t > cap {
        return Err(Error::CapExceeded {
            what: "kernel frame count",
            size: t as u128,
            limit: cap as u128,
        });
    }
    Ok(features.phi().gram())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(rows: &[&[f64]], query: &[f64]) -> EmbeddingSet {
        EmbeddingSet::new(Matrix::from_rows(rows).unwrap(), query.to_vec()).unwrap()
    }

    fn random_set(seed: u64, t: usize, d: usize) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        EmbeddingSet::new(Matrix::from_rows(&rows).unwrap(), q).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let n = normalize_frames(&set(&[&[3.0, 4.0], &[1.0, 0.0]], &[1.0, 0.0]));
        assert!((n[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((n[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(n.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn normalized_rows_are_unit() {
        let n = normalize_frames(&random_set(1, 5, 8));
        for row in n.rows_iter() {
            assert!((dot(row, row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relevance_parallel_orthogonal_and_diagonal() {
        let q = [2.0, 0.0];
        let n = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(compute_relevance(&n, &q), vec![1.0, 0.0]);

        let s = 1.0 / 3f64.sqrt();
        let r = compute_relevance(&Matrix::identity(3), &[s, s, s]);
        for v in r {
            assert!((v - 0.577_350_269_189_625_8).abs() < 1e-9);
        }
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[0.2, 0.8]), vec![0.0, 1.0]);
        assert_eq!(minmax_normalize(&[0.5, 0.5, 0.5]), vec![1.0, 1.0, 1.0]);
        let r = minmax_normalize(&[0.1, 0.4, 0.7]);
        for (a, b) in r.iter().zip([0.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        // negative cosines pass straight through
        assert_eq!(minmax_normalize(&[-1.0, 1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn singleton_phi_is_unit_frame() {
        let f = build_phi(&set(&[&[3.0, 4.0]], &[0.0, 1.0])).unwrap();
        assert_eq!(f.relevance(), &[1.0]);
        assert!((f.phi()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((f.phi()[(0, 1)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn least_relevant_row_is_zeroed() {
        let f = build_phi(&set(&[&[0.0, 1.0], &[1.0, 0.0]], &[1.0, 0.0])).unwrap();
        assert_eq!(f.relevance(), &[0.0, 1.0]);
        assert_eq!(f.phi().row(0), &[0.0, 0.0]);
    }

    #[test]
    fn phi_gram_matches_scaled_similarity() {
        let emb = random_set(7, 6, 4);
        let f = build_phi(&emb).unwrap();
        let unit = normalize_frames(&emb);
        let r = f.relevance();
        let l = materialize_kernel(&f).unwrap();
        for s in 0..6 {
            for t in 0..6 {
                let sim: f64 = unit
                    .row(s)
                    .iter()
                    .zip(unit.row(t))
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((l[(s, t)] - r[s] * sim * r[t]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kernel_of_orthonormal_rows_is_identity() {
        let f = ConditionedFeatures::from_phi(Matrix::identity(4)).unwrap();
        assert_eq!(materialize_kernel(&f).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn duplicate_rows_give_singular_kernel() {
        let f =
            ConditionedFeatures::from_phi(Matrix::from_rows(&[[0.6, 0.8], [0.6, 0.8]]).unwrap())
                .unwrap();
        let l = materialize_kernel(&f).unwrap();
        let det = l[(0, 0)] * l[(1, 1)] - l[(0, 1)] * l[(1, 0)];
        assert!(det.abs() < 1e-15);
    }

    #[test]
    fn kernel_is_psd() {
        let f = build_phi(&random_set(3, 5, 3)).unwrap();
        let l = materialize_kernel(&f).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(5, 5, l.as_slice());
        assert_eq!(m, m.transpose());
        let eig = m.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-9));
    }

    #[test]
    fn cap_is_enforced() {
        let f = build_phi(&random_set(3, 5, 3)).unwrap();
        assert!(matches!(
            materialize_kernel_capped(&f, 4),
            Err(Error::CapExceeded { .. })
        ));
        assert!(materialize_kernel_capped(&f, 5).is_ok());
    }
}
