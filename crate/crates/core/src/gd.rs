//! Group-DPP leave-one-out importance.
//!
//! For a selected set `S` the importance of `t` is the determinant ratio
//! `det(G_S) / det(G_{S\t})`, which equals the squared residual of `phi_t`
//! after projecting out the span of the other selected rows. Both forms are
//! computed here with the same diagonal jitter so they can be cross-checked.

use crate::error::{Error, Result};
use crate::linalg::{axpy, cholesky, cholesky_solve, dot, logdet_jittered, Matrix};
use crate::types::{check_distinct, ConditionedFeatures, ImportanceTable, EPS_JITTER};

/// Default exponent on the density prior.
pub const DEFAULT_TAU: f64 = 1.0;

/// Slack allowed on the bound `I_t <= relevance_t^2`.
pub const GD_BOUND_TOL: f64 = 1e-6;

fn check_selection(features: &ConditionedFeatures, selected: &[usize]) -> Result<()> {
    if selected.is_empty() {
        return Err(Error::Empty("selected set"));
    }
    check_distinct(selected, features.frame_count())
}

fn jittered_factor(gram: &Matrix) -> Result<Matrix> {
    let mut m = gram.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += EPS_JITTER;
    }
    cholesky(&m)
        .ok_or_else(|| Error::Invariant("jittered Gram matrix is not positive definite".into()))
}

/// Importance by leave-one-out log-determinants of the jittered Gram matrix.
pub fn gd_logdet(features: &ConditionedFeatures, selected: &[usize]) -> Result<Vec<f64>> {
    check_selection(features, selected)?;
    let gram = features.phi().select_rows(selected).gram();
    let full = logdet_jittered(&gram, EPS_JITTER)
        .ok_or_else(|| Error::Invariant("jittered Gram matrix is not positive definite".into()))?;
    (0..selected.len())
        .map(|pos| {
            let rest: Vec<usize> = (0..selected.len()).filter(|&i| i != pos).collect();
            let without = logdet_jittered(&gram.principal(&rest), EPS_JITTER).ok_or_else(|| {
                Error::Invariant("jittered Gram matrix is not positive definite".into())
            })?;
            Ok((full - without).exp())
        })
        .collect()
}

/// Residual-form scores. `residual[i]` is the squared norm of what is left of
/// `phi_t` after the regularized projection onto the other selected rows;
/// adding `jitter_correction[i]` reproduces the jittered determinant ratio
/// exactly (in exact arithmetic).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualScores {
    pub residual: Vec<f64>,
    pub jitter_correction: Vec<f64>,
}

impl ResidualScores {
    /// Residual plus jitter correction: comparable with [`gd_logdet`].
    pub fn jittered(&self) -> Vec<f64> {
        self.residual
            .iter()
            .zip(&self.jitter_correction)
            .map(|(r, c)| r + c)
            .collect()
    }
}

/// Projects `target` onto the row span of `basis_rows` through the jittered
/// normal equations. Returns the squared residual norm and `|x|^2` of the
/// coefficient vector.
fn ridge_residual(basis_rows: &Matrix, target: &[f64]) -> Result<(f64, f64)> {
    if basis_rows.nrows() == 0 {
        return Ok((dot(target, target), 0.0));
    }
    let l = jittered_factor(&basis_rows.gram())?;
    let rhs: Vec<f64> = basis_rows.rows_iter().map(|r| dot(r, target)).collect();
    let x = cholesky_solve(&l, &rhs);
    let mut resid = target.to_vec();
    for (xi, row) in x.iter().zip(basis_rows.rows_iter()) {
        axpy(-xi, row, &mut resid);
    }
    Ok((dot(&resid, &resid), dot(&x, &x)))
}

/// Squared residual of frame `target` against the span of `others`.
pub fn residual_against(
    features: &ConditionedFeatures,
    target: usize,
    others: &[usize],
) -> Result<f64> {
    check_distinct(others, features.frame_count())?;
    if target >= features.frame_count() {
        return Err(Error::IndexOutOfRange {
            index: target,
            frames: features.frame_count(),
        });
    }
    let rows = features.phi().select_rows(others);
    ridge_residual(&rows, features.phi().row(target)).map(|(r, _)| r)
}

/// Importance by residual projection against the rest of the selected set.
pub fn gd_residual(features: &ConditionedFeatures, selected: &[usize]) -> Result<ResidualScores> {
    check_selection(features, selected)?;
    let mut residual = Vec::with_capacity(selected.len());
    let mut jitter_correction = Vec::with_capacity(selected.len());
    for (pos, &t) in selected.iter().enumerate() {
        let rest: Vec<usize> = selected
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != pos)
            .map(|(_, &s)| s)
            .collect();
        let rows = features.phi().select_rows(&rest);
        let (r, xsq) = ridge_residual(&rows, features.phi().row(t))?;
        residual.push(r);
        jitter_correction.push(EPS_JITTER * (1.0 + xsq));
    }
    Ok(ResidualScores {
        residual,
        jitter_correction,
    })
}

/// Squared feature norm of each selected frame relative to the set mean.
pub fn density_prior(features: &ConditionedFeatures, selected: &[usize]) -> Result<Vec<f64>> {
    check_selection(features, selected)?;
    let norms: Vec<f64> = selected
        .iter()
        .map(|&t| features.row_norms_sq()[t])
        .collect();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::AllZeroNorms);
    }
    Ok(norms.into_iter().map(|n| n / mean).collect())
}

/// Combines GD scores with the density prior: `gd * rho^tau`.
pub fn density_aware_score(
    selected: &[usize],
    gd: &[f64],
    rho: &[f64],
    tau: f64,
) -> Result<ImportanceTable> {
    ImportanceTable::new(selected.to_vec(), gd.to_vec(), rho.to_vec(), tau)
}

/// Full importance table for a selected set, using the determinant form.
pub fn score_selection(
    features: &ConditionedFeatures,
    selected: &[usize],
    tau: f64,
) -> Result<ImportanceTable> {
    let gd = gd_logdet(features, selected)?;
    for (&t, &g) in selected.iter().zip(&gd) {
        let bound = features.relevance()[t].powi(2) + GD_BOUND_TOL;
        if g > bound {
            return Err(Error::Invariant(format!(
                "GD score {g} of frame {t} exceeds its relevance bound {bound}"
            )));
        }
    }
    let rho = density_prior(features, selected)?;
    density_aware_score(selected, &gd, &rho, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(rows: &[&[f64]]) -> ConditionedFeatures {
        ConditionedFeatures::from_phi(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn singleton_score_is_norm_plus_jitter() {
        let f = features(&[&[0.6, 0.0], &[0.0, 1.0]]);
        let gd = gd_logdet(&f, &[0]).unwrap();
        assert!((gd[0] - (0.36 + EPS_JITTER)).abs() < 1e-12);
        let res = gd_residual(&f, &[0]).unwrap();
        assert_eq!(res.residual[0], 0.36);
        assert!((res.jittered()[0] - gd[0]).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_pair_scores_one() {
        let f = features(&[&[1.0, 0.0], &[0.0, 1.0]]);
        for g in gd_logdet(&f, &[0, 1]).unwrap() {
            assert!((g - 1.0).abs() < 1e-7);
        }
        assert_eq!(gd_residual(&f, &[0, 1]).unwrap().residual, vec![1.0, 1.0]);
    }

    #[test]
    fn thirty_degree_pair() {
        let th = 30f64.to_radians();
        let f = features(&[&[1.0, 0.0], &[th.cos(), th.sin()]]);
        for g in gd_logdet(&f, &[0, 1]).unwrap() {
            assert!((g - 0.25).abs() < 1e-6);
        }
        for g in gd_residual(&f, &[0, 1]).unwrap().residual {
            assert!((g - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn in_span_residual_vanishes() {
        let f = features(&[&[0.5, 0.0, 0.0], &[0.0, 0.5, 0.0], &[0.3, 0.4, 0.0]]);
        let res = gd_residual(&f, &[0, 1, 2]).unwrap();
        assert!(res.residual[2].abs() < 1e-8);
    }

    #[test]
    fn selection_errors() {
        let f = features(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(gd_logdet(&f, &[]), Err(Error::Empty(_))));
        assert!(matches!(
            gd_logdet(&f, &[1, 1]),
            Err(Error::DuplicateIndex(1))
        ));
        assert!(matches!(
            gd_residual(&f, &[0, 0]),
            Err(Error::DuplicateIndex(0))
        ));
        assert!(matches!(
            gd_logdet(&f, &[2]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn density_prior_examples() {
        let f = features(&[&[0.5, 0.0], &[0.0, 0.5]]);
        assert_eq!(density_prior(&f, &[0, 1]).unwrap(), vec![1.0, 1.0]);

        // squared norms (1, 2, 3) scaled by 1/4 to keep rows inside the unit ball
        let f = features(&[&[0.5, 0.0], &[0.5, 0.5], &[0.5, 0.5f64 * 2f64.sqrt()]]);
        let rho = density_prior(&f, &[0, 1, 2]).unwrap();
        for (a, b) in rho.iter().zip([0.5, 1.0, 1.5]) {
            assert!((a - b).abs() < 1e-12);
        }

        let f = features(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert_eq!(density_prior(&f, &[0, 1]).unwrap(), vec![2.0, 0.0]);
        assert!(matches!(density_prior(&f, &[1]), Err(Error::AllZeroNorms)));
    }

    #[test]
    fn density_aware_examples() {
        let t = density_aware_score(&[0, 1], &[0.25, 0.25], &[0.5, 1.5], 1.0).unwrap();
        assert_eq!(t.density_aware(), &[0.125, 0.375]);
        let t = density_aware_score(&[0, 1], &[0.3, 0.7], &[0.5, 1.5], 0.0).unwrap();
        assert_eq!(t.density_aware(), &[0.3, 0.7]);
        let t = density_aware_score(&[0, 1], &[0.3, 0.7], &[1.0, 1.0], 2.5).unwrap();
        assert_eq!(t.density_aware(), &[0.3, 0.7]);
        assert!(matches!(
            density_aware_score(&[0, 1], &[0.3], &[1.0, 1.0], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_relevance_frame_sorts_last() {
        let f = features(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.8]]);
        let table = score_selection(&f, &[0, 1, 2], 1.0).unwrap();
        assert_eq!(table.density_aware()[1], 0.0);
        assert_eq!(table.ranking().last(), Some(&1));
    }
}
