//! Subspace-recovery scores between a true and an estimated basis.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Result, SdrError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceScore {
    pub frob: f64,
    pub trace_corr: f64,
    /// Mean of the sample canonical correlations.
    pub canon_corr: f64,
    pub canon_corr_max: f64,
}

/// `P = B(BᵀB)⁻¹Bᵀ`.
pub fn projection(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = b.transpose() * b;
    let scale = gram.amax().max(f64::MIN_POSITIVE);
    let chol = nalgebra::Cholesky::new(gram)
        .filter(|c| c.l().diagonal().min() > 1e-7 * scale.sqrt())
        .ok_or_else(|| SdrError::Numerical("basis is rank deficient".into()))?;
    Ok(b * chol.solve(&b.transpose()))
}

fn check_rows(b_true: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<()> {
    if b_true.nrows() != b_hat.nrows() {
        return Err(SdrError::Dimension(format!(
            "bases have {} and {} rows",
            b_true.nrows(),
            b_hat.nrows()
        )));
    }
    Ok(())
}

/// `‖P − P̂‖_F`.
pub fn frobenius_distance(b_true: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<f64> {
    check_rows(b_true, b_hat)?;
    Ok((projection(b_true)? - projection(b_hat)?).norm())
}

/// `tr(P P̂)/d` with `d` the dimension of `b_true`.
///
/// `b_hat` may have fewer columns than `b_true` (an under-fitted model),
/// in which case the score is at most `d̂/d`.
pub fn trace_correlation(b_true: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<f64> {
    check_rows(b_true, b_hat)?;
    if b_hat.ncols() > b_true.ncols() {
        return Err(SdrError::Dimension(format!(
            "estimate has {} columns, truth {}",
            b_hat.ncols(),
            b_true.ncols()
        )));
    }
    let p = projection(b_true)?;
    let q = projection(b_hat)?;
    Ok((p.component_mul(&q)).sum() / b_true.ncols() as f64)
}

fn centered_q(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = z.nrows();
    let mut c = z.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let qr = c.qr();
    let r = qr.r();
    let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
    if r.diagonal().iter().any(|v| v.abs() <= 1e-10 * scale) {
        return Err(SdrError::Numerical("singular within-set covariance".into()));
    }
    Ok(qr.q())
}

/// Sample canonical correlations between `X·b_true` and `X·b_hat`,
/// largest first. There are `min(d, d̂)` of them; missing directions of an
/// under-fitted `b_hat` contribute zeros so the length is always `d`.
pub fn canonical_correlations(
    ds: &SurvivalDataset,
    b_true: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    check_rows(b_true, b_hat)?;
    if ds.p() != b_true.nrows() {
        return Err(SdrError::Dimension(format!("basis has {} rows for p = {}", b_true.nrows(), ds.p())));
    }
    if ds.n() <= ds.p() {
        return Err(SdrError::Validation("canonical correlation needs n > p".into()));
    }
    let q1 = centered_q(&ds.project(b_true))?;
    let q2 = centered_q(&ds.project(b_hat))?;
    let mut s: Vec<f64> = (q1.transpose() * q2)
        .svd(false, false)
        .singular_values
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.resize(b_true.ncols(), 0.0);
    Ok(s)
}

/// Mean of [`canonical_correlations`].
pub fn canonical_correlation(ds: &SurvivalDataset, b_true: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<f64> {
    let s = canonical_correlations(ds, b_true, b_hat)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

pub fn score(ds: &SurvivalDataset, b_true: &DMatrix<f64>, b_hat: &DMatrix<f64>) -> Result<SubspaceScore> {
    let cc = canonical_correlations(ds, b_true, b_hat)?;
    Ok(SubspaceScore {
        frob: frobenius_distance(b_true, b_hat)?,
        trace_corr: trace_correlation(b_true, b_hat)?,
        canon_corr: cc.iter().sum::<f64>() / cc.len() as f64,
        canon_corr_max: cc[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DirectionMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn e(p: usize, k: usize) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(p, 1);
        b[(k, 0)] = 1.0;
        b
    }

    fn gaussian(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn spherical(n: usize, p: usize, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(n, p, &mut rng);
        SurvivalDataset::new(x, vec![1.0; n], vec![true; n], None).unwrap()
    }

    #[test]
    fn projection_basics() {
        let p = projection(&e(4, 0)).unwrap();
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 0)] = 1.0;
        assert_eq!(p, expected);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = gaussian(6, 2, &mut rng);
        let q = gaussian(2, 2, &mut rng);
        let p1 = projection(&b).unwrap();
        assert!((&p1 - projection(&(&b * q)).unwrap()).amax() < 1e-12);
        assert!((&p1 * &p1 - &p1).amax() < 1e-10);
        assert!((p1.trace() - 2.0).abs() < 1e-12);
        let o = DirectionMatrix::from_basis(&b).unwrap();
        assert!((projection(o.matrix()).unwrap() - o.matrix() * o.matrix().transpose()).amax() < 1e-12);
        assert!(projection(&DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn frobenius_and_trace_examples() {
        let (a, b) = (e(3, 0), e(3, 1));
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        assert!((frobenius_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_distance(&a, &b).unwrap(), frobenius_distance(&b, &a).unwrap());
        assert!((trace_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(trace_correlation(&a, &b).unwrap(), 0.0);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = DMatrix::from_column_slice(3, 1, &[s, s, 0.0]);
        assert!((trace_correlation(&a, &c).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn frob_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in 1..=3 {
            let b1 = DirectionMatrix::from_basis(&gaussian(6, d, &mut rng)).unwrap();
            let b2 = DirectionMatrix::from_basis(&gaussian(6, d, &mut rng)).unwrap();
            let fr = frobenius_distance(b1.matrix(), b2.matrix()).unwrap();
            let tr = trace_correlation(b1.matrix(), b2.matrix()).unwrap();
            let d = d as f64;
            assert!((fr * fr - (2.0 * d - 2.0 * d * tr)).abs() < 1e-10);
        }
    }

    #[test]
    fn canonical_correlation_examples() {
        let ds = spherical(10_000, 3, 3);
        let a = e(3, 0);
        assert!((canonical_correlation(&ds, &a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(canonical_correlation(&ds, &a, &e(3, 1)).unwrap() < 0.05);

        let small = spherical(200, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b1 = gaussian(5, 2, &mut rng);
        let b2 = gaussian(5, 2, &mut rng);
        let q = gaussian(2, 2, &mut rng);
        let c1 = canonical_correlation(&small, &b1, &b2).unwrap();
        let c2 = canonical_correlation(&small, &b1, &(&b2 * q)).unwrap();
        assert!((c1 - c2).abs() < 1e-10);
    }

    #[test]
    fn underfitted_estimate() {
        let ds = spherical(500, 4, 6);
        let truth = DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let s = score(&ds, &truth, &e(4, 0)).unwrap();
        assert!((s.trace_corr - 0.5).abs() < 1e-12);
        assert!((s.canon_corr - 0.5).abs() < 1e-12);
        assert!((s.canon_corr_max - 1.0).abs() < 1e-12);
        assert!(trace_correlation(&e(4, 0), &truth).is_err());
    }
}
