use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// `χ²₂` quantile at 0.95: the squared Mahalanobis radius of the 95% ellipse.
pub const CHI2_2_95: f64 = 5.991_464_547_107_979;

/// Per-index `sqrt(mean over runs ‖ê − x‖²)`. `estimates[r][n]` is run `r`
/// at index `n`.
pub fn compute_rmse(estimates: &[Vec<Vector2<f64>>], truth: &[Vector2<f64>]) -> Result<Vec<f64>> {
    if estimates.len() < 2 {
        return Err(Error::Config(format!("RMSE needs at least 2 runs, got {}", estimates.len())));
    }
    let mut sum = vec![0.0; truth.len()];
    for run in estimates {
        if run.len() != truth.len() {
            return Err(Error::LengthMismatch {
                expected: truth.len(),
                actual: run.len(),
            });
        }
        for ((s, e), x) in sum.iter_mut().zip(run).zip(truth) {
            *s += (e - x).norm_squared();
        }
    }
    let runs = estimates.len() as f64;
    Ok(sum.into_iter().map(|s| (s / runs).sqrt()).collect())
}

/// Whether `truth` lies inside the ellipse `eᵀΣ⁻¹e ≤ threshold`.
pub fn inside_ellipse(mean: &Vector2<f64>, cov: &Matrix2<f64>, truth: &Vector2<f64>, threshold: f64, index: usize) -> Result<bool> {
    let chol = cov.cholesky().ok_or(Error::NotSpd(index))?;
    let e = truth - mean;
    Ok(e.dot(&chol.solve(&e)) <= threshold)
}

/// Per-index indicator of the truth lying in the 95% position ellipse.
pub fn coverage_indicators(means: &[Vector2<f64>], covs: &[Matrix2<f64>], truth: &[Vector2<f64>]) -> Result<Vec<bool>> {
    for len in [means.len(), covs.len()] {
        if len != truth.len() {
            return Err(Error::LengthMismatch {
                expected: truth.len(),
                actual: len,
            });
        }
    }
    means
        .iter()
        .zip(covs)
        .zip(truth)
        .enumerate()
        .map(|(n, ((m, c), x))| inside_ellipse(m, c, x, CHI2_2_95, n))
        .collect()
}

/// Fraction of indices whose truth lies inside the 95% position ellipse.
pub fn compute_coverage(means: &[Vector2<f64>], covs: &[Matrix2<f64>], truth: &[Vector2<f64>]) -> Result<f64> {
    let hits = coverage_indicators(means, covs, truth)?;
    if hits.is_empty() {
        return Ok(0.0);
    }
    Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn rmse_examples() {
        let truth = vec![Vector2::new(1.0, 2.0); 3];
        let zero = compute_rmse(&[truth.clone(), truth.clone()], &truth).unwrap();
        assert!(zero.iter().all(|r| *r == 0.0));
        let shifted: Vec<_> = truth.iter().map(|t| t + Vector2::new(1.0, 0.0)).collect();
        let one = compute_rmse(&[shifted.clone(), shifted.clone(), shifted], &truth).unwrap();
        assert!(one.iter().all(|r| (r - 1.0).abs() < 1e-15));
        let t = vec![Vector2::zeros()];
        let r = compute_rmse(&[vec![Vector2::new(3.0, 0.0)], vec![Vector2::new(0.0, 4.0)]], &t).unwrap();
        assert!((r[0] - 3.535_533_905_932_737_6).abs() < 1e-12);
    }

    #[test]
    fn rmse_errors() {
        let t = vec![Vector2::zeros(); 2];
        assert!(compute_rmse(&[t.clone()], &t).is_err());
        assert!(matches!(
            compute_rmse(&[t.clone(), vec![Vector2::zeros()]], &t),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn coverage_extremes() {
        let truth = vec![Vector2::new(5.0, -1.0); 4];
        let covs = vec![Matrix2::new(2.0, 0.5, 0.5, 1.0); 4];
        assert_eq!(compute_coverage(&truth, &covs, &truth).unwrap(), 1.0);
        let far: Vec<_> = truth.iter().map(|t| t + Vector2::new(10.0 * 2f64.sqrt(), 0.0)).collect();
        assert_eq!(compute_coverage(&far, &covs, &truth).unwrap(), 0.0);
        let bad = vec![Matrix2::new(1.0, 2.0, 2.0, 1.0); 4];
        assert!(matches!(compute_coverage(&truth, &bad, &truth), Err(Error::NotSpd(0))));
    }

    #[test]
    fn coverage_calibrated_on_matching_gaussians() {
        let cov = Matrix2::new(4.0, 1.2, 1.2, 0.9);
        let l = cov.cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let truth = vec![Vector2::zeros(); n];
        let means: Vec<_> = (0..n)
            .map(|_| l * Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let c = compute_coverage(&means, &vec![cov; n], &truth).unwrap();
        assert!((c - 0.95).abs() < 0.02, "{c}");
    }
}
