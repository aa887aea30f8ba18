use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::PosteriorSlice;
use crate::error::{Error, Result};
use crate::kinematics::KinematicMatrices;

/// Default prior shape and rate (`ζ`, `χ`) of the diagonal gamma prior on `Λ_a`.
pub const DEFAULT_PRIOR: f64 = 1.0;

/// Per-axis gamma posterior over the process-noise precision `Λ_a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSurrogate {
    pub shape: Vector4<f64>,
    pub rate: Vector4<f64>,
    pub prior_shape: f64,
    pub prior_rate: f64,
}

impl GammaSurrogate {
    /// A surrogate whose mean is `lambda` (unit shape).
    pub fn from_mean(lambda: Vector4<f64>, prior_shape: f64, prior_rate: f64) -> Self {
        Self {
            shape: Vector4::repeat(1.0),
            rate: lambda.map(|l| 1.0 / l),
            prior_shape,
            prior_rate,
        }
    }

    /// `E[λ_a] = shape / rate`, the precision used in temporal messages.
    pub fn mean(&self) -> Vector4<f64> {
        self.shape.component_div(&self.rate)
    }
}

/// Mean-field update of `q(Λ_a)` from the current posterior slices `0..=N`.
///
/// Per axis `i`: shape `(N + ζ)/2`, rate `(χ + Σ_n V_{n,i})/2` with
/// `V_{n,i} = [G⁻¹(d dᵀ + P_n + T P_{n−1} Tᵀ)G⁻ᵀ]_ii`, `d = μ_n − T μ_{n−1}`.
pub fn update_lambda_a(
    slices: &[PosteriorSlice],
    m: &KinematicMatrices,
    prior_shape: f64,
    prior_rate: f64,
) -> Result<GammaSurrogate> {
    if slices.len() < 2 {
        return Err(Error::TooFewSlices(slices.len()));
    }
    let g_inv = m.noise_gain_inv();
    let t = &m.transition;
    let mut sum_v = Vector4::zeros();
    for pair in slices.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let d = cur.mean - t * prev.mean;
        let spread: Matrix4<f64> = d * d.transpose() + cur.covariance + t * prev.covariance * t.transpose();
        sum_v += (g_inv * spread * g_inv.transpose()).diagonal();
    }
    let transitions = (slices.len() - 1) as f64;
    Ok(GammaSurrogate {
        shape: Vector4::repeat((transitions + prior_shape) / 2.0),
        rate: (sum_v.add_scalar(prior_rate)) / 2.0,
        prior_shape,
        prior_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn slice(mean: Vector4<f64>) -> PosteriorSlice {
        PosteriorSlice {
            mean,
            covariance: Matrix4::zeros(),
        }
    }

    #[test]
    fn zero_residuals_closed_form() {
        let m = KinematicMatrices::new(0.1).unwrap();
        let mut s = vec![slice(Vector4::new(0.0, 0.0, 2.0, -1.0))];
        for _ in 0..4 {
            let next = m.transition * s.last().unwrap().mean;
            s.push(slice(next));
        }
        let g = update_lambda_a(&s, &m, 1.0, 1.0).unwrap();
        assert!((g.shape - Vector4::repeat(2.5)).norm() < 1e-12);
        assert!((g.rate - Vector4::repeat(0.5)).norm() < 1e-9);
        assert!((g.mean() - Vector4::repeat(5.0)).norm() < 1e-8);
    }

    #[test]
    fn constant_spread_closed_form() {
        // Residual only in x, sized so V_{n,x} = c for every transition.
        let m = KinematicMatrices::new(0.1).unwrap();
        let c: f64 = 0.37;
        let step = c.sqrt() * m.noise_gain[(0, 0)];
        let n = 6;
        let s: Vec<_> = (0..=n).map(|k| slice(Vector4::new(k as f64 * step, 0.0, 0.0, 0.0))).collect();
        let g = update_lambda_a(&s, &m, 1.0, 1.0).unwrap();
        let expected = (n as f64 + 1.0) / (1.0 + n as f64 * c);
        assert!((g.mean()[0] - expected).abs() < 1e-9);
        assert!((g.mean()[1] - (n as f64 + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn needs_two_slices() {
        let m = KinematicMatrices::new(0.1).unwrap();
        assert!(matches!(
            update_lambda_a(&[slice(Vector4::zeros())], &m, 1.0, 1.0),
            Err(Error::TooFewSlices(1))
        ));
    }

    #[test]
    fn invariant_to_time_shift() {
        let m = KinematicMatrices::new(0.1).unwrap();
        let s: Vec<_> = (0..8)
            .map(|k| PosteriorSlice {
                mean: Vector4::new((k * k) as f64 * 0.1, k as f64, 1.0, -(k as f64)),
                covariance: Matrix4::identity() * (1.0 + k as f64),
            })
            .collect();
        // Relabelling slices n -> n + 100 is just the same list.
        let shifted: Vec<_> = s.iter().cloned().collect();
        assert_eq!(update_lambda_a(&s, &m, 1.0, 1.0).unwrap(), update_lambda_a(&shifted, &m, 1.0, 1.0).unwrap());
        let tail = update_lambda_a(&s[3..], &m, 1.0, 1.0).unwrap();
        let mut moved = s[3..].to_vec();
        for p in &mut moved {
            p.mean[0] += 1000.0;
            p.mean[1] -= 50.0;
        }
        let far = update_lambda_a(&moved, &m, 1.0, 1.0).unwrap();
        assert!((tail.rate - far.rate).norm() < 1e-6 * tail.rate.norm());
    }

    #[test]
    fn recovers_generating_precision() {
        // Simulate φ_n = Tφ_{n−1} + G a, a ~ N(0, Λ_a⁻¹), and check E[λ]
        // against the generating precision. The relative spread of E[λ] is
        // about √(2/N), so 2000 steps put 10% at more than 3σ.
        let m = KinematicMatrices::new(0.1).unwrap();
        let truth: Vector4<f64> = Vector4::new(0.5, 2.0, 8.0, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut state = Vector4::new(0.0, 0.0, 10.0, 0.0);
        let mut s = vec![slice(state)];
        for _ in 0..2000 {
            let a = Vector4::from_fn(|i, _| Normal::new(0.0, 1.0 / truth[i].sqrt()).unwrap().sample(&mut rng));
            state = m.transition * state + m.noise_gain * a;
            s.push(slice(state));
        }
        let est = update_lambda_a(&s, &m, 1.0, 1.0).unwrap().mean();
        for i in 0..4 {
            assert!((est[i] - truth[i]).abs() / truth[i] < 0.1, "axis {i}: {} vs {}", est[i], truth[i]);
        }
    }
}
