use nalgebra::{Matrix4, SymmetricEigen, Vector4};

use super::{GammaSurrogate, GaussianMessage, PosteriorSlice};
use crate::error::{Error, Result};
use crate::kinematics::{process_noise_precision, KinematicMatrices};

/// Forward message into slice `n` from the posterior mean of slice `n − 1`.
pub fn prediction_message(
    prev_mean: &Vector4<f64>,
    gamma: &GammaSurrogate,
    m: &KinematicMatrices,
) -> Result<GaussianMessage> {
    let precision = process_noise_precision(&gamma.mean(), m)?;
    Ok(GaussianMessage::new(m.transition * prev_mean, precision))
}

/// Backward message into slice `n` from the posterior mean of slice `n + 1`.
pub fn smoothing_message(
    next_mean: &Vector4<f64>,
    gamma: &GammaSurrogate,
    m: &KinematicMatrices,
) -> Result<GaussianMessage> {
    let inner = process_noise_precision(&gamma.mean(), m)?;
    let precision = m.transition.transpose() * inner * m.transition;
    Ok(GaussianMessage::new(m.transition_inv() * next_mean, precision))
}

/// Relative eigenvalue floor below which a precision direction counts as empty.
const NULL_TOLERANCE: f64 = 1e-12;

/// Product of Gaussian messages: precisions add, means combine weighted by
/// precision.
pub fn combine_gaussians(messages: &[GaussianMessage]) -> Result<PosteriorSlice> {
    let mut precision = Matrix4::zeros();
    let mut info = Vector4::zeros();
    for msg in messages {
        precision += msg.precision;
        info += msg.precision * msg.mean;
    }
    let precision = (precision + precision.transpose()) * 0.5;
    if let Some(chol) = precision.cholesky() {
        let covariance = chol.inverse();
        let mean = chol.solve(&info);
        if mean.iter().all(|v| v.is_finite()) {
            return Ok(PosteriorSlice {
                mean,
                covariance: (covariance + covariance.transpose()) * 0.5,
            });
        }
    }
    Err(Error::SingularPrecision {
        null_directions: null_directions(&precision),
    })
}

fn null_directions(precision: &Matrix4<f64>) -> Vec<[f64; 4]> {
    let eig = SymmetricEigen::new(*precision);
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    (0..4)
        .filter(|&i| eig.eigenvalues[i] <= NULL_TOLERANCE * scale)
        .map(|i| {
            let v = eig.eigenvectors.column(i);
            [v[0], v[1], v[2], v[3]]
        })
        .collect()
}
