//! Variational message passing for the target state.
//!
//! Every message is Gaussian in the state `φ = [x, y, vx, vy]` and is kept in
//! information form (mean + precision) so that fusing any number of them is a
//! sum. Data messages come from a per-pulse KL fit of a diagonal Gaussian to
//! the radar likelihood; temporal messages come from the transition model
//! with the current process-noise precision estimate.

mod gamma;
mod messages;
mod objective;
mod optimize;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

pub use gamma::{update_lambda_a, GammaSurrogate, DEFAULT_PRIOR};
pub use messages::{combine_gaussians, prediction_message, smoothing_message};
pub use objective::{alpha_ml_estimate, kl_gradient, kl_objective, range_frame, ObservationContext};
pub use optimize::{minimize_data_message, DataMessageFit, DataMessageOptions, TraceRow};

/// Gaussian message `N(mean, precision⁻¹)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMessage {
    pub mean: Vector4<f64>,
    pub precision: Matrix4<f64>,
    /// Set when the fit behind this message did not meet its convergence test.
    pub low_confidence: bool,
}

impl GaussianMessage {
    pub fn new(mean: Vector4<f64>, precision: Matrix4<f64>) -> Self {
        Self {
            mean,
            precision,
            low_confidence: false,
        }
    }
}

/// One time slice of the approximate posterior `q(φ_n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSlice {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

impl PosteriorSlice {
    /// 2×2 position block of the covariance.
    pub fn position_covariance(&self) -> nalgebra::Matrix2<f64> {
        self.covariance.fixed_view::<2, 2>(0, 0).into_owned()
    }
}
