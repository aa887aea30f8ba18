use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::kinematics::KinematicMatrices;

/// Linear-Gaussian model for the stacked multi-radar position filter.
#[derive(Clone, Debug, PartialEq)]
pub struct KfModel {
    pub transition: Matrix4<f64>,
    pub process_cov: Matrix4<f64>,
    pub n_radars: usize,
}

impl KfModel {
    /// `Q = G·diag(1/λ)·Gᵀ`, the covariance whose inverse is the process
    /// precision used by the tracker for the same `λ`.
    pub fn new(m: &KinematicMatrices, lambda: &Vector4<f64>, n_radars: usize) -> Result<Self> {
        if lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::NonPositivePrecision([lambda[0], lambda[1], lambda[2], lambda[3]]));
        }
        let q = Matrix4::from_diagonal(&lambda.map(|l| 1.0 / l));
        Ok(Self {
            transition: m.transition,
            process_cov: m.noise_gain * q * m.noise_gain.transpose(),
            n_radars,
        })
    }

    /// Stacked observation matrix: one `[I₂ 0]` block per radar.
    pub fn observation_matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(2 * self.n_radars, 4);
        for k in 0..self.n_radars {
            h[(2 * k, 0)] = 1.0;
            h[(2 * k + 1, 1)] = 1.0;
        }
        h
    }
}

/// One pulse of stacked position measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedMeasurement {
    pub z: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl StackedMeasurement {
    /// Stacks per-radar global positions with block-diagonal covariance.
    pub fn from_positions(positions: &[(Vector2<f64>, Matrix2<f64>)]) -> Self {
        let n = positions.len();
        let mut z = DVector::zeros(2 * n);
        let mut cov = DMatrix::zeros(2 * n, 2 * n);
        for (k, (p, c)) in positions.iter().enumerate() {
            z.fixed_rows_mut::<2>(2 * k).copy_from(p);
            cov.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(c);
        }
        Self { z, cov }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KfForward {
    pub filtered_means: Vec<Vector4<f64>>,
    pub filtered_covs: Vec<Matrix4<f64>>,
    /// Predicted moments for step `n` (step 0 holds the prior).
    pub predicted_means: Vec<Vector4<f64>>,
    pub predicted_covs: Vec<Matrix4<f64>>,
}

/// Standard predict/update recursion. The prior applies to step 0 directly.
pub fn kf_forward(
    measurements: &[StackedMeasurement],
    model: &KfModel,
    prior_mean: Vector4<f64>,
    prior_cov: Matrix4<f64>,
) -> Result<KfForward> {
    let h = model.observation_matrix();
    let t = &model.transition;
    let mut out = KfForward {
        filtered_means: Vec::with_capacity(measurements.len()),
        filtered_covs: Vec::with_capacity(measurements.len()),
        predicted_means: Vec::with_capacity(measurements.len()),
        predicted_covs: Vec::with_capacity(measurements.len()),
    };
    let (mut x, mut p) = (prior_mean, prior_cov);
    for (n, meas) in measurements.iter().enumerate() {
        if meas.z.len() != h.nrows() {
            return Err(Error::LengthMismatch {
                expected: h.nrows(),
                actual: meas.z.len(),
            });
        }
        if n > 0 {
            x = t * x;
            p = t * p * t.transpose() + model.process_cov;
        }
        out.predicted_means.push(x);
        out.predicted_covs.push(p);
        let pd = DMatrix::from_column_slice(4, 4, p.as_slice());
        let s = &h * &pd * h.transpose() + &meas.cov;
        let s_chol = s.cholesky().ok_or(Error::InnovationNotSpd(n))?;
        // K = P Hᵀ S⁻¹
        let gain = s_chol.solve(&(&h * &pd)).transpose();
        let innovation = &meas.z - &h * DVector::from_column_slice(x.as_slice());
        let dx = &gain * innovation;
        x += Vector4::from_column_slice(dx.as_slice());
        // Joseph form keeps P symmetric positive definite.
        let ikh = DMatrix::identity(4, 4) - &gain * &h;
        let pn = &ikh * &pd * ikh.transpose() + &gain * &meas.cov * gain.transpose();
        p = Matrix4::from_column_slice(pn.as_slice());
        p = (p + p.transpose()) * 0.5;
        out.filtered_means.push(x);
        out.filtered_covs.push(p);
    }
    Ok(out)
}

/// Fixed-interval (Rauch–Tung–Striebel) backward pass.
pub fn kf_backward_smooth(fwd: &KfForward, model: &KfModel) -> Result<(Vec<Vector4<f64>>, Vec<Matrix4<f64>>)> {
    let n = fwd.filtered_means.len();
    let mut means = fwd.filtered_means.clone();
    let mut covs = fwd.filtered_covs.clone();
    let t = &model.transition;
    for k in (0..n.saturating_sub(1)).rev() {
        let pred = fwd.predicted_covs[k + 1];
        let chol = pred.cholesky().ok_or(Error::NotSpd(k + 1))?;
        // C = P_k Tᵀ P_pred⁻¹
        let c = chol.solve(&(t * fwd.filtered_covs[k])).transpose();
        means[k] = fwd.filtered_means[k] + c * (means[k + 1] - fwd.predicted_means[k + 1]);
        let pk = fwd.filtered_covs[k] + c * (covs[k + 1] - pred) * c.transpose();
        covs[k] = (pk + pk.transpose()) * 0.5;
    }
    Ok((means, covs))
}
