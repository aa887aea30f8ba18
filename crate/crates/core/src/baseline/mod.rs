//! Conventional comparison tracker: per-radar range and Capon direction
//! estimates, mapped to global positions and fused by a stacked Kalman
//! filter with fixed-interval smoothing.

mod kalman;
mod measurement;

pub use kalman::{kf_backward_smooth, kf_forward, KfForward, KfModel, StackedMeasurement};
pub use measurement::{
    capon_spectrum, compressed_pulses, conventional_measurement, detect_range_bin, estimate_doa_capon,
    estimate_range, measurement_to_global, polar_covariance, quantization_variances, PointMeasurement,
    CAPON_LOADING, DOA_GRID_STEP_DEG, DOA_SCAN_LIMIT_DEG,
};
