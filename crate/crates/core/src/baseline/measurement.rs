use nalgebra::{DVector, Matrix2};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{local_to_global, GlobalPoint, LocalPoint, RadarPose};
use crate::waveform::{ArrayGeometry, ObservationBlock, WaveformConfig};

/// Capon scan limits and step, degrees.
pub const DOA_SCAN_LIMIT_DEG: f64 = 60.0;
pub const DOA_GRID_STEP_DEG: f64 = 0.5;
/// Diagonal loading as a fraction of the mean snapshot power.
pub const CAPON_LOADING: f64 = 1e-3;

/// Conventional single-pulse point estimate from one radar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMeasurement {
    pub range: f64,
    pub azimuth: f64,
    pub position: GlobalPoint,
    /// Position covariance in the global frame.
    pub covariance: Matrix2<f64>,
}

/// Per-channel compressed pulses (inverse DFT of the matched-filter output),
/// truncated to the delay bins inside the unambiguous range.
pub fn compressed_pulses(obs: &ObservationBlock, cfg: &WaveformConfig) -> Vec<Vec<Complex64>> {
    let n = obs.cols();
    let keep = (cfg.max_delay_bins() + 1).min(n);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    (0..obs.rows())
        .map(|c| {
            let mut x = obs.channel(c).to_vec();
            ifft.process(&mut x);
            x.truncate(keep);
            x
        })
        .collect()
}

/// Index of the largest magnitude; the lowest index wins ties.
fn argmax(x: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_mag = f64::NEG_INFINITY;
    for (i, v) in x.iter().enumerate() {
        let m = v.norm_sqr();
        if m > best_mag {
            best = i;
            best_mag = m;
        }
    }
    best
}

/// Median over channels of the per-channel peak delay bin.
pub fn detect_range_bin(pulses: &[Vec<Complex64>]) -> usize {
    let mut bins: Vec<usize> = pulses.iter().map(|p| argmax(p)).collect();
    bins.sort_unstable();
    bins[(bins.len() - 1) / 2]
}

/// Range from the median per-channel peak of the compressed pulse.
pub fn estimate_range(obs: &ObservationBlock, cfg: &WaveformConfig) -> f64 {
    detect_range_bin(&compressed_pulses(obs, cfg)) as f64 * cfg.range_bin()
}

/// Capon spectrum `1/(aᴴ C⁻¹ a)` of a single snapshot on the scan grid.
pub fn capon_spectrum(snapshot: &[Complex64], arr: &ArrayGeometry, cfg: &WaveformConfig) -> Result<Vec<(f64, f64)>> {
    let dim = snapshot.len();
    let x = DVector::from_column_slice(snapshot);
    let mut cov = &x * x.adjoint();
    let loading = CAPON_LOADING * cov.trace().re / dim as f64;
    for i in 0..dim {
        cov[(i, i)] += Complex64::new(loading, 0.0);
    }
    if !(loading > 0.0) {
        return Err(Error::SingularCovariance);
    }
    let inv = cov.cholesky().ok_or(Error::SingularCovariance)?.inverse();
    let positions = arr.virtual_positions();
    let k = cfg.wavenumber();
    let steps = (2.0 * DOA_SCAN_LIMIT_DEG / DOA_GRID_STEP_DEG).round() as usize;
    (0..=steps)
        .map(|i| {
            let theta = (-DOA_SCAN_LIMIT_DEG + i as f64 * DOA_GRID_STEP_DEG).to_radians();
            let a = DVector::from_iterator(
                dim,
                positions.iter().map(|p| Complex64::from_polar(1.0, k * p * theta.sin())),
            );
            let q = (a.adjoint() * &inv * &a)[(0, 0)].re;
            if !(q > 0.0) {
                return Err(Error::SingularCovariance);
            }
            Ok((theta, 1.0 / q))
        })
        .collect()
}

/// Capon direction of arrival from the snapshot at `range_bin`.
pub fn estimate_doa_capon(
    pulses: &[Vec<Complex64>],
    range_bin: usize,
    arr: &ArrayGeometry,
    cfg: &WaveformConfig,
) -> Result<f64> {
    let snapshot: Vec<Complex64> = pulses.iter().map(|p| p[range_bin]).collect();
    let spectrum = capon_spectrum(&snapshot, arr, cfg)?;
    let mut best = spectrum[0];
    for &(theta, p) in &spectrum[1..] {
        if p > best.1 {
            best = (theta, p);
        }
    }
    Ok(best.0)
}

/// `(u, v) = (r sin θ, r cos θ)` mapped into the global frame.
pub fn measurement_to_global(range: f64, theta: f64, pose: &RadarPose) -> GlobalPoint {
    local_to_global(LocalPoint::from_polar(range, theta), pose)
}

/// Global position covariance of a polar measurement with independent
/// range and azimuth errors, by first-order propagation.
pub fn polar_covariance(range: f64, theta: f64, var_range: f64, var_theta: f64, pose: &RadarPose) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    let jac = Matrix2::new(s, range * c, c, -range * s);
    let local = jac * Matrix2::new(var_range, 0.0, 0.0, var_theta) * jac.transpose();
    let rot = pose.rotation();
    rot * local * rot.transpose()
}

/// Range and azimuth error variances assumed for the conventional estimate:
/// uniform quantization over one delay bin and one scan-grid step.
pub fn quantization_variances(cfg: &WaveformConfig) -> (f64, f64) {
    let bin = cfg.range_bin();
    let step = DOA_GRID_STEP_DEG.to_radians();
    (bin * bin / 12.0, step * step / 12.0)
}

/// Range, Capon azimuth and global position of the target for one pulse.
pub fn conventional_measurement(
    obs: &ObservationBlock,
    arr: &ArrayGeometry,
    cfg: &WaveformConfig,
    pose: &RadarPose,
) -> Result<PointMeasurement> {
    let pulses = compressed_pulses(obs, cfg);
    let bin = detect_range_bin(&pulses);
    let range = bin as f64 * cfg.range_bin();
    let azimuth = estimate_doa_capon(&pulses, bin, arr, cfg)?;
    let (vr, vt) = quantization_variances(cfg);
    // A zero-range detection would give a degenerate covariance; floor at one bin.
    let r_cov = range.max(cfg.range_bin());
    Ok(PointMeasurement {
        range,
        azimuth,
        position: measurement_to_global(range, azimuth, pose),
        covariance: polar_covariance(r_cov, azimuth, vr, vt, pose),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::geometry::{global_to_local, GlobalPoint};
    use crate::waveform::{add_noise, unit_signal, SensorModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table1() -> SensorModel {
        let cfg = WaveformConfig::default();
        let arr = ArrayGeometry::standard(3, 3, cfg.wavelength());
        SensorModel::new(cfg, arr).unwrap()
    }

    fn origin() -> RadarPose {
        RadarPose::new(GlobalPoint::new(0.0, 0.0), 0.0).unwrap()
    }

    #[test]
    fn range_of_noise_free_target() {
        let model = table1();
        let obs = unit_signal(LocalPoint::new(0.0, 100.0), &model);
        let r = estimate_range(&obs, &model.waveform);
        assert!((r - 100.0).abs() < 7.5, "{r}");
        assert!((r - 100.0).abs() <= model.waveform.range_bin());
    }

    #[test]
    fn range_zero_delay() {
        let model = table1();
        let obs = unit_signal(LocalPoint::new(0.0, 1e-9), &model);
        assert_eq!(estimate_range(&obs, &model.waveform), 0.0);
    }

    #[test]
    fn median_survives_four_bad_channels() {
        let model = table1();
        let mut obs = unit_signal(LocalPoint::new(10.0, 150.0), &model);
        let clean = estimate_range(&obs, &model.waveform);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in [0, 3, 5, 8] {
            for z in obs.channel_mut(c) {
                *z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 1e6;
            }
        }
        assert_eq!(estimate_range(&obs, &model.waveform), clean);
    }

    #[test]
    fn range_ignores_global_phase() {
        let model = table1();
        let mut obs = unit_signal(LocalPoint::new(-20.0, 210.0), &model);
        let base = estimate_range(&obs, &model.waveform);
        obs.scale(Complex64::from_polar(3.0, 2.1));
        assert_eq!(estimate_range(&obs, &model.waveform), base);
    }

    #[test]
    fn capon_boresight_and_symmetry() {
        let model = table1();
        let (cfg, arr) = (&model.waveform, &model.array);
        let doa = |theta_deg: f64| {
            let obs = unit_signal(LocalPoint::from_polar(120.0, theta_deg.to_radians()), &model);
            let pulses = compressed_pulses(&obs, cfg);
            estimate_doa_capon(&pulses, detect_range_bin(&pulses), arr, cfg).unwrap()
        };
        assert!(doa(0.0).abs() <= DOA_GRID_STEP_DEG.to_radians() + 1e-12);
        let (p, m) = (doa(20.0), doa(-20.0));
        assert!((p + m).abs() < 1e-12, "{p} {m}");
        assert!((p.to_degrees() - 20.0).abs() <= DOA_GRID_STEP_DEG);
    }

    #[test]
    fn capon_spectrum_positive_and_scale_invariant_peak() {
        let model = table1();
        let mut obs = unit_signal(LocalPoint::from_polar(80.0, 0.3), &model);
        add_noise(&mut obs, &model, 4);
        let pulses = compressed_pulses(&obs, &model.waveform);
        let bin = detect_range_bin(&pulses);
        let snap: Vec<Complex64> = pulses.iter().map(|p| p[bin]).collect();
        let s = capon_spectrum(&snap, &model.array, &model.waveform).unwrap();
        assert!(s.iter().all(|(_, p)| p.is_finite() && *p > 0.0));
        let scaled: Vec<Complex64> = snap.iter().map(|z| z * 7.0).collect();
        let s2 = capon_spectrum(&scaled, &model.array, &model.waveform).unwrap();
        let peak = |s: &[(f64, f64)]| s.iter().cloned().fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a }).0;
        assert_eq!(peak(&s), peak(&s2));
    }

    #[test]
    fn capon_rejects_empty_snapshot() {
        let model = table1();
        let zeros = vec![Complex64::new(0.0, 0.0); 9];
        assert!(matches!(
            capon_spectrum(&zeros, &model.array, &model.waveform),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn polar_to_global_examples() {
        let p = measurement_to_global(100.0, 0.0, &origin());
        assert!((p.x).abs() < 1e-12 && (p.y - 100.0).abs() < 1e-12);
        let p = measurement_to_global(100.0, PI / 2.0, &origin());
        assert!((p.x - 100.0).abs() < 1e-12 && p.y.abs() < 1e-12);
        let pose = RadarPose::new(GlobalPoint::new(-40.0, 7.0), 1.1).unwrap();
        let g = measurement_to_global(73.0, -0.4, &pose);
        let l = global_to_local(g, &pose);
        assert!((l.range() - 73.0).abs() < 1e-12);
        assert!((l.azimuth() + 0.4).abs() < 1e-12);
    }

    #[test]
    fn polar_covariance_is_range_cross_range() {
        let c = polar_covariance(100.0, 0.0, 4.0, 1e-4, &origin());
        // At boresight u is cross-range, v is range.
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((c[(1, 1)] - 4.0).abs() < 1e-12);
        assert!(c[(0, 1)].abs() < 1e-12);
    }
}
