use std::io::Write;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::objective::{alpha_ml_estimate, range_frame, ObservationContext};
use super::GaussianMessage;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataMessageOptions {
    pub max_iterations: usize,
    /// Stop when the objective decrease is below this fraction of `|f|`...
    pub relative_tolerance: f64,
    /// ...and the step norm is below this.
    pub step_tolerance: f64,
    /// Largest position move per iteration, meters.
    pub max_position_step: f64,
    /// Fixed log-variance of the unused velocity components.
    pub velocity_logvar: f64,
    /// Fraction of the peak `|U|²` below which bins are skipped.
    pub bin_threshold: f64,
    /// Keep per-iteration objective rows in the result.
    pub record_trace: bool,
}

impl Default for DataMessageOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            relative_tolerance: 1e-9,
            step_tolerance: 1e-6,
            max_position_step: 5.0,
            velocity_logvar: 1e6f64.ln(),
            bin_threshold: 1e-6,
            record_trace: false,
        }
    }
}

/// One optimizer iteration, as written to the debug trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub u: f64,
    pub v: f64,
    pub vu: f64,
    pub vv: f64,
    pub logvar_range: f64,
    pub logvar_cross: f64,
}

/// Result of one data-message fit, in the radar's local frame.
#[derive(Clone, Debug)]
pub struct DataMessageFit {
    pub message: GaussianMessage,
    /// Precision along the range and cross-range axes at the mean; zero
    /// when the amplitude is degenerate.
    pub frame_precision: Vector2<f64>,
    pub alpha: Complex64,
    pub logvar: Vector4<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
}

impl DataMessageFit {
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

const LOGVAR_LIMIT: f64 = 60.0;

/// Fits the Gaussian data message for one radar and pulse by quasi-Newton
/// descent on the KL objective over `[u, v, s_r, s_c]`. The covariance is
/// diagonal along the range and cross-range axes at the mean.
/// `phi_init` is the local-frame initializer `[u, v, v_u, v_v]`; the
/// velocity entries pass through unchanged.
pub fn minimize_data_message(
    ctx: &ObservationContext,
    phi_init: &Vector4<f64>,
    opts: &DataMessageOptions,
) -> Result<DataMessageFit> {
    let alpha = alpha_ml_estimate(ctx, phi_init)?;
    let a = alpha.norm();
    let (j_rr, j_cc) = ctx.frame_information(phi_init[0], phi_init[1]);
    let s0 = |j: f64| (-(2.0 * a * a * j).ln()).clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT);
    let mut x = Vector4::new(phi_init[0], phi_init[1], s0(j_rr), s0(j_cc));

    let velocity = (phi_init[2], phi_init[3]);
    let sv = opts.velocity_logvar;
    let unpack = |x: &Vector4<f64>| (Vector4::new(x[0], x[1], velocity.0, velocity.1), Vector4::new(x[2], x[3], sv, sv));
    let eval = |x: &Vector4<f64>| -> Result<(f64, Vector4<f64>)> {
        let (m, s) = unpack(x);
        let (f, gm, gs) = ctx.evaluate(&m, &s, a, true)?;
        Ok((f, Vector4::new(gm[0], gm[1], gs[0], gs[1])))
    };

    let (mut f, mut g) = eval(&x)?;
    let initial_objective = f;
    let mut trace = Vec::new();
    let mut record = |it: usize, f: f64, x: &Vector4<f64>| {
        if opts.record_trace {
            trace.push(TraceRow {
                iteration: it,
                objective: f,
                u: x[0],
                v: x[1],
                vu: velocity.0,
                vv: velocity.1,
                logvar_range: x[2],
                logvar_cross: x[3],
            });
        }
    };
    record(0, f, &x);

    // Degenerate amplitude: the likelihood is flat in position.
    let degenerate = !(a * a * j_rr.min(j_cc) > 0.0);
    let mut converged = false;
    let mut iterations = 0;
    if !degenerate {
        // Start from the Laplace curvature of each coordinate.
        let mut h = Matrix4::from_diagonal(&Vector4::new(
            x[2].exp(),
            x[3].exp(),
            1.0,
            1.0,
        ));
        while iterations < opts.max_iterations {
            iterations += 1;
            let mut dir = -(h * g);
            if dir.dot(&g) >= 0.0 {
                h = Matrix4::from_diagonal(&Vector4::new(x[2].exp(), x[3].exp(), 1.0, 1.0));
                dir = -(h * g);
            }
            let pos_step = dir[0].hypot(dir[1]);
            let log_step = dir[2].abs().max(dir[3].abs());
            let mut scale = 1.0f64;
            if pos_step > opts.max_position_step {
                scale = scale.min(opts.max_position_step / pos_step);
            }
            if log_step > 5.0 {
                scale = scale.min(5.0 / log_step);
            }
            dir *= scale;

            let slope = dir.dot(&g);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let trial = x + dir * t;
                let inside = trial[2].abs() <= LOGVAR_LIMIT && trial[3].abs() <= LOGVAR_LIMIT;
                if inside {
                    if let Ok((ft, gt)) = eval(&trial) {
                        if ft <= f + 1e-4 * t * slope {
                            accepted = Some((trial, ft, gt));
                            break;
                        }
                    }
                }
                t *= 0.5;
            }
            let Some((x_new, f_new, g_new)) = accepted else {
                // No descent along a descent direction: numerically stationary.
                converged = g.norm() * dir.norm() <= 1e-9 * f.abs().max(1.0) || dir.norm() * t < opts.step_tolerance;
                break;
            };
            let s = x_new - x;
            let y = g_new - g;
            let decrease = f - f_new;
            x = x_new;
            f = f_new;
            g = g_new;
            record(iterations, f, &x);
            if decrease <= opts.relative_tolerance * f.abs().max(1.0) && s.norm() <= opts.step_tolerance {
                converged = true;
                break;
            }
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                let rho = 1.0 / sy;
                let i = Matrix4::identity();
                let left = i - s * y.transpose() * rho;
                h = left * h * left.transpose() + s * s.transpose() * rho;
            }
        }
    }

    let (mean, logvar) = unpack(&x);
    let precision = if degenerate {
        Matrix4::zeros()
    } else {
        let e = range_frame(x[0], x[1]);
        let p = e * Matrix2::from_diagonal(&Vector2::new((-x[2]).exp(), (-x[3]).exp())) * e.transpose();
        let mut full = Matrix4::zeros();
        full.fixed_view_mut::<2, 2>(0, 0).copy_from(&((p + p.transpose()) * 0.5));
        full
    };
    let frame_precision = if degenerate {
        Vector2::zeros()
    } else {
        Vector2::new((-x[2]).exp(), (-x[3]).exp())
    };
    Ok(DataMessageFit {
        frame_precision,
        message: GaussianMessage {
            mean,
            precision,
            low_confidence: !converged,
        },
        alpha,
        logvar,
        objective: f,
        initial_objective,
        iterations,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::objective::tests::small_model;
    use super::super::kl_objective;
    use super::*;
    use crate::geometry::LocalPoint;
    use crate::waveform::{add_noise, unit_signal};

    fn scaled_signal(target: LocalPoint, snr_db: f64, phase: f64) -> (crate::waveform::ObservationBlock, Complex64) {
        let model = small_model();
        let e = model.unit_signal_energy();
        let alpha = Complex64::from_polar((10f64.powf(snr_db / 10.0) * model.n_channels() as f64 / e).sqrt(), phase);
        let mut obs = unit_signal(target, &model);
        obs.scale(alpha);
        (obs, alpha)
    }

    #[test]
    fn noise_free_fit_lands_on_truth() {
        let model = small_model();
        let target = LocalPoint::new(14.0, 55.0);
        let (obs, _) = scaled_signal(target, 20.0, 1.1);
        let ctx = ObservationContext::new(&obs, &model, 0.0).unwrap();
        let init = Vector4::new(target.u + 1.2, target.v - 1.6, 0.5, -0.5);
        let fit = minimize_data_message(&ctx, &init, &DataMessageOptions::default()).unwrap();
        // Dense grid oracle over a 10 m × 10 m window around the truth at the
        // fitted variances.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in -100..=100 {
            for j in -100..=100 {
                let (u, v) = (target.u + i as f64 * 0.05, target.v + j as f64 * 0.05);
                let f = kl_objective(&Vector4::new(u, v, 0.0, 0.0), &fit.logvar, &ctx, fit.alpha).unwrap();
                if f < best.0 {
                    best = (f, u, v);
                }
            }
        }
        let m = fit.message.mean;
        assert!((best.1 - target.u).hypot(best.2 - target.v) < 0.1, "grid minimum {best:?}");
        assert!((m[0] - target.u).hypot(m[1] - target.v) < 0.1, "fit {m:?}");
        assert!(fit.objective <= fit.initial_objective);
        assert!(!fit.message.low_confidence);
        assert_eq!(fit.message.precision[(2, 2)], 0.0);
        assert_eq!(fit.message.precision[(3, 3)], 0.0);
        assert_eq!((m[2], m[3]), (0.5, -0.5));
        assert!(fit.message.precision[(0, 0)] > 0.0 && fit.message.precision[(1, 1)] > 0.0);
    }

    #[test]
    fn fitted_variance_is_the_information_bound() {
        // At the optimum the log-variance gradient vanishes: 2|α|²e^s·J = 1.
        let model = small_model();
        let target = LocalPoint::new(-10.0, 40.0);
        let (obs, _) = scaled_signal(target, 15.0, 0.0);
        let ctx = ObservationContext::new(&obs, &model, 0.0).unwrap();
        let fit = minimize_data_message(&ctx, &Vector4::new(-10.5, 40.5, 0.0, 0.0), &DataMessageOptions::default()).unwrap();
        let (m0, m1) = (fit.message.mean[0], fit.message.mean[1]);
        let (jrr, jcc) = ctx.frame_information(m0, m1);
        let a2 = fit.alpha.norm_sqr();
        let e = range_frame(m0, m1);
        let p = e.transpose() * fit.message.precision.fixed_view::<2, 2>(0, 0) * e;
        assert!((p[(0, 0)] - 2.0 * a2 * jrr).abs() < 1e-5 * 2.0 * a2 * jrr);
        assert!((p[(1, 1)] - 2.0 * a2 * jcc).abs() < 1e-5 * 2.0 * a2 * jcc);
        assert!(p[(0, 1)].abs() < 1e-9 * p[(0, 0)]);
    }

    #[test]
    fn pure_noise_does_not_blow_up() {
        let model = small_model();
        let mut obs = unit_signal(LocalPoint::new(0.0, 40.0), &model);
        obs.scale(Complex64::new(0.0, 0.0));
        let ctx = ObservationContext::new(&obs, &model, 0.0).unwrap();
        let fit = minimize_data_message(&ctx, &Vector4::new(0.0, 40.0, 0.0, 0.0), &DataMessageOptions::default()).unwrap();
        assert_eq!(fit.message.precision, Matrix4::zeros());
        assert!(fit.message.low_confidence);
    }

    #[test]
    fn trace_rows_decrease() {
        let model = small_model();
        let target = LocalPoint::new(5.0, 30.0);
        let (mut obs, _) = scaled_signal(target, 10.0, 0.4);
        add_noise(&mut obs, &model, 3);
        let ctx = ObservationContext::new(&obs, &model, 0.0).unwrap();
        let opts = DataMessageOptions {
            record_trace: true,
            ..Default::default()
        };
        let fit = minimize_data_message(&ctx, &Vector4::new(6.0, 31.0, 0.0, 0.0), &opts).unwrap();
        assert_eq!(fit.trace.len(), fit.trace.last().unwrap().iteration + 1);
        assert!(fit.trace.windows(2).all(|w| w[1].objective <= w[0].objective));
        let mut buf = Vec::new();
        fit.write_trace(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,objective,u,v,vu,vv,logvar_range,logvar_cross"));
    }

    #[test]
    fn nees_is_consistent_at_ten_db() {
        // Normalized estimation error squared of the fitted messages should
        // average to 2 (two position dimensions), also well off boresight.
        let model = small_model();
        let target = LocalPoint::new(25.0, 40.0);
        let (clean, _) = scaled_signal(target, 10.0, 0.9);
        let mut nees = Vec::new();
        for seed in 0..512u64 {
            let mut obs = clean.clone();
            add_noise(&mut obs, &model, 50_000 + seed);
            let ctx = ObservationContext::new(&obs, &model, 0.0).unwrap();
            let fit = minimize_data_message(&ctx, &Vector4::new(target.u, target.v, 0.0, 0.0), &DataMessageOptions::default()).unwrap();
            let m = fit.message.mean;
            let p = fit.message.precision;
            let d = Vector2::new(m[0] - target.u, m[1] - target.v);
            nees.push((d.transpose() * p.fixed_view::<2, 2>(0, 0) * d)[0]);
        }
        let n = nees.len() as f64;
        let mean = nees.iter().sum::<f64>() / n;
        // n·mean is χ² with 2n degrees of freedom; 1.96σ band.
        let band = 1.96 * 2.0 / n.sqrt();
        assert!((mean - 2.0).abs() < band, "mean NEES {mean} outside 2 ± {band}");
    }
}
