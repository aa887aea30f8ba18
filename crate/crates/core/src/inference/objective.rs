use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::SPEED_OF_LIGHT;
use crate::waveform::{ObservationBlock, SensorModel};

/// Per-pulse, per-radar precomputation for the data-message objective.
///
/// Holds the whitened data `|U|²·Λ_Z·Z` restricted to the bins where the
/// waveform has energy, laid out bin-major so one pass over the bins
/// evaluates the correlation and its derivatives. States are in the radar's
/// local frame: `[u, v, v_u, v_v]`.
#[derive(Clone, Debug)]
pub struct ObservationContext {
    n_channels: usize,
    wavenumber: f64,
    positions: Vec<f64>,
    freqs: Vec<f64>,
    /// `weighted[i * n_channels + c] = |U|²·Λ·Z` for active bin `i`.
    weighted: Vec<Complex64>,
    energy: f64,
    /// `J(a, b) = ja·a² − 2·jb·a·b + jd·b²` for a direction with
    /// `∂sinθ = a`, `∂τ = b`.
    ja: f64,
    jb: f64,
    jd: f64,
}

impl ObservationContext {
    /// Bins whose `|U|²` falls below `bin_threshold` times the peak are
    /// dropped. Zero keeps every bin with nonzero weight.
    pub fn new(obs: &ObservationBlock, model: &SensorModel, bin_threshold: f64) -> Result<Self> {
        let n_ch = model.n_channels();
        let n = model.num_samples();
        if obs.rows() != n_ch || obs.cols() != n {
            return Err(Error::LengthMismatch {
                expected: n_ch * n,
                actual: obs.rows() * obs.cols(),
            });
        }
        let cfg = &model.waveform;
        let n_tx = model.array.n_tx();
        let bank = model.bank();
        let precision = obs.noise_precision();
        let peak = (0..n_tx)
            .flat_map(|m| bank.spectrum(m).iter().map(|u| u.norm_sqr()))
            .fold(0.0, f64::max);
        let floor = bin_threshold * peak;
        let active: Vec<usize> = (0..n)
            .filter(|&k| {
                (0..n_tx).any(|m| {
                    let u2 = bank.spectrum(m)[k].norm_sqr();
                    u2 > 0.0 && u2 >= floor && precision.for_tx(m)[k] > 0.0
                })
            })
            .collect();

        let positions = model.array.virtual_positions();
        let mut weighted = Vec::with_capacity(active.len() * n_ch);
        let mut freqs = Vec::with_capacity(active.len());
        let (mut energy, mut ja, mut jb, mut jd) = (0.0, 0.0, 0.0, 0.0);
        let k = cfg.wavenumber();
        for &bin in &active {
            let f = cfg.bin_frequency(bin);
            freqs.push(f);
            for c in 0..n_ch {
                let m = c % n_tx;
                let u2 = bank.spectrum(m)[bin].norm_sqr();
                let w = precision.for_tx(m)[bin];
                weighted.push(obs.channel(c)[bin] * (u2 * w));
                let omega = u2 * u2 * w;
                energy += omega;
                ja += omega * positions[c] * positions[c];
                jb += omega * positions[c] * f;
                jd += omega * f * f;
            }
        }
        Ok(Self {
            n_channels: n_ch,
            wavenumber: k,
            positions,
            freqs,
            weighted,
            energy,
            ja: ja * k * k,
            jb: jb * 2.0 * PI * k,
            jd: jd * 4.0 * PI * PI,
        })
    }

    pub fn active_bins(&self) -> usize {
        self.freqs.len()
    }

    /// `⟨S̃|Λ_Z|S̃⟩`, independent of the target state.
    pub fn signal_energy(&self) -> f64 {
        self.energy
    }

    /// Fisher-type weight `⟨∂S̃|Λ_Z|∂S̃⟩` along a direction with the given
    /// `sinθ` and delay derivatives.
    fn info(&self, a: f64, b: f64) -> f64 {
        self.ja * a * a - 2.0 * self.jb * a * b + self.jd * b * b
    }

    /// `C = ⟨S̃(u, v)|Λ_Z|Z⟩` together with `∂C/∂τ` and `∂C/∂sinθ`.
    fn correlation(&self, sin_theta: f64, tau: f64) -> (Complex64, Complex64, Complex64) {
        let n_ch = self.n_channels;
        let k = self.wavenumber;
        let mut steer = [Complex64::new(0.0, 0.0); 32];
        let mut dsteer = [Complex64::new(0.0, 0.0); 32];
        let mut steer_vec;
        let mut dsteer_vec;
        let (steer, dsteer): (&mut [Complex64], &mut [Complex64]) = if n_ch <= 32 {
            (&mut steer[..n_ch], &mut dsteer[..n_ch])
        } else {
            steer_vec = vec![Complex64::new(0.0, 0.0); n_ch];
            dsteer_vec = vec![Complex64::new(0.0, 0.0); n_ch];
            (&mut steer_vec[..], &mut dsteer_vec[..])
        };
        for c in 0..n_ch {
            // conj of exp(i·k·p·sinθ) and its sinθ derivative
            let a = Complex64::from_polar(1.0, -k * self.positions[c] * sin_theta);
            steer[c] = a;
            dsteer[c] = a * Complex64::new(0.0, -k * self.positions[c]);
        }
        let mut c0 = Complex64::new(0.0, 0.0);
        let mut c_tau = Complex64::new(0.0, 0.0);
        let mut c_sin = Complex64::new(0.0, 0.0);
        for (f, row) in self.freqs.iter().zip(self.weighted.chunks_exact(n_ch)) {
            let mut y = Complex64::new(0.0, 0.0);
            let mut dy = Complex64::new(0.0, 0.0);
            for c in 0..n_ch {
                y += steer[c] * row[c];
                dy += dsteer[c] * row[c];
            }
            let ph = Complex64::from_polar(1.0, 2.0 * PI * f * tau);
            let term = ph * y;
            c0 += term;
            c_tau += term * Complex64::new(0.0, 2.0 * PI * f);
            c_sin += ph * dy;
        }
        (c0, c_tau, c_sin)
    }

    /// `⟨S̃(u, v)|Λ_Z|Z⟩` at a local position.
    pub fn correlate(&self, u: f64, v: f64) -> Complex64 {
        let r = u.hypot(v);
        self.correlation(u / r, 2.0 * r / SPEED_OF_LIGHT).0
    }

    /// Objective value and gradient w.r.t. `[u, v]` and `[s_r, s_c]`, the
    /// log-variances along the range and cross-range axes at the mean.
    pub(crate) fn evaluate(
        &self,
        mean: &Vector4<f64>,
        logvar: &Vector4<f64>,
        alpha: f64,
        with_grad: bool,
    ) -> Result<(f64, [f64; 2], [f64; 2])> {
        let (u, v) = (mean[0], mean[1]);
        let r2 = u * u + v * v;
        let r = r2.sqrt();
        let r3 = r2 * r;
        let sin_theta = u / r;
        let tau = 2.0 * r / SPEED_OF_LIGHT;
        let inv_c = 2.0 / SPEED_OF_LIGHT;

        let (c0, c_tau, c_sin) = self.correlation(sin_theta, tau);
        let mag = c0.norm();
        let data = -alpha * mag;
        if !data.is_finite() {
            return Err(Error::NonFinite("data"));
        }
        let alpha2 = alpha * alpha;
        let (er, ec) = (logvar[0].exp(), logvar[1].exp());
        let (j_rr, j_cc) = self.frame_information(u, v);
        let trace = alpha2 * (er * j_rr + ec * j_cc);
        if !trace.is_finite() {
            return Err(Error::NonFinite("trace"));
        }
        let entropy = 0.5 * logvar.iter().map(|s| 1.0 + (2.0 * PI).ln() + s).sum::<f64>();
        if !entropy.is_finite() {
            return Err(Error::NonFinite("entropy"));
        }
        let value = data + alpha2 * self.energy + trace - entropy;
        if !with_grad {
            return Ok((value, [0.0; 2], [0.0; 2]));
        }

        // derivatives of sinθ and τ with respect to u and v
        let (a_u, a_v) = (v * v / r3, -u * v / r3);
        let (b_u, b_v) = (inv_c * u / r, inv_c * v / r);
        let (d_tau, d_sin) = if mag > 0.0 {
            ((c0.conj() * c_tau).re / mag, (c0.conj() * c_sin).re / mag)
        } else {
            (0.0, 0.0)
        };
        let grad_data_u = -alpha * (d_tau * b_u + d_sin * a_u);
        let grad_data_v = -alpha * (d_tau * b_v + d_sin * a_v);

        // J_rr is constant; J_cc = ja·v²/R⁴
        let r6 = r3 * r3;
        let grad_trace_u = alpha2 * ec * self.ja * (-4.0 * u * v * v / r6);
        let grad_trace_v = alpha2 * ec * self.ja * (2.0 * v * (u * u - v * v) / r6);

        let grad_mean = [grad_data_u + grad_trace_u, grad_data_v + grad_trace_v];
        let grad_logvar = [alpha2 * er * j_rr - 0.5, alpha2 * ec * j_cc - 0.5];
        if grad_mean.iter().chain(&grad_logvar).any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok((value, grad_mean, grad_logvar))
    }

    /// `⟨∂S̃|Λ_Z|∂S̃⟩` along the range and cross-range axes at a point. Along
    /// range only the delay changes, across it only `sinθ`.
    pub fn frame_information(&self, u: f64, v: f64) -> (f64, f64) {
        let r2 = u * u + v * v;
        let inv_c = 2.0 / SPEED_OF_LIGHT;
        (self.info(0.0, inv_c), self.info(v / r2, 0.0))
    }
}

/// Range/cross-range axes at a local position: columns `(u, v)/R` and
/// `(v, −u)/R`. The data-message covariance is diagonal in this frame.
pub fn range_frame(u: f64, v: f64) -> Matrix2<f64> {
    let r = u.hypot(v);
    Matrix2::new(u / r, v / r, v / r, -u / r)
}

/// Least-squares path-loss estimate `⟨S̃|Λ_Z|Z⟩ / ⟨S̃|Λ_Z|S̃⟩` at a local
/// position (`phi_init` is `[u, v, ..]`).
pub fn alpha_ml_estimate(ctx: &ObservationContext, phi_init: &Vector4<f64>) -> Result<Complex64> {
    if !(ctx.energy > 0.0) {
        return Err(Error::ZeroSignalEnergy);
    }
    let c = ctx.correlate(phi_init[0], phi_init[1]);
    if !(c.re.is_finite() && c.im.is_finite()) {
        return Err(Error::NonFinite("data"));
    }
    Ok(c / ctx.energy)
}

/// KL objective with the absolute-value data term, in local coordinates.
pub fn kl_objective(
    mean: &Vector4<f64>,
    logvar: &Vector4<f64>,
    ctx: &ObservationContext,
    alpha_hat: Complex64,
) -> Result<f64> {
    Ok(ctx.evaluate(mean, logvar, alpha_hat.norm(), false)?.0)
}

/// Analytic gradient of [`kl_objective`] with respect to the mean and the
/// log-variances. Velocity mean entries are exactly zero.
pub fn kl_gradient(
    mean: &Vector4<f64>,
    logvar: &Vector4<f64>,
    ctx: &ObservationContext,
    alpha_hat: Complex64,
) -> Result<(Vector4<f64>, Vector4<f64>)> {
    let (_, gm, gs) = ctx.evaluate(mean, logvar, alpha_hat.norm(), true)?;
    Ok((
        Vector4::new(gm[0], gm[1], 0.0, 0.0),
        Vector4::new(gs[0], gs[1], -0.5, -0.5),
    ))
}
