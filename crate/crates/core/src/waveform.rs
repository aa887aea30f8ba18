//! MIMO radar waveform synthesis and the matched-filter observation model.
//!
//! Each radar runs `N_T` transmitters in time-division: transmitter `m`
//! fires a linear chirp in its own slot and every receiver `j` matched-filters
//! that slot's echo against the chirp, giving one virtual channel per
//! `(j, m)` pair. Channel `c = j·N_T + m` sits at virtual position
//! `d_j + d_m` along the array face.
//!
//! Frequency-domain conventions: spectra are unnormalized DFTs
//! (`U_f = Σ_t u_t e^{-2πi f t / N_s}`), bin `k` maps to the physical
//! baseband frequency `k·f_s/N_s` with wrap-around at `N_s/2`, and receiver
//! noise is white with variance `σ_w²` per time sample, hence `N_s·σ_w²` per
//! frequency bin before matched filtering.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{global_to_local, two_way_delay, LocalPoint, RadarPose, SPEED_OF_LIGHT};
use crate::kinematics::KinematicState;

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Reference noise temperature, K.
pub const REFERENCE_TEMPERATURE: f64 = 290.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    /// Carrier frequency, Hz.
    pub carrier_freq: f64,
    /// Chirp bandwidth, Hz.
    pub bandwidth: f64,
    /// Duration of one transmitter's pulse, s.
    pub pulse_duration: f64,
    /// Complex baseband sample rate, Hz.
    pub sample_rate: f64,
    /// Receiver noise power per time sample, W.
    pub noise_variance: f64,
    /// Unambiguous range, m.
    pub max_range: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        let bandwidth = 20e6;
        Self {
            carrier_freq: 10e9,
            bandwidth,
            pulse_duration: 16e-6,
            sample_rate: 256e6,
            noise_variance: bandwidth * BOLTZMANN * REFERENCE_TEMPERATURE,
            max_range: 300.0,
        }
    }
}

impl WaveformConfig {
    pub fn num_samples(&self) -> usize {
        (self.pulse_duration * self.sample_rate).round() as usize
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    /// Physical baseband frequency of DFT bin `k`, Hz.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        let n = self.num_samples();
        let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
        signed * self.sample_rate / n as f64
    }

    /// Range spanned by one delay bin of the compressed pulse, m.
    pub fn range_bin(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.sample_rate)
    }

    /// Number of delay bins strictly inside the unambiguous range.
    pub fn max_delay_bins(&self) -> usize {
        (self.max_range / self.range_bin()).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("carrier_freq", self.carrier_freq),
            ("bandwidth", self.bandwidth),
            ("pulse_duration", self.pulse_duration),
            ("sample_rate", self.sample_rate),
            ("max_range", self.max_range),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("waveform.{name} must be positive, got {value}")));
            }
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::Config(format!(
                "waveform.noise_variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        if self.bandwidth > self.sample_rate / 2.0 {
            return Err(Error::Config(format!(
                "bandwidth {} Hz exceeds half the sample rate {} Hz",
                self.bandwidth, self.sample_rate
            )));
        }
        if self.num_samples() < 1 {
            return Err(Error::Config("pulse shorter than one sample".into()));
        }
        if self.max_delay_bins() >= self.num_samples() {
            return Err(Error::Config("unambiguous range exceeds the sampled delay window".into()));
        }
        Ok(())
    }
}

/// Transmit power, antenna gain and target cross section for the range equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    /// Power radiated by the active transmitter, W.
    pub power: f64,
    pub gain: f64,
    /// Radar cross section, m².
    pub rcs: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            power: 6.99,
            gain: 1.0,
            rcs: 0.05,
        }
    }
}

/// Element offsets along the array face, meters, for a colocated MIMO array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub tx_positions: Vec<f64>,
    pub rx_positions: Vec<f64>,
}

impl ArrayGeometry {
    /// Centered uniform arrays: receivers at `λ/2` spacing, transmitters at
    /// `N_R·λ/2`, so the virtual array is a filled `N_T·N_R` element ULA.
    pub fn standard(n_tx: usize, n_rx: usize, wavelength: f64) -> Self {
        let centered = |n: usize, spacing: f64| -> Vec<f64> {
            (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) * spacing).collect()
        };
        Self {
            tx_positions: centered(n_tx, n_rx as f64 * wavelength / 2.0),
            rx_positions: centered(n_rx, wavelength / 2.0),
        }
    }

    pub fn n_tx(&self) -> usize {
        self.tx_positions.len()
    }

    pub fn n_rx(&self) -> usize {
        self.rx_positions.len()
    }

    pub fn n_virtual(&self) -> usize {
        self.n_tx() * self.n_rx()
    }

    /// Virtual element positions in channel order `c = j·N_T + m`.
    pub fn virtual_positions(&self) -> Vec<f64> {
        self.rx_positions
            .iter()
            .flat_map(|&rx| self.tx_positions.iter().map(move |&tx| rx + tx))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx_positions.is_empty() || self.rx_positions.is_empty() {
            return Err(Error::Config("array needs at least one transmitter and one receiver".into()));
        }
        if self.tx_positions.iter().chain(&self.rx_positions).any(|p| !p.is_finite()) {
            return Err(Error::Config("array element offsets must be finite".into()));
        }
        Ok(())
    }
}

/// Per-transmitter chirp spectra `U` (`N_T × N_s`) and their TDM slot layout.
#[derive(Clone, Debug)]
pub struct ChirpBank {
    pulse: Vec<Complex64>,
    spectra: Vec<Vec<Complex64>>,
    slot_samples: usize,
}

/// Builds the transmit bank: one unit-amplitude linear chirp sweeping
/// `[-BW/2, BW/2]` over the pulse, fired by each transmitter in its own slot.
/// Slots are separated by the pulse plus the maximum round-trip delay.
pub fn make_chirp_bank(cfg: &WaveformConfig, n_tx: usize) -> Result<ChirpBank> {
    if n_tx == 0 {
        return Err(Error::Config("chirp bank needs at least one transmitter".into()));
    }
    if cfg.bandwidth > cfg.sample_rate {
        return Err(Error::Config(format!(
            "bandwidth {} Hz exceeds the sample rate {} Hz",
            cfg.bandwidth, cfg.sample_rate
        )));
    }
    cfg.validate()?;
    let n = cfg.num_samples();
    let rate = cfg.bandwidth / cfg.pulse_duration;
    let pulse: Vec<Complex64> = (0..n)
        .map(|i| {
            let t = i as f64 / cfg.sample_rate - cfg.pulse_duration / 2.0;
            Complex64::from_polar(1.0, PI * rate * t * t)
        })
        .collect();
    let mut spectrum = pulse.clone();
    FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
    Ok(ChirpBank {
        pulse,
        spectra: vec![spectrum; n_tx],
        slot_samples: n + cfg.max_delay_bins(),
    })
}

impl ChirpBank {
    pub fn n_tx(&self) -> usize {
        self.spectra.len()
    }

    pub fn num_samples(&self) -> usize {
        self.pulse.len()
    }

    pub fn spectrum(&self, tx: usize) -> &[Complex64] {
        &self.spectra[tx]
    }

    /// Baseband pulse samples (identical for every transmitter).
    pub fn pulse(&self) -> &[Complex64] {
        &self.pulse
    }

    /// Time-domain energy of row `tx` computed from its spectrum via Parseval.
    pub fn row_energy(&self, tx: usize) -> f64 {
        self.spectra[tx].iter().map(|u| u.norm_sqr()).sum::<f64>() / self.num_samples() as f64
    }

    /// Correlation between transmitter `a`'s slot signal and transmitter
    /// `b`'s reference, evaluated over the echo lags a receive window can
    /// see (`0 ..= max delay`).
    pub fn receive_window_correlation(&self, a: usize, b: usize) -> Vec<Complex64> {
        let n = self.num_samples() as i64;
        let guard = (self.slot_samples - self.num_samples()) as i64;
        let start_a = a as i64 * self.slot_samples as i64;
        let start_b = b as i64 * self.slot_samples as i64;
        (0..=guard)
            .map(|lag| {
                // Σ_t x_a(t − lag)·conj(x_b(t)) over the overlap of both pulses.
                let lo = (start_a + lag).max(start_b);
                let hi = (start_a + lag + n).min(start_b + n);
                (lo..hi)
                    .map(|t| self.pulse[(t - start_a - lag) as usize] * self.pulse[(t - start_b) as usize].conj())
                    .sum()
            })
            .collect()
    }

    /// Peak receive-window cross-correlation between two transmitters relative
    /// to the autocorrelation peak, dB.
    pub fn cross_correlation_db(&self, a: usize, b: usize) -> f64 {
        let peak = |v: Vec<Complex64>| v.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let cross = peak(self.receive_window_correlation(a, b));
        let auto = peak(self.receive_window_correlation(a, a));
        20.0 * (cross / auto).max(1e-15).log10()
    }
}

/// Diagonal precision of the matched-filter output noise, stored per
/// transmitter and shared by every receiver on that transmitter's slot.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePrecision {
    per_tx: Vec<Vec<f64>>,
}

impl NoisePrecision {
    pub fn for_channel(&self, channel: usize) -> &[f64] {
        &self.per_tx[channel % self.per_tx.len()]
    }

    pub fn for_tx(&self, tx: usize) -> &[f64] {
        &self.per_tx[tx]
    }

    pub fn n_tx(&self) -> usize {
        self.per_tx.len()
    }
}

/// Matched-filter output bin variance on transmitter `m`'s channels is
/// `N_s·σ_w²·|U[m,f]|²`; its reciprocal is the precision, with zero where
/// the variance vanishes.
pub fn noise_precision(bank: &ChirpBank, cfg: &WaveformConfig) -> NoisePrecision {
    let n = bank.num_samples() as f64;
    let per_tx = (0..bank.n_tx())
        .map(|m| {
            bank.spectrum(m)
                .iter()
                .map(|u| {
                    let variance = n * cfg.noise_variance * u.norm_sqr();
                    if variance > 0.0 {
                        1.0 / variance
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    NoisePrecision { per_tx }
}

/// Steering matrix `A[j][m] = exp(i·k·(d_j + d_m)·sin θ)` for a target at
/// local position `target`.
pub fn steering_matrix(target: LocalPoint, arr: &ArrayGeometry, cfg: &WaveformConfig) -> Vec<Vec<Complex64>> {
    let k = cfg.wavenumber();
    let sin_theta = target.u / target.range();
    arr.rx_positions
        .iter()
        .map(|&dj| {
            arr.tx_positions
                .iter()
                .map(|&dm| Complex64::from_polar(1.0, k * (dj + dm) * sin_theta))
                .collect()
        })
        .collect()
}

/// Complex path loss `α` from the radar range equation with carrier phase `−ω_c·τ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathLoss(pub Complex64);

pub fn path_loss(tau: f64, cfg: &WaveformConfig, link: &LinkBudget) -> Result<PathLoss> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveDelay(tau));
    }
    let range = SPEED_OF_LIGHT * tau / 2.0;
    let lambda = cfg.wavelength();
    let power = link.power * link.gain * link.gain * lambda * lambda * link.rcs
        / ((4.0 * PI).powi(3) * range.powi(4));
    // Reduce f_c·τ before scaling to keep the phase accurate.
    let cycles = (cfg.carrier_freq * tau).fract();
    Ok(PathLoss(Complex64::from_polar(power.sqrt(), -2.0 * PI * cycles)))
}

/// Everything about a radar's transmit/receive chain that does not depend
/// on where it stands. Shared by all radars (identical transmission scheme).
#[derive(Clone, Debug)]
pub struct SensorModel {
    pub waveform: WaveformConfig,
    pub array: ArrayGeometry,
    bank: Arc<ChirpBank>,
    precision: Arc<NoisePrecision>,
}

impl SensorModel {
    pub fn new(waveform: WaveformConfig, array: ArrayGeometry) -> Result<Self> {
        array.validate()?;
        let bank = make_chirp_bank(&waveform, array.n_tx())?;
        let precision = noise_precision(&bank, &waveform);
        Ok(Self {
            waveform,
            array,
            bank: Arc::new(bank),
            precision: Arc::new(precision),
        })
    }

    pub fn bank(&self) -> &ChirpBank {
        &self.bank
    }

    pub fn precision(&self) -> &Arc<NoisePrecision> {
        &self.precision
    }

    pub fn n_channels(&self) -> usize {
        self.array.n_virtual()
    }

    pub fn num_samples(&self) -> usize {
        self.waveform.num_samples()
    }

    /// `Σ_c Σ_f |U|⁴·Λ`: the energy `⟨S̃|Λ_Z|S̃⟩` of a unit-path-loss signal.
    pub fn unit_signal_energy(&self) -> f64 {
        (0..self.n_channels())
            .map(|c| {
                let m = c % self.array.n_tx();
                self.bank
                    .spectrum(m)
                    .iter()
                    .zip(self.precision.for_tx(m))
                    .map(|(u, w)| u.norm_sqr() * u.norm_sqr() * w)
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Matched-filter output `Z` of one radar for one MIMO pulse.
#[derive(Clone, Debug)]
pub struct ObservationBlock {
    rows: usize,
    cols: usize,
    z: Vec<Complex64>,
    noise_precision: Arc<NoisePrecision>,
}

impl ObservationBlock {
    pub fn new(rows: usize, cols: usize, z: Vec<Complex64>, noise_precision: Arc<NoisePrecision>) -> Result<Self> {
        if z.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: z.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            z,
            noise_precision,
        })
    }

    /// Number of virtual channels, `N_R·N_T`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of frequency bins, `N_s`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        &self.z[c * self.cols..(c + 1) * self.cols]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        &mut self.z[c * self.cols..(c + 1) * self.cols]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.z
    }

    pub fn noise_precision(&self) -> &Arc<NoisePrecision> {
        &self.noise_precision
    }

    /// Multiplies every sample by `factor`.
    pub fn scale(&mut self, factor: Complex64) {
        self.z.iter_mut().for_each(|z| *z *= factor);
    }

    /// `⟨a|Λ_Z|b⟩` over all channels and bins.
    pub fn weighted_inner(&self, other: &ObservationBlock) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in 0..self.rows {
            let w = self.noise_precision.for_channel(c);
            for ((a, b), w) in self.channel(c).iter().zip(other.channel(c)).zip(w) {
                acc += a.conj() * b * *w;
            }
        }
        acc
    }

    /// Writes the debug dump: two little-endian `u64` (rows, cols) followed by
    /// row-major little-endian complex64 (`f32` real, `f32` imaginary).
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.rows as u64).to_le_bytes())?;
        out.write_all(&(self.cols as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.z.len() * 8);
        for z in &self.z {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }
}

/// Reads a dump written by [`ObservationBlock::write_dump`] as `(rows, cols, samples)`.
pub fn read_observation_dump<R: Read>(mut input: R) -> Result<(usize, usize, Vec<Complex32>)> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    let rows = u64::from_le_bytes(header[..8].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(header[8..].try_into().expect("8 bytes")) as usize;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != rows * cols * 8 {
        return Err(Error::Dump(format!(
            "header says {rows}x{cols} samples but body holds {} bytes",
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(8)
        .map(|b| {
            Complex32::new(
                f32::from_le_bytes(b[..4].try_into().expect("4 bytes")),
                f32::from_le_bytes(b[4..].try_into().expect("4 bytes")),
            )
        })
        .collect();
    Ok((rows, cols, samples))
}

/// Local position of the target, rejecting ranges at or beyond `R_max`.
fn local_target(phi: &KinematicState, pose: &RadarPose, cfg: &WaveformConfig) -> Result<(LocalPoint, f64)> {
    let tau = two_way_delay(phi.position(), pose)?;
    let local = global_to_local(phi.position(), pose);
    let range = local.range();
    if range >= cfg.max_range {
        return Err(Error::RangeAmbiguous {
            range,
            max_range: cfg.max_range,
        });
    }
    Ok((local, tau))
}

/// Unit-path-loss signal `S̃` for a target at local position `target`:
/// `S̃[c,f] = A_c·|U[m,f]|²·exp(−2πi·f·τ)` with `τ` the two-way delay.
pub fn unit_signal(target: LocalPoint, model: &SensorModel) -> ObservationBlock {
    let cfg = &model.waveform;
    let n = model.num_samples();
    let tau = 2.0 * target.range() / SPEED_OF_LIGHT;
    let steering = steering_matrix(target, &model.array, cfg);
    let delay: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * cfg.bin_frequency(k) * tau))
        .collect();
    let n_tx = model.array.n_tx();
    let mut z = Vec::with_capacity(model.n_channels() * n);
    for row in &steering {
        for (m, a) in row.iter().enumerate() {
            let spectrum = model.bank().spectrum(m);
            z.extend(spectrum.iter().zip(&delay).map(|(u, d)| a * u.norm_sqr() * d));
        }
    }
    debug_assert_eq!(z.len(), n_tx * model.array.n_rx() * n);
    ObservationBlock::new(model.n_channels(), n, z, model.precision().clone()).expect("sized above")
}

/// Noise-free matched-filter output `S(φ) = α·S̃(φ)` at one radar.
pub fn signal_block(
    phi: &KinematicState,
    pose: &RadarPose,
    model: &SensorModel,
    link: &LinkBudget,
) -> Result<ObservationBlock> {
    let (local, tau) = local_target(phi, pose, &model.waveform)?;
    let alpha = path_loss(tau, &model.waveform, link)?;
    let mut block = unit_signal(local, model);
    block.scale(alpha.0);
    Ok(block)
}

/// Draws `Z = S(φ) + W̃` for one radar and pulse. The noise is circular
/// Gaussian, independent per virtual channel, and fully determined by `seed`.
pub fn synthesize_observation(
    phi: &KinematicState,
    pose: &RadarPose,
    model: &SensorModel,
    link: &LinkBudget,
    seed: u64,
) -> Result<ObservationBlock> {
    let mut block = signal_block(phi, pose, model, link)?;
    add_noise(&mut block, model, seed);
    Ok(block)
}

/// Adds matched-filtered receiver noise `W·U*` to every channel.
pub fn add_noise(block: &mut ObservationBlock, model: &SensorModel, seed: u64) {
    let cfg = &model.waveform;
    if cfg.noise_variance == 0.0 {
        return;
    }
    let sigma = (model.num_samples() as f64 * cfg.noise_variance / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tx = model.array.n_tx();
    for c in 0..block.rows() {
        let spectrum = model.bank().spectrum(c % n_tx);
        for (z, u) in block.channel_mut(c).iter_mut().zip(spectrum) {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(sigma * re, sigma * im) * u.conj();
        }
    }
}

/// Matched-filter output SNR per virtual channel,
/// `⟨S(φ)|Λ_Z|S(φ)⟩ / (N_R·N_T)`, in dB. With the conventions above this is
/// `N_s·|α|²/σ_w²` for a unit-amplitude chirp.
pub fn snr_at(phi: &KinematicState, pose: &RadarPose, model: &SensorModel, link: &LinkBudget) -> Result<f64> {
    let tau = two_way_delay(phi.position(), pose)?;
    let alpha = path_loss(tau, &model.waveform, link)?;
    let energy = alpha.0.norm_sqr() * model.unit_signal_energy();
    Ok(10.0 * (energy / model.n_channels() as f64).log10())
}
