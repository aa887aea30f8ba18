//! Per-radar tracker nodes and the broadcast bus between them.
//!
//! Each pulse, every node fits its own data message, broadcasts a fixed-size
//! summary of it, and then smooths the whole stored history using every
//! radar's messages. Nodes hold identical memories, so they produce
//! identical posteriors without exchanging anything else.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::baseline::conventional_measurement;
use crate::error::{Error, Result};
use crate::geometry::{global_to_local, local_to_global, GlobalPoint, LocalPoint, RadarPose};
use crate::inference::{
    combine_gaussians, minimize_data_message, prediction_message, smoothing_message, update_lambda_a,
    range_frame, DataMessageOptions, GammaSurrogate, GaussianMessage, ObservationContext, PosteriorSlice, DEFAULT_PRIOR,
};
use crate::kinematics::KinematicMatrices;
use crate::waveform::{ObservationBlock, SensorModel};

/// Encoded size of one broadcast: mean (4 × f64), range and cross-range
/// precision (2 × f64) and a flag byte.
pub const PAYLOAD_BYTES: usize = 49;

const FLAG_LOW_CONFIDENCE: u8 = 1;

/// What a node puts on the bus for one pulse.
#[derive(Clone, Debug, PartialEq)]
pub struct Payload {
    /// Global-frame mean `[x, y, vx, vy]`.
    pub mean: Vector4<f64>,
    /// Position precision along the sender's range and cross-range axes at
    /// the mean. The velocity carries no precision.
    pub frame_precision: Vector2<f64>,
    pub low_confidence: bool,
}

impl Payload {
    pub fn encode(&self) -> [u8; PAYLOAD_BYTES] {
        let mut out = [0u8; PAYLOAD_BYTES];
        for (i, v) in self.mean.iter().chain(self.frame_precision.iter()).enumerate() {
            out[8 * i..8 * i + 8].copy_from_slice(&v.to_le_bytes());
        }
        out[48] = if self.low_confidence { FLAG_LOW_CONFIDENCE } else { 0 };
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != PAYLOAD_BYTES {
            return Err(Error::LengthMismatch {
                expected: PAYLOAD_BYTES,
                actual: bytes.len(),
            });
        }
        let f = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes"));
        Ok(Self {
            mean: Vector4::new(f(0), f(1), f(2), f(3)),
            frame_precision: Vector2::new(f(4), f(5)),
            low_confidence: bytes[48] & FLAG_LOW_CONFIDENCE != 0,
        })
    }

    /// Global-frame message. The range axis runs from the sender to the mean.
    pub fn to_message(&self, sender: &RadarPose) -> GaussianMessage {
        let local = global_to_local(GlobalPoint::new(self.mean[0], self.mean[1]), sender);
        let axes = sender.rotation() * range_frame(local.u, local.v);
        let p = axes * Matrix2::from_diagonal(&self.frame_precision) * axes.transpose();
        let mut precision = Matrix4::zeros();
        precision.fixed_view_mut::<2, 2>(0, 0).copy_from(&((p + p.transpose()) * 0.5));
        GaussianMessage {
            mean: self.mean,
            precision,
            low_confidence: self.low_confidence,
        }
    }
}

/// Global state vector to the radar's local frame (position and velocity).
pub fn state_to_local(phi: &Vector4<f64>, pose: &RadarPose) -> Vector4<f64> {
    let p = global_to_local(GlobalPoint::new(phi[0], phi[1]), pose);
    let v = pose.rotation().transpose() * Vector2::new(phi[2], phi[3]);
    Vector4::new(p.u, p.v, v[0], v[1])
}

/// Inverse of [`state_to_local`].
pub fn state_to_global(local: &Vector4<f64>, pose: &RadarPose) -> Vector4<f64> {
    let p = local_to_global(LocalPoint::new(local[0], local[1]), pose);
    let v = pose.rotation() * Vector2::new(local[2], local[3]);
    Vector4::new(p.x, p.y, v[0], v[1])
}

/// One delivered broadcast, as written to the bus log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub pulse: usize,
    pub sender: usize,
    pub bytes: usize,
}

/// Lossless, ordered, synchronous broadcast medium.
pub struct BroadcastBus {
    poses: Vec<RadarPose>,
    pending: Vec<(usize, Vec<u8>)>,
    bytes: u64,
    log: Vec<BusRecord>,
    sink: Option<Box<dyn Write + Send>>,
}

impl BroadcastBus {
    pub fn new(poses: Vec<RadarPose>) -> Self {
        Self {
            poses,
            pending: Vec::new(),
            bytes: 0,
            log: Vec::new(),
            sink: None,
        }
    }

    /// Also stream every delivered broadcast as a JSON line.
    pub fn with_log_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.sink = Some(sink);
        self
    }

    pub fn n_radars(&self) -> usize {
        self.poses.len()
    }

    pub fn pose(&self, radar: usize) -> &RadarPose {
        &self.poses[radar]
    }

    pub fn broadcast(&mut self, pulse: usize, sender: usize, payload: &Payload) -> Result<()> {
        let bytes = payload.encode().to_vec();
        self.bytes += bytes.len() as u64;
        let record = BusRecord {
            pulse,
            sender,
            bytes: bytes.len(),
        };
        if let Some(sink) = self.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &record)?;
            sink.write_all(b"\n")?;
        }
        self.log.push(record);
        self.pending.push((sender, bytes));
        Ok(())
    }

    /// Hands this pulse's broadcasts to every node, ordered by sender.
    pub fn deliver(&mut self, nodes: &mut [RadarNode]) -> Result<()> {
        let mut batch = std::mem::take(&mut self.pending);
        batch.sort_by_key(|(sender, _)| *sender);
        if batch.len() != self.poses.len() || batch.iter().enumerate().any(|(i, (s, _))| *s != i) {
            return Err(Error::LengthMismatch {
                expected: self.poses.len(),
                actual: batch.len(),
            });
        }
        for node in nodes.iter_mut() {
            let messages = batch
                .iter()
                .map(|(sender, bytes)| Ok(Payload::decode(bytes)?.to_message(&self.poses[*sender])))
                .collect::<Result<Vec<_>>>()?;
            node.memory.push(messages);
        }
        Ok(())
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes
    }

    pub fn log(&self) -> &[BusRecord] {
        &self.log
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(sink) = self.sink.as_mut() {
            sink.flush()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    /// Message-passing sweeps per pulse.
    pub n_ite: usize,
    /// Re-smooth only the most recent slices; `None` re-smooths everything.
    pub window: Option<usize>,
    /// Process-noise precision used until enough slices exist to estimate it.
    pub lambda_init: [f64; 4],
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub data: DataMessageOptions,
}

impl Default for NodeConfig {
    fn default() -> Self {
        Self {
            n_ite: 5,
            window: None,
            lambda_init: [1.0; 4],
            prior_shape: DEFAULT_PRIOR,
            prior_rate: DEFAULT_PRIOR,
            data: DataMessageOptions::default(),
        }
    }
}

impl NodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ite == 0 {
            return Err(Error::Config("n_ite must be at least 1".into()));
        }
        if self.window == Some(0) || self.window == Some(1) {
            return Err(Error::Config("window must span at least two slices".into()));
        }
        if self.lambda_init.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::NonPositivePrecision(self.lambda_init));
        }
        if !(self.prior_shape > 0.0 && self.prior_rate > 0.0) {
            return Err(Error::Config("gamma prior shape and rate must be positive".into()));
        }
        Ok(())
    }

    fn initial_gamma(&self) -> GammaSurrogate {
        GammaSurrogate::from_mean(Vector4::from(self.lambda_init), self.prior_shape, self.prior_rate)
    }
}

/// One radar's tracker state.
#[derive(Clone, Debug)]
pub struct RadarNode {
    id: usize,
    pose: RadarPose,
    model: Arc<SensorModel>,
    matrices: KinematicMatrices,
    config: NodeConfig,
    /// `memory[n][k]`: radar `k`'s global data message for pulse `n`.
    memory: Vec<Vec<GaussianMessage>>,
    posterior: Vec<PosteriorSlice>,
    gamma: GammaSurrogate,
    proxy: Vec<f64>,
}

/// Velocity variance reported while no temporal message constrains it.
pub const UNOBSERVED_VELOCITY_VARIANCE: f64 = 1e6;

impl RadarNode {
    pub fn new(id: usize, pose: RadarPose, model: Arc<SensorModel>, matrices: KinematicMatrices, config: NodeConfig) -> Result<Self> {
        config.validate()?;
        let gamma = config.initial_gamma();
        Ok(Self {
            id,
            pose,
            model,
            matrices,
            config,
            memory: Vec::new(),
            posterior: Vec::new(),
            gamma,
            proxy: Vec::new(),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn pose(&self) -> &RadarPose {
        &self.pose
    }

    pub fn memory(&self) -> &[Vec<GaussianMessage>] {
        &self.memory
    }

    pub fn posterior(&self) -> &[PosteriorSlice] {
        &self.posterior
    }

    pub fn gamma(&self) -> &GammaSurrogate {
        &self.gamma
    }

    /// Objective proxy after each sweep of the latest pulse.
    pub fn sweep_proxy(&self) -> &[f64] {
        &self.proxy
    }

    /// Local-frame optimizer start for pulse `pulse`: the conventional
    /// estimate at pulse 0, the prediction from the latest posterior after.
    fn initializer(&self, obs: &ObservationBlock, pulse: usize) -> Result<Vector4<f64>> {
        if pulse == 0 || self.posterior.is_empty() {
            let meas = conventional_measurement(obs, &self.model.array, &self.model.waveform, &self.pose)?;
            let local = global_to_local(meas.position, &self.pose);
            // A detection in the zero bin has no usable geometry; step off it.
            let local = if local.range() > 0.0 {
                local
            } else {
                LocalPoint::new(0.0, self.model.waveform.range_bin())
            };
            return Ok(Vector4::new(local.u, local.v, 0.0, 0.0));
        }
        let prev = &self.posterior[self.posterior.len() - 1].mean;
        Ok(state_to_local(&(self.matrices.transition * prev), &self.pose))
    }

    /// Fits this radar's data message for one pulse and returns the payload
    /// to broadcast.
    pub fn process_pulse(&self, obs: &ObservationBlock, pulse: usize) -> Result<Payload> {
        let init = self.initializer(obs, pulse)?;
        let ctx = ObservationContext::new(obs, &self.model, self.config.data.bin_threshold)?;
        let fit = minimize_data_message(&ctx, &init, &self.config.data)?;
        Ok(Payload {
            mean: state_to_global(&fit.message.mean, &self.pose),
            frame_precision: fit.frame_precision,
            low_confidence: fit.message.low_confidence,
        })
    }

    /// Runs `n_ite` sweeps over the stored history and updates `Λ_a`.
    pub fn local_message_passing(&mut self, n_ite: usize) -> Result<()> {
        let last = self.memory.len().checked_sub(1).ok_or(Error::TooFewSlices(0))?;
        self.proxy.clear();
        if last == 0 {
            self.posterior = vec![position_marginal(&self.memory[0]).map_err(|e| e.at_slice(0))?];
            self.gamma = self.config.initial_gamma();
            self.proxy.push(log_normalizer_sum(&self.posterior));
            return Ok(());
        }
        // Seed the new slice with the prediction so the first sweep has a
        // smoothing message for the slice before it.
        while self.posterior.len() <= last {
            let prev = self.posterior.last().expect("slice 0 exists").clone();
            let t = &self.matrices.transition;
            self.posterior.push(PosteriorSlice {
                mean: t * prev.mean,
                covariance: t * prev.covariance * t.transpose(),
            });
        }
        let start = match self.config.window {
            Some(w) if last + 1 > w => last + 1 - w,
            _ => 0,
        };
        for _ in 0..n_ite {
            for n in start..=last {
                let mut msgs: Vec<GaussianMessage> = self.memory[n].clone();
                if n > 0 {
                    msgs.push(prediction_message(&self.posterior[n - 1].mean, &self.gamma, &self.matrices)?);
                }
                if n < last {
                    msgs.push(smoothing_message(&self.posterior[n + 1].mean, &self.gamma, &self.matrices)?);
                }
                self.posterior[n] = combine_gaussians(&msgs).map_err(|e| e.at_slice(n))?;
            }
            // Λ_a is only re-estimated once there are at least
            // two transitions.
            self.gamma = if last > 1 {
                update_lambda_a(&self.posterior[start..], &self.matrices, self.config.prior_shape, self.config.prior_rate)?
            } else {
                self.config.initial_gamma()
            };
            self.proxy.push(log_normalizer_sum(&self.posterior[start..]));
        }
        Ok(())
    }
}

/// Posterior for a lone slice: position from the data messages, velocity
/// left at the data-message mean with a sentinel variance.
fn position_marginal(messages: &[GaussianMessage]) -> Result<PosteriorSlice> {
    let mut precision = Matrix2::zeros();
    let mut info = Vector2::zeros();
    let mut velocity = Vector2::zeros();
    for msg in messages {
        let p = msg.precision.fixed_view::<2, 2>(0, 0).into_owned();
        precision += p;
        info += p * msg.mean.xy();
        velocity += Vector2::new(msg.mean[2], msg.mean[3]);
    }
    velocity /= messages.len().max(1) as f64;
    let chol = precision.cholesky().ok_or_else(|| Error::SingularPrecision {
        null_directions: vec![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]],
    })?;
    let mean = chol.solve(&info);
    let cov = chol.inverse();
    let mut covariance = Matrix4::from_diagonal(&Vector4::new(0.0, 0.0, UNOBSERVED_VELOCITY_VARIANCE, UNOBSERVED_VELOCITY_VARIANCE));
    covariance.fixed_view_mut::<2, 2>(0, 0).copy_from(&cov);
    Ok(PosteriorSlice {
        mean: Vector4::new(mean[0], mean[1], velocity[0], velocity[1]),
        covariance,
    })
}

/// `Σ_n ½·ln det Σ_n`, tracked as a convergence proxy.
fn log_normalizer_sum(slices: &[PosteriorSlice]) -> f64 {
    slices.iter().map(|s| 0.5 * s.covariance.determinant().max(f64::MIN_POSITIVE).ln()).sum()
}

/// Runs one pulse for every node: fit, broadcast, deliver, smooth.
pub fn step_nodes(nodes: &mut [RadarNode], bus: &mut BroadcastBus, observations: &[ObservationBlock], pulse: usize) -> Result<()> {
    if observations.len() != nodes.len() || nodes.len() != bus.n_radars() {
        return Err(Error::LengthMismatch {
            expected: nodes.len(),
            actual: observations.len(),
        });
    }
    for (node, obs) in nodes.iter().zip(observations) {
        let payload = node.process_pulse(obs, pulse)?;
        bus.broadcast(pulse, node.id, &payload)?;
    }
    bus.deliver(nodes)?;
    for node in nodes.iter_mut() {
        let n_ite = node.config.n_ite;
        node.local_message_passing(n_ite)?;
    }
    Ok(())
}

/// Full tracker over a stream of per-pulse observations (one block per
/// radar). Returns each node's final smoothed track.
pub fn run_tracker<I>(nodes: &mut [RadarNode], bus: &mut BroadcastBus, stream: I) -> Result<Vec<Vec<PosteriorSlice>>>
where
    I: IntoIterator<Item = Result<Vec<ObservationBlock>>>,
{
    for (pulse, observations) in stream.into_iter().enumerate() {
        let observations = observations?;
        step_nodes(nodes, bus, &observations, pulse).map_err(|e| e.at_pulse(0, pulse))?;
    }
    bus.flush()?;
    Ok(nodes.iter().map(|n| n.posterior.clone()).collect())
}
