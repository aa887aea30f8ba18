use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baseline::{conventional_measurement, kf_backward_smooth, kf_forward, KfModel, StackedMeasurement};
use crate::error::{Error, Result};
use crate::kinematics::{KinematicMatrices, KinematicState};
use crate::node::{step_nodes, BroadcastBus, BusRecord, RadarNode};
use crate::waveform::{synthesize_observation, ObservationBlock, SensorModel};

use super::config::ScenarioConfig;
use super::metrics::{compute_rmse, coverage_indicators};
use super::snr::min_snr_along;

/// Diffuse prior variance for the baseline filter's first step.
const KF_PRIOR_VARIANCE: f64 = 1e4;

/// Counter-based child seed: stream `index` of the generator keyed by `parent`.
pub fn split_seed(parent: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(parent);
    rng.set_stream(index);
    rng.next_u64()
}

pub fn run_seed(master: u64, run: usize) -> u64 {
    split_seed(master, run as u64)
}

/// Noise seed for one radar and pulse. Depends only on its own indices, so
/// adding radars leaves the other radars' noise unchanged.
pub fn noise_seed(run_seed: u64, radar: usize, pulse: usize) -> u64 {
    split_seed(run_seed, ((radar as u64) << 32) | pulse as u64)
}

/// Smoothed means and covariances over the whole track.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackEstimate {
    pub means: Vec<Vector4<f64>>,
    pub covariances: Vec<Matrix4<f64>>,
}

impl TrackEstimate {
    pub fn positions(&self) -> Vec<Vector2<f64>> {
        self.means.iter().map(|m| m.fixed_rows::<2>(0).into_owned()).collect()
    }

    pub fn position_covariances(&self) -> Vec<Matrix2<f64>> {
        self.covariances.iter().map(|c| c.fixed_view::<2, 2>(0, 0).into_owned()).collect()
    }
}

/// One Monte Carlo realization.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleRun {
    pub run: usize,
    pub mrblat: Option<TrackEstimate>,
    pub kf: Option<TrackEstimate>,
    /// Every node ended with the same posterior as node 0.
    pub nodes_agree: bool,
    pub bus_bytes: u64,
    pub bus_log: Vec<BusRecord>,
    pub mrblat_seconds: f64,
    pub kf_seconds: f64,
}

/// Per-algorithm statistics over all runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgoSummary {
    /// `None` for a single run.
    pub rmse: Option<Vec<f64>>,
    pub max_rmse: Option<f64>,
    /// Largest position error of the first run.
    pub max_error_first_run: f64,
    /// Fraction of indices covered by the 95% ellipse in the first run.
    pub coverage_first_run: f64,
    /// The same fraction averaged over runs.
    pub coverage_mean: f64,
    /// Fraction of runs covering each index.
    pub coverage_per_index: Vec<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub truth: Vec<KinematicState>,
    pub min_snr_db: Vec<f64>,
    pub runs: Vec<SingleRun>,
    pub mrblat: Option<AlgoSummary>,
    pub kf: Option<AlgoSummary>,
    pub wall_clock_seconds: f64,
}

impl RunResult {
    pub fn nodes_agree(&self) -> bool {
        self.runs.iter().all(|r| r.nodes_agree)
    }
}

/// Resolved, shareable pieces of a scenario.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Arc<SensorModel>,
    pub matrices: KinematicMatrices,
    pub truth: Vec<KinematicState>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: Arc::new(config.sensor_model()?),
            matrices: config.matrices()?,
            truth: config.truth()?,
            config,
        })
    }

    /// Observations of every radar for one pulse.
    pub fn observe(&self, run_seed: u64, pulse: usize) -> Result<Vec<ObservationBlock>> {
        let phi = &self.truth[pulse];
        self.config
            .radars
            .iter()
            .enumerate()
            .map(|(k, pose)| synthesize_observation(phi, pose, &self.model, &self.config.link, noise_seed(run_seed, k, pulse)))
            .collect()
    }

    /// Runs the enabled trackers over one realization.
    pub fn run_once(&self, run: usize) -> Result<SingleRun> {
        let cfg = &self.config;
        let seed = run_seed(cfg.seed, run);
        let mut nodes = cfg
            .radars
            .iter()
            .enumerate()
            .map(|(k, pose)| RadarNode::new(k, *pose, self.model.clone(), self.matrices.clone(), cfg.node_config()))
            .collect::<Result<Vec<_>>>()?;
        let mut bus = BroadcastBus::new(cfg.radars.clone());
        let mut measurements = Vec::with_capacity(self.truth.len());
        let (mut mrblat_seconds, mut kf_seconds) = (0.0, 0.0);
        for pulse in 0..self.truth.len() {
            let obs = self.observe(seed, pulse).map_err(|e| e.at_pulse(run, pulse))?;
            if cfg.algorithms.kf {
                let start = Instant::now();
                let points = obs
                    .iter()
                    .zip(&cfg.radars)
                    .map(|(o, pose)| {
                        let m = conventional_measurement(o, &self.model.array, &self.model.waveform, pose)?;
                        Ok((m.position.to_vector(), m.covariance))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.at_pulse(run, pulse))?;
                measurements.push(StackedMeasurement::from_positions(&points));
                kf_seconds += start.elapsed().as_secs_f64();
            }
            if cfg.algorithms.mrblat {
                let start = Instant::now();
                step_nodes(&mut nodes, &mut bus, &obs, pulse).map_err(|e| e.at_pulse(run, pulse))?;
                mrblat_seconds += start.elapsed().as_secs_f64();
            }
        }
        let mrblat = cfg.algorithms.mrblat.then(|| TrackEstimate {
            means: nodes[0].posterior().iter().map(|s| s.mean).collect(),
            covariances: nodes[0].posterior().iter().map(|s| s.covariance).collect(),
        });
        let nodes_agree = nodes.iter().all(|n| n.posterior() == nodes[0].posterior());
        let kf = if cfg.algorithms.kf {
            let start = Instant::now();
            let est = self.run_kf(&measurements).map_err(|e| e.at_pulse(run, measurements.len()))?;
            kf_seconds += start.elapsed().as_secs_f64();
            Some(est)
        } else {
            None
        };
        Ok(SingleRun {
            run,
            mrblat,
            kf,
            nodes_agree,
            bus_bytes: bus.bytes_sent(),
            bus_log: bus.log().to_vec(),
            mrblat_seconds,
            kf_seconds,
        })
    }

    fn run_kf(&self, measurements: &[StackedMeasurement]) -> Result<TrackEstimate> {
        let model = KfModel::new(&self.matrices, &self.config.kf_lambda(), self.config.radars.len())?;
        let first = &measurements[0].z;
        let k = self.config.radars.len();
        let start: Vector2<f64> = (0..k).map(|i| Vector2::new(first[2 * i], first[2 * i + 1])).sum::<Vector2<f64>>() / k as f64;
        let prior_mean = Vector4::new(start.x, start.y, 0.0, 0.0);
        let prior_cov = Matrix4::identity() * KF_PRIOR_VARIANCE;
        let fwd = kf_forward(measurements, &model, prior_mean, prior_cov)?;
        let (means, covariances) = kf_backward_smooth(&fwd, &model)?;
        Ok(TrackEstimate { means, covariances })
    }

    /// Executes `runs` realizations on up to `workers` threads (0 = all
    /// cores). Results are ordered by run index, so the outcome does not
    /// depend on scheduling.
    pub fn execute(&self, runs: usize, workers: usize) -> Result<RunResult> {
        let start = Instant::now();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let results = pool.install(|| (0..runs).into_par_iter().map(|r| self.run_once(r)).collect::<Result<Vec<_>>>())?;
        let truth_pos: Vec<Vector2<f64>> = self.truth.iter().map(|p| p.position().to_vector()).collect();
        let mrblat = self
            .config
            .algorithms
            .mrblat
            .then(|| summarize(&results, &truth_pos, |r| r.mrblat.as_ref(), |r| r.mrblat_seconds))
            .transpose()?;
        let kf = self
            .config
            .algorithms
            .kf
            .then(|| summarize(&results, &truth_pos, |r| r.kf.as_ref(), |r| r.kf_seconds))
            .transpose()?;
        Ok(RunResult {
            min_snr_db: min_snr_along(&self.truth, &self.config.radars, &self.model, &self.config.link)?,
            truth: self.truth.clone(),
            runs: results,
            mrblat,
            kf,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

fn summarize(
    runs: &[SingleRun],
    truth: &[Vector2<f64>],
    pick: impl Fn(&SingleRun) -> Option<&TrackEstimate>,
    seconds: impl Fn(&SingleRun) -> f64,
) -> Result<AlgoSummary> {
    let tracks: Vec<&TrackEstimate> = runs.iter().filter_map(&pick).collect();
    let positions: Vec<Vec<Vector2<f64>>> = tracks.iter().map(|t| t.positions()).collect();
    let rmse = if positions.len() >= 2 {
        Some(compute_rmse(&positions, truth)?)
    } else {
        None
    };
    let mut coverage_per_index = vec![0.0; truth.len()];
    let mut coverage_runs = Vec::with_capacity(tracks.len());
    for (r, (track, pos)) in tracks.iter().zip(&positions).enumerate() {
        let hits = coverage_indicators(pos, &track.position_covariances(), truth).map_err(|e| e.at_pulse(r, 0))?;
        for (c, h) in coverage_per_index.iter_mut().zip(&hits) {
            *c += f64::from(u8::from(*h));
        }
        coverage_runs.push(hits.iter().filter(|h| **h).count() as f64 / hits.len().max(1) as f64);
    }
    let n_runs = tracks.len().max(1) as f64;
    coverage_per_index.iter_mut().for_each(|c| *c /= n_runs);
    let max_error_first_run = positions
        .first()
        .map(|p| p.iter().zip(truth).map(|(e, x)| (e - x).norm()).fold(0.0, f64::max))
        .unwrap_or(0.0);
    Ok(AlgoSummary {
        max_rmse: rmse.as_ref().map(|r| r.iter().cloned().fold(0.0, f64::max)),
        rmse,
        max_error_first_run,
        coverage_first_run: coverage_runs.first().copied().unwrap_or(0.0),
        coverage_mean: coverage_runs.iter().sum::<f64>() / n_runs,
        coverage_per_index,
        seconds: runs.iter().map(seconds).sum(),
    })
}

/// Monte Carlo over `cfg.runs` realizations. RMSE needs at least two runs.
pub fn run_montecarlo(cfg: &ScenarioConfig, workers: usize) -> Result<RunResult> {
    if cfg.runs < 2 {
        return Err(Error::Config(format!("Monte Carlo RMSE needs at least 2 runs, got {}", cfg.runs)));
    }
    Scenario::new(cfg.clone())?.execute(cfg.runs, workers)
}

/// A single realization (run index 0), without RMSE.
pub fn simulate(cfg: &ScenarioConfig) -> Result<RunResult> {
    Scenario::new(cfg.clone())?.execute(1, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GlobalPoint, RadarPose};
    use crate::harness::config::TrackChoice;
    use crate::kinematics::{Segment, TrackSpec};

    /// A short straight pass in front of the default layout.
    fn short_config() -> ScenarioConfig {
        ScenarioConfig {
            track: TrackChoice::Custom(TrackSpec {
                pulse_rate: 10.0,
                segments: vec![Segment::LinearStop {
                    start: [30.0, 90.0],
                    start_velocity: [5.0, 2.0],
                    deceleration: 0.5,
                    resume_velocity: [5.0, 2.0],
                }],
            }),
            runs: 2,
            seed: 5,
            ..ScenarioConfig::default()
        }
    }

    fn trimmed(mut cfg: ScenarioConfig, pulses: usize) -> Scenario {
        cfg.validate().unwrap();
        let mut s = Scenario::new(cfg).unwrap();
        s.truth.truncate(pulses);
        s
    }

    #[test]
    fn seeds_are_split_by_counter() {
        let r0 = run_seed(1, 0);
        assert_ne!(r0, run_seed(1, 1));
        assert_ne!(r0, run_seed(2, 0));
        assert_eq!(noise_seed(r0, 2, 7), noise_seed(r0, 2, 7));
        assert_ne!(noise_seed(r0, 2, 7), noise_seed(r0, 7, 2));
        assert_ne!(noise_seed(r0, 0, 1), noise_seed(r0, 1, 0));
    }

    #[test]
    fn adding_a_radar_keeps_other_noise() {
        let cfg = short_config();
        let two = ScenarioConfig {
            radars: cfg.radars[..2].to_vec(),
            ..cfg.clone()
        };
        let (a, b) = (Scenario::new(cfg).unwrap(), Scenario::new(two).unwrap());
        let seed = run_seed(5, 0);
        let (oa, ob) = (a.observe(seed, 3).unwrap(), b.observe(seed, 3).unwrap());
        assert_eq!(oa[0].data(), ob[0].data());
        assert_eq!(oa[1].data(), ob[1].data());
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let s = trimmed(short_config(), 12);
        let a = s.execute(2, 1).unwrap();
        let b = s.execute(2, 2).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.mrblat, y.mrblat);
            assert_eq!(x.kf, y.kf);
        }
        assert_eq!(a.mrblat.as_ref().unwrap().rmse, b.mrblat.as_ref().unwrap().rmse);
        assert!(a.nodes_agree());
        let m = a.mrblat.unwrap();
        assert!(m.rmse.unwrap().iter().all(|r| *r >= 0.0 && r.is_finite()));
        assert!((0.0..=1.0).contains(&m.coverage_mean));
    }

    #[test]
    fn montecarlo_needs_two_runs() {
        let cfg = ScenarioConfig { runs: 1, ..short_config() };
        assert!(matches!(run_montecarlo(&cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn errors_carry_run_and_pulse() {
        let mut s = trimmed(short_config(), 4);
        // Move the target onto radar 0 at pulse 2.
        s.truth[2] = KinematicState::from_position(GlobalPoint::new(0.0, 0.0));
        match s.run_once(1) {
            Err(Error::Run { run: 1, pulse: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_radar_and_kf_only() {
        let cfg = ScenarioConfig {
            radars: vec![RadarPose::new(GlobalPoint::new(50.0, 0.0), 0.0).unwrap()],
            algorithms: crate::harness::config::Algorithms { mrblat: false, kf: true },
            ..short_config()
        };
        let r = trimmed(cfg, 6).execute(2, 1).unwrap();
        assert!(r.mrblat.is_none());
        assert_eq!(r.kf.unwrap().rmse.unwrap().len(), 6);
        assert_eq!(r.runs[0].bus_bytes, 0);
    }
}
