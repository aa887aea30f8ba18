use std::path::Path;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GlobalPoint, RadarPose};
use crate::kinematics::{generate_track, KinematicMatrices, KinematicState, TrackPreset, TrackSpec};
use crate::node::NodeConfig;
use crate::waveform::{ArrayGeometry, LinkBudget, SensorModel, WaveformConfig};

/// Ground truth: a named preset sampled at `pulse_rate`, or an explicit spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackChoice {
    Preset {
        preset: TrackPreset,
        #[serde(default = "default_pulse_rate")]
        pulse_rate: f64,
    },
    Custom(TrackSpec),
}

fn default_pulse_rate() -> f64 {
    10.0
}

impl TrackChoice {
    pub fn spec(&self) -> TrackSpec {
        match self {
            TrackChoice::Preset { preset, pulse_rate } => preset.spec(*pulse_rate),
            TrackChoice::Custom(spec) => spec.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Algorithms {
    pub mrblat: bool,
    pub kf: bool,
}

impl Default for Algorithms {
    fn default() -> Self {
        Self { mrblat: true, kf: true }
    }
}

/// Rectangular evaluation grid for SNR maps, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_min: -150.0,
            x_max: 250.0,
            y_min: 0.0,
            y_max: 300.0,
            step: 5.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.step].iter().all(|v| v.is_finite());
        if !finite || self.step <= 0.0 || self.x_max < self.x_min || self.y_max < self.y_min {
            return Err(Error::Config(format!("invalid SNR grid {self:?}")));
        }
        Ok(())
    }

    pub fn xs(&self) -> Vec<f64> {
        axis(self.x_min, self.x_max, self.step)
    }

    pub fn ys(&self) -> Vec<f64> {
        axis(self.y_min, self.y_max, self.step)
    }
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

/// Sweeps per pulse for experiments. Five sweeps over the full history lag
/// the newest slices badly enough on the presets that the prediction used to
/// start the next fit drifts off the target and the track is lost.
pub const SCENARIO_N_ITE: usize = 20;

/// Everything needed to reproduce an experiment. Missing fields take the
/// defaults: three radars 50 m apart along `x` facing `+y`, the default
/// waveform, a standard 3×3 array, and the track-a-like preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub radars: Vec<RadarPose>,
    pub waveform: WaveformConfig,
    /// `None` uses the standard array for the configured wavelength.
    pub array: Option<ArrayGeometry>,
    pub track: TrackChoice,
    pub link: LinkBudget,
    pub runs: usize,
    pub seed: u64,
    pub algorithms: Algorithms,
    pub n_ite: usize,
    pub lambda_init: [f64; 4],
    /// Process-noise precision assumed by the baseline filter; `None` reuses
    /// `lambda_init`.
    pub kf_lambda: Option<[f64; 4]>,
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub window: Option<usize>,
    pub snr_grid: GridSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let node = NodeConfig::default();
        Self {
            radars: (0..3)
                .map(|k| RadarPose::new(GlobalPoint::new(50.0 * k as f64, 0.0), 0.0).expect("finite pose"))
                .collect(),
            waveform: WaveformConfig::default(),
            array: None,
            track: TrackChoice::Preset {
                preset: TrackPreset::TrackALike,
                pulse_rate: default_pulse_rate(),
            },
            link: LinkBudget::default(),
            runs: 32,
            seed: 0,
            algorithms: Algorithms::default(),
            n_ite: SCENARIO_N_ITE,
            lambda_init: node.lambda_init,
            kf_lambda: None,
            prior_shape: node.prior_shape,
            prior_rate: node.prior_rate,
            window: node.window,
            snr_grid: GridSpec::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses JSON or TOML, chosen by extension (`.json`, `.toml`); other
    /// extensions try JSON first.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)?,
            Some("json") => serde_json::from_str(&text)?,
            _ => match serde_json::from_str(&text) {
                Ok(cfg) => cfg,
                Err(_) => toml::from_str(&text)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn array_geometry(&self) -> ArrayGeometry {
        self.array
            .clone()
            .unwrap_or_else(|| ArrayGeometry::standard(3, 3, self.waveform.wavelength()))
    }

    pub fn sensor_model(&self) -> Result<SensorModel> {
        SensorModel::new(self.waveform.clone(), self.array_geometry())
    }

    pub fn node_config(&self) -> NodeConfig {
        NodeConfig {
            n_ite: self.n_ite,
            window: self.window,
            lambda_init: self.lambda_init,
            prior_shape: self.prior_shape,
            prior_rate: self.prior_rate,
            ..NodeConfig::default()
        }
    }

    pub fn kf_lambda(&self) -> Vector4<f64> {
        Vector4::from(self.kf_lambda.unwrap_or(self.lambda_init))
    }

    pub fn matrices(&self) -> Result<KinematicMatrices> {
        KinematicMatrices::from_pulse_rate(self.track.spec().pulse_rate)
    }

    pub fn truth(&self) -> Result<Vec<KinematicState>> {
        generate_track(&self.track.spec())
    }

    /// Checks every field, and that the whole track stays inside the
    /// unambiguous range of every radar.
    pub fn validate(&self) -> Result<()> {
        if self.radars.is_empty() {
            return Err(Error::Config("at least one radar is required".into()));
        }
        self.waveform.validate()?;
        self.array_geometry().validate()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        self.node_config().validate()?;
        for lambda in [self.lambda_init, self.kf_lambda.unwrap_or(self.lambda_init)] {
            if lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
                return Err(Error::NonPositivePrecision(lambda));
            }
        }
        if !self.algorithms.mrblat && !self.algorithms.kf {
            return Err(Error::Config("no algorithm enabled".into()));
        }
        self.snr_grid.validate()?;
        let truth = self.truth()?;
        for (n, phi) in truth.iter().enumerate() {
            for (k, pose) in self.radars.iter().enumerate() {
                let range = phi.position().distance(pose.position());
                if range >= self.waveform.max_range || range == 0.0 {
                    return Err(Error::Config(format!(
                        "truth at pulse {n} is {range:.3} m from radar {k}, outside (0, {}) m",
                        self.waveform.max_range
                    )));
                }
            }
        }
        Ok(())
    }
}
