use crate::error::Result;
use crate::geometry::{GlobalPoint, RadarPose};
use crate::kinematics::KinematicState;
use crate::waveform::{snr_at, LinkBudget, SensorModel};

use super::config::GridSpec;

/// Per-radar SNR in dB over a grid, row-major in `y` then `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub per_radar: Vec<Vec<f64>>,
    pub combined_max: Vec<f64>,
}

impl SnrMap {
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.xs.len() + ix
    }
}

/// SNR of a target at `p` for one radar; `+∞` at the radar itself.
pub fn snr_db(p: GlobalPoint, pose: &RadarPose, model: &SensorModel, link: &LinkBudget) -> Result<f64> {
    if p == pose.position() {
        return Ok(f64::INFINITY);
    }
    snr_at(&KinematicState::from_position(p), pose, model, link)
}

pub fn snr_map(radars: &[RadarPose], model: &SensorModel, link: &LinkBudget, grid: &GridSpec) -> Result<SnrMap> {
    let (xs, ys) = (grid.xs(), grid.ys());
    let mut per_radar = vec![Vec::with_capacity(xs.len() * ys.len()); radars.len()];
    for &y in &ys {
        for &x in &xs {
            for (k, pose) in radars.iter().enumerate() {
                per_radar[k].push(snr_db(GlobalPoint::new(x, y), pose, model, link)?);
            }
        }
    }
    let combined_max = (0..xs.len() * ys.len())
        .map(|i| per_radar.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(SnrMap {
        xs,
        ys,
        per_radar,
        combined_max,
    })
}

/// Lowest SNR over the radars at each truth sample.
pub fn min_snr_along(truth: &[KinematicState], radars: &[RadarPose], model: &SensorModel, link: &LinkBudget) -> Result<Vec<f64>> {
    truth
        .iter()
        .map(|phi| {
            radars
                .iter()
                .map(|pose| snr_db(phi.position(), pose, model, link))
                .try_fold(f64::INFINITY, |acc, s| Ok(acc.min(s?)))
        })
        .collect()
}
