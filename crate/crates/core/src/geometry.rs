//! Radar poses and the local/global coordinate frames.
//!
//! Every radar measures in its own frame `(u, v)`: `v` points along the
//! boresight and `u` lies along the array face, so that a target at local
//! azimuth `θ` (measured from boresight, positive towards `+u`) and range `r`
//! sits at `(r sin θ, r cos θ)`. The tracker runs in a shared global frame
//! `(x, y)`. A radar at `p` with boresight angle `ψ` (counter-clockwise from
//! the global `+y` axis) maps points as `global = R(ψ)·local + p`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point in the shared global frame, meters.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalPoint {
    pub x: f64,
    pub y: f64,
}

/// A point in one radar's local frame, meters.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPoint {
    pub u: f64,
    pub v: f64,
}

impl GlobalPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { x: v[0], y: v[1] }
    }

    pub fn distance(self, other: GlobalPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl LocalPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Point at range `r` and azimuth `theta` from boresight.
    pub fn from_polar(range: f64, azimuth: f64) -> Self {
        Self {
            u: range * azimuth.sin(),
            v: range * azimuth.cos(),
        }
    }

    pub fn range(self) -> f64 {
        self.u.hypot(self.v)
    }

    /// Azimuth from boresight, positive towards `+u`.
    pub fn azimuth(self) -> f64 {
        self.u.atan2(self.v)
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { u: v[0], v: v[1] }
    }
}

/// Position and boresight orientation of one radar in the global frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct RadarPose {
    position: GlobalPoint,
    boresight: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    position: [f64; 2],
    /// Radians, counter-clockwise from the global `+y` axis.
    boresight: f64,
}

impl TryFrom<RawPose> for RadarPose {
    type Error = Error;

    fn try_from(raw: RawPose) -> Result<Self> {
        RadarPose::new(GlobalPoint::new(raw.position[0], raw.position[1]), raw.boresight)
    }
}

impl From<RadarPose> for RawPose {
    fn from(pose: RadarPose) -> Self {
        RawPose {
            position: [pose.position.x, pose.position.y],
            boresight: pose.boresight,
        }
    }
}

impl RadarPose {
    /// Builds a pose, wrapping the boresight angle into `[-π, π)`.
    pub fn new(position: GlobalPoint, boresight: f64) -> Result<Self> {
        if !position.x.is_finite() || !position.y.is_finite() {
            return Err(Error::Config(format!("radar position {position:?} is not finite")));
        }
        if !boresight.is_finite() {
            return Err(Error::Config(format!("boresight angle {boresight} is not finite")));
        }
        Ok(Self {
            position,
            boresight: wrap_angle(boresight),
        })
    }

    /// Pose whose boresight points from `position` towards `target`.
    pub fn looking_at(position: GlobalPoint, target: GlobalPoint) -> Result<Self> {
        let dx = target.x - position.x;
        let dy = target.y - position.y;
        if dx == 0.0 && dy == 0.0 {
            return Err(Error::ZeroRange);
        }
        // Boresight direction is R(ψ)·(0, 1) = (−sin ψ, cos ψ).
        Self::new(position, (-dx).atan2(dy))
    }

    pub fn position(&self) -> GlobalPoint {
        self.position
    }

    pub fn boresight(&self) -> f64 {
        self.boresight
    }

    /// Rotation taking local axes to global axes.
    pub fn rotation(&self) -> Matrix2<f64> {
        rotation(self.boresight)
    }
}

/// Counter-clockwise rotation by `psi`.
pub fn rotation(psi: f64) -> Matrix2<f64> {
    let (s, c) = psi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

pub(crate) fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π.
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

pub fn local_to_global(pt: LocalPoint, pose: &RadarPose) -> GlobalPoint {
    GlobalPoint::from_vector(pose.rotation() * pt.to_vector() + pose.position.to_vector())
}

pub fn global_to_local(pt: GlobalPoint, pose: &RadarPose) -> LocalPoint {
    LocalPoint::from_vector(pose.rotation().transpose() * (pt.to_vector() - pose.position.to_vector()))
}

/// Two-way propagation delay between a radar and a target, seconds.
pub fn two_way_delay(target: GlobalPoint, pose: &RadarPose) -> Result<f64> {
    let range = target.distance(pose.position);
    if range == 0.0 {
        return Err(Error::ZeroRange);
    }
    Ok(2.0 * range / SPEED_OF_LIGHT)
}
