//! Constant-velocity transition model and ground-truth track generation.


use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GlobalPoint;

/// Target state `[x, y, vx, vy]` in the global frame.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl KinematicState {
    pub const fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    pub fn from_position(p: GlobalPoint) -> Self {
        Self::new(p.x, p.y, 0.0, 0.0)
    }

    pub fn position(&self) -> GlobalPoint {
        GlobalPoint::new(self.x, self.y)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.x, self.y, self.vx, self.vy)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Transition `T` and process-noise gain `G` for a sampling interval `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicMatrices {
    pub dt: f64,
    pub transition: Matrix4<f64>,
    pub noise_gain: Matrix4<f64>,
    transition_inv: Matrix4<f64>,
    noise_gain_inv: Matrix4<f64>,
}

impl KinematicMatrices {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("sampling interval must be positive, got {dt}")));
        }
        #[rustfmt::skip]
        let transition = Matrix4::new(
            1.0, 0.0, dt, 0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let transition_inv = Matrix4::new(
            1.0, 0.0, -dt, 0.0,
            0.0, 1.0, 0.0, -dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        let half = dt * dt / 2.0;
        let noise_gain = Matrix4::from_diagonal(&Vector4::new(half, half, dt, dt));
        let noise_gain_inv = Matrix4::from_diagonal(&Vector4::new(1.0 / half, 1.0 / half, 1.0 / dt, 1.0 / dt));
        Ok(Self {
            dt,
            transition,
            noise_gain,
            transition_inv,
            noise_gain_inv,
        })
    }

    pub fn from_pulse_rate(prf: f64) -> Result<Self> {
        Self::new(1.0 / prf)
    }

    pub fn transition_inv(&self) -> &Matrix4<f64> {
        &self.transition_inv
    }

    pub fn noise_gain_inv(&self) -> &Matrix4<f64> {
        &self.noise_gain_inv
    }
}

/// Noise-free propagation `T·φ`.
pub fn predict(phi: &KinematicState, m: &KinematicMatrices) -> KinematicState {
    KinematicState::from_vector(&(m.transition * phi.to_vector()))
}

/// Precision `G⁻ᵀ·diag(λ_a)·G⁻¹` of the one-step transition density.
pub fn process_noise_precision(lambda_a: &Vector4<f64>, m: &KinematicMatrices) -> Result<Matrix4<f64>> {
    if lambda_a.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::NonPositivePrecision([lambda_a[0], lambda_a[1], lambda_a[2], lambda_a[3]]));
    }
    let g_inv = m.noise_gain_inv();
    Ok(g_inv.transpose() * Matrix4::from_diagonal(lambda_a) * g_inv)
}

/// One piece of a piecewise ground-truth path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    /// Constant-speed circular arc. `sweep` is signed: positive turns
    /// counter-clockwise.
    Arc {
        center: [f64; 2],
        radius: f64,
        start_angle: f64,
        sweep: f64,
        speed: f64,
    },
    /// Straight-line braking to rest at constant deceleration, then
    /// accelerating at the same rate to `resume_velocity`.
    LinearStop {
        start: [f64; 2],
        start_velocity: [f64; 2],
        deceleration: f64,
        resume_velocity: [f64; 2],
    },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Arc {
                radius, sweep, speed, ..
            } => sweep.abs() * radius / speed,
            Segment::LinearStop {
                start_velocity,
                deceleration,
                resume_velocity,
                ..
            } => (norm(start_velocity) + norm(resume_velocity)) / deceleration,
        }
    }

    /// State `t` seconds after the segment starts.
    pub fn state_at(&self, t: f64) -> KinematicState {
        match *self {
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
                speed,
            } => {
                let dir = sweep.signum();
                let angle = start_angle + dir * speed / radius * t;
                let (s, c) = angle.sin_cos();
                KinematicState::new(
                    center[0] + radius * c,
                    center[1] + radius * s,
                    -dir * speed * s,
                    dir * speed * c,
                )
            }
            Segment::LinearStop {
                start,
                start_velocity,
                deceleration: a,
                resume_velocity,
            } => {
                let v0 = norm(start_velocity);
                let braking = v0 / a;
                if t <= braking {
                    let along = v0 * t - 0.5 * a * t * t;
                    let speed = v0 - a * t;
                    let d = unit(start_velocity);
                    KinematicState::new(
                        start[0] + d[0] * along,
                        start[1] + d[1] * along,
                        d[0] * speed,
                        d[1] * speed,
                    )
                } else {
                    let rest = [start[0] + unit(start_velocity)[0] * v0 * braking / 2.0, start[1] + unit(start_velocity)[1] * v0 * braking / 2.0];
                    let tt = t - braking;
                    let d = unit(resume_velocity);
                    let along = 0.5 * a * tt * tt;
                    KinematicState::new(rest[0] + d[0] * along, rest[1] + d[1] * along, d[0] * a * tt, d[1] * a * tt)
                }
            }
        }
    }

    fn start_position(&self) -> [f64; 2] {
        match *self {
            Segment::LinearStop { start, .. } => start,
            Segment::Arc { .. } => {
                let s = self.state_at(0.0);
                [s.x, s.y]
            }
        }
    }

    fn max_speed(&self) -> f64 {
        match *self {
            Segment::Arc { speed, .. } => speed,
            Segment::LinearStop {
                start_velocity,
                resume_velocity,
                ..
            } => norm(start_velocity).max(norm(resume_velocity)),
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("track segment {index}: {what}")));
        match *self {
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
                speed,
            } => {
                if !(radius.is_finite() && radius > 0.0) {
                    return bad("radius must be positive");
                }
                if !(speed.is_finite() && speed > 0.0) {
                    return bad("arc speed must be positive");
                }
                if !(sweep.is_finite() && sweep != 0.0) || !start_angle.is_finite() || center.iter().any(|c| !c.is_finite()) {
                    return bad("arc geometry must be finite with non-zero sweep");
                }
            }
            Segment::LinearStop {
                start,
                start_velocity,
                deceleration,
                resume_velocity,
            } => {
                if !(deceleration.is_finite() && deceleration > 0.0) {
                    return bad("deceleration must be positive");
                }
                if start.iter().chain(&start_velocity).chain(&resume_velocity).any(|v| !v.is_finite()) {
                    return bad("stop geometry must be finite");
                }
            }
        }
        Ok(())
    }
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = norm(v);
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

/// Piecewise path sampled at the pulse rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSpec {
    /// Pulse repetition frequency, Hz.
    pub pulse_rate: f64,
    pub segments: Vec<Segment>,
}

/// Largest gap tolerated between consecutive segments, m.
const JOIN_TOLERANCE: f64 = 1e-6;

impl TrackSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pulse_rate.is_finite() && self.pulse_rate > 0.0) {
            return Err(Error::Config(format!("pulse rate must be positive, got {}", self.pulse_rate)));
        }
        if self.segments.is_empty() {
            return Err(Error::Config("track needs at least one segment".into()));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            seg.validate(i)?;
        }
        for (i, pair) in self.segments.windows(2).enumerate() {
            let end = pair[0].state_at(pair[0].duration());
            let start = pair[1].start_position();
            let gap = (end.x - start[0]).hypot(end.y - start[1]);
            if gap > JOIN_TOLERANCE {
                return Err(Error::DiscontinuousTrack { index: i + 1, gap });
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.segments.iter().map(Segment::max_speed).fold(0.0, f64::max)
    }

    pub fn state_at(&self, t: f64) -> KinematicState {
        let mut start = 0.0;
        for seg in &self.segments {
            let d = seg.duration();
            if t <= start + d {
                return seg.state_at((t - start).max(0.0));
            }
            start += d;
        }
        let last = self.segments.last().expect("validated non-empty");
        last.state_at(last.duration())
    }
}

/// Samples the track every `1/PRF` seconds, from `t = 0` to the end of the
/// last segment.
pub fn generate_track(spec: &TrackSpec) -> Result<Vec<KinematicState>> {
    spec.validate()?;
    let dt = 1.0 / spec.pulse_rate;
    let count = (spec.duration() / dt + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|n| spec.state_at(n as f64 * dt)).collect())
}

/// Chains arcs and stops from a start pose so that joins are exact.
#[derive(Clone, Debug)]
pub struct TrackBuilder {
    position: [f64; 2],
    heading: f64,
    speed: f64,
    deceleration: f64,
    segments: Vec<Segment>,
}

impl TrackBuilder {
    /// `heading` is measured counter-clockwise from global `+x`, radians.
    pub fn new(start: GlobalPoint, heading: f64, speed: f64, deceleration: f64) -> Self {
        Self {
            position: [start.x, start.y],
            heading,
            speed,
            deceleration,
            segments: Vec::new(),
        }
    }

    /// Arc of the given radius; positive `sweep_deg` turns left.
    pub fn arc(mut self, radius: f64, sweep_deg: f64) -> Self {
        let sweep = sweep_deg.to_radians();
        let (s, c) = self.heading.sin_cos();
        let side = sweep.signum();
        let center = [self.position[0] - side * radius * s, self.position[1] + side * radius * c];
        let start_angle = (self.position[1] - center[1]).atan2(self.position[0] - center[0]);
        let seg = Segment::Arc {
            center,
            radius,
            start_angle,
            sweep,
            speed: self.speed,
        };
        let end = seg.state_at(seg.duration());
        self.position = [end.x, end.y];
        self.heading += sweep;
        self.segments.push(seg);
        self
    }

    /// Brake to rest, then pull away along a heading turned by `turn_deg`.
    pub fn stop(mut self, turn_deg: f64) -> Self {
        let v = [self.speed * self.heading.cos(), self.speed * self.heading.sin()];
        self.heading += turn_deg.to_radians();
        let resume = [self.speed * self.heading.cos(), self.speed * self.heading.sin()];
        let seg = Segment::LinearStop {
            start: self.position,
            start_velocity: v,
            deceleration: self.deceleration,
            resume_velocity: resume,
        };
        let end = seg.state_at(seg.duration());
        self.position = [end.x, end.y];
        self.segments.push(seg);
        self
    }

    pub fn build(self, pulse_rate: f64) -> TrackSpec {
        TrackSpec {
            pulse_rate,
            segments: self.segments,
        }
    }
}

/// Named ground-truth presets sized for the default three-radar layout
/// (radars 50 m apart along `x`, first at the origin, all facing `+y`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackPreset {
    TrackALike,
    TrackBLike,
}

impl TrackPreset {
    pub const ALL: [TrackPreset; 2] = [TrackPreset::TrackALike, TrackPreset::TrackBLike];

    pub fn name(self) -> &'static str {
        match self {
            TrackPreset::TrackALike => "track-a-like",
            TrackPreset::TrackBLike => "track-b-like",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Circle segments at 10 m/s joined by full stops at 10 m/s².
    pub fn spec(self, pulse_rate: f64) -> TrackSpec {
        const SPEED: f64 = 10.0;
        const BRAKE: f64 = 10.0;
        match self {
            // A counter-clockwise loop, a stop, a clockwise loop, then a
            // quarter turn at rest and a final left-hand arc.
            TrackPreset::TrackALike => TrackBuilder::new(GlobalPoint::new(49.0, 65.0), (-12.0f64).to_radians(), SPEED, BRAKE)
                .arc(46.0, 206.0)
                .stop(0.0)
                .arc(37.0, -193.0)
                .stop(-90.0)
                .arc(60.0, 149.0)
                .build(pulse_rate),
            // The mirror pattern: clockwise, counter-clockwise, clockwise.
            TrackPreset::TrackBLike => TrackBuilder::new(GlobalPoint::new(52.0, 61.0), 169.0f64.to_radians(), SPEED, BRAKE)
                .arc(39.0, -206.0)
                .stop(0.0)
                .arc(40.0, 216.0)
                .stop(90.0)
                .arc(55.0, -214.0)
                .build(pulse_rate),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn matrices_match_constant_velocity_model() {
        let m = KinematicMatrices::new(0.1).unwrap();
        #[rustfmt::skip]
        let t = Matrix4::new(
            1.0, 0.0, 0.1, 0.0,
            0.0, 1.0, 0.0, 0.1,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        assert_eq!(m.transition, t);
        assert!((m.noise_gain - Matrix4::from_diagonal(&Vector4::new(0.005, 0.005, 0.1, 0.1))).norm() < 1e-15);
        assert!((m.transition * m.transition_inv() - Matrix4::identity()).norm() < 1e-15);
        assert!((m.noise_gain * m.noise_gain_inv() - Matrix4::identity()).norm() < 1e-12);
        assert!(KinematicMatrices::new(0.0).is_err());
    }

    #[test]
    fn predict_constant_velocity() {
        let m = KinematicMatrices::new(0.1).unwrap();
        let next = predict(&KinematicState::new(0.0, 0.0, 10.0, 0.0), &m);
        assert_eq!(next, KinematicState::new(1.0, 0.0, 10.0, 0.0));
        let still = KinematicState::new(5.0, 5.0, 0.0, 0.0);
        assert_eq!(predict(&still, &m), still);
    }

    #[test]
    fn two_steps_equal_one_double_step() {
        let phi = KinematicState::new(1.0, -2.0, 3.5, -0.25);
        let m1 = KinematicMatrices::new(0.1).unwrap();
        let m2 = KinematicMatrices::new(0.2).unwrap();
        let a = predict(&predict(&phi, &m1), &m1);
        let b = predict(&phi, &m2);
        assert!((a.to_vector() - b.to_vector()).norm() < 1e-14);
    }

    #[test]
    fn unit_precision_at_unit_interval() {
        let m = KinematicMatrices::new(1.0).unwrap();
        let p = process_noise_precision(&Vector4::repeat(1.0), &m).unwrap();
        assert_eq!(p, Matrix4::from_diagonal(&Vector4::new(4.0, 4.0, 1.0, 1.0)));
        let scaled = process_noise_precision(&Vector4::repeat(3.0), &m).unwrap();
        assert!((scaled - p * 3.0).norm() < 1e-12);
        assert!(matches!(
            process_noise_precision(&Vector4::new(1.0, 0.0, 1.0, 1.0), &m),
            Err(Error::NonPositivePrecision(_))
        ));
    }

    #[test]
    fn arc_speed_is_constant() {
        let spec = TrackBuilder::new(GlobalPoint::new(0.0, 0.0), 0.3, 10.0, 10.0)
            .arc(100.0, 90.0)
            .build(10.0);
        let track = generate_track(&spec).unwrap();
        assert!(track.len() > 100);
        for s in &track {
            assert!((s.speed() - 10.0).abs() < 1e-9);
            assert!(((s.x - spec_center(&spec)[0]).hypot(s.y - spec_center(&spec)[1]) - 100.0).abs() < 1e-9);
        }
    }

    fn spec_center(spec: &TrackSpec) -> [f64; 2] {
        match spec.segments[0] {
            Segment::Arc { center, .. } => center,
            _ => unreachable!(),
        }
    }

    #[test]
    fn stop_takes_one_second_and_five_meters() {
        let seg = Segment::LinearStop {
            start: [0.0, 0.0],
            start_velocity: [10.0, 0.0],
            deceleration: 10.0,
            resume_velocity: [0.0, 0.0],
        };
        assert_eq!(seg.duration(), 1.0);
        let end = seg.state_at(1.0);
        assert!((end.x - 5.0).abs() < 1e-12 && end.speed() < 1e-12);
    }

    #[test]
    fn stop_resumes_in_new_direction() {
        let seg = Segment::LinearStop {
            start: [0.0, 0.0],
            start_velocity: [10.0, 0.0],
            deceleration: 10.0,
            resume_velocity: [0.0, 10.0],
        };
        assert_eq!(seg.duration(), 2.0);
        let end = seg.state_at(2.0);
        assert!((end.x - 5.0).abs() < 1e-12 && (end.y - 5.0).abs() < 1e-12);
        assert!((end.vy - 10.0).abs() < 1e-12 && end.vx.abs() < 1e-12);
    }

    #[test]
    fn discontinuous_join_names_segment() {
        let mut spec = TrackPreset::TrackALike.spec(10.0);
        if let Segment::Arc { center, .. } = &mut spec.segments[2] {
            center[0] += 1.0;
        }
        match spec.validate() {
            Err(Error::DiscontinuousTrack { index, gap }) => {
                assert_eq!(index, 2);
                assert!((gap - 1.0).abs() < 1e-9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn presets_are_continuous_and_bounded() {
        for preset in TrackPreset::ALL {
            let spec = preset.spec(10.0);
            spec.validate().unwrap();
            let track = generate_track(&spec).unwrap();
            for pair in track.windows(2) {
                let step = pair[0].position().distance(pair[1].position());
                assert!(step <= 10.0 * 0.1 + 1e-9);
            }
            assert_eq!(TrackPreset::from_name(preset.name()), Some(preset));
        }
    }

    #[derive(Clone, Debug)]
    enum Op {
        Arc(f64, f64),
        Stop(f64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (5.0f64..200.0, prop_oneof![-270.0f64..-5.0, 5.0f64..270.0]).prop_map(|(r, s)| Op::Arc(r, s)),
            (-180.0f64..180.0).prop_map(Op::Stop),
        ]
    }

    proptest! {
        #[test]
        fn consecutive_samples_respect_max_speed(
            speed in 1.0f64..20.0,
            brake in 1.0f64..20.0,
            heading in -PI..PI,
            ops in prop::collection::vec(op(), 1..6),
        ) {
            let mut b = TrackBuilder::new(GlobalPoint::new(0.0, 0.0), heading, speed, brake);
            for o in &ops {
                b = match *o {
                    Op::Arc(r, s) => b.arc(r, s),
                    Op::Stop(t) => b.stop(t),
                };
            }
            let spec = b.build(10.0);
            let track = generate_track(&spec).unwrap();
            for pair in track.windows(2) {
                let step = pair[0].position().distance(pair[1].position());
                prop_assert!(step <= spec.max_speed() * 0.1 + 1e-9);
            }
        }

        #[test]
        fn noise_precision_is_spd(l in prop::array::uniform4(1e-6f64..1e6), dt in 1e-3f64..2.0) {
            let m = KinematicMatrices::new(dt).unwrap();
            let p = process_noise_precision(&Vector4::from(l), &m).unwrap();
            prop_assert!((p - p.transpose()).norm() <= 1e-12 * p.norm());
            prop_assert!(p.cholesky().is_some());
        }
    }
}
