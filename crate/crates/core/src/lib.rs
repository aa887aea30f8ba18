//! Simulation and tracking of a single target observed by several
//! colocated-MIMO radars, with a variational message-passing tracker and a
//! Kalman-smoother baseline.

pub mod baseline;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod inference;
pub mod kinematics;
pub mod node;
pub mod waveform;

pub use error::{Error, Result};
pub use geometry::{GlobalPoint, LocalPoint, RadarPose};
pub use kinematics::{KinematicMatrices, KinematicState, TrackSpec};
pub use waveform::{ArrayGeometry, LinkBudget, ObservationBlock, SensorModel, WaveformConfig};
