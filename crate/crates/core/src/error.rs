use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("target coincides with the radar position")]
    ZeroRange,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("target range {range:.3} m is at or beyond the unambiguous range {max_range:.3} m")]
    RangeAmbiguous { range: f64, max_range: f64 },

    #[error("two-way delay must be positive, got {0:e} s")]
    NonPositiveDelay(f64),

    #[error("track segment {index} does not start where segment {} ends (gap {gap:.3e} m)", index - 1)]
    DiscontinuousTrack { index: usize, gap: f64 },

    #[error("process-noise precision entries must be positive, got {0:?}")]
    NonPositivePrecision([f64; 4]),

    #[error("reference signal has zero energy under the noise weighting")]
    ZeroSignalEnergy,

    #[error("objective term `{0}` is not finite")]
    NonFinite(&'static str),

    #[error("combined precision is singular; unconstrained directions {null_directions:?}")]
    SingularPrecision { null_directions: Vec<[f64; 4]> },

    #[error("slice {slice}: {source}")]
    Slice {
        slice: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("gamma update needs at least two slices, got {0}")]
    TooFewSlices(usize),

    #[error("spatial covariance is singular after diagonal loading")]
    SingularCovariance,

    #[error("innovation covariance is not positive definite at step {0}")]
    InnovationNotSpd(usize),

    #[error("covariance at index {0} is not positive definite")]
    NotSpd(usize),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("run {run}, pulse {pulse}: {source}")]
    Run {
        run: usize,
        pulse: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed observation dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable identifier, used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroRange => "zero_range",
            Error::Config(_) => "config",
            Error::RangeAmbiguous { .. } => "range_ambiguous",
            Error::NonPositiveDelay(_) => "non_positive_delay",
            Error::DiscontinuousTrack { .. } => "discontinuous_track",
            Error::NonPositivePrecision(_) => "non_positive_precision",
            Error::ZeroSignalEnergy => "zero_signal_energy",
            Error::NonFinite(_) => "non_finite",
            Error::SingularPrecision { .. } => "singular_precision",
            Error::Slice { source, .. } => source.kind(),
            Error::TooFewSlices(_) => "too_few_slices",
            Error::SingularCovariance => "singular_covariance",
            Error::InnovationNotSpd(_) => "innovation_not_spd",
            Error::NotSpd(_) => "not_spd",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::Run { source, .. } => source.kind(),
            Error::Dump(_) => "dump",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::TomlDe(_) | Error::TomlSer(_) => "toml",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn at_slice(self, slice: usize) -> Self {
        Error::Slice {
            slice,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_pulse(self, run: usize, pulse: usize) -> Self {
        Error::Run {
            run,
            pulse,
            source: Box::new(self),
        }
    }
}
