use thiserror::Error;

/// Errors raised anywhere in the transmit chain, channel model, receiver or harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("constellation order {0} outside 1..=8")]
    InvalidOrder(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("net rate needs {required} bits per symbol but the format carries at most {capacity}")]
    RateInfeasible { required: usize, capacity: usize },

    #[error("loading infeasible: target {target} bits per symbol, at most {max_achievable} achievable")]
    LoadingInfeasible { target: usize, max_achievable: usize },

    #[error("target BER {0} outside (0, 0.5)")]
    InvalidBer(f64),

    #[error("unsupported resampling ratio {from} Hz -> {to} Hz")]
    UnsupportedRatio { from: f64, to: f64 },

    #[error("aliasing: channel at {offset} Hz with {bandwidth} Hz bandwidth does not fit a {grid_rate} Hz grid")]
    Aliasing {
        offset: f64,
        bandwidth: f64,
        grid_rate: f64,
    },

    #[error("cannot load noise to a finite OSNR on a zero-power field")]
    ZeroPowerField,

    #[error("synchronization failed: metric peak {peak:.3} below floor {floor}")]
    SyncNotFound { peak: f64, floor: f64 },

    #[error("frame truncated: need {needed} samples from index {start}, only {available} available")]
    FrameTruncated {
        start: usize,
        needed: usize,
        available: usize,
    },

    #[error("training symbols are all zero")]
    ZeroTraining,

    #[error("format infeasible at any OSNR: BER {ber:.3e} at the upper bracket {osnr_db} dB")]
    InfeasibleAtAnyOsnr { ber: f64, osnr_db: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Strips any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for errors that mean "this format cannot be carried", as opposed to
    /// execution failures.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self.root(),
            Error::LoadingInfeasible { .. }
                | Error::RateInfeasible { .. }
                | Error::InfeasibleAtAnyOsnr { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
