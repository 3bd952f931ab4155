use thiserror::Error;

/// Errors raised by the control, simulation and certification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("negative susceptance {value} on line {i}-{j}")]
    NegativeSusceptance { i: usize, j: usize, value: f64 },

    #[error("asymmetric {what} between buses {i} and {j}: {a} vs {b}")]
    Asymmetric {
        what: &'static str,
        i: usize,
        j: usize,
        a: f64,
        b: f64,
    },

    #[error("{0} graph is disconnected")]
    Disconnected(&'static str),

    #[error("nonpositive {field} at bus {bus}: {value}")]
    NonPositive {
        field: &'static str,
        bus: usize,
        value: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("angle gauge drift {drift:e} exceeds 1e-3")]
    GaugeDrift { drift: f64 },

    #[error("invalid cost model: {0}")]
    InvalidCost(String),

    #[error("gradient range exhausted while inverting marginal cost {target}")]
    GradientRangeExhausted { target: f64 },

    #[error("target not monotone near x = {at}")]
    NotMonotone { at: f64 },

    #[error("invalid controller: {0}")]
    InvalidController(String),

    #[error("power injections do not balance: sum = {sum:e}")]
    Unbalanced { sum: f64 },

    #[error("power flow infeasible after {iterations} iterations (residual {residual:e})")]
    PowerFlowInfeasible { iterations: usize, residual: f64 },

    #[error("power flow solution outside security region on line {i}-{j} (angle difference {diff})")]
    OutsideSecurityRegion { i: usize, j: usize, diff: f64 },

    #[error("equilibrium outside controller range at bus {bus}: target {target}, range [{lo}, {hi}]")]
    OutsideControllerRange {
        bus: usize,
        target: f64,
        lo: f64,
        hi: f64,
    },

    #[error("synchronous frequency bracket exhausted")]
    SyncBracketExhausted,

    #[error("integration blow-up at step {step}")]
    BlowUp { step: usize },

    #[error("training blow-up at epoch {epoch}, sample {sample} (seed {seed})")]
    TrainingBlowUp {
        epoch: usize,
        sample: usize,
        seed: u64,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("mode mismatch: trajectory is {trajectory}, certification requested {requested}")]
    ModeMismatch {
        trajectory: &'static str,
        requested: &'static str,
    },

    #[error("no certifying epsilon found in grid")]
    NoCertifyingEpsilon,

    #[error("matrix is singular")]
    Singular,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
