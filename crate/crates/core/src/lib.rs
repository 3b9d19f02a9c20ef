//! Joint transmit precoding and RIS phase design for multi-beam downlinks
//! with reradiation masks.
//!
//! The pipeline: a [`scene::Scenario`] fixes geometry and powers,
//! [`channel`] draws the Rician channels, [`objective`] evaluates rates and
//! builds quadratic sub-problems, and three optimizers produce a
//! [`ao::Solution`]: alternating convex optimization ([`ao`]), greedy
//! discrete-phase search ([`discrete`]) and an unsupervised network
//! ([`neural`]).

pub mod ao;
pub mod channel;
pub mod discrete;
pub mod neural;
pub mod objective;
pub mod pattern;
pub mod scene;

pub use ris_conic::{CMat, CVec, C64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BeamError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("degenerate angle {0} degrees")]
    DegenerateAngle(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("sub-problem solver failed in {stage}: {source}")]
    Solver {
        stage: String,
        #[source]
        source: ris_conic::ConicError,
    },
    #[error("conic error: {0}")]
    Conic(#[from] ris_conic::ConicError),
    #[error("non-finite value at training iteration {0}")]
    NonFinite(usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Power in Watts to dBm; zero maps to a very large negative number rather than `-inf`.
pub fn watts_to_dbm(p: f64) -> f64 {
    10.0 * p.max(1e-300).log10() + 30.0
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}
