use thiserror::Error;

use crate::geometry::GeodesicPath;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({0}, {1}) lies outside the open unit disk")]
    Domain(f64, f64),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("rank mismatch: expected {expected}, got {got}")]
    RankMismatch { expected: usize, got: usize },

    #[error("degenerate geodesic: {0}")]
    Degenerate(String),

    /// The step budget ran out before the geodesic reached the cut level.
    #[error("geodesic possibly trapped after {steps} steps")]
    Trapped { steps: usize, partial: Box<GeodesicPath> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("ill-conditioned matrix (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("support reaches the grid edge: {0}")]
    SupportAtEdge(String),

    #[error("aliasing: requested mode {requested} but the fiber resolves at most {max}")]
    Aliasing { requested: usize, max: usize },

    #[error("connection is not flat (max curvature {0:.3e})")]
    NotFlat(f64),

    #[error("optimizer stagnated after {iterations} iterations")]
    Stagnation {
        iterations: usize,
        report: Box<crate::reconstruct::ReconstructionReport>,
    },

    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Trapped { .. } | Error::Numerical(_) | Error::IllConditioned(_) | Error::Stagnation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
