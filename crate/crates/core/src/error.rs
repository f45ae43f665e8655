use thiserror::Error;

/// Errors raised by the numerical stages.
#[derive(Debug, Error)]
pub enum HiconError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("assembly error: {0}")]
    Assembly(String),
    #[error("eigensolver did not converge: {0}")]
    Convergence(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("problem too large for dense solve: dimension {dim} exceeds cap {cap}")]
    Size { dim: usize, cap: usize },
    #[error("linear solve failed: {0}")]
    Solve(String),
    #[error("evaluation at a pole: z = {z}, eta = {eta}")]
    Pole { z: f64, eta: f64 },
    #[error("grid error: {0}")]
    Grid(String),
    #[error("degenerate direction stiffness: {0}")]
    Degenerate(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<HiconError>,
    },
}

impl HiconError {
    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        match self {
            HiconError::Config(_) | HiconError::Geometry(_) => true,
            HiconError::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }

    /// Tags the error with the stage that raised it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ HiconError::Stage { .. } => e,
            e => HiconError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T, E = HiconError> = std::result::Result<T, E>;
