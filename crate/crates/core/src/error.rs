use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("coefficient `{field}` evaluated to a non-finite value at t = {t}")]
    CoefficientEvaluation { field: &'static str, t: f64 },

    #[error("simulation diverged at step {step} (particle {particle})")]
    Divergence { step: usize, particle: usize },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("assignment solver capacity exceeded: n = {n} > {cap}; use coupling_bound instead")]
    Capacity { n: usize, cap: usize },

    #[error("(eps = {eps}, t = {t}) is not aligned with the step grid dt = {dt}")]
    GridAlignment { eps: f64, t: f64, dt: f64 },

    #[error("mixture component {index} has a singular covariance")]
    DegenerateComponent { index: usize },

    #[error("atom {index} at {position:?} lies outside the box interior [-{limit}, {limit}]")]
    OutOfBox {
        index: usize,
        position: Vec<f64>,
        limit: f64,
    },

    #[error("imaginary residue {residue:e} after inverse transform; increase N or L")]
    Aliasing { residue: f64 },

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Precondition(_)
                | Error::Infeasible(_)
                | Error::Capacity { .. }
                | Error::GridAlignment { .. }
                | Error::OutOfBox { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
        )
    }
}
