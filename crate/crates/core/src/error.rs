use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value {value} when evaluating at atom {atom} (mark {mark})")]
    Evaluation { atom: usize, mark: f64, value: f64 },

    #[error("ODE step underflow on [{start}, {end}]")]
    StepUnderflow { start: f64, end: f64 },

    #[error("singular tangent flow: 1 + d/dx c = 0 at event {event} (time {time})")]
    SingularFlow { event: usize, time: f64 },

    #[error("degenerate weight: |D F| = {value:e} at time {time}")]
    DegenerateWeight { value: f64, time: f64 },

    #[error("missing model partial `{0}`")]
    MissingPartial(&'static str),

    #[error("unknown built-in model `{0}`")]
    UnknownModel(String),

    #[error("hypothesis {id} violated at (t={t}, a={a}, x={x}): margin {margin:e}")]
    Hypothesis { id: &'static str, t: f64, a: f64, x: f64, margin: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("finite-difference step fell below {min:e} around event {event}")]
    StepCollision { event: usize, min: f64 },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors that signal numerical degeneracy rather than bad input.
    pub fn is_degenerate(&self) -> bool {
        matches!(self, Error::DegenerateWeight { .. } | Error::SingularFlow { .. } | Error::StepUnderflow { .. })
    }
}
