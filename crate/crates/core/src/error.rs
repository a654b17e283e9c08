use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid label {label} for {model} loss (expected {expected})")]
    InvalidLabel {
        label: f64,
        model: &'static str,
        expected: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input {value} outside the unit interval [0, 1]")]
    OutOfDomain { value: f64 },

    #[error("spline order {0} must be a positive even integer")]
    InvalidOrder(i64),

    #[error(
        "(r = {r}, alpha = {alpha}) gives target smoothness (r + 1/2) * alpha + 1/2 = {order}, \
         which is not a positive even integer; valid choices for alpha = 2 include \
         r = 1/4, 5/4, 9/4, 13/4, ... (r = 1/4 + k), for alpha = 4: r = 3/8 + k/2"
    )]
    InvalidSmoothness { r: f64, alpha: f64, order: f64 },

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("Newton solver did not reach decrement {tol:e} within {max_iter} iterations (last {last:e})")]
    MaxIterations { max_iter: usize, tol: f64, last: f64 },

    #[error("line search failed to decrease the objective (decrement {decrement:e})")]
    LineSearch { decrement: f64 },

    #[error("tolerance condition violated: target epsilon {eps:e} exceeds sqrt(lambda)/(2R) = {bound:e}")]
    ToleranceBound { eps: f64, bound: f64 },

    #[error("proximal step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rate fit needs at least 3 distinct sample sizes with positive risk, got {0}")]
    TooFewPoints(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
