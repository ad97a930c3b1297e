//! Error types shared across the crate.

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("claim-size argument must be nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("invalid numeric cdf: {0}")]
    InvalidCdf(String),
    #[error("invalid model parameters: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UnivariateError {
    #[error("net profit condition violated: premium {premium} <= intensity * mean claim {loading}")]
    NetProfit { premium: f64, loading: f64 },
    #[error("optimal barrier not bracketed on [0, {x_max}]: {detail}")]
    NotBracketed { x_max: f64, detail: String },
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("curve samples are not strictly decreasing near u = {at}")]
    NotDecreasing { at: f64 },
    #[error("curve abscissae are not strictly increasing near u = {at}")]
    BadAbscissae { at: f64 },
    #[error("curve must end at zero, last value is {0}")]
    NonZeroEnd(f64),
    #[error("curve must have nonnegative values, found {0}")]
    Negative(f64),
    #[error("curve does not meet the vertex line: {0}")]
    VertexMismatch(String),
    #[error("curve derivative is nonnegative ({slope}) at u = {at}")]
    NonNegativeSlope { at: f64, slope: f64 },
    #[error("point ({x}, {y}) is not in a lump-sum region")]
    NotInPaymentRegion { x: f64, y: f64 },
    #[error("argument {arg} outside curve domain [{lo}, {hi}]")]
    OutOfDomain { arg: f64, lo: f64, hi: f64 },
    #[error("curve construction failed: {0}")]
    Construction(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Univariate(#[from] UnivariateError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error("grid error: {0}")]
    Grid(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric instability: {0}")]
    Instability(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
}
