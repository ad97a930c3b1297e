//! Optimal dividend strategies for two insurance companies whose compound-Poisson
//! surpluses collaborate by covering each other's deficits.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: parameters, claim-size laws and their validation.
//! - [`univariate`]: the single-company barrier problem, used for the ruin
//!   payoffs `V⁰₁`, `V⁰₂` and for the merged company.
//! - [`field`]: grid-sampled value functions and the integro-differential
//!   operators of the bivariate HJB equation.
//! - [`curve`]: curve strategies, their seven regions, rates and lump sums.
//! - [`evaluate`]: closed-form one-step curve values and the contraction fixed
//!   point giving the value of a curve strategy.
//! - [`iterate`]: the n-step scheme producing increasing approximations of the
//!   optimal value function through Euler-Lagrange curves.
//! - [`simulate`]: a Monte Carlo oracle of the controlled bivariate process.
//! - [`verify`]: numeric checks of growth, Lipschitz, supersolution and
//!   comparison properties.

pub mod curve;
pub mod error;
pub mod evaluate;
pub mod field;
pub mod iterate;
pub mod model;
pub mod simulate;
pub mod univariate;
pub mod verify;

mod quad;

pub use curve::{CurveSpec, MonotoneCurve, RegionLabel};
pub use error::{CurveError, Error, ModelError, Result, UnivariateError};
pub use evaluate::{FixedPointOptions, FixedPointResult, HField, KProfile};
pub use field::{BoundaryPayoffs, Grid2D, GridFunction, HjbResidual};
pub use iterate::{IterateOptions, IterationRun, IterationState, V0Convention};
pub use model::{ClaimLaw, ModelParams, NumericCdf, Violation};
pub use simulate::{SimEstimate, StrategyPolicy};
pub use univariate::UnivariateValue;
pub use verify::{CheckOutcome, ResidualReport};
