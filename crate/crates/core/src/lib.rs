//! Small area estimation of finite-population parameters (areal means, Gini
//! coefficients) from grouped frequency data.
//!
//! Unit values `z` in area `i` follow `h_kappa(z) ~ N(x_i' beta + b_i, sigma_i^2)`
//! with a Box-Cox transform `h_kappa`, `b_i ~ N(0, tau2)` and
//! `sigma_i^2 ~ IG(lambda/2 + 1, lambda exp(x_i' gamma) / 2)`. Only class
//! counts over known thresholds are observed. The crate fits the
//! hyperparameters by Monte Carlo EM, predicts area parameters with an
//! empirical Bayes Gibbs sampler, and provides a midpoint baseline,
//! a parametric bootstrap and simulation harnesses.

pub mod baseline;
pub mod bootstrap;
pub mod datamodel;
pub mod eis;
pub mod estimator;
pub mod gibbs;
pub mod error;
pub mod likelihood;
pub mod linalg;
pub mod mcem;
pub mod optim;
pub mod output;
pub mod population;
pub mod rng;
pub mod sampling;
pub mod simulate;
pub mod special;
pub mod transform;

pub use datamodel::{AreaRecord, FittedModel, GroupedSample, Hyperparameters, RandomEffects, Thresholds};
pub use error::{Result, SaeError};
pub use likelihood::Grouping;
pub use transform::BoxCox;
