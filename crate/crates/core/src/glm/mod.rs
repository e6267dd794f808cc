//! Dense regression numerics: weighted least squares through the normal
//! equations, Bernoulli/binomial logistic regression by IRLS, and Gaussian
//! linear fits.
//!
//! Every fit is a pure function of its inputs.

mod logistic;
mod matrix;
mod wls;

pub use logistic::{
    expit, fit_binomial, fit_logistic, log_likelihood, LogisticFit, IRLS_MAX_ITERATIONS,
    IRLS_TOLERANCE, PROB_FLOOR, SEPARATION_ETA,
};
pub use matrix::Matrix;
pub use wls::{
    fit_linear_gaussian, fit_wls, solve_normal_equations, NormalSolution, Solver, WlsFit,
    CONDITION_THRESHOLD,
};
