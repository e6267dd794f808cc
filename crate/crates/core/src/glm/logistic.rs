use super::matrix::Matrix;
use super::wls::solve_normal_equations;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Convergence tolerance on the max-abs coefficient change.
pub const IRLS_TOLERANCE: f64 = 1e-10;
pub const IRLS_MAX_ITERATIONS: usize = 50;
/// Probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]` during IRLS.
pub const PROB_FLOOR: f64 = 1e-12;
/// A converged linear predictor beyond this magnitude signals separation.
pub const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticFit {
    pub alpha: Vec<f64>,
    pub fitted_probabilities: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Some probability hit the numerical floor during fitting.
    pub clamped: bool,
    pub deviance: f64,
}

pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli logistic regression by IRLS.
pub fn fit_logistic(design: &Matrix, treatment: &[f64]) -> Result<LogisticFit> {
    if let Some(i) = treatment.iter().position(|&a| a != 0.0 && a != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "treatment {i} is {} (binary treatment must be 0 or 1)",
            treatment[i]
        )));
    }
    let trials = vec![1.0; treatment.len()];
    fit_binomial(design, treatment, &trials)
}

/// Binomial logistic regression: `successes[i]` out of `trials[i]`.
///
/// Non-convergence yields [`Error::NonConvergence`] carrying the best iterate.
pub fn fit_binomial(design: &Matrix, successes: &[f64], trials: &[f64]) -> Result<LogisticFit> {
    let n = design.rows();
    let p = design.cols();
    if successes.len() != n || trials.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, successes {}, trials {}",
            successes.len(),
            trials.len()
        )));
    }
    for i in 0..n {
        let (s, m) = (successes[i], trials[i]);
        if !(m > 0.0 && s >= 0.0 && s <= m) {
            return Err(Error::InvalidArgument(format!(
                "row {i}: {s} successes out of {m} trials"
            )));
        }
    }

    let mut alpha = vec![0.0; p];
    let mut eta = design.mul_vec(&alpha);
    let mut deviance = binomial_deviance(&eta, successes, trials);
    let mut clamped = false;
    let mut last_change = f64::INFINITY;
    let mut work_w = vec![0.0; n];
    let mut work_z = vec![0.0; n];

    for iter in 1..=IRLS_MAX_ITERATIONS {
        for i in 0..n {
            let mut pr = expit(eta[i]);
            if pr < PROB_FLOOR {
                pr = PROB_FLOOR;
                clamped = true;
            } else if pr > 1.0 - PROB_FLOOR {
                pr = 1.0 - PROB_FLOOR;
                clamped = true;
            }
            let v = trials[i] * pr * (1.0 - pr);
            work_w[i] = v;
            work_z[i] = eta[i] + (successes[i] - trials[i] * pr) / v;
        }
        let (xtwx, xtwz) = design.weighted_cross_products(&work_z, &work_w);
        let proposal = solve_normal_equations(&xtwx, &xtwz)?.theta;

        // Step halving keeps the deviance from increasing.
        let mut step = 1.0;
        let mut candidate;
        let mut cand_eta;
        let mut cand_dev;
        loop {
            candidate = alpha
                .iter()
                .zip(&proposal)
                .map(|(a, b)| a + step * (b - a))
                .collect::<Vec<_>>();
            cand_eta = design.mul_vec(&candidate);
            cand_dev = binomial_deviance(&cand_eta, successes, trials);
            if cand_dev <= deviance * (1.0 + 1e-12) + 1e-12 || step < 1e-3 {
                break;
            }
            step *= 0.5;
        }
        last_change = alpha
            .iter()
            .zip(&candidate)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        alpha = candidate;
        eta = cand_eta;
        deviance = cand_dev;

        if last_change < IRLS_TOLERANCE {
            let max_abs_eta = eta.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
            if max_abs_eta > SEPARATION_ETA {
                return Err(Error::SeparationDetected { max_abs_eta });
            }
            return Ok(LogisticFit {
                fitted_probabilities: eta.iter().map(|&e| clamp_prob(expit(e))).collect(),
                alpha,
                converged: true,
                iterations: iter,
                clamped,
                deviance,
            });
        }
    }
    let best = LogisticFit {
        fitted_probabilities: eta.iter().map(|&e| clamp_prob(expit(e))).collect(),
        alpha,
        converged: false,
        iterations: IRLS_MAX_ITERATIONS,
        clamped,
        deviance,
    };
    Err(Error::NonConvergence {
        iterations: IRLS_MAX_ITERATIONS,
        last_change,
        best: Box::new(best),
    })
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Negative twice the binomial log-likelihood, up to the saturated constant.
fn binomial_deviance(eta: &[f64], successes: &[f64], trials: &[f64]) -> f64 {
    eta.iter()
        .zip(successes)
        .zip(trials)
        .map(|((&e, &s), &m)| {
            // log(1 + e^eta) computed stably
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            -2.0 * (s * e - m * softplus)
        })
        .sum()
}

/// Bernoulli log-likelihood at `alpha`.
pub fn log_likelihood(design: &Matrix, treatment: &[f64], alpha: &[f64]) -> f64 {
    let eta = design.mul_vec(alpha);
    let trials = vec![1.0; treatment.len()];
    -0.5 * binomial_deviance(&eta, treatment, &trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_half() {
        let fit = fit_logistic(&Matrix::ones_column(4), &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.alpha[0], 0.0, epsilon = 1e-12);
        for p in &fit.fitted_probabilities {
            assert_abs_diff_eq!(*p, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn intercept_only_three_quarters() {
        let fit = fit_logistic(&Matrix::ones_column(4), &[1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(fit.alpha[0], 3f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn complete_separation_is_reported() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [1.0, -1.0], [1.0, 1.0], [1.0, 2.0]]).unwrap();
        let err = fit_logistic(&x, &[0.0, 0.0, 1.0, 1.0]).unwrap_err();
        assert!(
            matches!(
                err,
                Error::SeparationDetected { .. } | Error::NonConvergence { .. }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn rejects_non_binary() {
        assert!(matches!(
            fit_logistic(&Matrix::ones_column(2), &[0.0, 0.5]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn binomial_saturated_intercept() {
        let fit = fit_binomial(&Matrix::ones_column(2), &[0.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(fit.fitted_probabilities[0], 0.5, epsilon = 1e-12);
    }
}
