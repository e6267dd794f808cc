use super::matrix::Matrix;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Condition estimate above which a design is reported as singular.
pub const CONDITION_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Cholesky,
    PivotedQr,
}

/// Solution of a symmetric positive (semi)definite system `A θ = b`.
#[derive(Debug, Clone)]
pub struct NormalSolution {
    pub theta: Vec<f64>,
    /// `A⁻¹`, used for the model-based covariance.
    pub inverse: Matrix,
    pub condition_estimate: f64,
    pub solver: Solver,
}

/// Solves the normal equations `xtwx · θ = xtwy`.
///
/// Cholesky first; when the factorization breaks down the system is handed to
/// a column-pivoted QR, whose diagonal gives a rank-revealing condition
/// estimate for the error report.
pub fn solve_normal_equations(xtwx: &Matrix, xtwy: &[f64]) -> Result<NormalSolution> {
    let p = xtwx.rows();
    if !xtwx.is_square() || xtwy.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "normal equations: {}x{} matrix with {}-vector",
            xtwx.rows(),
            xtwx.cols(),
            xtwy.len()
        )));
    }
    if xtwy.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("right-hand side".into()));
    }
    match cholesky(xtwx) {
        Some(l) => {
            let (dmax, dmin) = diag_extremes(&l);
            let condition = (dmax / dmin).powi(2);
            if condition.is_nan() || condition > CONDITION_THRESHOLD {
                return Err(singular(condition));
            }
            let theta = cholesky_solve(&l, xtwy);
            let mut inverse = Matrix::zeros(p, p);
            let mut e = vec![0.0; p];
            for j in 0..p {
                e.iter_mut().for_each(|v| *v = 0.0);
                e[j] = 1.0;
                let col = cholesky_solve(&l, &e);
                for i in 0..p {
                    inverse[(i, j)] = col[i];
                }
            }
            symmetrize(&mut inverse);
            Ok(NormalSolution {
                theta,
                inverse,
                condition_estimate: condition.max(1.0),
                solver: Solver::Cholesky,
            })
        }
        None => pivoted_qr_solve(xtwx, xtwy),
    }
}

fn singular(condition: f64) -> Error {
    Error::SingularDesign {
        condition,
        threshold: CONDITION_THRESHOLD,
        context: String::new(),
    }
}

/// Lower-triangular factor, or `None` on a non-positive pivot.
fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= 0.0 {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[(i, k)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            z[i] -= l[(k, i)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    z
}

fn diag_extremes(l: &Matrix) -> (f64, f64) {
    (0..l.rows())
        .map(|i| l[(i, i)].abs())
        .fold((0.0_f64, f64::INFINITY), |(hi, lo), d| {
            (hi.max(d), lo.min(d))
        })
}

fn symmetrize(m: &mut Matrix) {
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn pivoted_qr_solve(a: &Matrix, b: &[f64]) -> Result<NormalSolution> {
    let p = a.rows();
    let dm = DMatrix::from_row_slice(p, p, a.as_slice());
    let qr = dm.col_piv_qr();
    let r = qr.r();
    let dmax = (0..p).map(|i| r[(i, i)].abs()).fold(0.0_f64, f64::max);
    let dmin = (0..p)
        .map(|i| r[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    let condition = if dmin > 0.0 {
        dmax / dmin
    } else {
        f64::INFINITY
    };
    if condition.is_nan() || condition > CONDITION_THRESHOLD {
        return Err(singular(condition));
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    let theta = qr
        .solve(&rhs)
        .ok_or_else(|| singular(f64::INFINITY))?
        .iter()
        .copied()
        .collect();
    let inv = qr.try_inverse().ok_or_else(|| singular(f64::INFINITY))?;
    let mut inverse = Matrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            inverse[(i, j)] = inv[(i, j)];
        }
    }
    symmetrize(&mut inverse);
    Ok(NormalSolution {
        theta,
        inverse,
        condition_estimate: condition.max(1.0),
        solver: Solver::PivotedQr,
    })
}

/// Weighted least squares fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WlsFit {
    pub theta: Vec<f64>,
    pub residual_sd: f64,
    /// `σ̂² (X'WX)⁻¹`. Does not account for uncertainty in estimated weights.
    pub model_covariance: Matrix,
    pub condition_estimate: f64,
    pub solver: Solver,
    /// Residual degrees of freedom (positive-weight rows minus columns).
    pub df_residual: usize,
    /// Fitted values `Xθ`.
    pub fitted: Vec<f64>,
}

impl WlsFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.theta.len())
            .map(|i| self.model_covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }
}

/// Weighted least squares through the normal equations.
pub fn fit_wls(design: &Matrix, outcome: &[f64], weights: &[f64]) -> Result<WlsFit> {
    let n = design.rows();
    if outcome.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, outcome {}, weights {}",
            outcome.len(),
            weights.len()
        )));
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "weight {i} is {} (must be finite and >= 0)",
            weights[i]
        )));
    }
    if outcome.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outcome".into()));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive == 0 {
        return Err(Error::InvalidArgument("all weights are zero".into()));
    }
    let (xtwx, xtwy) = design.weighted_cross_products(outcome, weights);
    let sol = solve_normal_equations(&xtwx, &xtwy)?;
    let fitted = design.mul_vec(&sol.theta);
    let wrss: f64 = outcome
        .iter()
        .zip(&fitted)
        .zip(weights)
        .map(|((y, f), w)| w * (y - f) * (y - f))
        .sum();
    let p = design.cols();
    let df_residual = positive.saturating_sub(p);
    let residual_sd = if df_residual > 0 {
        (wrss / df_residual as f64).sqrt()
    } else {
        0.0
    };
    Ok(WlsFit {
        model_covariance: sol.inverse.scale(residual_sd * residual_sd),
        theta: sol.theta,
        residual_sd,
        condition_estimate: sol.condition_estimate,
        solver: sol.solver,
        df_residual,
        fitted,
    })
}

/// Ordinary least squares for a Gaussian treatment model.
pub fn fit_linear_gaussian(design: &Matrix, treatment: &[f64]) -> Result<WlsFit> {
    let ones = vec![1.0; design.rows()];
    fit_wls(design, treatment, &ones)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_two_point_interpolation() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        let fit = fit_wls(&x, &[1.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.theta[1], 2.0, epsilon = 1e-14);
        assert_eq!(fit.residual_sd, 0.0);
    }

    #[test]
    fn intercept_only_is_weighted_mean() {
        let x = Matrix::ones_column(4);
        let fit = fit_wls(&x, &[1.0, 2.0, 3.0, 4.0], &[1.0; 4]).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 2.5, epsilon = 1e-14);
        let fit = fit_wls(&x, &[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 3.75, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_exact_line_and_two_point_sd() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 2.0], [1.0, 3.0]]).unwrap();
        let fit = fit_linear_gaussian(&x, &[2.0, 4.0, 6.0]).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.theta[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.residual_sd, 0.0, epsilon = 1e-7);

        let fit = fit_linear_gaussian(&Matrix::ones_column(2), &[1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(fit.theta[0], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.residual_sd, 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn collinear_design_is_singular() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        match fit_wls(&x, &[1.0, 2.0, 3.0], &[1.0; 3]) {
            Err(Error::SingularDesign { condition, .. }) => assert!(condition > 1e12),
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn dimension_and_weight_errors() {
        let x = Matrix::ones_column(3);
        assert!(matches!(
            fit_wls(&x, &[1.0, 2.0], &[1.0; 3]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            fit_wls(&x, &[1.0; 3], &[0.0; 3]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            fit_wls(&x, &[1.0; 3], &[1.0, -1.0, 1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn qr_fallback_reports_condition() {
        // Indefinite input sends Cholesky to the fallback.
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let sol = solve_normal_equations(&a, &[2.0, 3.0]).unwrap();
        assert_eq!(sol.solver, Solver::PivotedQr);
        assert_abs_diff_eq!(sol.theta[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.theta[1], 2.0, epsilon = 1e-12);
    }
}
