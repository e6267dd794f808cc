//! Independent reference computations shared by the integration tests.
//! Nothing here calls the library's numerical routines.

#![allow(dead_code)]

use dwols_privacy::data::{Dataset, SubjectRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, piv);
        b.swap(k, piv);
        assert!(a[k][k].abs() > 1e-300, "singular oracle system");
        let (top, rest) = a.split_at_mut(k + 1);
        let pivot_row = &top[k];
        for (off, row) in rest.iter_mut().enumerate() {
            let f = row[k] / pivot_row[k];
            for (x, p) in row[k..].iter_mut().zip(&pivot_row[k..]) {
                *x -= f * p;
            }
            b[k + 1 + off] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Weighted least squares via explicitly formed normal equations.
pub fn wls_oracle(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut xtwx = vec![vec![0.0; p]; p];
    let mut xtwy = vec![0.0; p];
    for ((r, &yi), &wi) in rows.iter().zip(y).zip(w) {
        for j in 0..p {
            xtwy[j] += wi * r[j] * yi;
            for k in 0..p {
                xtwx[j][k] += wi * r[j] * r[k];
            }
        }
    }
    gauss_solve(xtwx, xtwy)
}

pub fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Bernoulli log-likelihood of `a` under `P(a=1) = sigmoid(b0 + b1·x)`.
pub fn logistic_loglik(x: &[f64], a: &[f64], b0: f64, b1: f64) -> f64 {
    x.iter()
        .zip(a)
        .map(|(&xi, &ai)| {
            let eta = b0 + b1 * xi;
            // log(1+e^eta) computed stably
            let softplus = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            ai * eta - softplus
        })
        .sum()
}

/// Maximizes the two-parameter logistic likelihood by repeatedly searching
/// a 21×21 grid around the incumbent and shrinking the spacing.
pub fn logistic_grid_oracle(x: &[f64], a: &[f64], start: (f64, f64), span: f64) -> (f64, f64) {
    let (mut b0, mut b1) = start;
    let mut step = span / 10.0;
    let mut best = logistic_loglik(x, a, b0, b1);
    while step > 1e-10 {
        let mut moved = false;
        for i in -10..=10 {
            for j in -10..=10 {
                let c0 = b0 + i as f64 * step;
                let c1 = b1 + j as f64 * step;
                let ll = logistic_loglik(x, a, c0, c1);
                if ll > best {
                    best = ll;
                    (b0, b1) = (c0, c1);
                    moved = true;
                }
            }
        }
        if !moved {
            step /= 4.0;
        }
    }
    (b0, b1)
}

/// Normal density.
pub fn dnorm(v: f64, mean: f64, sd: f64) -> f64 {
    let z = (v - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| relative_gap(*x, *y))
        .fold(0.0, f64::max)
}

/// Dataset with covariates `x1..xk`, site labels cycling over `sites`
/// (or random when `random_sites`), a binary or continuous treatment and a
/// linear outcome.
pub fn random_dataset(seed: u64, n: usize, k: usize, sites: usize, binary: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let names: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
    let records = (0..n)
        .map(|i| {
            let covariates: Vec<f64> = (0..k).map(|_| 2.0 + normal.sample(&mut rng)).collect();
            let lin: f64 = covariates.iter().map(|v| 0.3 * (v - 2.0)).sum();
            let treatment = if binary {
                f64::from(u8::from(rng.random::<f64>() < sigmoid(lin)))
            } else {
                lin + normal.sample(&mut rng)
            };
            let outcome = covariates.iter().sum::<f64>()
                + treatment * (1.0 + covariates[0])
                + normal.sample(&mut rng);
            let site = if sites == 0 {
                0
            } else {
                (i * 7 + rng.random_range(0..sites)) % sites
            };
            SubjectRecord {
                site: format!("s{site}"),
                covariates,
                treatment,
                outcome,
            }
        })
        .collect();
    Dataset::new(names, records).unwrap()
}
