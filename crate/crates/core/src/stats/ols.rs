use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::{mean, t_critical, t_two_sided_p};
use crate::error::{Error, Result};

/// Relative pivot below which a column counts as linearly dependent.
const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Coefficient {
    fn new(estimate: f64, se: f64, df: f64, t_crit: f64) -> Self {
        let (t, p) = if se > 0.0 {
            let t = estimate / se;
            (t, t_two_sided_p(t, df))
        } else if estimate == 0.0 {
            (0.0, 1.0)
        } else {
            (estimate.signum() * f64::INFINITY, 0.0)
        };
        Coefficient {
            estimate,
            se,
            t,
            p,
            ci_low: estimate - t_crit * se,
            ci_high: estimate + t_crit * se,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    /// One entry per predictor column, in input order.
    pub coefficients: Vec<Coefficient>,
    pub intercept: Coefficient,
    pub r2: f64,
    pub f_stat: f64,
    pub f_p: f64,
    pub df_model: usize,
    pub df_resid: usize,
    pub residual_variance: f64,
    pub n: usize,
}

impl RegressionFit {
    pub fn betas(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }
}

/// Least squares with an intercept. `columns[j]` holds predictor `j`.
///
/// Errors with the first column (0-based) that is linearly dependent on the
/// intercept and earlier columns.
pub fn ols(columns: &[Vec<f64>], y: &[f64]) -> Result<RegressionFit> {
    let n = y.len();
    let k = columns.len();
    if k == 0 {
        return Err(Error::InvalidParams("regression needs at least one predictor".into()));
    }
    for c in columns {
        if c.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: c.len() });
        }
    }
    if n < k + 2 {
        return Err(Error::TooFewPoints { needed: k + 2, found: n });
    }

    let means: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
    let y_mean = mean(y);
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| v - m).collect())
        .collect();
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for i in 0..k {
        for j in 0..=i {
            let s = dot(&centered[i], &centered[j]);
            gram[i * k + j] = s;
            gram[j * k + i] = s;
        }
        rhs[i] = dot(&centered[i], &yc);
    }

    let chol = cholesky(&gram, k)?;
    let inv = chol_inverse(&chol, k);
    let beta: Vec<f64> = (0..k).map(|i| (0..k).map(|j| inv[i * k + j] * rhs[j]).sum()).collect();

    let sst = dot(&yc, &yc);
    let sse: f64 = (0..n)
        .map(|r| {
            let fitted: f64 = (0..k).map(|j| beta[j] * centered[j][r]).sum();
            let e = yc[r] - fitted;
            e * e
        })
        .sum();
    let df_resid = n - k - 1;
    let sigma2 = sse / df_resid as f64;
    let df = df_resid as f64;
    let t_crit = t_critical(0.95, df);

    let coefficients = (0..k)
        .map(|j| Coefficient::new(beta[j], (sigma2 * inv[j * k + j]).sqrt(), df, t_crit))
        .collect();
    let intercept_est = y_mean - (0..k).map(|j| beta[j] * means[j]).sum::<f64>();
    let quad: f64 = (0..k)
        .map(|i| (0..k).map(|j| means[i] * inv[i * k + j] * means[j]).sum::<f64>())
        .sum();
    let intercept = Coefficient::new(intercept_est, (sigma2 * (1.0 / n as f64 + quad)).sqrt(), df, t_crit);

    let r2 = if sst > 0.0 { 1.0 - sse / sst } else { 0.0 };
    let ssr = sst - sse;
    let f_stat = if sse > 0.0 {
        (ssr / k as f64) / sigma2
    } else {
        f64::INFINITY
    };
    let f_p = if f_stat.is_finite() {
        FisherSnedecor::new(k as f64, df)
            .expect("positive degrees of freedom")
            .sf(f_stat)
    } else {
        0.0
    };

    Ok(RegressionFit {
        coefficients,
        intercept,
        r2,
        f_stat,
        f_p,
        df_model: k,
        df_resid,
        residual_variance: sigma2,
        n,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular factor of a symmetric positive definite `k x k` matrix.
fn cholesky(a: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for j in 0..k {
        let diag = a[j * k + j] - (0..j).map(|m| l[j * k + m] * l[j * k + m]).sum::<f64>();
        if !(diag > PIVOT_TOLERANCE * a[j * k + j]) || a[j * k + j] <= 0.0 {
            return Err(Error::RankDeficient { column: j });
        }
        let d = diag.sqrt();
        l[j * k + j] = d;
        for i in j + 1..k {
            let s = a[i * k + j] - (0..j).map(|m| l[i * k + m] * l[j * k + m]).sum::<f64>();
            l[i * k + j] = s / d;
        }
    }
    Ok(l)
}

/// `(L L^T)^-1` from the Cholesky factor.
fn chol_inverse(l: &[f64], k: usize) -> Vec<f64> {
    // invert L by forward substitution, column by column
    let mut li = vec![0.0; k * k];
    for c in 0..k {
        li[c * k + c] = 1.0 / l[c * k + c];
        for r in c + 1..k {
            let s: f64 = (c..r).map(|m| l[r * k + m] * li[m * k + c]).sum();
            li[r * k + c] = -s / l[r * k + r];
        }
    }
    let mut inv = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (i..k).map(|m| li[m * k + i] * li[m * k + j]).sum();
            inv[i * k + j] = s;
            inv[j * k + i] = s;
        }
    }
    inv
}
