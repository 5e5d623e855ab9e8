//! Standardization, correlation, two-sample tests, OLS and stepwise selection.

mod ols;
mod stepwise;

pub use ols::{ols, Coefficient, RegressionFit};
pub use stepwise::{
    stepwise_matrix, stepwise_select, StepAction, StepRecord, StepwiseParams, StepwiseResult,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Rescales to mean 0 and sample standard deviation 1.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    if x.len() < 2 {
        return Err(Error::Degenerate(format!("cannot standardize {} value(s)", x.len())));
    }
    let m = mean(x);
    let sd = sample_variance(x).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("constant vector has zero standard deviation".into()));
    }
    Ok(x.iter().map(|v| (v - m) / sd).collect())
}

/// Two-sided tail probability of a Student-t statistic.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Two-sided critical value, e.g. `level = 0.95`.
pub fn t_critical(level: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    dist.inverse_cdf(0.5 + level / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { expected: x.len(), found: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, found: n });
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("correlation with a constant vector".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    let p = if denom <= 0.0 {
        0.0
    } else {
        t_two_sided_p(r * (df / denom).sqrt(), df)
    };
    Ok(Correlation { r, p, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's unequal-variance two-sample t-test with Satterthwaite df.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    for (name, s) in [("first", a), ("second", b)] {
        if s.len() < 2 {
            return Err(Error::Degenerate(format!("{name} sample has fewer than 2 values")));
        }
    }
    let (va, vb) = (sample_variance(a), sample_variance(b));
    if !(va > 0.0) || !(vb > 0.0) {
        return Err(Error::Degenerate("sample with zero variance".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se = (sa + sb).sqrt();
    let t = (mean(a) - mean(b)) / se;
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTest { t, df, p: t_two_sided_p(t, df) })
}
