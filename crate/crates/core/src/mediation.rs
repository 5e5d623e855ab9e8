//! Single-mediator path analysis on standardized variables with a percentile
//! bootstrap for the indirect effect.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hash::derive_seed_indexed;
use crate::stats::{ols, standardize, Coefficient};

pub const MIN_OBSERVATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediationParams {
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for MediationParams {
    fn default() -> Self {
        MediationParams { n_boot: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndirectEffect {
    pub estimate: f64,
    /// Standard deviation of the bootstrap distribution.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Bootstrap two-sided p, floored at `2 / n_boot`.
    pub p: f64,
    pub sobel_z: f64,
    pub sobel_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediationResult {
    /// M ~ X.
    pub a: Coefficient,
    /// M in Y ~ X + M.
    pub b: Coefficient,
    /// X in Y ~ X + M.
    pub c_prime: Coefficient,
    /// X in Y ~ X.
    pub total: Coefficient,
    pub indirect: IndirectEffect,
    pub r2_m: f64,
    pub r2_y: f64,
    pub r2_total: f64,
    pub n: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl MediationResult {
    /// Path table: regression rows, then the total/direct/indirect block.
    pub fn to_csv_string(&self, x_name: &str, m_name: &str, y_name: &str) -> String {
        let mut out = String::from("section,name,predictor,coef,se,t,p,ci_lo,ci_hi,r2\n");
        let mut row = |section: &str, name: &str, predictor: &str, c: &Coefficient, r2: Option<f64>| {
            let r2 = r2.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{section},{name},{predictor},{},{},{},{},{},{},{r2}",
                c.estimate, c.se, c.t, c.p, c.ci_low, c.ci_high
            );
        };
        let m_model = format!("{m_name}~{x_name}");
        let y_model = format!("{y_name}~{x_name}+{m_name}");
        let t_model = format!("{y_name}~{x_name}");
        row("path", &m_model, x_name, &self.a, Some(self.r2_m));
        row("path", &y_model, x_name, &self.c_prime, Some(self.r2_y));
        row("path", &y_model, m_name, &self.b, Some(self.r2_y));
        row("path", &t_model, x_name, &self.total, Some(self.r2_total));
        row("effect", "total", x_name, &self.total, None);
        row("effect", "direct", x_name, &self.c_prime, None);
        let ind = &self.indirect;
        let _ = writeln!(
            out,
            "effect,indirect,{x_name}->{m_name},{},{},,{},{},{},",
            ind.estimate, ind.se, ind.p, ind.ci_low, ind.ci_high
        );
        out
    }
}

pub fn mediation_analysis(x: &[f64], m: &[f64], y: &[f64], params: &MediationParams) -> Result<MediationResult> {
    let n = x.len();
    for other in [m, y] {
        if other.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: other.len() });
        }
    }
    if n < MIN_OBSERVATIONS {
        return Err(Error::TooFewPoints { needed: MIN_OBSERVATIONS, found: n });
    }
    if params.n_boot == 0 {
        return Err(Error::InvalidParams("n_boot must be positive".into()));
    }
    let (x, m, y) = (standardize(x)?, standardize(m)?, standardize(y)?);

    let m_fit = ols(std::slice::from_ref(&x), &m)?;
    let y_fit = ols(&[x.clone(), m.clone()], &y)?;
    let t_fit = ols(std::slice::from_ref(&x), &y)?;
    let a = m_fit.coefficients[0];
    let (c_prime, b) = (y_fit.coefficients[0], y_fit.coefficients[1]);
    let point = a.estimate * b.estimate;

    let draws: Vec<f64> = (0..params.n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(params.seed, r as u64));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            resampled_indirect(&x, &m, &y, &idx)
        })
        .collect();
    let mut finite: Vec<f64> = draws.into_iter().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Degenerate("every bootstrap resample was degenerate".into()));
    }
    finite.sort_by(f64::total_cmp);
    let nb = finite.len() as f64;
    let boot_mean = finite.iter().sum::<f64>() / nb;
    let boot_se = if finite.len() > 1 {
        (finite.iter().map(|v| (v - boot_mean).powi(2)).sum::<f64>() / (nb - 1.0)).sqrt()
    } else {
        0.0
    };
    let le = finite.iter().filter(|&&v| v <= 0.0).count() as f64 / nb;
    let ge = finite.iter().filter(|&&v| v >= 0.0).count() as f64 / nb;
    let p = (2.0 * le.min(ge)).clamp(2.0 / params.n_boot as f64, 1.0);

    let sobel_se = (b.estimate.powi(2) * a.se.powi(2) + a.estimate.powi(2) * b.se.powi(2)).sqrt();
    let sobel_z = point / sobel_se;
    let sobel_p = if sobel_z.is_finite() {
        2.0 * Normal::standard().sf(sobel_z.abs())
    } else if sobel_z.is_nan() {
        f64::NAN
    } else {
        0.0
    };

    Ok(MediationResult {
        a,
        b,
        c_prime,
        total: t_fit.coefficients[0],
        indirect: IndirectEffect {
            estimate: point,
            se: boot_se,
            ci_low: quantile_sorted(&finite, 0.025),
            ci_high: quantile_sorted(&finite, 0.975),
            p,
            sobel_z,
            sobel_p,
        },
        r2_m: m_fit.r2,
        r2_y: y_fit.r2,
        r2_total: t_fit.r2,
        n,
        n_boot: params.n_boot,
        seed: params.seed,
    })
}

/// `a * b` on a resample of rows; NaN when the resample is degenerate.
fn resampled_indirect(x: &[f64], m: &[f64], y: &[f64], idx: &[usize]) -> f64 {
    let k = idx.len() as f64;
    let (mut sx, mut sm, mut sy) = (0.0, 0.0, 0.0);
    for &i in idx {
        sx += x[i];
        sm += m[i];
        sy += y[i];
    }
    let (mx, mm, my) = (sx / k, sm / k, sy / k);
    let (mut sxx, mut smm, mut sxm, mut sxy, mut smy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in idx {
        let (dx, dm, dy) = (x[i] - mx, m[i] - mm, y[i] - my);
        sxx += dx * dx;
        smm += dm * dm;
        sxm += dx * dm;
        sxy += dx * dy;
        smy += dm * dy;
    }
    let a = sxm / sxx;
    let det = sxx * smm - sxm * sxm;
    if !(sxx > 0.0) || !(det > 1e-12 * sxx * smm) {
        return f64::NAN;
    }
    let b = (sxx * smy - sxm * sxy) / det;
    a * b
}

/// Linear interpolation between order statistics (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn chain(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = || rng.random_range(-1.0..1.0);
        let x: Vec<f64> = (0..n).map(|_| noise()).collect();
        let m: Vec<f64> = x.iter().map(|v| 0.7 * v + 0.5 * noise()).collect();
        let y: Vec<f64> = m.iter().map(|v| 0.6 * v + 0.5 * noise()).collect();
        (x, m, y)
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_mediator_has_no_indirect_effect() {
        let x = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let m = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let y = [0.3, -0.2, 0.8, 0.1, -0.5, 0.9, 0.4, -0.7, 0.2, 0.6, -0.1, 0.0];
        let r = mediation_analysis(&x, &m, &y, &MediationParams { n_boot: 200, seed: 1 }).unwrap();
        assert!(r.a.estimate.abs() < 1e-12);
        assert!(r.indirect.estimate.abs() < 1e-12);
        assert!((r.total.estimate - r.c_prime.estimate).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_p_floor() {
        let (x, m, y) = chain(200, 4);
        let params = MediationParams { n_boot: 400, seed: 9 };
        let r1 = mediation_analysis(&x, &m, &y, &params).unwrap();
        let r2 = mediation_analysis(&x, &m, &y, &params).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.indirect.p, 2.0 / 400.0);
        assert!(r1.indirect.ci_low > 0.0);
        let csv = r1.to_csv_string("x", "m", "y");
        assert_eq!(csv.lines().count(), 8);
    }

    #[test]
    fn errors() {
        let (x, m, y) = chain(20, 1);
        assert!(matches!(
            mediation_analysis(&x, &m[..19], &y, &MediationParams::default()),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(mediation_analysis(&x, &[2.0; 20], &y, &MediationParams::default()).is_err());
        assert!(matches!(
            mediation_analysis(&x[..9], &m[..9], &y[..9], &MediationParams::default()),
            Err(Error::TooFewPoints { .. })
        ));
    }

    #[test]
    fn orientation_matters() {
        let (x, m, y) = chain(500, 2);
        let params = MediationParams { n_boot: 50, seed: 0 };
        let forward = mediation_analysis(&x, &m, &y, &params).unwrap();
        let reversed = mediation_analysis(&m, &x, &y, &params).unwrap();
        assert!(forward.indirect.estimate > reversed.indirect.estimate);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn total_is_direct_plus_indirect(seed in any::<u64>(), n in 10usize..80) {
            let (x, m, y) = chain(n, seed);
            let r = mediation_analysis(&x, &m, &y, &MediationParams { n_boot: 10, seed }).unwrap();
            prop_assert!((r.total.estimate - (r.c_prime.estimate + r.indirect.estimate)).abs() <= 1e-10);
        }
    }
}
