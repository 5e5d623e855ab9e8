use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ols, standardize, RegressionFit};
use crate::clustering::TopicId;
use crate::error::{Error, Result};
use crate::topics::TopicDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepwiseParams {
    pub p_in: f64,
    pub p_out: f64,
    /// Upper bound on add/remove actions.
    pub max_steps: usize,
}

impl Default for StepwiseParams {
    fn default() -> Self {
        StepwiseParams {
            p_in: 0.003,
            p_out: 0.005,
            max_steps: 200,
        }
    }
}

impl StepwiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_in < self.p_out) {
            return Err(Error::Config("p_in < p_out required".into()));
        }
        if !(self.p_in > 0.0 && self.p_out <= 1.0) {
            return Err(Error::Config("p_in and p_out must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepAction {
    Add,
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: StepAction,
    pub topic: TopicId,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    /// In order of entry into the model.
    pub selected: Vec<TopicId>,
    /// Coefficients follow the order of `selected`; `None` when nothing entered.
    pub final_fit: Option<RegressionFit>,
    pub trace: Vec<StepRecord>,
    pub converged: bool,
}

impl StepwiseResult {
    /// Table with one row per selected predictor and a trailing model-fit row.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("predictor,beta,t,df,p,ci_lo,ci_hi,r2,f_stat,df_model,df_resid\n");
        let Some(fit) = &self.final_fit else {
            out.push_str("model_fit,,,,,,,0,,0,\n");
            return out;
        };
        for (topic, c) in self.selected.iter().zip(&fit.coefficients) {
            let _ = writeln!(
                out,
                "topic_{topic},{},{},{},{},{},{},,,,",
                c.estimate, c.t, fit.df_resid, c.p, c.ci_low, c.ci_high
            );
        }
        let _ = writeln!(
            out,
            "model_fit,,,,,,,{},{},{},{}",
            fit.r2, fit.f_stat, fit.df_model, fit.df_resid
        );
        out
    }
}

/// Stepwise selection over per-user topic proportions against an outcome.
///
/// `outcomes` must cover exactly the users in `distributions`.
pub fn stepwise_select(
    distributions: &BTreeMap<String, TopicDistribution>,
    outcomes: &BTreeMap<String, f64>,
    params: &StepwiseParams,
) -> Result<StepwiseResult> {
    if distributions.len() != outcomes.len() || distributions.keys().any(|u| !outcomes.contains_key(u)) {
        let missing = distributions
            .keys()
            .find(|u| !outcomes.contains_key(*u))
            .or_else(|| outcomes.keys().find(|u| !distributions.contains_key(*u)));
        return Err(Error::Misaligned(format!(
            "user sets differ between distributions ({}) and outcomes ({}), e.g. `{}`",
            distributions.len(),
            outcomes.len(),
            missing.map_or("", String::as_str)
        )));
    }
    let n_topics = distributions.values().map(|d| d.d.len()).max().unwrap_or(0);
    let columns: Vec<Vec<f64>> = (0..n_topics)
        .map(|t| distributions.values().map(|d| d.d.get(t).copied().unwrap_or(0.0)).collect())
        .collect();
    let y: Vec<f64> = outcomes.values().copied().collect();
    stepwise_matrix(&columns, &y, params)
}

/// Stepwise selection over raw predictor columns; column `j` is reported as
/// `TopicId(j)`. Predictors and outcome are standardized first and constant
/// predictors never enter.
pub fn stepwise_matrix(columns: &[Vec<f64>], y: &[f64], params: &StepwiseParams) -> Result<StepwiseResult> {
    params.validate()?;
    if columns.is_empty() {
        return Err(Error::InvalidParams("stepwise selection needs at least one candidate".into()));
    }
    for c in columns {
        if c.len() != y.len() {
            return Err(Error::LengthMismatch { expected: y.len(), found: c.len() });
        }
    }
    let y = standardize(y)?;
    let z: Vec<Option<Vec<f64>>> = columns.iter().map(|c| standardize(c).ok()).collect();

    let fit_model = |model: &[usize]| -> Result<RegressionFit> {
        let cols: Vec<Vec<f64>> = model.iter().map(|&j| z[j].clone().expect("only standardized columns enter")).collect();
        ols(&cols, &y)
    };

    let mut model: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut banned: BTreeSet<usize> = BTreeSet::new();
    let mut converged = false;

    while trace.len() < params.max_steps {
        let candidates: Vec<usize> = (0..columns.len())
            .filter(|j| z[*j].is_some() && !model.contains(j) && !banned.contains(j))
            .collect();
        let scored: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|&j| {
                let mut trial = model.clone();
                trial.push(j);
                fit_model(&trial).ok().map(|f| f.coefficients[trial.len() - 1].p)
            })
            .collect();
        let best = candidates
            .iter()
            .zip(&scored)
            .filter_map(|(&j, p)| p.map(|p| (j, p)))
            .filter(|&(_, p)| p < params.p_in)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let Some((entering, p)) = best else {
            if banned.is_empty() {
                converged = true;
                break;
            }
            banned.clear();
            continue;
        };
        banned.clear();
        model.push(entering);
        trace.push(StepRecord {
            step: trace.len() + 1,
            action: StepAction::Add,
            topic: TopicId(entering as u32),
            p_value: p,
        });

        // backward elimination, one variable per refit
        while trace.len() < params.max_steps {
            let fit = fit_model(&model)?;
            let worst = fit
                .coefficients
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.p.total_cmp(&b.1.p).then(model[b.0].cmp(&model[a.0])))
                .map(|(pos, c)| (pos, c.p));
            match worst {
                Some((pos, p)) if p > params.p_out => {
                    let leaving = model.remove(pos);
                    banned.insert(leaving);
                    trace.push(StepRecord {
                        step: trace.len() + 1,
                        action: StepAction::Remove,
                        topic: TopicId(leaving as u32),
                        p_value: p,
                    });
                    if model.is_empty() {
                        break;
                    }
                }
                _ => break,
            }
        }
    }

    if !converged {
        log::warn!("stepwise selection hit the {}-step cap before converging", params.max_steps);
    }
    let final_fit = if model.is_empty() { None } else { Some(fit_model(&model)?) };
    Ok(StepwiseResult {
        selected: model.into_iter().map(|j| TopicId(j as u32)).collect(),
        final_fit,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_candidates_select_nothing() {
        // every candidate has zero sample covariance with y
        let y = vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let a = vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let b = vec![1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
        let r = stepwise_matrix(&[a, b], &y, &StepwiseParams::default()).unwrap();
        assert!(r.selected.is_empty());
        assert!(r.trace.is_empty());
        assert!(r.final_fit.is_none());
        assert!(r.converged);
    }

    #[test]
    fn rejects_p_in_above_p_out() {
        let params = StepwiseParams { p_in: 0.01, p_out: 0.005, ..Default::default() };
        let err = stepwise_matrix(&[vec![1.0, 2.0, 3.0]], &[1.0, 2.0, 4.0], &params).unwrap_err();
        assert!(err.to_string().contains("p_in < p_out required"));
    }

    #[test]
    fn recovers_single_planted_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1000;
        let cols: Vec<Vec<f64>> = (0..10).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let z3 = standardize(&cols[3]).unwrap();
        let y: Vec<f64> = z3.iter().map(|v| 0.5 * v + rng.random_range(-1.5..1.5)).collect();
        let r = stepwise_matrix(&cols, &y, &StepwiseParams::default()).unwrap();
        assert_eq!(r.selected, [TopicId(3)]);
        let csv = r.to_csv_string();
        assert!(csv.starts_with("predictor,beta,t,df,p,ci_lo,ci_hi,r2,f_stat,df_model,df_resid\ntopic_3,"));
        assert!(csv.lines().last().unwrap().starts_with("model_fit,"));
    }

    #[test]
    fn misaligned_users_are_rejected() {
        let mut d = BTreeMap::new();
        d.insert("a".to_string(), TopicDistribution { user_id: "a".into(), d: vec![0.5], total_posts: 2 });
        let mut o = BTreeMap::new();
        o.insert("b".to_string(), 1.0);
        assert!(matches!(stepwise_select(&d, &o, &StepwiseParams::default()), Err(Error::Misaligned(_))));
    }
}
