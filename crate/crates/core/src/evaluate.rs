//! Out-of-sample premiums, scores and model-comparison tables.
//!
//! Premiums are sequential: the premium of a contract uses the insured's
//! pre-entry record and every earlier contract in the scored dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bms::{initial_level, next_level, relativity};
use crate::dist::MeanParam;
use crate::error::{Error, Result};
use crate::estimate::{link, BmsStructure, Family, FitResult, PanelKind, RegressionSpec};
use crate::hf::{hf_prior_update, hf_step, HfState, HfWeight};
use crate::panel::{mvnb_prior_update, nbbeta_prior_update, CredibilityState, MixingLaw, MvnbParams};
use crate::portfolio::{PanelDataset, Policyholder};
use crate::special::ln_factorial;

/// Floor applied to premiums inside the Poisson scoring loglik.
pub const PREMIUM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Premium {
    pub id: String,
    pub period: u32,
    pub premium: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumSchedule {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<BmsStructure>,
    pub premiums: Vec<Premium>,
}

/// Sequential premiums of one policyholder under a fitted model.
pub fn holder_premiums(model: &FitResult, holder: &Policyholder) -> Result<Vec<f64>> {
    let p = model.params();
    let beta = RegressionSpec::new(p.beta.clone())?;
    let lambdas = holder
        .contracts
        .iter()
        .map(|c| link(&c.covariates, c.exposure, &beta).map(|m| m.value()))
        .collect::<Result<Vec<f64>>>()?;
    let counts: Vec<u64> = holder.contracts.iter().map(|c| c.claims).collect();
    match model.family {
        Family::Cross(_) => Ok(lambdas),
        Family::Bms(_) => {
            let st = model
                .structure
                .ok_or_else(|| Error::Config(format!("{} fit has no structure", model.family)))?;
            let cfg = st.config(p.delta.expect("delta"))?;
            let mut level = initial_level(holder.experience_years, &holder.prior_claims, &cfg);
            let mut out = Vec::with_capacity(lambdas.len());
            for (lam, &n) in lambdas.iter().zip(&counts) {
                out.push(lam * relativity::<f64>(level, &cfg));
                level = next_level(level, n, &cfg);
            }
            Ok(out)
        }
        Family::Panel { kind, hf, star } => {
            let (law, base) = match kind {
                PanelKind::Mvnb => {
                    let k = p.kappa.expect("kappa");
                    (MixingLaw::Gamma, CredibilityState::new(k, k)?)
                }
                PanelKind::Nbbeta => {
                    (MixingLaw::Beta, CredibilityState::new(p.a.expect("a"), p.b.expect("b"))?)
                }
            };
            let nu = HfWeight::new(if hf { p.nu.expect("nu") } else { 1.0 })?;
            let lambda_bar = MeanParam::new(model.lambda_bar)?;
            let prior = &holder.prior_claims;
            let init = match (star, hf) {
                (false, _) => base,
                (true, true) => hf_prior_update(law, base, prior, lambda_bar, nu)?,
                (true, false) => {
                    let total = prior.iter().sum();
                    match kind {
                        PanelKind::Mvnb => {
                            mvnb_prior_update(MvnbParams::new(base.alpha())?, prior.len(), total, lambda_bar)
                        }
                        PanelKind::Nbbeta => nbbeta_prior_update(base.into(), prior.len(), total, lambda_bar),
                    }
                }
            };
            let mut state = HfState::start(init);
            let mut out = Vec::with_capacity(lambdas.len());
            for (&lam, &n) in lambdas.iter().zip(&counts) {
                out.push(lam * law.effect_mean(state.state)?);
                state = hf_step(law, state, n, lam, nu);
            }
            Ok(out)
        }
    }
}

/// Premiums for every contract of `dataset`, in dataset order.
pub fn predict_premiums(model: &FitResult, dataset: &PanelDataset) -> Result<PremiumSchedule> {
    let per_holder: Vec<Vec<f64>> = dataset
        .policyholders
        .par_iter()
        .map(|h| holder_premiums(model, h))
        .collect::<Result<_>>()?;
    let premiums = dataset
        .policyholders
        .iter()
        .zip(per_holder)
        .flat_map(|(h, ps)| {
            h.contracts.iter().zip(ps).map(move |(c, premium)| Premium {
                id: h.id.clone(),
                period: c.period,
                premium,
            })
        })
        .collect();
    Ok(PremiumSchedule { family: model.family, structure: model.structure, premiums })
}

/// Out-of-sample statistics of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<BmsStructure>,
    pub n_contracts: usize,
    /// `Σ (n − π)²`.
    pub mse_sum: f64,
    pub mse_mean: f64,
    /// `Σ [n ln π − π − ln n!]` with `π` floored at [`PREMIUM_FLOOR`].
    pub poisson_loglik: f64,
}

/// Scores `predictions` against the claims of `actuals`, which must list the
/// same contracts in the same order.
pub fn score(predictions: &PremiumSchedule, actuals: &PanelDataset) -> Result<ModelScore> {
    let n_contracts = actuals.n_contracts();
    if n_contracts == 0 {
        return Err(Error::Config("validation set is empty".into()));
    }
    if predictions.premiums.len() != n_contracts {
        return Err(Error::Config(format!(
            "{} premiums for {n_contracts} contracts",
            predictions.premiums.len()
        )));
    }
    let mut sq = 0.0;
    let mut ll = 0.0;
    let pairs = actuals
        .policyholders
        .iter()
        .flat_map(|h| h.contracts.iter().map(move |c| (h.id.as_str(), c)));
    for (p, (id, c)) in predictions.premiums.iter().zip(pairs) {
        if p.id != id || p.period != c.period {
            return Err(Error::Config(format!(
                "premium for {} period {} does not line up with contract {id} period {}",
                p.id, p.period, c.period
            )));
        }
        let n = c.claims as f64;
        sq += (n - p.premium).powi(2);
        let pi = p.premium.max(PREMIUM_FLOOR);
        ll += n * pi.ln() - pi - ln_factorial::<f64>(c.claims);
    }
    Ok(ModelScore {
        family: predictions.family,
        structure: predictions.structure,
        n_contracts,
        mse_sum: sq,
        mse_mean: sq / n_contracts as f64,
        poisson_loglik: ll,
    })
}

/// Scores of several models, best out-of-sample loglik first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub models: Vec<ModelScore>,
}

impl ScoreReport {
    pub fn new(mut models: Vec<ModelScore>) -> Self {
        models.sort_by(|a, b| b.poisson_loglik.total_cmp(&a.poisson_loglik));
        Self { models }
    }
}

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub n_params: usize,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub converged: bool,
    pub mse: Option<f64>,
    pub oos_loglik: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

fn label(family: Family, structure: Option<BmsStructure>) -> String {
    match structure {
        Some(s) => format!("{family}({},{},{})", s.s, s.psi, s.entry),
        None => family.to_string(),
    }
}

/// Joins fit results with out-of-sample scores (matched on family and
/// structure) into one table, in the order of `fits`.
pub fn compare(reports: &[ModelScore], fits: &[FitResult]) -> Comparison {
    let rows = fits
        .iter()
        .map(|f| {
            let s = reports.iter().find(|r| r.family == f.family && r.structure == f.structure);
            ComparisonRow {
                model: label(f.family, f.structure),
                n_params: f.n_params,
                loglik: f.loglik,
                aic: f.aic,
                bic: f.bic,
                converged: f.converged,
                mse: s.map(|s| s.mse_sum),
                oos_loglik: s.map(|s| s.poisson_loglik),
            }
        })
        .collect();
    Comparison { rows }
}

fn best_index(values: impl Iterator<Item = Option<f64>>, larger_is_better: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        let Some(v) = v else { continue };
        let better = match best {
            None => true,
            Some((_, b)) => {
                if larger_is_better {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|b| b.0)
}

impl Comparison {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table; `*` marks the best value of each statistic and
    /// `!` flags fits that did not converge.
    pub fn to_text(&self) -> String {
        let rows = &self.rows;
        let best = [
            best_index(rows.iter().map(|r| Some(r.loglik)), true),
            best_index(rows.iter().map(|r| Some(r.aic)), false),
            best_index(rows.iter().map(|r| Some(r.bic)), false),
            best_index(rows.iter().map(|r| r.mse), false),
            best_index(rows.iter().map(|r| r.oos_loglik), true),
        ];
        let width = rows.iter().map(|r| r.model.len() + 1).max().unwrap_or(0).max(5);
        let mut out = format!(
            "{:<width$} {:>3} {:>15} {:>15} {:>15} {:>13} {:>15}\n",
            "model", "k", "loglik", "AIC", "BIC", "MSE", "oos loglik"
        );
        let cell = |v: Option<f64>, is_best: bool, w: usize| match v {
            Some(v) => format!("{:>w$}", format!("{v:.2}{}", if is_best { "*" } else { " " })),
            None => format!("{:>w$}", "- "),
        };
        for (i, r) in rows.iter().enumerate() {
            let name = format!("{}{}", r.model, if r.converged { "" } else { "!" });
            let line = format!(
                "{:<width$} {:>3} {} {} {} {} {}",
                name,
                r.n_params,
                cell(Some(r.loglik), best[0] == Some(i), 15),
                cell(Some(r.aic), best[1] == Some(i), 15),
                cell(Some(r.bic), best[2] == Some(i), 15),
                cell(r.mse, best[3] == Some(i), 13),
                cell(r.oos_loglik, best[4] == Some(i), 15),
            );
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}
