//! Synthetic portfolios drawn from any of the supported model families.
//!
//! Each policyholder is generated from its own seed-derived stream (fixed
//! blocks of policyholders share a ChaCha stream), so the output depends
//! only on the spec, never on thread scheduling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bms::{entry_level, next_level, relativity, BmsConfig};
use crate::dist::CountFamily;
use crate::error::{Error, Result};
use crate::estimate::RegressionSpec;
use crate::hf::{hf_step, HfState, HfWeight};
use crate::panel::{CredibilityState, MixingLaw, MAX_PRIOR_YEARS};
use crate::sample;

use super::{Contract, PanelDataset, Policyholder, N_COVARIATES};

/// Share of policyholders observed for 1, 2, 3, 4 and 5 contracts.
pub const TABLE2_CONTRACT_COUNTS: [f64; 5] = [0.2142, 0.1773, 0.1166, 0.3257, 0.1662];

const BLOCK: usize = 1024;

/// Generating family with its true parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TrueModel {
    Poisson,
    Nb1 { tau: f64 },
    Nb2 { tau: f64 },
    Mvnb { kappa: f64 },
    Nbbeta { a: f64, b: f64 },
    HfMvnb { kappa: f64, nu: f64 },
    HfNbbeta { a: f64, b: f64, nu: f64 },
    Bms { psi: u32, s: u32, entry: u32, delta: f64, conditional: CountFamily<f64> },
}

impl TrueModel {
    fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        match *self {
            TrueModel::Poisson => Ok(()),
            TrueModel::Nb1 { tau } | TrueModel::Nb2 { tau } => pos("tau", tau),
            TrueModel::Mvnb { kappa } => pos("kappa", kappa),
            TrueModel::Nbbeta { a, b } => pos("a", a).and(pos("b", b)),
            TrueModel::HfMvnb { kappa, nu } => pos("kappa", kappa).and(HfWeight::new(nu).map(|_| ())),
            TrueModel::HfNbbeta { a, b, nu } => {
                pos("a", a).and(pos("b", b)).and(HfWeight::new(nu).map(|_| ()))
            }
            TrueModel::Bms { psi, s, entry, delta, conditional } => {
                BmsConfig::new(psi, s, entry, delta)?;
                conditional.checked().map(|_| ())
            }
        }
    }
}

/// Everything needed to draw a portfolio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub model: TrueModel,
    pub beta: RegressionSpec,
    pub policyholders: usize,
    /// `contract_counts[k]` is the probability of `k + 1` contracts.
    #[serde(default = "default_contract_counts")]
    pub contract_counts: Vec<f64>,
    /// Bernoulli means of `x1..x8`, drawn independently per policyholder.
    #[serde(default = "default_covariate_means")]
    pub covariate_means: [f64; N_COVARIATES],
    #[serde(default = "default_exposure")]
    pub exposure: f64,
    /// Driving experience is uniform on `0..=max_experience`.
    #[serde(default = "default_max_experience")]
    pub max_experience: u32,
    pub seed: u64,
}

fn default_contract_counts() -> Vec<f64> {
    TABLE2_CONTRACT_COUNTS.to_vec()
}
fn default_covariate_means() -> [f64; N_COVARIATES] {
    [0.3; N_COVARIATES]
}
fn default_exposure() -> f64 {
    1.0
}
fn default_max_experience() -> u32 {
    20
}

impl SimulationSpec {
    pub fn new(model: TrueModel, beta: RegressionSpec, policyholders: usize, seed: u64) -> Self {
        Self {
            model,
            beta,
            policyholders,
            contract_counts: default_contract_counts(),
            covariate_means: default_covariate_means(),
            exposure: default_exposure(),
            max_experience: default_max_experience(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        RegressionSpec::new(self.beta.as_slice().to_vec())?;
        let total: f64 = self.contract_counts.iter().sum();
        if self.contract_counts.is_empty()
            || self.contract_counts.iter().any(|p| !(*p >= 0.0))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::Config("contract-count probabilities must be ≥ 0 and sum to 1".into()));
        }
        if self.covariate_means.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("covariate means must lie in [0, 1]".into()));
        }
        if !(self.exposure > 0.0 && self.exposure <= 1.0) {
            return Err(Error::Config(format!("exposure must lie in (0, 1], got {}", self.exposure)));
        }
        Ok(())
    }
}

/// Latent quantities behind one simulated policyholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub id: String,
    /// A-priori means of the observed contracts.
    pub lambdas: Vec<f64>,
    /// Static random effect (gamma Θ or beta p), when the family has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect: Option<f64>,
    /// Per-period random effect of the HF families, observed contracts only.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub period_effects: Vec<f64>,
    /// BMS level before each observed contract.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub levels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub dataset: PanelDataset,
    pub truth: Vec<Latent>,
}

/// Draws a portfolio. Pre-entry years are generated by the same process as
/// the observed ones, at the policyholder's full-year mean.
pub fn simulate(spec: &SimulationSpec) -> Result<Simulated> {
    spec.validate()?;
    let blocks = spec.policyholders.div_ceil(BLOCK);
    let parts: Vec<Vec<(Policyholder, Latent)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = sample::block_rng(spec.seed, b as u64);
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(spec.policyholders);
            (lo..hi).map(|i| draw_one(spec, i, &mut rng)).collect()
        })
        .collect();
    let (holders, truth) = parts.into_iter().flatten().unzip();
    Ok(Simulated { dataset: PanelDataset::new(holders), truth })
}

fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn draw_one<R: Rng>(spec: &SimulationSpec, index: usize, rng: &mut R) -> (Policyholder, Latent) {
    let t = categorical(rng, &spec.contract_counts) + 1;
    let mut covariates = [0u8; N_COVARIATES];
    for (x, &p) in covariates.iter_mut().zip(&spec.covariate_means) {
        *x = u8::from(rng.random::<f64>() < p);
    }
    let u = rng.random_range(0..=spec.max_experience);
    let m = (u as usize).min(MAX_PRIOR_YEARS);
    let rate = spec.beta.eta(&covariates).exp();
    let lambda = rate * spec.exposure;

    // Chronological means: m pre-entry years, then t contracts.
    let means: Vec<f64> = std::iter::repeat_n(rate, m).chain(std::iter::repeat_n(lambda, t)).collect();
    let mut latent = Latent {
        id: format!("P{index:07}"),
        lambdas: vec![lambda; t],
        effect: None,
        period_effects: Vec::new(),
        levels: Vec::new(),
    };
    let counts: Vec<u64> = match spec.model {
        TrueModel::Poisson => means.iter().map(|&l| sample::poisson(rng, l)).collect(),
        TrueModel::Nb1 { tau } => {
            means.iter().map(|&l| sample::family(rng, CountFamily::Nb1(tau), l)).collect()
        }
        TrueModel::Nb2 { tau } => {
            means.iter().map(|&l| sample::family(rng, CountFamily::Nb2(tau), l)).collect()
        }
        TrueModel::Mvnb { kappa } => {
            let theta = sample::gamma(rng, kappa, kappa);
            latent.effect = Some(theta);
            means.iter().map(|&l| sample::poisson(rng, l * theta)).collect()
        }
        TrueModel::Nbbeta { a, b } => {
            let p = sample::beta(rng, a, b);
            latent.effect = Some(p);
            means.iter().map(|&l| sample::neg_binomial(rng, l, p)).collect()
        }
        TrueModel::HfMvnb { kappa, nu } => {
            let init = CredibilityState::new(kappa, kappa).expect("validated");
            hf_path(rng, MixingLaw::Gamma, init, nu, &means, m, &mut latent)
        }
        TrueModel::HfNbbeta { a, b, nu } => {
            let init = CredibilityState::new(a, b).expect("validated");
            hf_path(rng, MixingLaw::Beta, init, nu, &means, m, &mut latent)
        }
        TrueModel::Bms { psi, s, entry, delta, conditional } => {
            let cfg = BmsConfig::new(psi, s, entry, delta).expect("validated");
            let mut level = entry_level((u as usize - m) as u32, &cfg);
            let mut out = Vec::with_capacity(means.len());
            for (k, &l) in means.iter().enumerate() {
                if k >= m {
                    latent.levels.push(level.get());
                }
                let n = sample::family(rng, conditional, l * relativity(level, &cfg));
                level = next_level(level, n, &cfg);
                out.push(n);
            }
            out
        }
    };
    let mut prior_claims: Vec<u64> = counts[..m].to_vec();
    prior_claims.reverse();
    let contracts = counts[m..]
        .iter()
        .enumerate()
        .map(|(k, &n)| Contract { period: k as u32 + 1, exposure: spec.exposure, covariates, claims: n })
        .collect();
    let holder = Policyholder { id: latent.id.clone(), contracts, prior_claims, experience_years: u };
    (holder, latent)
}

fn hf_path<R: Rng>(
    rng: &mut R,
    law: MixingLaw,
    init: CredibilityState<f64>,
    nu: f64,
    means: &[f64],
    m: usize,
    latent: &mut Latent,
) -> Vec<u64> {
    let nu = HfWeight::new(nu).expect("validated");
    let mut state = HfState::start(init);
    let mut out = Vec::with_capacity(means.len());
    for (k, &l) in means.iter().enumerate() {
        let (a, g) = (state.alpha(), state.gamma());
        let (effect, n) = match law {
            MixingLaw::Gamma => {
                let theta = sample::gamma(rng, a, g);
                (theta, sample::poisson(rng, l * theta))
            }
            MixingLaw::Beta => {
                let p = sample::beta(rng, a, g);
                (p, sample::neg_binomial(rng, l, p))
            }
        };
        if k >= m {
            latent.period_effects.push(effect);
        }
        state = hf_step(law, state, n, l, nu);
        out.push(n);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(model: TrueModel, m: usize) -> SimulationSpec {
        SimulationSpec::new(model, RegressionSpec::intercept(-2.7), m, 9)
    }

    #[test]
    fn deterministic_under_seed() {
        let s = spec(TrueModel::Mvnb { kappa: 1.3 }, 3000);
        assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
        let mut other = s.clone();
        other.seed = 10;
        assert_ne!(simulate(&s).unwrap().dataset, simulate(&other).unwrap().dataset);
    }

    #[test]
    fn shapes_and_windows() {
        let bms = TrueModel::Bms { psi: 2, s: 5, entry: 3, delta: 0.12, conditional: CountFamily::Nb1(0.1) };
        let sim = simulate(&spec(bms, 500)).unwrap();
        for (h, lat) in sim.dataset.policyholders.iter().zip(&sim.truth) {
            assert!((1..=5).contains(&h.contracts.len()));
            assert_eq!(h.prior_claims.len(), (h.experience_years as usize).min(10));
            assert_eq!(lat.levels.len(), h.contracts.len());
            let periods: Vec<u32> = h.contracts.iter().map(|c| c.period).collect();
            assert_eq!(periods, (1..=h.contracts.len() as u32).collect::<Vec<_>>());
        }
    }

    #[test]
    fn empty_portfolio() {
        let sim = simulate(&spec(TrueModel::Poisson, 0)).unwrap();
        assert!(sim.dataset.is_empty());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = spec(TrueModel::Nb1 { tau: -1.0 }, 10);
        assert!(simulate(&s).is_err());
        s.model = TrueModel::Poisson;
        s.contract_counts = vec![0.5, 0.6];
        assert!(simulate(&s).is_err());
    }
}
