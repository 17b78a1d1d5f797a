//! Harvey-Fernandes dynamic updating of the random-effect panels.
//!
//! After every contract the credibility state absorbs the new observation and
//! is then discounted by `ν`, so old claims lose weight geometrically:
//! `α_{t+1} = ν(α_t + n_t)`, `γ_{t+1} = ν(γ_t + λ_t)` for the gamma effect,
//! with the usual role swap for the beta effect. `ν = 1` is the static model.

use rayon::prelude::*;

use crate::dist::{MeanParam, NbbShape};
use crate::error::{Error, Result};
use crate::panel::{CredibilityState, MixingLaw, MvnbParams, PolicyHistory};
use crate::sample;
use crate::scalar::Real;
use crate::special::KahanSum;

/// Discount weight `ν ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HfWeight<T>(T);

impl<T: Real> HfWeight<T> {
    pub fn new(nu: T) -> Result<Self> {
        if nu > T::zero() && nu <= T::one() {
            Ok(Self(nu))
        } else {
            Err(Error::domain(format!("HF weight must lie in (0, 1], got {nu}")))
        }
    }

    pub fn one() -> Self {
        Self(T::one())
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }
}

/// Credibility state before contract `t` (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfState<T> {
    pub state: CredibilityState<T>,
    pub t: u32,
}

impl<T: Real> HfState<T> {
    pub fn start(state: CredibilityState<T>) -> Self {
        Self { state, t: 1 }
    }

    pub fn alpha(&self) -> T {
        self.state.alpha()
    }

    pub fn gamma(&self) -> T {
        self.state.gamma()
    }
}

/// One step of the gamma-effect recursion.
pub fn hf_recur<T: Real>(state: HfState<T>, n: u64, lambda: T, nu: HfWeight<T>) -> HfState<T> {
    hf_step(MixingLaw::Gamma, state, n, lambda, nu)
}

/// One step for either mixing law.
#[inline]
pub fn hf_step<T: Real>(
    law: MixingLaw,
    state: HfState<T>,
    n: u64,
    lambda: T,
    nu: HfWeight<T>,
) -> HfState<T> {
    let s = law.update(state.state, n, lambda);
    let v = nu.value();
    HfState {
        state: CredibilityState::new_unchecked(v * s.alpha(), v * s.gamma()),
        t: state.t + 1,
    }
}

/// Sum of predictive log-pmfs, each at the state preceding its contract.
pub fn hf_loglik<T: Real>(
    law: MixingLaw,
    history: &PolicyHistory<T>,
    init: CredibilityState<T>,
    nu: HfWeight<T>,
) -> T {
    let mut state = HfState::start(init);
    let mut acc = KahanSum::new();
    for (n, lambda) in history.iter() {
        acc.add(law.ln_predictive(state.state, n, lambda));
        state = hf_step(law, state, n, lambda.value(), nu);
    }
    acc.value()
}

/// State after the whole history, i.e. the one used for the next premium.
pub fn hf_posterior<T: Real>(
    law: MixingLaw,
    history: &PolicyHistory<T>,
    init: CredibilityState<T>,
    nu: HfWeight<T>,
) -> HfState<T> {
    history.iter().fold(HfState::start(init), |s, (n, l)| hf_step(law, s, n, l.value(), nu))
}

pub fn hf_mvnb_loglik<T: Real>(
    history: &PolicyHistory<T>,
    kappa: MvnbParams<T>,
    nu: HfWeight<T>,
) -> T {
    hf_loglik(MixingLaw::Gamma, history, kappa.initial_state(), nu)
}

pub fn hf_nbb_loglik<T: Real>(history: &PolicyHistory<T>, shape: NbbShape<T>, nu: HfWeight<T>) -> T {
    hf_loglik(MixingLaw::Beta, history, shape.into(), nu)
}

/// Starting parameters of an HF panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HfParams<T> {
    Mvnb(MvnbParams<T>),
    Nbb(NbbShape<T>),
}

impl<T: Real> HfParams<T> {
    pub fn law(&self) -> MixingLaw {
        match self {
            HfParams::Mvnb(_) => MixingLaw::Gamma,
            HfParams::Nbb(_) => MixingLaw::Beta,
        }
    }

    pub fn initial_state(&self) -> CredibilityState<T> {
        match *self {
            HfParams::Mvnb(k) => k.initial_state(),
            HfParams::Nbb(s) => s.into(),
        }
    }
}

/// Next-contract premium of an HF panel:
/// `λ_{t+1} α_{t+1}/γ_{t+1}` (gamma) or `λ_{t+1} γ_{t+1}/(α_{t+1} − 1)` (beta).
pub fn hf_premium<T: Real>(
    history: &PolicyHistory<T>,
    params: HfParams<T>,
    nu: HfWeight<T>,
    lambda_next: MeanParam<T>,
) -> Result<T> {
    let law = params.law();
    let s = hf_posterior(law, history, params.initial_state(), nu);
    Ok(lambda_next.value() * law.effect_mean(s.state)?)
}

/// Folds `m` pre-entry years into the starting state, oldest year first,
/// with the unknown pre-entry means set to `λ̄`. `prior_counts[0]` is the
/// year just before entry and ends up with weight `ν`.
pub fn hf_prior_update<T: Real>(
    law: MixingLaw,
    base: CredibilityState<T>,
    prior_counts: &[u64],
    lambda_bar: MeanParam<T>,
    nu: HfWeight<T>,
) -> Result<CredibilityState<T>> {
    if prior_counts.len() > crate::panel::MAX_PRIOR_YEARS {
        return Err(Error::InvalidHistory(format!(
            "{} prior years given, at most {} allowed",
            prior_counts.len(),
            crate::panel::MAX_PRIOR_YEARS
        )));
    }
    let lb = lambda_bar.value();
    let folded = prior_counts
        .iter()
        .rev()
        .fold(HfState::start(base), |s, &n| hf_step(law, s, n, lb, nu));
    Ok(folded.state)
}

/// HF log-likelihood with the starting state built from the per-year
/// pre-entry record.
pub fn hf_star_loglik<T: Real>(
    history: &PolicyHistory<T>,
    params: HfParams<T>,
    nu: HfWeight<T>,
    lambda_bar: MeanParam<T>,
) -> Result<T> {
    let prior = history.prior();
    let by_year = match prior.by_year() {
        Some(y) => y,
        None if prior.years() == 0 => &[],
        None => {
            return Err(Error::InvalidHistory(
                "starred HF models need per-year prior claim counts".into(),
            ))
        }
    };
    let law = params.law();
    let init = hf_prior_update(law, params.initial_state(), by_year, lambda_bar, nu)?;
    Ok(hf_loglik(law, history, init, nu))
}

/// Relative premium of an insured with a single claim `w` periods back
/// against a claim-free one under the beta-effect HF model:
/// `1 + (ν/b) ν^{−w}`.
pub fn hf_claim_impact_ratio<T: Real>(w: u32, b: T, nu: HfWeight<T>) -> T {
    let v = nu.value();
    T::one() + v / b * v.powi(-(w as i32))
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub replicates: u64,
}

/// Simulation settings for [`hf_covariance_mc`].
#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub replicates: u64,
    pub seed: u64,
    pub block_size: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { replicates: 1_000_000, seed: 0, block_size: 50_000 }
    }
}

/// `Cov(N_t, N_{t+j})` under an HF panel with constant a-priori mean `λ`,
/// estimated by simulating claim paths through the predictive laws.
/// No closed form is used; `t` is 1-based.
pub fn hf_covariance_mc(
    params: HfParams<f64>,
    nu: HfWeight<f64>,
    lambda: MeanParam<f64>,
    t: u32,
    j: u32,
    opts: McOptions,
) -> Result<McEstimate> {
    if t == 0 || j == 0 {
        return Err(Error::Config("covariance needs t ≥ 1 and lag j ≥ 1".into()));
    }
    if opts.replicates < 2 || opts.block_size == 0 {
        return Err(Error::Config("need at least two replicates and a positive block size".into()));
    }
    let law = params.law();
    let init = params.initial_state();
    let lam = lambda.value();
    let horizon = t + j;
    let blocks = opts.replicates.div_ceil(opts.block_size);
    let pairs: Vec<Vec<(u32, u32)>> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = sample::block_rng(opts.seed, block);
            let start = block * opts.block_size;
            let len = opts.block_size.min(opts.replicates - start);
            (0..len)
                .map(|_| {
                    let mut state = HfState::start(init);
                    let (mut x, mut y) = (0u32, 0u32);
                    for step in 1..=horizon {
                        let (a, g) = (state.alpha(), state.gamma());
                        let n = match law {
                            MixingLaw::Gamma => {
                                let theta = sample::gamma(&mut rng, a, g);
                                sample::poisson(&mut rng, lam * theta)
                            }
                            MixingLaw::Beta => {
                                let p = sample::beta(&mut rng, a, g);
                                sample::neg_binomial(&mut rng, lam, p)
                            }
                        };
                        if step == t {
                            x = n as u32;
                        }
                        if step == horizon {
                            y = n as u32;
                        }
                        state = hf_step(law, state, n, lam, nu);
                    }
                    (x, y)
                })
                .collect()
        })
        .collect();
    Ok(covariance_of_pairs(pairs.iter().flatten().copied()))
}

/// Sample covariance of count pairs with a delta-method standard error.
pub fn covariance_of_pairs(pairs: impl Iterator<Item = (u32, u32)> + Clone) -> McEstimate {
    let (mut n, mut sx, mut sy) = (0u64, 0.0, 0.0);
    for (x, y) in pairs.clone() {
        n += 1;
        sx += x as f64;
        sy += y as f64;
    }
    let nf = n as f64;
    let (mx, my) = (sx / nf, sy / nf);
    let (mut s1, mut s2) = (0.0, 0.0);
    for (x, y) in pairs {
        let z = (x as f64 - mx) * (y as f64 - my);
        s1 += z;
        s2 += z * z;
    }
    let cov = s1 / (nf - 1.0);
    let mean_z = s1 / nf;
    let var_z = (s2 / nf - mean_z * mean_z).max(0.0);
    McEstimate { estimate: cov, std_error: (var_z / nf).sqrt(), replicates: n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{mvnb_loglik, mvnb_premium, nbbeta_loglik};

    fn hist(counts: &[u64], lambdas: &[f64]) -> PolicyHistory<f64> {
        PolicyHistory::from_raw(counts, lambdas).unwrap()
    }
    fn nu(v: f64) -> HfWeight<f64> {
        HfWeight::new(v).unwrap()
    }
    fn mp(x: f64) -> MeanParam<f64> {
        MeanParam::new(x).unwrap()
    }

    #[test]
    fn weight_bounds() {
        assert!(HfWeight::new(0.0).is_err());
        assert!(HfWeight::new(1.0 + 1e-12).is_err());
        assert!(HfWeight::new(1.0).is_ok());
    }

    #[test]
    fn unrolled_recursion_matches_closed_form() {
        let v = 0.9;
        let counts = [1u64, 0, 2];
        let init = CredibilityState::new(1.0, 1.0).unwrap();
        let s = counts
            .iter()
            .fold(HfState::start(init), |s, &n| hf_recur(s, n, 0.5, nu(v)));
        // α_4 = ν³α₀ + ν³n₁ + ν²n₂ + νn₃
        let alpha = v.powi(3) + v.powi(3) * 1.0 + v * 2.0;
        let gamma = v.powi(3) + 0.5 * (v.powi(3) + v.powi(2) + v);
        assert!((s.alpha() - alpha).abs() < 1e-15);
        assert!((s.gamma() - gamma).abs() < 1e-15);
        assert_eq!(s.t, 4);
    }

    #[test]
    fn pure_decay() {
        let init = CredibilityState::new(2.0, 3.0).unwrap();
        let s = hf_recur(HfState::start(init), 0, 0.0, nu(0.5));
        assert_eq!((s.alpha(), s.gamma()), (1.0, 1.5));
    }

    #[test]
    fn unit_weight_is_static_model() {
        let h = hist(&[0, 3, 1, 0], &[0.2, 0.4, 0.1, 0.9]);
        let k = MvnbParams::new(0.7).unwrap();
        assert_eq!(hf_mvnb_loglik(&h, k, HfWeight::one()), mvnb_loglik(&h, k));
        let shape = NbbShape::new(6.0, 1.5).unwrap();
        assert_eq!(hf_nbb_loglik(&h, shape, HfWeight::one()), nbbeta_loglik(&h, shape));
        let p = hf_premium(&h, HfParams::Mvnb(k), HfWeight::one(), mp(0.3)).unwrap();
        assert_eq!(p, mvnb_premium(&h, k, mp(0.3)));
    }

    #[test]
    fn single_contract_ignores_weight() {
        let h = hist(&[2], &[0.4]);
        let k = MvnbParams::new(1.3).unwrap();
        assert_eq!(hf_mvnb_loglik(&h, k, nu(0.3)), hf_mvnb_loglik(&h, k, nu(0.95)));
    }

    #[test]
    fn premium_hand_expansion() {
        // t = 2, claim in period 1, κ = 1, λ ≡ 0.1, ν = 0.9:
        // α₃ = ν²κ + ν²·1 + ν·0, γ₃ = ν²κ + (ν² + ν)·0.1
        let h = hist(&[1, 0], &[0.1, 0.1]);
        let v = 0.9;
        let got =
            hf_premium(&h, HfParams::Mvnb(MvnbParams::new(1.0).unwrap()), nu(v), mp(0.1)).unwrap();
        let want = 0.1 * (2.0 * v * v) / (v * v + 0.1 * (v * v + v));
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn claim_free_beta_premium() {
        let (a, b, v, lam) = (12.0, 5.5, 0.9, 0.1);
        let h = hist(&[0, 0, 0], &[lam; 3]);
        let shape = NbbShape::new(a, b).unwrap();
        let got = hf_premium(&h, HfParams::Nbb(shape), nu(v), mp(lam)).unwrap();
        let vt = v * v * v;
        let sum_l = lam * (v + v * v + vt);
        let want = lam * vt * b / (vt * a + sum_l - 1.0);
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn prior_update_expansion() {
        let base = CredibilityState::new(1.5, 1.5).unwrap();
        let v = 0.8;
        let s = hf_prior_update(MixingLaw::Gamma, base, &[2, 1], mp(0.065), nu(v)).unwrap();
        // n_{-1} = 2 (weight ν), n_{-2} = 1 (weight ν²)
        assert!((s.alpha() - (v * v * 1.5 + v * 2.0 + v * v * 1.0)).abs() < 1e-15);
        assert!((s.gamma() - (v * v * 1.5 + 0.065 * (v + v * v))).abs() < 1e-15);
        let same = hf_prior_update(MixingLaw::Gamma, base, &[], mp(0.065), nu(v)).unwrap();
        assert_eq!(same, base);
        let stat = hf_prior_update(MixingLaw::Gamma, base, &[2, 1], mp(0.065), HfWeight::one());
        assert!((stat.unwrap().alpha() - 4.5).abs() < 1e-15);
    }

    #[test]
    fn claim_impact_ratio_values() {
        let r1 = hf_claim_impact_ratio(1, 5.5, nu(0.9));
        assert!((r1 - (1.0 + 1.0 / 5.5)).abs() < 1e-15);
        let r15 = hf_claim_impact_ratio(15, 5.5, nu(0.9));
        assert!((r15 - (1.0 + 0.9 / 5.5 * 0.9f64.powi(-15))).abs() < 1e-14);
        assert!((r15 - 1.7948).abs() < 1e-4);
        assert_eq!(hf_claim_impact_ratio(3, 4.0, HfWeight::one()), 1.25);
    }

    #[test]
    fn mc_covariance_is_reproducible() {
        let p = HfParams::Mvnb(MvnbParams::new(1.0).unwrap());
        let o = McOptions { replicates: 20_000, seed: 3, block_size: 4_000 };
        let a = hf_covariance_mc(p, nu(1.0), mp(0.5), 1, 1, o).unwrap();
        let b = hf_covariance_mc(p, nu(1.0), mp(0.5), 1, 1, o).unwrap();
        assert_eq!(a, b);
        // ν = 1 is the static model: Cov = λ²/κ = 0.25.
        assert!((a.estimate - 0.25).abs() < 4.0 * a.std_error, "{a:?}");
    }
}
