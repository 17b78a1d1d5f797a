//! Static random-effect panels: MVNB (gamma effect) and NBBeta (beta effect).
//!
//! Both are evaluated as a product of one-step predictive pmfs with the
//! credibility state updated after every contract. The closed-form joint
//! likelihoods are kept alongside as an independent route.

use crate::dist::{CountDistribution, MeanParam, NbbShape, NegBin2, NegBinBeta};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{ln_beta, ln_factorial, ln_gamma, ln_rising, KahanSum};

/// Longest pre-observation window a history can carry.
pub const MAX_PRIOR_YEARS: usize = 10;

/// Portfolio mean claim frequency used to stand in for unknown pre-entry λ.
pub const DEFAULT_LAMBDA_BAR: f64 = 0.065;

/// Claims reported in the years before the first observed contract.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PriorClaims {
    years: usize,
    total: u64,
    by_year: Option<Vec<u64>>,
}

impl PriorClaims {
    pub fn none() -> Self {
        Self::default()
    }

    /// Per-year counts, `by_year[0]` being the year just before entry.
    pub fn from_years(by_year: Vec<u64>) -> Result<Self> {
        if by_year.len() > MAX_PRIOR_YEARS {
            return Err(Error::InvalidHistory(format!(
                "{} prior years given, at most {MAX_PRIOR_YEARS} allowed",
                by_year.len()
            )));
        }
        Ok(Self { years: by_year.len(), total: by_year.iter().sum(), by_year: Some(by_year) })
    }

    /// Only the window length and the claim total are known.
    pub fn from_total(years: usize, total: u64) -> Result<Self> {
        if years > MAX_PRIOR_YEARS {
            return Err(Error::InvalidHistory(format!(
                "{years} prior years given, at most {MAX_PRIOR_YEARS} allowed"
            )));
        }
        if years == 0 && total > 0 {
            return Err(Error::InvalidHistory("prior claims without prior years".into()));
        }
        Ok(Self { years, total, by_year: None })
    }

    pub fn years(&self) -> usize {
        self.years
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn by_year(&self) -> Option<&[u64]> {
        self.by_year.as_deref()
    }
}

/// Observed contracts of one policyholder plus their pre-observation record.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHistory<T> {
    counts: Vec<u64>,
    lambdas: Vec<MeanParam<T>>,
    prior: PriorClaims,
}

impl<T: Real> PolicyHistory<T> {
    pub fn new(counts: Vec<u64>, lambdas: Vec<MeanParam<T>>, prior: PriorClaims) -> Result<Self> {
        if counts.len() != lambdas.len() {
            return Err(Error::InvalidHistory(format!(
                "{} counts but {} means",
                counts.len(),
                lambdas.len()
            )));
        }
        Ok(Self { counts, lambdas, prior })
    }

    /// Convenience constructor from raw means.
    pub fn from_raw(counts: &[u64], lambdas: &[T]) -> Result<Self> {
        let lambdas = lambdas.iter().map(|&l| MeanParam::new(l)).collect::<Result<Vec<_>>>()?;
        Self::new(counts.to_vec(), lambdas, PriorClaims::none())
    }

    pub fn empty() -> Self {
        Self { counts: Vec::new(), lambdas: Vec::new(), prior: PriorClaims::none() }
    }

    pub fn with_prior(mut self, prior: PriorClaims) -> Self {
        self.prior = prior;
        self
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn lambdas(&self) -> &[MeanParam<T>] {
        &self.lambdas
    }

    pub fn prior(&self) -> &PriorClaims {
        &self.prior
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, MeanParam<T>)> + '_ {
        self.counts.iter().copied().zip(self.lambdas.iter().copied())
    }

    pub fn total_claims(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total_lambda(&self) -> T {
        self.lambdas.iter().map(|l| l.value()).sum()
    }
}

/// Gamma random-effect parameter: `Θ ~ Gamma(κ, κ)`, `E[Θ] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnbParams<T> {
    kappa: T,
}

impl<T: Real> MvnbParams<T> {
    pub fn new(kappa: T) -> Result<Self> {
        if kappa.is_finite() && kappa > T::zero() {
            Ok(Self { kappa })
        } else {
            Err(Error::domain(format!("kappa must be finite and > 0, got {kappa}")))
        }
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn initial_state(&self) -> CredibilityState<T> {
        CredibilityState { alpha: self.kappa, gamma: self.kappa }
    }
}

/// Posterior parameters `(α, γ)` of the random effect.
///
/// For the gamma effect these are shape and rate, updated as
/// `α += n, γ += λ`. For the beta effect they are the two beta shapes with
/// the roles swapped: `α += λ, γ += n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CredibilityState<T> {
    alpha: T,
    gamma: T,
}

impl<T: Real> CredibilityState<T> {
    pub fn new(alpha: T, gamma: T) -> Result<Self> {
        let ok = |v: T| v.is_finite() && v > T::zero();
        if ok(alpha) && ok(gamma) {
            Ok(Self { alpha, gamma })
        } else {
            Err(Error::domain(format!("credibility state needs α, γ > 0, got ({alpha}, {gamma})")))
        }
    }

    /// Callers guarantee positivity (products and sums of positive values).
    pub(crate) fn new_unchecked(alpha: T, gamma: T) -> Self {
        debug_assert!(alpha > T::zero() && gamma > T::zero());
        Self { alpha, gamma }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }
}

impl<T: Real> From<NbbShape<T>> for CredibilityState<T> {
    fn from(shape: NbbShape<T>) -> Self {
        Self { alpha: shape.a(), gamma: shape.b() }
    }
}

impl<T: Real> From<CredibilityState<T>> for NbbShape<T> {
    fn from(state: CredibilityState<T>) -> Self {
        NbbShape::new(state.alpha, state.gamma).expect("credibility state is positive")
    }
}

/// Which random-effect law a credibility state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixingLaw {
    Gamma,
    Beta,
}

impl MixingLaw {
    /// Bayesian update after observing `n` claims with a-priori mean `λ`.
    #[inline]
    pub fn update<T: Real>(self, s: CredibilityState<T>, n: u64, lambda: T) -> CredibilityState<T> {
        let nn = T::from_count(n);
        match self {
            MixingLaw::Gamma => CredibilityState { alpha: s.alpha + nn, gamma: s.gamma + lambda },
            MixingLaw::Beta => CredibilityState { alpha: s.alpha + lambda, gamma: s.gamma + nn },
        }
    }

    /// Log of the one-step predictive pmf of `n` given the state.
    #[inline]
    pub fn ln_predictive<T: Real>(self, s: CredibilityState<T>, n: u64, lambda: MeanParam<T>) -> T {
        match self {
            MixingLaw::Gamma => NegBin2::with_gamma(lambda, s.alpha, s.gamma).ln_pmf(n),
            MixingLaw::Beta => NegBinBeta::new(lambda, s.into()).ln_pmf(n),
        }
    }

    /// Posterior mean of the random effect; premium is `λ_{t+1}` times this.
    pub fn effect_mean<T: Real>(self, s: CredibilityState<T>) -> Result<T> {
        match self {
            MixingLaw::Gamma => Ok(s.alpha / s.gamma),
            MixingLaw::Beta => {
                if s.alpha > T::one() {
                    Ok(s.gamma / (s.alpha - T::one()))
                } else {
                    Err(Error::domain(format!(
                        "beta premium needs α > 1 (finite posterior mean), got α = {}",
                        s.alpha
                    )))
                }
            }
        }
    }

    /// Sum of predictive log-pmfs along `history`, starting at `init`.
    pub fn loglik<T: Real>(self, history: &PolicyHistory<T>, init: CredibilityState<T>) -> T {
        let mut state = init;
        let mut acc = KahanSum::new();
        for (n, lambda) in history.iter() {
            acc.add(self.ln_predictive(state, n, lambda));
            state = self.update(state, n, lambda.value());
        }
        acc.value()
    }

    /// State after absorbing every observed contract.
    pub fn posterior<T: Real>(
        self,
        history: &PolicyHistory<T>,
        init: CredibilityState<T>,
    ) -> CredibilityState<T> {
        history.iter().fold(init, |s, (n, l)| self.update(s, n, l.value()))
    }
}

/// MVNB log-likelihood of the observed contracts (pre-entry record ignored).
pub fn mvnb_loglik<T: Real>(history: &PolicyHistory<T>, kappa: MvnbParams<T>) -> T {
    MixingLaw::Gamma.loglik(history, kappa.initial_state())
}

/// MVNB* log-likelihood: the pre-entry record sets the starting state.
pub fn mvnb_star_loglik<T: Real>(
    history: &PolicyHistory<T>,
    kappa: MvnbParams<T>,
    lambda_bar: MeanParam<T>,
) -> T {
    let p = history.prior();
    MixingLaw::Gamma.loglik(history, mvnb_prior_update(kappa, p.years(), p.total(), lambda_bar))
}

/// Credibility premium `λ_{t+1} (κ + Σn) / (κ + Σλ)`.
pub fn mvnb_premium<T: Real>(
    history: &PolicyHistory<T>,
    kappa: MvnbParams<T>,
    lambda_next: MeanParam<T>,
) -> T {
    let s = MixingLaw::Gamma.posterior(history, kappa.initial_state());
    lambda_next.value() * s.alpha / s.gamma
}

/// Starting state built from `m` pre-entry years with `prior_claims` claims,
/// the unknown pre-entry means replaced by `λ̄`:
/// `α* = κ + prior_claims`, `γ* = κ + m λ̄`.
pub fn mvnb_prior_update<T: Real>(
    kappa: MvnbParams<T>,
    m: usize,
    prior_claims: u64,
    lambda_bar: MeanParam<T>,
) -> CredibilityState<T> {
    let k = kappa.kappa();
    CredibilityState {
        alpha: k + T::from_count(prior_claims),
        gamma: k + T::from_count(m as u64) * lambda_bar.value(),
    }
}

/// NBBeta log-likelihood of the observed contracts.
pub fn nbbeta_loglik<T: Real>(history: &PolicyHistory<T>, shape: NbbShape<T>) -> T {
    MixingLaw::Beta.loglik(history, shape.into())
}

/// NBBeta* log-likelihood: `α* = a + m λ̄`, `γ* = b + prior_claims`.
pub fn nbbeta_star_loglik<T: Real>(
    history: &PolicyHistory<T>,
    shape: NbbShape<T>,
    lambda_bar: MeanParam<T>,
) -> T {
    let p = history.prior();
    MixingLaw::Beta.loglik(history, nbbeta_prior_update(shape, p.years(), p.total(), lambda_bar))
}

/// Beta-effect counterpart of [`mvnb_prior_update`].
pub fn nbbeta_prior_update<T: Real>(
    shape: NbbShape<T>,
    m: usize,
    prior_claims: u64,
    lambda_bar: MeanParam<T>,
) -> CredibilityState<T> {
    CredibilityState {
        alpha: shape.a() + T::from_count(m as u64) * lambda_bar.value(),
        gamma: shape.b() + T::from_count(prior_claims),
    }
}

/// `λ_{t+1} (b + Σn) / (a + Σλ − 1)`; fails unless `a + Σλ > 1`.
pub fn nbbeta_premium<T: Real>(
    history: &PolicyHistory<T>,
    shape: NbbShape<T>,
    lambda_next: MeanParam<T>,
) -> Result<T> {
    let s = MixingLaw::Beta.posterior(history, shape.into());
    Ok(lambda_next.value() * MixingLaw::Beta.effect_mean(s)?)
}

/// `Cov(N_t, N_{t+j}) = λ_t λ_{t+j} / κ` for every lag `j ≥ 1`.
pub fn mvnb_covariance<T: Real>(
    lambda_t: MeanParam<T>,
    lambda_tj: MeanParam<T>,
    kappa: MvnbParams<T>,
) -> T {
    lambda_t.value() * lambda_tj.value() / kappa.kappa()
}

/// `Cov(N_t, N_{t+j}) = λ_t λ_{t+j} (b/(a−1)) ((b+1)/(a−2) − b/(a−1))`.
/// Needs `a > 2`.
pub fn nbbeta_covariance<T: Real>(
    lambda_t: MeanParam<T>,
    lambda_tj: MeanParam<T>,
    shape: NbbShape<T>,
) -> Result<T> {
    let (a, b) = (shape.a(), shape.b());
    let two = T::lit(2.0);
    if a <= two {
        return Err(Error::domain(format!("beta covariance needs a > 2, got {a}")));
    }
    let one = T::one();
    let c = b / (a - one);
    Ok(lambda_t.value() * lambda_tj.value() * c * ((b + one) / (a - two) - c))
}

/// Closed-form MVNB joint log-likelihood (gamma integral done analytically).
pub fn mvnb_joint_loglik<T: Real>(history: &PolicyHistory<T>, init: CredibilityState<T>) -> T {
    let mut acc = KahanSum::new();
    for (n, l) in history.iter() {
        if n > 0 {
            acc.add(T::from_count(n) * l.value().ln());
        }
        acc.add(-ln_factorial::<T>(n));
    }
    let (a0, g0) = (init.alpha, init.gamma);
    let sn = T::from_count(history.total_claims());
    let a1 = a0 + sn;
    let g1 = g0 + history.total_lambda();
    acc.add(ln_gamma(a1) - ln_gamma(a0) + a0 * g0.ln() - a1 * g1.ln());
    acc.value()
}

/// Closed-form NBBeta joint log-likelihood (beta integral done analytically).
pub fn nbbeta_joint_loglik<T: Real>(history: &PolicyHistory<T>, init: CredibilityState<T>) -> T {
    let mut acc = KahanSum::new();
    for (n, l) in history.iter() {
        acc.add(ln_rising(l.value(), n) - ln_factorial::<T>(n));
    }
    let a1 = init.alpha + history.total_lambda();
    let g1 = init.gamma + T::from_count(history.total_claims());
    acc.add(ln_beta(a1, g1) - ln_beta(init.alpha, init.gamma));
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(counts: &[u64], lambdas: &[f64]) -> PolicyHistory<f64> {
        PolicyHistory::from_raw(counts, lambdas).unwrap()
    }
    fn mp(x: f64) -> MeanParam<f64> {
        MeanParam::new(x).unwrap()
    }

    #[test]
    fn history_validation() {
        assert!(PolicyHistory::<f64>::from_raw(&[0, 1], &[0.1]).is_err());
        assert!(PriorClaims::from_years(vec![0; 11]).is_err());
        assert!(PriorClaims::from_total(0, 2).is_err());
        let p = PriorClaims::from_years(vec![1, 0, 2]).unwrap();
        assert_eq!((p.years(), p.total()), (3, 3));
    }

    #[test]
    fn single_zero_contract() {
        let kappa = MvnbParams::new(1.3).unwrap();
        let got = mvnb_loglik(&hist(&[0], &[0.4]), kappa);
        let want = 1.3 * (1.3f64 / 1.7).ln();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn premium_examples() {
        let kappa = MvnbParams::new(1.0).unwrap();
        assert_eq!(mvnb_premium(&PolicyHistory::empty(), kappa, mp(0.3)), 0.3);
        let got = mvnb_premium(&hist(&[1], &[0.065]), kappa, mp(0.065));
        assert!((got - 0.065 * 2.0 / 1.065).abs() < 1e-15);

        let shape = NbbShape::new(264.818, 5.5).unwrap();
        let got = nbbeta_premium(&PolicyHistory::empty(), shape, mp(1.0)).unwrap();
        assert!((got - 5.5 / 263.818).abs() < 1e-15);
        let got = nbbeta_premium(&hist(&[1], &[0.065]), shape, mp(0.065)).unwrap();
        assert!((got - 0.065 * 6.5 / 263.883).abs() < 1e-15);
    }

    #[test]
    fn prior_update_examples() {
        let kappa = MvnbParams::new(1.0).unwrap();
        let s = mvnb_prior_update(kappa, 10, 2, mp(0.065));
        assert!((s.alpha() - 3.0).abs() < 1e-15 && (s.gamma() - 1.65).abs() < 1e-15);
        let s0 = mvnb_prior_update(kappa, 0, 0, mp(0.065));
        assert_eq!(s0, kappa.initial_state());
        let prem = 0.2 * MixingLaw::Gamma.effect_mean(s).unwrap();
        assert!((prem - 0.2 * 3.0 / 1.65).abs() < 1e-15);
    }

    #[test]
    fn sequential_matches_closed_form() {
        let h = hist(&[1, 0, 2, 0], &[0.5, 0.6, 0.7, 0.05]);
        let kappa = MvnbParams::new(1.3).unwrap();
        let s = mvnb_loglik(&h, kappa);
        let c = mvnb_joint_loglik(&h, kappa.initial_state());
        assert!((s - c).abs() < 1e-12, "{s} vs {c}");
        let shape = NbbShape::new(7.0, 2.5).unwrap();
        let s = nbbeta_loglik(&h, shape);
        let c = nbbeta_joint_loglik(&h, shape.into());
        assert!((s - c).abs() < 1e-12, "{s} vs {c}");
    }

    #[test]
    fn covariance_examples() {
        let kappa = MvnbParams::new(1.3).unwrap();
        let got = mvnb_covariance(mp(0.065), mp(0.065), kappa);
        assert!((got - 0.065f64.powi(2) / 1.3).abs() < 1e-18);
        assert!(mvnb_covariance(mp(1.0), mp(1.0), MvnbParams::new(1e12).unwrap()) < 1e-11);
        let shape = NbbShape::new(264.818, 5.5).unwrap();
        let got = nbbeta_covariance(mp(0.065), mp(0.065), shape).unwrap();
        let c = 5.5 / 263.818;
        assert!((got - 0.065f64.powi(2) * c * (6.5 / 262.818 - c)).abs() < 1e-18);
        assert!(nbbeta_covariance(mp(1.0), mp(1.0), NbbShape::new(2.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn beta_premium_needs_alpha_above_one() {
        let shape = NbbShape::new(0.5, 1.0).unwrap();
        assert!(nbbeta_premium(&PolicyHistory::empty(), shape, mp(1.0)).is_err());
        // Experience can push α past one.
        assert!(nbbeta_premium(&hist(&[0], &[0.7]), shape, mp(1.0)).is_ok());
    }
}
