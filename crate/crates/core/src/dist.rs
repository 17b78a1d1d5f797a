//! Count distributions: Poisson, NB1, NB2 and the negative-binomial-beta
//! (NBB) kernel used by the beta random-effect panels.
//!
//! Parameters are validated when their newtypes are built, so the pmf
//! functions themselves are infallible and cheap enough for the likelihood
//! hot loop. Everything is evaluated in log space from gamma ratios.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::special::{ln_beta, ln_factorial, ln_gamma_shift, ln_rising, KahanSum};

/// Expected claim count of one contract, `λ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MeanParam<T>(T);

impl<T: Real> MeanParam<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if lambda.is_finite() && lambda > T::zero() {
            Ok(Self(lambda))
        } else {
            Err(Error::domain(format!("mean must be finite and > 0, got {lambda}")))
        }
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }
}

/// Overdispersion `τ > 0` of the NB1/NB2 families.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Dispersion<T>(T);

impl<T: Real> Dispersion<T> {
    pub fn new(tau: T) -> Result<Self> {
        if tau.is_finite() && tau > T::zero() {
            Ok(Self(tau))
        } else {
            Err(Error::domain(format!("dispersion must be finite and > 0, got {tau}")))
        }
    }

    #[inline]
    pub fn value(self) -> T {
        self.0
    }
}

/// Beta shape `(a, b)` of the NBB mixing law. The same pair, updated with
/// experience, is the `(α, γ)` argument of the predictive NBB pmf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbbShape<T> {
    a: T,
    b: T,
}

impl<T: Real> NbbShape<T> {
    pub fn new(a: T, b: T) -> Result<Self> {
        let ok = |v: T| v.is_finite() && v > T::zero();
        if ok(a) && ok(b) {
            Ok(Self { a, b })
        } else {
            Err(Error::domain(format!("NBB shape needs a, b finite and > 0, got ({a}, {b})")))
        }
    }

    #[inline]
    pub fn a(&self) -> T {
        self.a
    }

    #[inline]
    pub fn b(&self) -> T {
        self.b
    }

    /// `E[Θ] = b / (a − 1)`; needs `a > 1`.
    pub fn mean_factor(&self) -> Option<T> {
        (self.a > T::one()).then(|| self.b / (self.a - T::one()))
    }
}

/// A discrete law on `{0, 1, 2, ...}`.
pub trait CountDistribution<T: Real> {
    fn ln_pmf(&self, n: u64) -> T;

    fn pmf(&self, n: u64) -> T {
        self.ln_pmf(n).exp()
    }

    /// `None` when the mean does not exist.
    fn mean(&self) -> Option<T>;

    /// `None` when the variance does not exist.
    fn variance(&self) -> Option<T>;

    /// An upper bound on `P(N > n)`, or `None` if this law cannot provide a
    /// rigorous one at `n`.
    fn tail_bound(&self, n: u64) -> Option<T>;
}

/// Poisson(λ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Poisson<T> {
    lambda: T,
}

impl<T: Real> Poisson<T> {
    pub fn new(lambda: MeanParam<T>) -> Self {
        Self { lambda: lambda.value() }
    }
}

impl<T: Real> CountDistribution<T> for Poisson<T> {
    #[inline]
    fn ln_pmf(&self, n: u64) -> T {
        let lambda = self.lambda;
        let nn = T::from_count(n);
        let body = if n == 0 { T::zero() } else { nn * lambda.ln() };
        body - lambda - ln_factorial::<T>(n)
    }

    fn mean(&self) -> Option<T> {
        Some(self.lambda)
    }

    fn variance(&self) -> Option<T> {
        Some(self.lambda)
    }

    fn tail_bound(&self, n: u64) -> Option<T> {
        // pmf(m+1)/pmf(m) = λ/(m+1) decreases, so a geometric bound holds.
        let ratio = self.lambda / T::from_count(n + 2);
        (ratio < T::one()).then(|| self.pmf(n + 1) / (T::one() - ratio))
    }
}

/// Gamma-mixed Poisson: `N | Θ ~ Poisson(λΘ)`, `Θ ~ Gamma(shape α, rate γ)`.
///
/// With `α = γ = 1/τ` this is the NB2 law; with the credibility-updated
/// `(α, γ)` it is the predictive distribution of the gamma random-effect
/// panels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBin2<T> {
    lambda: T,
    shape: T,
    rate: T,
}

impl<T: Real> NegBin2<T> {
    /// NB2 with mean λ and `Var = λ + τλ²`.
    pub fn new(lambda: MeanParam<T>, tau: Dispersion<T>) -> Self {
        let r = tau.value().recip();
        Self { lambda: lambda.value(), shape: r, rate: r }
    }

    /// Predictive form with posterior gamma parameters `(α, γ)`.
    pub fn with_gamma(lambda: MeanParam<T>, alpha: T, gamma: T) -> Self {
        debug_assert!(alpha > T::zero() && gamma > T::zero());
        Self { lambda: lambda.value(), shape: alpha, rate: gamma }
    }

    fn success_ratio(&self) -> T {
        self.lambda / (self.rate + self.lambda)
    }
}

impl<T: Real> CountDistribution<T> for NegBin2<T> {
    #[inline]
    fn ln_pmf(&self, n: u64) -> T {
        let (lambda, alpha, gamma) = (self.lambda, self.shape, self.rate);
        let tail = -alpha * (lambda / gamma).ln_1p();
        if n == 0 {
            return tail;
        }
        let nn = T::from_count(n);
        ln_rising(alpha, n) - ln_factorial::<T>(n) + nn * (lambda.ln() - (gamma + lambda).ln())
            + tail
    }

    fn mean(&self) -> Option<T> {
        Some(self.lambda * self.shape / self.rate)
    }

    fn variance(&self) -> Option<T> {
        let m = self.lambda * self.shape / self.rate;
        Some(m + m * self.lambda / self.rate)
    }

    fn tail_bound(&self, n: u64) -> Option<T> {
        nb_tail_bound(self, n, self.shape, self.success_ratio())
    }
}

/// NB1: mean λ, `Var = (1 + τ)λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBin1<T> {
    lambda: T,
    tau: T,
}

impl<T: Real> NegBin1<T> {
    pub fn new(lambda: MeanParam<T>, tau: Dispersion<T>) -> Self {
        Self { lambda: lambda.value(), tau: tau.value() }
    }
}

impl<T: Real> CountDistribution<T> for NegBin1<T> {
    #[inline]
    fn ln_pmf(&self, n: u64) -> T {
        let size = self.lambda / self.tau;
        let tail = -size * self.tau.ln_1p();
        if n == 0 {
            return tail;
        }
        let nn = T::from_count(n);
        ln_rising(size, n) - ln_factorial::<T>(n) + tail - nn * self.tau.recip().ln_1p()
    }

    fn mean(&self) -> Option<T> {
        Some(self.lambda)
    }

    fn variance(&self) -> Option<T> {
        Some(self.lambda * (T::one() + self.tau))
    }

    fn tail_bound(&self, n: u64) -> Option<T> {
        nb_tail_bound(self, n, self.lambda / self.tau, self.tau / (T::one() + self.tau))
    }
}

/// Geometric tail bound for a negative binomial with the given size and
/// failure probability `q`: `pmf(m+1)/pmf(m) = (m + size)/(m + 1) · q`.
fn nb_tail_bound<T: Real, D: CountDistribution<T>>(d: &D, n: u64, size: T, q: T) -> Option<T> {
    let m = T::from_count(n + 1);
    let ratio = ((m + size) / (m + T::one()) * q).max(q);
    (ratio < T::one()).then(|| d.pmf(n + 1) / (T::one() - ratio))
}

/// Negative-binomial-beta: `N | p ~ NB(size λ, p)` with `p ~ Beta(α, γ)`.
///
/// The pmf is
/// `Γ(α+γ)Γ(α+λ)Γ(γ+n) / (Γ(α)Γ(γ)Γ(α+γ+λ+n)) · Γ(λ+n)/(Γ(λ) n!)`.
/// Note the role swap relative to the gamma panel: experience in λ feeds the
/// first shape (α) and claim counts feed the second (γ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBinBeta<T> {
    lambda: T,
    alpha: T,
    gamma: T,
}

impl<T: Real> NegBinBeta<T> {
    pub fn new(lambda: MeanParam<T>, shape: NbbShape<T>) -> Self {
        Self { lambda: lambda.value(), alpha: shape.a(), gamma: shape.b() }
    }

    /// `E[N^(k)]`, the k-th falling factorial moment (needs `α > k`).
    fn ln_factorial_moment(&self, k: u64) -> T {
        let kk = T::from_count(k);
        ln_rising(self.lambda, k) + ln_beta(self.alpha - kk, self.gamma + kk)
            - ln_beta(self.alpha, self.gamma)
    }
}

impl<T: Real> CountDistribution<T> for NegBinBeta<T> {
    #[inline]
    fn ln_pmf(&self, n: u64) -> T {
        let (lambda, alpha, gamma) = (self.lambda, self.alpha, self.gamma);
        let ag = alpha + gamma;
        // ln Γ(α+γ)Γ(α+λ) / (Γ(α)Γ(α+γ+λ)) — the n = 0 mass.
        let zero_mass = ln_gamma_shift(alpha, lambda) - ln_gamma_shift(ag, lambda);
        if n == 0 {
            return zero_mass;
        }
        zero_mass + ln_rising(gamma, n) - ln_rising(ag + lambda, n) + ln_rising(lambda, n)
            - ln_factorial::<T>(n)
    }

    fn mean(&self) -> Option<T> {
        (self.alpha > T::one()).then(|| self.lambda * self.gamma / (self.alpha - T::one()))
    }

    fn variance(&self) -> Option<T> {
        let one = T::one();
        let two = T::lit(2.0);
        let (lambda, a, b) = (self.lambda, self.alpha, self.gamma);
        (a > two).then(|| {
            let d1 = a - one;
            let d2 = a - two;
            lambda * (a + b - one) * b / (d1 * d2)
                + lambda * lambda * ((b + one) * b / (d1 * d2) - b * b / (d1 * d1))
        })
    }

    fn tail_bound(&self, n: u64) -> Option<T> {
        // Markov on falling factorial moments: P(N ≥ m) ≤ E[N^(k)] / m^(k).
        let m = n + 1;
        let max_k = self.alpha.ceil().to_u64().unwrap_or(0).saturating_sub(1).min(24).min(m);
        let mut best: Option<T> = None;
        for k in 1..=max_k {
            let ln_falling: T = (0..k).map(|i| T::from_count(m - i).ln()).sum();
            let bound = (self.ln_factorial_moment(k) - ln_falling).exp();
            best = Some(best.map_or(bound, |b| b.min(bound)));
        }
        best
    }
}

/// Conditional law of the bonus-malus panels and the cross-section models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "tau", rename_all = "lowercase")]
pub enum CountFamily<T> {
    Poisson,
    Nb1(T),
    Nb2(T),
}

impl<T: Real> CountFamily<T> {
    /// Validates the dispersion.
    pub fn checked(self) -> Result<Self> {
        match self {
            CountFamily::Poisson => Ok(self),
            CountFamily::Nb1(tau) | CountFamily::Nb2(tau) => Dispersion::new(tau).map(|_| self),
        }
    }

    pub fn poisson() -> Self {
        CountFamily::Poisson
    }

    pub fn nb1(tau: Dispersion<T>) -> Self {
        CountFamily::Nb1(tau.value())
    }

    pub fn nb2(tau: Dispersion<T>) -> Self {
        CountFamily::Nb2(tau.value())
    }

    pub fn name(&self) -> &'static str {
        match self {
            CountFamily::Poisson => "poisson",
            CountFamily::Nb1(_) => "nb1",
            CountFamily::Nb2(_) => "nb2",
        }
    }

    pub fn dispersion(&self) -> Option<T> {
        match *self {
            CountFamily::Poisson => None,
            CountFamily::Nb1(t) | CountFamily::Nb2(t) => Some(t),
        }
    }

    pub fn at(&self, mean: MeanParam<T>) -> FamilyDistribution<T> {
        match *self {
            CountFamily::Poisson => FamilyDistribution::Poisson(Poisson::new(mean)),
            CountFamily::Nb1(t) => FamilyDistribution::Nb1(NegBin1 { lambda: mean.value(), tau: t }),
            CountFamily::Nb2(t) => {
                let r = t.recip();
                FamilyDistribution::Nb2(NegBin2 { lambda: mean.value(), shape: r, rate: r })
            }
        }
    }

    #[inline]
    pub fn ln_pmf(&self, n: u64, mean: MeanParam<T>) -> T {
        self.at(mean).ln_pmf(n)
    }
}

/// A [`CountFamily`] evaluated at a given mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyDistribution<T> {
    Poisson(Poisson<T>),
    Nb1(NegBin1<T>),
    Nb2(NegBin2<T>),
}

macro_rules! delegate {
    ($self:ident, $d:ident => $e:expr) => {
        match $self {
            FamilyDistribution::Poisson($d) => $e,
            FamilyDistribution::Nb1($d) => $e,
            FamilyDistribution::Nb2($d) => $e,
        }
    };
}

impl<T: Real> CountDistribution<T> for FamilyDistribution<T> {
    #[inline]
    fn ln_pmf(&self, n: u64) -> T {
        delegate!(self, d => d.ln_pmf(n))
    }
    fn mean(&self) -> Option<T> {
        delegate!(self, d => d.mean())
    }
    fn variance(&self) -> Option<T> {
        delegate!(self, d => d.variance())
    }
    fn tail_bound(&self, n: u64) -> Option<T> {
        delegate!(self, d => d.tail_bound(n))
    }
}

pub fn poisson_logpmf<T: Real>(n: u64, lambda: MeanParam<T>) -> T {
    Poisson::new(lambda).ln_pmf(n)
}

/// NB2 log-pmf. Mean λ, variance `λ + τλ²` (gamma mixing with `Var Θ = τ`).
pub fn nb2_logpmf<T: Real>(n: u64, lambda: MeanParam<T>, tau: Dispersion<T>) -> T {
    NegBin2::new(lambda, tau).ln_pmf(n)
}

/// NB1 log-pmf. Mean λ, variance `(1 + τ)λ`.
pub fn nb1_logpmf<T: Real>(n: u64, lambda: MeanParam<T>, tau: Dispersion<T>) -> T {
    NegBin1::new(lambda, tau).ln_pmf(n)
}

/// NBB log-pmf with shapes `(α, γ)` taken from `shape`.
pub fn nbb_logpmf<T: Real>(n: u64, lambda: MeanParam<T>, shape: NbbShape<T>) -> T {
    NegBinBeta::new(lambda, shape).ln_pmf(n)
}

/// Smallest `n ≥ ⌊mean⌋` whose tail bound `P(N > n)` is below `eps`.
pub fn truncation_point<T: Real, D: CountDistribution<T>>(
    dist: &D,
    eps: T,
    max_terms: u64,
) -> Result<u64> {
    let start = dist.mean().and_then(|m| m.floor().to_u64()).unwrap_or(0);
    let mut best = T::infinity();
    for n in start..start.saturating_add(max_terms) {
        if let Some(bound) = dist.tail_bound(n) {
            if bound < eps {
                return Ok(n);
            }
            best = best.min(bound);
        }
    }
    Err(Error::Truncation { achieved: best.as_f64(), target: eps.as_f64(), terms: max_terms })
}

/// Pmf values on `0..=n_max` with the tail mass beyond `n_max` below `eps`.
pub fn truncated_support<T: Real, D: CountDistribution<T>>(dist: &D, eps: T) -> Result<Vec<T>> {
    let n_max = truncation_point(dist, eps, 100_000)?;
    Ok((0..=n_max).map(|n| dist.pmf(n)).collect())
}

/// `Σ_{n ≤ n_max} pmf(n)` with compensated summation.
pub fn mass_up_to<T: Real, D: CountDistribution<T>>(dist: &D, n_max: u64) -> T {
    let mut acc = KahanSum::new();
    for n in 0..=n_max {
        acc.add(dist.pmf(n));
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(x: f64) -> MeanParam<f64> {
        MeanParam::new(x).unwrap()
    }
    fn t(x: f64) -> Dispersion<f64> {
        Dispersion::new(x).unwrap()
    }

    #[test]
    fn constructors_reject_bad_parameters() {
        assert!(MeanParam::new(0.0).is_err());
        assert!(MeanParam::new(f64::NAN).is_err());
        assert!(MeanParam::new(f64::INFINITY).is_err());
        assert!(Dispersion::new(-1.0).is_err());
        assert!(NbbShape::new(0.0, 1.0).is_err());
        assert!(NbbShape::new(3.0, -1.0).is_err());
        assert!(CountFamily::Nb1(0.0).checked().is_err());
    }

    #[test]
    fn poisson_anchor_values() {
        assert_eq!(poisson_logpmf(0, m(1.0)), -1.0);
        let want = (0.065f64.powi(2) * (-0.065f64).exp() / 2.0).ln();
        assert!((poisson_logpmf(2, m(0.065)) - want).abs() < 1e-14);
        let total = mass_up_to(&Poisson::new(m(5.0)), 200);
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nb2_zero_mass_at_unit_dispersion() {
        let got = nb2_logpmf(0, m(1.0), t(1.0));
        assert!((got + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn negative_binomials_collapse_to_poisson() {
        for n in 0..8 {
            for &lambda in &[0.065, 1.0, 7.5] {
                let p = poisson_logpmf(n, m(lambda));
                assert!((nb2_logpmf(n, m(lambda), t(1e-8)) - p).abs() < 1e-6);
                // NB1 drifts like n(n−1)τ/(2λ) in log space, so compare masses.
                assert!((nb1_logpmf(n, m(lambda), t(1e-8)).exp() - p.exp()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nb1_normalizes() {
        let total = mass_up_to(&NegBin1::new(m(2.0), t(0.5)), 500);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nbb_zero_mass_closed_form() {
        let (lambda, a, b) = (0.5, 264.818, 5.5);
        let got = nbb_logpmf(0, m(lambda), NbbShape::new(a, b).unwrap());
        let lg = crate::special::ln_gamma::<f64>;
        let want = lg(a + b) + lg(a + lambda) - lg(a) - lg(a + b + lambda);
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn nbb_mean_and_variance_by_summation() {
        let shape = NbbShape::new(264.818, 5.5).unwrap();
        let d = NegBinBeta::new(m(0.5), shape);
        let (mut s0, mut s1, mut s2) = (KahanSum::new(), KahanSum::new(), KahanSum::new());
        for n in 0..=2000u64 {
            let p = d.pmf(n);
            let x = n as f64;
            s0.add(p);
            s1.add(x * p);
            s2.add(x * x * p);
        }
        assert!((s0.value() - 1.0).abs() < 1e-8);
        let mean = d.mean().unwrap();
        assert!((mean - 0.5 * 5.5 / 263.818).abs() < 1e-15);
        assert!((s1.value() - mean).abs() < 1e-6);
        let var = s2.value() - s1.value().powi(2);
        assert!((var - d.variance().unwrap()).abs() < 1e-6);
    }

    #[test]
    fn nbb_moments_need_large_enough_a() {
        let d = NegBinBeta::new(m(1.0), NbbShape::new(1.5, 2.0).unwrap());
        assert!(d.mean().is_some());
        assert!(d.variance().is_none());
        let d = NegBinBeta::new(m(1.0), NbbShape::new(0.8, 2.0).unwrap());
        assert!(d.mean().is_none());
        assert!(d.tail_bound(100).is_none());
    }

    #[test]
    fn nb2_variance_uses_gamma_mixing_form() {
        let d = NegBin2::new(m(3.0), t(0.4));
        assert!((d.variance().unwrap() - (3.0 + 0.4 * 9.0)).abs() < 1e-14);
    }

    #[test]
    fn tail_bounds_dominate_true_tail() {
        let dists: Vec<Box<dyn CountDistribution<f64>>> = vec![
            Box::new(Poisson::new(m(3.0))),
            Box::new(NegBin2::new(m(2.0), t(3.0))),
            Box::new(NegBin1::new(m(0.4), t(2.0))),
            Box::new(NegBinBeta::new(m(2.0), NbbShape::new(12.0, 3.0).unwrap())),
        ];
        for d in &dists {
            for n in 0..40u64 {
                let Some(bound) = d.tail_bound(n) else { continue };
                let exact: f64 = ((n + 1)..4000).map(|k| d.pmf(k)).sum();
                assert!(bound >= exact * (1.0 - 1e-9), "n={n} bound={bound} exact={exact}");
            }
        }
    }

    #[test]
    fn truncation_reaches_target() {
        let d = NegBin1::new(m(0.065 * 2.2), t(0.062));
        let n = truncation_point(&d, 1e-10, 1000).unwrap();
        let tail: f64 = ((n + 1)..200).map(|k| d.pmf(k)).sum();
        assert!(tail < 1e-10);
        let support = truncated_support(&d, 1e-10).unwrap();
        assert_eq!(support.len() as u64, n + 1);
    }

    #[test]
    fn truncation_reports_failure() {
        // a < 1: no moments, no bound.
        let d = NegBinBeta::new(m(1.0), NbbShape::new(0.5, 1.0).unwrap());
        match truncation_point(&d, 1e-10, 50) {
            Err(Error::Truncation { terms, .. }) => assert_eq!(terms, 50),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn large_arguments_stay_finite() {
        let n = 10_000u64;
        let lambda = m(1000.0);
        assert!(poisson_logpmf(n, lambda).is_finite());
        assert!(nb1_logpmf(n, lambda, t(0.3)).is_finite());
        assert!(nb2_logpmf(n, lambda, t(0.3)).is_finite());
        assert!(nbb_logpmf(n, lambda, NbbShape::new(5.0, 3.0).unwrap()).is_finite());
    }

    #[test]
    fn family_dispatch_matches_free_functions() {
        let lambda = m(0.3);
        assert_eq!(CountFamily::Poisson.ln_pmf(2, lambda), poisson_logpmf(2, lambda));
        assert_eq!(CountFamily::Nb1(0.2).ln_pmf(2, lambda), nb1_logpmf(2, lambda, t(0.2)));
        assert_eq!(CountFamily::Nb2(0.2).ln_pmf(2, lambda), nb2_logpmf(2, lambda, t(0.2)));
    }

    #[test]
    fn works_in_single_precision() {
        let lambda = MeanParam::new(2.0f32).unwrap();
        let total: f32 = (0..60).map(|n| poisson_logpmf(n, lambda).exp()).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
}
