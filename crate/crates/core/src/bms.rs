//! Bonus-malus claim-score panels.
//!
//! A policyholder sits on a level `ℓ ∈ {1..s}`. A claim-free year moves one
//! level down, each claim `Ψ` levels up, clamped to `[1, s]`. The level scales
//! the a-priori mean by `r_ℓ = 1 + δ(ℓ − 1)`, and since the level path is a
//! deterministic function of past counts the likelihood is a plain sum of
//! conditional log-pmfs.

use serde::{Deserialize, Serialize};

use crate::dist::{truncation_point, CountDistribution, CountFamily, MeanParam};
use crate::error::{Error, Result};
use crate::panel::PolicyHistory;
use crate::scalar::Real;
use crate::special::KahanSum;

/// Structural triple `(Ψ, s, ℓ*)` and relativity slope `δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmsConfig<T> {
    psi: u32,
    s: u32,
    entry: u32,
    delta: T,
}

impl<T: Real> BmsConfig<T> {
    pub fn new(psi: u32, s: u32, entry: u32, delta: T) -> Result<Self> {
        if s < 2 {
            return Err(Error::domain(format!("BMS needs s ≥ 2 levels, got {s}")));
        }
        if psi < 1 || psi > s {
            return Err(Error::domain(format!("jump Ψ must lie in 1..={s}, got {psi}")));
        }
        if entry < 1 || entry > s {
            return Err(Error::domain(format!("entry level must lie in 1..={s}, got {entry}")));
        }
        if !(delta.is_finite() && delta >= T::zero()) {
            return Err(Error::domain(format!("relativity slope δ must be ≥ 0, got {delta}")));
        }
        Ok(Self { psi, s, entry, delta })
    }

    pub fn psi(&self) -> u32 {
        self.psi
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// Same structure with another slope.
    pub fn with_delta(&self, delta: T) -> Result<Self> {
        Self::new(self.psi, self.s, self.entry, delta)
    }

    pub fn levels(&self) -> impl Iterator<Item = BmsLevel> {
        (1..=self.s).map(BmsLevel)
    }
}

/// A level on the scale, `1..=s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BmsLevel(u32);

impl BmsLevel {
    pub fn new<T: Real>(level: u32, config: &BmsConfig<T>) -> Result<Self> {
        if (1..=config.s).contains(&level) {
            Ok(Self(level))
        } else {
            Err(Error::domain(format!("level {level} outside 1..={}", config.s)))
        }
    }

    #[inline]
    pub fn get(self) -> u32 {
        self.0
    }

    #[inline]
    fn index(self) -> usize {
        self.0 as usize - 1
    }
}

/// `min(max(ℓ − 1[n = 0] + Ψn, 1), s)`.
#[inline]
pub fn next_level<T: Real>(current: BmsLevel, n: u64, config: &BmsConfig<T>) -> BmsLevel {
    let l = current.0 as u64;
    let next = if n == 0 {
        l.saturating_sub(1).max(1)
    } else {
        l.saturating_add((config.psi as u64).saturating_mul(n)).min(config.s as u64)
    };
    BmsLevel(next as u32)
}

/// `r_ℓ = 1 + δ(ℓ − 1)`.
#[inline]
pub fn relativity<T: Real>(level: BmsLevel, config: &BmsConfig<T>) -> T {
    T::one() + config.delta * T::from_count(level.0 as u64 - 1)
}

/// Starting level for a driver with `u` years of unobserved experience:
/// `max(ℓ* − u, 1)`.
pub fn entry_level<T: Real>(experience_years: u32, config: &BmsConfig<T>) -> BmsLevel {
    BmsLevel(config.entry.saturating_sub(experience_years).max(1))
}

/// Level before the first observed contract. The years of driving experience
/// not covered by the prior-claims window each move one level down from
/// `ℓ*`; the window's per-year counts (oldest first) are then run through
/// the scale.
pub fn initial_level<T: Real>(
    experience_years: u32,
    prior_by_year: &[u64],
    config: &BmsConfig<T>,
) -> BmsLevel {
    let unknown = experience_years.saturating_sub(prior_by_year.len() as u32);
    let start = entry_level(unknown, config);
    prior_by_year.iter().rev().fold(start, |l, &n| next_level(l, n, config))
}

/// Levels visited along `counts`, starting at `start`; length `len + 1`.
pub fn level_path<T: Real>(counts: &[u64], start: BmsLevel, config: &BmsConfig<T>) -> Vec<BmsLevel> {
    let mut path = Vec::with_capacity(counts.len() + 1);
    path.push(start);
    let mut l = start;
    for &n in counts {
        l = next_level(l, n, config);
        path.push(l);
    }
    path
}

/// `Σ_k ln Pr(n_k | mean λ_k r_{ℓ_k})` along the deterministic level path.
pub fn bms_loglik<T: Real>(
    history: &PolicyHistory<T>,
    start: BmsLevel,
    config: &BmsConfig<T>,
    family: CountFamily<T>,
) -> Result<T> {
    let mut l = start;
    let mut acc = KahanSum::new();
    for (n, lambda) in history.iter() {
        let mean = MeanParam::new(lambda.value() * relativity(l, config))?;
        acc.add(family.ln_pmf(n, mean));
        l = next_level(l, n, config);
    }
    Ok(acc.value())
}

/// Log-likelihood when the starting level is random with weights
/// `weights[y − 1] = Pr(L(1) = y)`; log-sum-exp over the levels.
pub fn bms_mixture_loglik<T: Real>(
    history: &PolicyHistory<T>,
    weights: &[T],
    config: &BmsConfig<T>,
    family: CountFamily<T>,
) -> Result<T> {
    if weights.len() != config.s as usize {
        return Err(Error::domain(format!(
            "{} entry weights for a {}-level scale",
            weights.len(),
            config.s
        )));
    }
    let total: T = weights.iter().copied().sum();
    if weights.iter().any(|w| !(*w >= T::zero())) || (total - T::one()).abs() > T::lit(1e-9) {
        return Err(Error::domain("entry weights must be non-negative and sum to 1"));
    }
    let mut terms = Vec::with_capacity(weights.len());
    for (level, &w) in config.levels().zip(weights) {
        if w > T::zero() {
            terms.push(w.ln() + bms_loglik(history, level, config, family)?);
        }
    }
    let top = terms.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = terms.iter().map(|&x| (x - top).exp()).sum();
    Ok(top + sum.ln())
}

/// `λ_{t+1} r_{ℓ_{t+1}}`.
pub fn bms_premium<T: Real>(next: BmsLevel, lambda_next: MeanParam<T>, config: &BmsConfig<T>) -> T {
    lambda_next.value() * relativity(next, config)
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::domain("matrix rows must all have the matrix order as length"));
        }
        Ok(Self { n, data: rows.into_iter().flatten().collect() })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// 0-based entry.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.n, rhs.n, "matrix orders differ");
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] = out.data[i * n + j] + a * rhs.get(k, j);
                }
            }
        }
        out
    }

    /// `self^k` by repeated squaring.
    pub fn pow(&self, mut k: u32) -> Self {
        let mut result = Self::identity(self.n);
        let mut base = self.clone();
        while k > 0 {
            if k & 1 == 1 {
                result = result.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

/// `steps`-period transition kernel of the level process at mean `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T> {
    matrix: SquareMatrix<T>,
    lambda: MeanParam<T>,
    steps: u32,
}

impl<T: Real> TransitionMatrix<T> {
    pub fn matrix(&self) -> &SquareMatrix<T> {
        &self.matrix
    }

    pub fn lambda(&self) -> MeanParam<T> {
        self.lambda
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Probability of moving from level `from` to level `to`.
    pub fn prob(&self, from: BmsLevel, to: BmsLevel) -> T {
        self.matrix.get(from.index(), to.index())
    }

    pub fn row(&self, from: BmsLevel) -> &[T] {
        self.matrix.row(from.index())
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.matrix.n).map(|i| self.matrix.row(i).iter().copied().sum()).collect()
    }
}

/// One-period kernel: from level `k` the mean is `λ r_k`; claim counts that
/// would overshoot the top level all land on level `s`, whose entry is the
/// complement of the others so every row sums to one.
pub fn transition_matrix<T: Real>(
    lambda: MeanParam<T>,
    config: &BmsConfig<T>,
    family: CountFamily<T>,
) -> Result<TransitionMatrix<T>> {
    let s = config.s as usize;
    let mut m = SquareMatrix::zeros(s);
    for from in config.levels() {
        let mean = MeanParam::new(lambda.value() * relativity(from, config))?;
        let dist = family.at(mean);
        let mut below_top = KahanSum::new();
        let mut n = 0u64;
        loop {
            let to = next_level(from, n, config);
            if to.get() == config.s {
                break;
            }
            let p = dist.pmf(n);
            m.set(from.index(), to.index(), m.get(from.index(), to.index()) + p);
            below_top.add(p);
            n += 1;
        }
        let top = (T::one() - below_top.value()).max(T::zero());
        m.set(from.index(), s - 1, m.get(from.index(), s - 1) + top);
    }
    Ok(TransitionMatrix { matrix: m, lambda, steps: 1 })
}

/// `P^K`; `P^0` is the identity.
pub fn matrix_power<T: Real>(p: &TransitionMatrix<T>, k: u32) -> TransitionMatrix<T> {
    TransitionMatrix { matrix: p.matrix.pow(k), lambda: p.lambda, steps: p.steps * k }
}

/// `Cov(N_t, N_{t+j} | L(t) = ℓ_t)` with constant covariates.
///
/// Intermediate transitions use `P(λ_t)`; `λ_{t+j}` scales the later count.
/// Relativities enter centred as `r_m − 1 = δ(m − 1)`: the constant part
/// cancels exactly between the two expectations, so `δ = 0` gives exactly 0.
/// The expectation over `N_t` is a finite sum up to the first count that
/// reaches the top level; beyond it the inner term is constant and its
/// weight is `E[N_t]` minus the partial sum.
pub fn bms_covariance<T: Real>(
    ell_t: BmsLevel,
    lambda_t: MeanParam<T>,
    lambda_tj: MeanParam<T>,
    j: u32,
    config: &BmsConfig<T>,
    family: CountFamily<T>,
) -> Result<T> {
    if j == 0 {
        return Err(Error::domain("covariance lag must be ≥ 1"));
    }
    BmsCovariance::new(lambda_t, config, family)?.at(ell_t, lambda_tj, j)
}

/// Covariance curves sharing one transition kernel and its powers.
pub struct BmsCovariance<T> {
    config: BmsConfig<T>,
    family: CountFamily<T>,
    lambda_t: MeanParam<T>,
    powers: Vec<SquareMatrix<T>>,
}

impl<T: Real> BmsCovariance<T> {
    pub fn new(lambda_t: MeanParam<T>, config: &BmsConfig<T>, family: CountFamily<T>) -> Result<Self> {
        let p = transition_matrix(lambda_t, config, family)?;
        let s = config.s as usize;
        Ok(Self {
            config: *config,
            family,
            lambda_t,
            powers: vec![SquareMatrix::identity(s), p.matrix],
        })
    }

    fn power(&mut self, k: u32) -> &SquareMatrix<T> {
        while self.powers.len() <= k as usize {
            let next = self.powers.last().expect("seeded").mul(&self.powers[1]);
            self.powers.push(next);
        }
        &self.powers[k as usize]
    }

    /// `Σ_m (r_m − 1) P^k[from, m]`.
    fn centred_mean(&mut self, k: u32, from: usize) -> T {
        let delta = self.config.delta;
        let row = self.power(k).row(from);
        row.iter()
            .enumerate()
            .map(|(m, &p)| delta * T::from_count(m as u64) * p)
            .sum()
    }

    pub fn at(&mut self, ell_t: BmsLevel, lambda_tj: MeanParam<T>, j: u32) -> Result<T> {
        if j == 0 {
            return Err(Error::domain("covariance lag must be ≥ 1"));
        }
        if ell_t.get() > self.config.s {
            return Err(Error::domain(format!("level {} outside the scale", ell_t.get())));
        }
        let config = self.config;
        let mean_t = self.lambda_t.value() * relativity(ell_t, &config);
        let dist = self.family.at(MeanParam::new(mean_t)?);
        let mut cross = KahanSum::new();
        let mut partial_mean = KahanSum::new();
        let mut n = 1u64;
        loop {
            let to = next_level(ell_t, n, &config);
            if to.get() == config.s {
                break;
            }
            let w = T::from_count(n) * dist.pmf(n);
            cross.add(w * self.centred_mean(j - 1, to.index()));
            partial_mean.add(w);
            n += 1;
        }
        let rest = (mean_t - partial_mean.value()).max(T::zero());
        cross.add(rest * self.centred_mean(j - 1, config.s as usize - 1));
        let marginal = mean_t * self.centred_mean(j, ell_t.index());
        Ok(lambda_tj.value() * (cross.value() - marginal))
    }
}

/// Two-period covariance by the explicit double sum over `(N_t, N_{t+1})`,
/// each count support truncated once its tail bound drops below `eps`.
/// This route is independent of [`bms_covariance`] and serves as its check.
pub fn bms_covariance_first_lag<T: Real>(
    ell_t: BmsLevel,
    lambda_t: MeanParam<T>,
    lambda_t1: MeanParam<T>,
    config: &BmsConfig<T>,
    family: CountFamily<T>,
    eps: T,
) -> Result<T> {
    const MAX_TERMS: u64 = 1_000_000;
    let mean_t = lambda_t.value() * relativity(ell_t, config);
    let dist_t = family.at(MeanParam::new(mean_t)?);
    let n_max = truncation_point(&dist_t, eps, MAX_TERMS)?;
    let mut joint = KahanSum::new();
    for n in 1..=n_max {
        let next = next_level(ell_t, n, config);
        let mean_next = lambda_t1.value() * relativity(next, config);
        let dist_next = family.at(MeanParam::new(mean_next)?);
        let q_max = truncation_point(&dist_next, eps, MAX_TERMS)?;
        let pn = dist_t.pmf(n);
        for q in 1..=q_max {
            joint.add(T::from_count(n) * T::from_count(q) * pn * dist_next.pmf(q));
        }
    }
    let p = transition_matrix(lambda_t, config, family)?;
    let expected_r: T = config
        .levels()
        .map(|m| relativity(m, config) * p.prob(ell_t, m))
        .sum();
    Ok(joint.value() - mean_t * lambda_t1.value() * expected_r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(psi: u32, s: u32, entry: u32, delta: f64) -> BmsConfig<f64> {
        BmsConfig::new(psi, s, entry, delta).unwrap()
    }
    fn mp(x: f64) -> MeanParam<f64> {
        MeanParam::new(x).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(BmsConfig::new(1, 1, 1, 0.1).is_err());
        assert!(BmsConfig::new(0, 5, 1, 0.1).is_err());
        assert!(BmsConfig::new(6, 5, 1, 0.1).is_err());
        assert!(BmsConfig::new(2, 5, 6, 0.1).is_err());
        assert!(BmsConfig::new(2, 5, 1, -0.1).is_err());
        assert!(BmsLevel::new(0, &cfg(1, 3, 1, 0.0)).is_err());
    }

    #[test]
    fn scale_recursion_examples() {
        let c = cfg(6, 11, 1, 0.12);
        assert_eq!(next_level(BmsLevel(1), 0, &c), BmsLevel(1));
        assert_eq!(next_level(BmsLevel(2), 1, &c), BmsLevel(8));
        assert_eq!(next_level(BmsLevel(10), 2, &c), BmsLevel(11));
        assert_eq!(next_level(BmsLevel(5), u64::MAX, &c), BmsLevel(11));
    }

    #[test]
    fn relativity_examples() {
        let c = cfg(6, 11, 1, 0.12);
        assert_eq!(relativity(BmsLevel(1), &c), 1.0);
        assert!((relativity(BmsLevel(11), &c) - 2.2).abs() < 1e-15);
        let ratio = relativity(BmsLevel(8), &c) / relativity(BmsLevel(2), &c);
        assert!((ratio - 1.84 / 1.12).abs() < 1e-12);
    }

    #[test]
    fn entry_and_paths() {
        let c = cfg(6, 11, 4, 0.12);
        assert_eq!(entry_level(0, &c), BmsLevel(4));
        assert_eq!(entry_level(9, &c), BmsLevel(1));
        assert_eq!(entry_level(7, &cfg(6, 11, 1, 0.1)), BmsLevel(1));
        let path = level_path(&[0, 1, 0], BmsLevel(3), &c);
        assert_eq!(path, vec![BmsLevel(3), BmsLevel(2), BmsLevel(8), BmsLevel(7)]);
        assert_eq!(level_path(&[], BmsLevel(3), &c), vec![BmsLevel(3)]);
        let back = level_path(&[0; 6], BmsLevel(8), &c);
        assert_eq!(back.last(), Some(&BmsLevel(2)));
    }

    #[test]
    fn initial_level_uses_prior_window() {
        let c = cfg(2, 6, 5, 0.1);
        // 3 unknown years from ℓ* = 5 → 2, then prior years oldest first:
        // by_year = [0, 1] means the claim was two years before entry.
        assert_eq!(initial_level(5, &[0, 1], &c), BmsLevel(3));
        assert_eq!(initial_level(0, &[], &c), BmsLevel(5));
    }

    #[test]
    fn loglik_hand_expansion() {
        let c = cfg(6, 11, 1, 0.12);
        let h = PolicyHistory::from_raw(&[0, 1, 0], &[0.1, 0.2, 0.15]).unwrap();
        let got = bms_loglik(&h, BmsLevel(3), &c, CountFamily::Poisson).unwrap();
        // counts are at most 1, so ln n! vanishes
        let pois = |n: f64, m: f64| n * m.ln() - m;
        let want = pois(0.0, 0.1 * 1.24) + pois(1.0, 0.2 * 1.12) + pois(0.0, 0.15 * 1.84);
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn transition_matrix_hand_example() {
        let c = cfg(1, 3, 1, 0.0);
        let p = transition_matrix(mp(0.1), &c, CountFamily::Poisson).unwrap();
        let e = (-0.1f64).exp();
        let row = p.row(BmsLevel(1));
        assert!((row[0] - e).abs() < 1e-15);
        assert!((row[1] - 0.1 * e).abs() < 1e-15);
        assert!((row[2] - (1.0 - 1.1 * e)).abs() < 1e-15);
        // From level 2 a single claim already reaches the top.
        let row = p.row(BmsLevel(2));
        assert_eq!(row[1], 0.0);
        assert!((row[0] - e).abs() < 1e-15);
        assert!((row[2] - (1.0 - e)).abs() < 1e-15);
        for s in p.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_power_basics() {
        let c = cfg(1, 3, 1, 0.2);
        let p = transition_matrix(mp(0.3), &c, CountFamily::Nb1(0.5)).unwrap();
        assert_eq!(matrix_power(&p, 0).matrix(), &SquareMatrix::identity(3));
        assert_eq!(matrix_power(&p, 1).matrix(), p.matrix());
        let p2 = matrix_power(&p, 2);
        let mut explicit = SquareMatrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| p.matrix().get(i, k) * p.matrix().get(k, j)).sum();
                explicit.set(i, j, v);
            }
        }
        assert!(p2.matrix().max_abs_diff(&explicit) < 1e-15);
        assert_eq!(p2.steps(), 2);
    }

    #[test]
    fn zero_slope_gives_zero_covariance() {
        let c = cfg(6, 11, 1, 0.0);
        for l in 1..=11 {
            for j in [1, 2, 7] {
                let v = bms_covariance(BmsLevel(l), mp(0.065), mp(0.065), j, &c, CountFamily::Nb1(0.062));
                assert_eq!(v.unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn first_lag_routes_agree() {
        let c = cfg(6, 11, 1, 0.12);
        let fam = CountFamily::Nb1(0.062);
        for l in [1, 3, 7, 11] {
            let a = bms_covariance(BmsLevel(l), mp(0.065), mp(0.065), 1, &c, fam).unwrap();
            let b = bms_covariance_first_lag(BmsLevel(l), mp(0.065), mp(0.065), &c, fam, 1e-14)
                .unwrap();
            assert!((a - b).abs() < 1e-10, "l={l}: {a} vs {b}");
        }
    }

    #[test]
    fn mixture_with_point_mass_equals_plain() {
        let c = cfg(2, 4, 2, 0.3);
        let h = PolicyHistory::from_raw(&[1, 0, 2], &[0.3, 0.4, 0.2]).unwrap();
        let fam = CountFamily::Nb2(0.4);
        let plain = bms_loglik(&h, BmsLevel(2), &c, fam).unwrap();
        let mix = bms_mixture_loglik(&h, &[0.0, 1.0, 0.0, 0.0], &c, fam).unwrap();
        assert!((plain - mix).abs() < 1e-14);
        assert!(bms_mixture_loglik(&h, &[0.5, 0.2, 0.0, 0.0], &c, fam).is_err());
    }
}
