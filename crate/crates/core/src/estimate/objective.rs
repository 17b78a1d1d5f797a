//! Log-likelihood of a whole portfolio as a function of the unconstrained
//! parameter vector.
//!
//! Sums run over fixed chunks of policyholders; chunk partials are combined
//! in order, so results do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::bms::{initial_level, next_level, BmsLevel};
use crate::dist::MeanParam;
use crate::error::Result;
use crate::hf::{hf_prior_update, hf_step, HfState, HfWeight};
use crate::panel::{mvnb_prior_update, nbbeta_prior_update, CredibilityState, MixingLaw, MvnbParams};
use crate::portfolio::{PanelDataset, N_COVARIATES};
use crate::special::{ln_factorial, ln_rising};

use super::family::{BmsStructure, Conditional, Family, PanelKind, Params};
use super::link::eta;

const CHUNK: usize = 2048;

/// Flattened, immutable view of a dataset for repeated likelihood calls.
#[derive(Debug, Clone)]
pub struct Prepared {
    holders: Vec<Holder>,
    counts: Vec<u64>,
    covariates: Vec<[u8; N_COVARIATES]>,
    ln_exposure: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Holder {
    start: usize,
    len: usize,
    prior: Vec<u64>,
    prior_total: u64,
    experience: u32,
}

impl Prepared {
    pub fn new(dataset: &PanelDataset) -> Self {
        let mut p = Prepared {
            holders: Vec::with_capacity(dataset.len()),
            counts: Vec::new(),
            covariates: Vec::new(),
            ln_exposure: Vec::new(),
        };
        for h in &dataset.policyholders {
            p.holders.push(Holder {
                start: p.counts.len(),
                len: h.contracts.len(),
                prior: h.prior_claims.clone(),
                prior_total: h.prior_claims.iter().sum(),
                experience: h.experience_years,
            });
            for c in &h.contracts {
                p.counts.push(c.claims);
                p.covariates.push(c.covariates);
                p.ln_exposure.push(c.exposure.ln());
            }
        }
        p
    }

    pub fn n_contracts(&self) -> usize {
        self.counts.len()
    }

    pub fn n_policyholders(&self) -> usize {
        self.holders.len()
    }

    pub fn total_claims(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.ln_exposure.iter().map(|l| l.exp()).sum()
    }

    /// Level before every contract under `structure`.
    pub fn levels(&self, structure: BmsStructure) -> Result<Vec<u32>> {
        let cfg = structure.config(0.0)?;
        let mut out = vec![0u32; self.counts.len()];
        for h in &self.holders {
            let mut l: BmsLevel = initial_level(h.experience, &h.prior, &cfg);
            for k in h.start..h.start + h.len {
                out[k] = l.get();
                l = next_level(l, self.counts[k], &cfg);
            }
        }
        Ok(out)
    }
}

/// Log-likelihood and scores of one count under a cross-section law.
/// Returns `(ℓ, ∂ℓ/∂ln μ, ∂ℓ/∂ln τ)`.
#[inline]
pub(crate) fn conditional_terms(c: Conditional, n: u64, mu: f64, tau: f64) -> (f64, f64, f64) {
    let nf = n as f64;
    match c {
        Conditional::Poisson => {
            let ll = if n == 0 { -mu } else { nf * mu.ln() - mu - ln_factorial::<f64>(n) };
            (ll, nf - mu, 0.0)
        }
        Conditional::Nb2 => {
            let r = tau.recip();
            let tm = tau * mu;
            let l1p = tm.ln_1p();
            let s = digamma_diff(r, n);
            let ll = if n == 0 {
                -r * l1p
            } else {
                ln_rising(r, n) - ln_factorial::<f64>(n) + nf * tm.ln() - (nf + r) * l1p
            };
            let d_mu = (nf - mu) / (1.0 + tm);
            let d_tau = -(s - l1p) / tau + nf - (nf + r) * tm / (1.0 + tm);
            (ll, d_mu, d_tau)
        }
        Conditional::Nb1 => {
            let r = mu / tau;
            let lt = tau.ln_1p();
            let s = digamma_diff(r, n);
            let ll = if n == 0 {
                -r * lt
            } else {
                ln_rising(r, n) - ln_factorial::<f64>(n) - r * lt - nf * tau.recip().ln_1p()
            };
            let d_mu = r * (s - lt);
            let d_tau = -r * (s - lt) - r * tau / (1.0 + tau) + nf / (1.0 + tau);
            (ll, d_mu, d_tau)
        }
    }
}

/// `ψ(r + n) − ψ(r) = Σ_{k<n} 1/(r + k)`.
#[inline]
fn digamma_diff(r: f64, n: u64) -> f64 {
    (0..n).map(|k| 1.0 / (r + k as f64)).sum()
}

/// Portfolio log-likelihood of one family (at a fixed BMS structure when the
/// family is bonus-malus).
pub struct Likelihood<'a> {
    family: Family,
    data: &'a Prepared,
    levels: Option<Vec<u32>>,
    lambda_bar: f64,
    parallel: bool,
}

impl<'a> Likelihood<'a> {
    pub fn new(
        family: Family,
        data: &'a Prepared,
        structure: Option<BmsStructure>,
        lambda_bar: f64,
        parallel: bool,
    ) -> Result<Self> {
        let levels = match (family.is_bms(), structure) {
            (true, Some(s)) => Some(data.levels(s)?),
            (true, None) => {
                return Err(crate::Error::Config(format!(
                    "{family} needs a structure (s, psi, entry)"
                )))
            }
            (false, _) => None,
        };
        MeanParam::new(lambda_bar)?;
        Ok(Self { family, data, levels, lambda_bar, parallel })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn data(&self) -> &Prepared {
        self.data
    }

    pub fn has_analytic_gradient(&self) -> bool {
        !matches!(self.family, Family::Panel { .. })
    }

    /// Sums `f(chunk)` over fixed policyholder chunks in chunk order.
    fn reduce<R: Send, F>(&self, f: F, mut fold: impl FnMut(R))
    where
        F: Fn(&[Holder]) -> R + Sync + Send,
    {
        let chunks: Vec<&[Holder]> = self.data.holders.chunks(CHUNK).collect();
        let parts: Vec<R> = if self.parallel {
            chunks.par_iter().map(|c| f(c)).collect()
        } else {
            chunks.iter().map(|c| f(c)).collect()
        };
        for p in parts {
            fold(p);
        }
    }

    /// Total log-likelihood.
    pub fn loglik(&self, theta: &[f64]) -> f64 {
        let p = self.family.decode(theta);
        let mut total = 0.0;
        self.reduce(|hs| hs.iter().map(|h| self.holder_loglik(&p, h)).sum::<f64>(), |x| total += x);
        total
    }

    /// Per-policyholder log-likelihoods, in dataset order.
    pub fn per_holder(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.family.decode(theta);
        let mut out = Vec::with_capacity(self.data.holders.len());
        self.reduce(
            |hs| hs.iter().map(|h| self.holder_loglik(&p, h)).collect::<Vec<f64>>(),
            |v| out.extend(v),
        );
        out
    }

    /// Total log-likelihood and its analytic gradient w.r.t. θ. Only for
    /// cross-section and bonus-malus families.
    pub fn loglik_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        assert!(self.has_analytic_gradient(), "panel families use numeric gradients");
        let p = self.family.decode(theta);
        let dim = theta.len();
        let mut total = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.reduce(
            |hs| {
                let mut g = vec![0.0; dim];
                let ll: f64 = hs.iter().map(|h| self.holder_terms(&p, h, &mut g)).sum();
                (ll, g)
            },
            |(ll, g)| {
                total += ll;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            },
        );
        total
    }

    fn ln_mu(&self, beta: &[f64], k: usize) -> f64 {
        eta(beta, &self.data.covariates[k]) + self.data.ln_exposure[k]
    }

    fn holder_terms(&self, p: &Params, h: &Holder, g: &mut [f64]) -> f64 {
        let nb = N_COVARIATES + 1;
        let (cond, bms) = match self.family {
            Family::Cross(c) => (c, false),
            Family::Bms(c) => (c, true),
            Family::Panel { .. } => unreachable!(),
        };
        let tau = p.tau.unwrap_or(0.0);
        let delta = p.delta.unwrap_or(0.0);
        let mut ll = 0.0;
        for k in h.start..h.start + h.len {
            let mut ln_mu = self.ln_mu(&p.beta, k);
            let mut rel_share = 0.0;
            if bms {
                let steps = (self.levels.as_ref().expect("levels")[k] - 1) as f64;
                let r = 1.0 + delta * steps;
                ln_mu += r.ln();
                rel_share = delta * steps / r;
            }
            let (l, d_mu, d_tau) = conditional_terms(cond, self.data.counts[k], ln_mu.exp(), tau);
            ll += l;
            g[0] += d_mu;
            for (j, &x) in self.data.covariates[k].iter().enumerate() {
                if x != 0 {
                    g[1 + j] += d_mu;
                }
            }
            let mut idx = nb;
            if bms {
                g[idx] += d_mu * rel_share;
                idx += 1;
            }
            if cond != Conditional::Poisson {
                g[idx] += d_tau;
            }
        }
        ll
    }

    fn holder_loglik(&self, p: &Params, h: &Holder) -> f64 {
        match self.family {
            Family::Cross(_) | Family::Bms(_) => {
                let mut scratch = vec![0.0; self.family.dim()];
                self.holder_terms(p, h, &mut scratch)
            }
            Family::Panel { kind, hf, star } => self.panel_loglik(p, h, kind, hf, star),
        }
    }

    fn panel_loglik(&self, p: &Params, h: &Holder, kind: PanelKind, hf: bool, star: bool) -> f64 {
        let (law, base) = match kind {
            PanelKind::Mvnb => {
                let k = p.kappa.expect("kappa");
                (MixingLaw::Gamma, CredibilityState::new_unchecked(k, k))
            }
            PanelKind::Nbbeta => {
                (MixingLaw::Beta, CredibilityState::new_unchecked(p.a.expect("a"), p.b.expect("b")))
            }
        };
        let nu = if hf { p.nu.expect("nu") } else { 1.0 };
        let Ok(weight) = HfWeight::new(nu) else { return f64::NAN };
        let lambda_bar = MeanParam::new(self.lambda_bar).expect("checked at construction");
        let init = if !star {
            base
        } else if hf {
            match hf_prior_update(law, base, &h.prior, lambda_bar, weight) {
                Ok(s) => s,
                Err(_) => return f64::NAN,
            }
        } else {
            let m = h.prior.len();
            match kind {
                PanelKind::Mvnb => mvnb_prior_update(
                    MvnbParams::new(base.alpha()).expect("positive"),
                    m,
                    h.prior_total,
                    lambda_bar,
                ),
                PanelKind::Nbbeta => nbbeta_prior_update(base.into(), m, h.prior_total, lambda_bar),
            }
        };
        let mut state = HfState::start(init);
        let mut ll = 0.0;
        for k in h.start..h.start + h.len {
            let Ok(mu) = MeanParam::new(self.ln_mu(&p.beta, k).exp()) else { return f64::NAN };
            let n = self.data.counts[k];
            ll += law.ln_predictive(state.state, n, mu);
            state = hf_step(law, state, n, mu.value(), weight);
        }
        ll
    }
}
