//! Maximum-likelihood fits and their serialisable summaries.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::DEFAULT_LAMBDA_BAR;
use crate::portfolio::{PanelDataset, N_COVARIATES};

use super::family::{BmsStructure, Conditional, Family, PanelKind, Params};
use super::objective::{Likelihood, Prepared};
use super::optimizer::{bfgs, BfgsOptions, Objective, Termination};

/// Version of the JSON layout written by [`FitResult::to_json`].
pub const FIT_SCHEMA_VERSION: u32 = 1;

/// Observation count entering BIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BicBasis {
    #[default]
    Contracts,
    Policyholders,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Mean frequency assumed for pre-entry years in starred models.
    pub lambda_bar: f64,
    pub optimizer: BfgsOptions,
    /// Spread likelihood sums over the rayon pool.
    pub parallel: bool,
    pub standard_errors: bool,
    pub bic_basis: BicBasis,
    /// Natural-scale starting point; replaces the default start values.
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lambda_bar: DEFAULT_LAMBDA_BAR,
            optimizer: BfgsOptions::default(),
            parallel: true,
            standard_errors: true,
            bic_basis: BicBasis::Contracts,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub name: String,
    pub value: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub schema_version: u32,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<BmsStructure>,
    pub parameters: Vec<ParameterEstimate>,
    /// Optimiser coordinates (unconstrained scale).
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_params: usize,
    pub n_policyholders: usize,
    pub n_contracts: usize,
    pub bic_basis: BicBasis,
    pub lambda_bar: f64,
    pub converged: bool,
    pub iterations: usize,
    /// ∞-norm of the gradient of the mean per-contract negative loglik.
    pub gradient_norm: f64,
    pub diagnostics: Vec<String>,
}

impl FitResult {
    /// A model with given natural-scale parameters, for premiums and
    /// scoring without estimation. Fit statistics are zero.
    pub fn with_parameters(
        family: Family,
        structure: Option<BmsStructure>,
        natural: &[f64],
        lambda_bar: f64,
    ) -> Result<Self> {
        if family.is_bms() != structure.is_some() {
            return Err(Error::Config("structure must be given exactly for BMS families".into()));
        }
        if let Some(st) = structure {
            st.validate()?;
        }
        let theta = family.encode(natural)?;
        let parameters = family
            .parameter_names()
            .into_iter()
            .zip(family.natural(&theta))
            .map(|(name, value)| ParameterEstimate { name, value, std_error: None })
            .collect();
        Ok(FitResult {
            schema_version: FIT_SCHEMA_VERSION,
            family,
            structure,
            parameters,
            theta,
            loglik: 0.0,
            aic: 0.0,
            bic: 0.0,
            n_params: family.n_params(),
            n_policyholders: 0,
            n_contracts: 0,
            bic_basis: BicBasis::Contracts,
            lambda_bar,
            converged: false,
            iterations: 0,
            gradient_norm: 0.0,
            diagnostics: vec!["parameters supplied, not estimated".into()],
        })
    }

    pub fn params(&self) -> Params {
        self.family.decode(&self.theta)
    }

    pub fn get(&self, name: &str) -> Option<&ParameterEstimate> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn beta(&self) -> Vec<f64> {
        self.parameters[..=N_COVARIATES].iter().map(|p| p.value).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: FitResult = serde_json::from_str(s)?;
        if r.schema_version != FIT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "fit result schema {} is not supported (expected {FIT_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        if r.theta.len() != r.family.dim() {
            return Err(Error::Config(format!(
                "fit result for {} carries {} coordinates",
                r.family,
                r.theta.len()
            )));
        }
        if r.family.is_bms() != r.structure.is_some() {
            return Err(Error::Config("structure must be present exactly for BMS families".into()));
        }
        Ok(r)
    }
}

/// Information criteria from a loglik, a parameter count and an observation count.
pub fn information_criteria(loglik: f64, k: usize, n_obs: usize) -> (f64, f64) {
    let k = k as f64;
    (2.0 * k - 2.0 * loglik, k * (n_obs as f64).ln() - 2.0 * loglik)
}

/// Mean per-contract negative loglik, the quantity actually minimised.
struct MeanNegLoglik<'a> {
    lik: &'a Likelihood<'a>,
    scale: f64,
}

impl<'a> MeanNegLoglik<'a> {
    fn new(lik: &'a Likelihood<'a>) -> Self {
        Self { lik, scale: 1.0 / lik.data().n_contracts().max(1) as f64 }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = -self.lik.loglik(x) * self.scale;
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

impl Objective for MeanNegLoglik<'_> {
    fn dim(&self) -> usize {
        self.lik.family().dim()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        if self.lik.has_analytic_gradient() {
            let v = -self.lik.loglik_grad(x, grad) * self.scale;
            grad.iter_mut().for_each(|g| *g *= -self.scale);
            return if v.is_finite() { v } else { f64::INFINITY };
        }
        let f0 = self.value(x);
        if !f0.is_finite() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::INFINITY;
        }
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = f64::EPSILON.cbrt() * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let up = self.value(&xp);
            xp[i] = x[i] - h;
            let down = self.value(&xp);
            xp[i] = x[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return f64::INFINITY;
        }
        f0
    }
}

/// Dispersion used when an NB fit collapses onto the Poisson model.
const TAU_FLOOR: f64 = 1e-10;

/// Default natural-scale start for `family`, given Poisson regression
/// coefficients.
fn default_start(family: Family, beta: &[f64]) -> Vec<f64> {
    let mut v = beta.to_vec();
    match family {
        Family::Cross(c) => {
            if c != Conditional::Poisson {
                v.push(0.5);
            }
        }
        Family::Panel { kind, hf, .. } => {
            match kind {
                PanelKind::Mvnb => v.push(0.5),
                PanelKind::Nbbeta => {
                    let (a, b) = (10.0, 0.5);
                    // Keeps the marginal mean λ·b/(a−1) at the Poisson level.
                    v[0] -= (b / (a - 1.0_f64)).ln();
                    v.extend([a, b]);
                }
            }
            if hf {
                v.push(0.95);
            }
        }
        Family::Bms(c) => {
            v.push(0.1);
            if c != Conditional::Poisson {
                v.push(0.5);
            }
        }
    }
    v
}

/// Poisson regression start: intercept at the log of the overall frequency.
fn poisson_start(data: &Prepared) -> Vec<f64> {
    let mut beta = vec![0.0; N_COVARIATES + 1];
    let claims = data.total_claims().max(1) as f64;
    beta[0] = (claims / data.total_exposure()).ln();
    beta
}

/// Fits `family` to `dataset`. Bonus-malus families need `structure`.
pub fn fit(
    dataset: &PanelDataset,
    family: Family,
    structure: Option<BmsStructure>,
    options: &FitOptions,
) -> Result<FitResult> {
    let data = Prepared::new(dataset);
    fit_prepared(&data, family, structure, options)
}

pub(crate) fn fit_prepared(
    data: &Prepared,
    family: Family,
    structure: Option<BmsStructure>,
    options: &FitOptions,
) -> Result<FitResult> {
    if data.n_contracts() == 0 {
        return Err(Error::Config("cannot fit an empty dataset".into()));
    }
    if !family.is_bms() && structure.is_some() {
        return Err(Error::Config(format!("{family} takes no BMS structure")));
    }
    let mut poisson = None;
    let start = match &options.start {
        Some(s) => family.encode(s)?,
        None => {
            let beta = if family == Family::Cross(Conditional::Poisson) {
                poisson_start(data)
            } else {
                let p = fit_prepared(
                    data,
                    Family::Cross(Conditional::Poisson),
                    None,
                    &FitOptions { standard_errors: false, start: None, ..options.clone() },
                )?;
                let beta = p.beta();
                poisson = Some(p);
                beta
            };
            family.encode(&default_start(family, &beta))?
        }
    };
    let lik = Likelihood::new(family, data, structure, options.lambda_bar, options.parallel)?;
    let objective = MeanNegLoglik::new(&lik);
    let mut min = bfgs(&objective, &start, options.optimizer);
    let mut loglik = lik.loglik(&min.x);
    let mut diagnostics = Vec::new();

    // An NB optimum at τ → 0 is approached only asymptotically; fall back to
    // the nested Poisson point when it is at least as good.
    if let (Family::Cross(Conditional::Nb1 | Conditional::Nb2), Some(p)) = (family, &poisson) {
        if loglik < p.loglik {
            let mut x = p.theta.clone();
            x.push(TAU_FLOOR.ln());
            let ll = lik.loglik(&x);
            if ll > loglik {
                let mut g = vec![0.0; x.len()];
                objective.value_grad(&x, &mut g);
                let grad_ok = g.iter().all(|v| v.abs() < options.optimizer.gtol);
                min.termination = if grad_ok { Termination::Gradient } else { min.termination };
                min.x = x;
                min.grad = g;
                loglik = ll;
                diagnostics.push(format!("tau at its lower bound {TAU_FLOOR:e}; data show no overdispersion"));
            }
        }
    }
    if !loglik.is_finite() {
        return Err(Error::Numeric(format!("{family}: loglik not finite at the optimum")));
    }

    match min.termination {
        Termination::Gradient => {}
        Termination::Function => diagnostics.push(format!(
            "loglik stalled with gradient norm {:.3e} above tolerance {:.1e}",
            min.grad_norm(),
            options.optimizer.gtol
        )),
        Termination::MaxIter => {
            diagnostics.push(format!("iteration limit {} reached", options.optimizer.max_iter))
        }
        Termination::LineSearch => diagnostics.push("line search failed".into()),
    }

    let natural = family.natural(&min.x);
    let std_errors = if options.standard_errors {
        match standard_errors(&objective, &min.x, data.n_contracts(), family) {
            Ok(se) => Some(se),
            Err(msg) => {
                diagnostics.push(msg);
                None
            }
        }
    } else {
        None
    };

    let parameters = family
        .parameter_names()
        .into_iter()
        .enumerate()
        .map(|(i, name)| ParameterEstimate {
            name,
            value: natural[i],
            std_error: std_errors.as_ref().map(|s| s[i]),
        })
        .collect();
    let k = family.n_params();
    let n_obs = match options.bic_basis {
        BicBasis::Contracts => data.n_contracts(),
        BicBasis::Policyholders => data.n_policyholders(),
    };
    let (aic, bic) = information_criteria(loglik, k, n_obs);
    Ok(FitResult {
        schema_version: FIT_SCHEMA_VERSION,
        family,
        structure,
        parameters,
        theta: min.x.clone(),
        loglik,
        aic,
        bic,
        n_params: k,
        n_policyholders: data.n_policyholders(),
        n_contracts: data.n_contracts(),
        bic_basis: options.bic_basis,
        lambda_bar: options.lambda_bar,
        converged: min.converged(),
        iterations: min.iterations,
        gradient_norm: min.grad_norm(),
        diagnostics,
    })
}

/// Natural-scale standard errors from the observed information of the total
/// loglik, numerically differentiated from the gradient.
fn standard_errors(
    f: &MeanNegLoglik<'_>,
    x: &[f64],
    n_contracts: usize,
    family: Family,
) -> std::result::Result<Vec<f64>, String> {
    let n = x.len();
    let mut hess = DMatrix::<f64>::zeros(n, n);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        let h = f64::EPSILON.powf(0.25) * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let vp = f.value_grad(&xp, &mut gp);
        xp[j] = x[j] - h;
        let vm = f.value_grad(&xp, &mut gm);
        xp[j] = x[j];
        if !(vp.is_finite() && vm.is_finite()) {
            return Err(format!("information not computable: infeasible step in {}", family.parameter_names()[j]));
        }
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let info = (&hess + hess.transpose()) * (0.5 * n_contracts as f64);
    let chol = info
        .cholesky()
        .ok_or_else(|| "observed information is singular or indefinite; standard errors omitted".to_string())?;
    let cov = chol.inverse();
    let jac = DVector::from_vec(family.jacobian_diag(x));
    (0..n)
        .map(|i| {
            let v = cov[(i, i)];
            if v.is_finite() && v > 0.0 {
                Ok(jac[i].abs() * v.sqrt())
            } else {
                Err("observed information is singular; standard errors omitted".to_string())
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn information_criteria_identities() {
        let (aic, bic) = information_criteria(-100.0, 9, 1000);
        assert_eq!(aic, 2.0 * 9.0 + 200.0);
        assert_eq!(bic, 9.0 * 1000f64.ln() + 200.0);
    }

    #[test]
    fn nbbeta_start_keeps_the_mean() {
        let f: Family = "nbbeta".parse().unwrap();
        let s = default_start(f, &[-2.0; 9]);
        let mean = s[0].exp() * s[10] / (s[9] - 1.0);
        assert!((mean - (-2.0f64).exp()).abs() < 1e-12);
    }
}
