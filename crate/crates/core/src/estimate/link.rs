//! Log-linear regression link `λ = d · exp(x'β)`.

use serde::{Deserialize, Serialize};

use crate::dist::MeanParam;
use crate::error::{Error, Result};
use crate::portfolio::N_COVARIATES;

/// Intercept followed by one coefficient per binary covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegressionSpec {
    beta: Vec<f64>,
}

impl RegressionSpec {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.len() != N_COVARIATES + 1 {
            return Err(Error::Config(format!(
                "β needs {} entries (intercept + {N_COVARIATES} covariates), got {}",
                N_COVARIATES + 1,
                beta.len()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("β entries must be finite".into()));
        }
        Ok(Self { beta })
    }

    /// Intercept only, all slopes zero.
    pub fn intercept(beta0: f64) -> Self {
        let mut beta = vec![0.0; N_COVARIATES + 1];
        beta[0] = beta0;
        Self { beta }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.beta
    }

    /// `β₀ + Σ β_j x_j`.
    #[inline]
    pub fn eta(&self, covariates: &[u8; N_COVARIATES]) -> f64 {
        eta(&self.beta, covariates)
    }
}

#[inline]
pub(crate) fn eta(beta: &[f64], covariates: &[u8; N_COVARIATES]) -> f64 {
    let mut e = beta[0];
    for (b, &x) in beta[1..].iter().zip(covariates) {
        if x != 0 {
            e += b;
        }
    }
    e
}

/// `d · exp(β₀ + Σ β_j x_j)`.
pub fn link(covariates: &[u8; N_COVARIATES], exposure: f64, beta: &RegressionSpec) -> Result<MeanParam<f64>> {
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(Error::domain(format!("exposure must be positive, got {exposure}")));
    }
    MeanParam::new(exposure * beta.eta(covariates).exp())
}
