//! Panel data: policyholders, their contracts and pre-entry claim records,
//! plus CSV I/O, splitting and a synthetic-portfolio simulator.

mod io;
mod simulate;
mod split;

pub use io::{load_csv, write_csv, CsvPaths, Loaded};
pub use simulate::{simulate, Latent, Simulated, SimulationSpec, TrueModel, TABLE2_CONTRACT_COUNTS};
pub use split::split;

use serde::{Deserialize, Serialize};

use crate::dist::MeanParam;
use crate::error::Result;
use crate::panel::{PolicyHistory, PriorClaims};

pub const N_COVARIATES: usize = 8;

/// One annual (or shorter) contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub period: u32,
    /// Fraction of a year at risk, in `(0, 1]`.
    pub exposure: f64,
    pub covariates: [u8; N_COVARIATES],
    pub claims: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policyholder {
    pub id: String,
    /// Ordered by consecutive period.
    pub contracts: Vec<Contract>,
    /// Claims per year before entry; `prior_claims[0]` is the year just
    /// before the first contract. At most 10 years.
    pub prior_claims: Vec<u64>,
    /// Driving experience at the first observed contract.
    pub experience_years: u32,
}

impl Policyholder {
    pub fn total_claims(&self) -> u64 {
        self.contracts.iter().map(|c| c.claims).sum()
    }

    pub fn prior(&self) -> PriorClaims {
        PriorClaims::from_years(self.prior_claims.clone())
            .expect("validated datasets hold at most ten prior years")
    }

    /// History with a-priori means computed by `mean_of`.
    pub fn history(&self, mean_of: impl Fn(&Contract) -> f64) -> Result<PolicyHistory<f64>> {
        let lambdas = self
            .contracts
            .iter()
            .map(|c| MeanParam::new(mean_of(c)))
            .collect::<Result<Vec<_>>>()?;
        let counts = self.contracts.iter().map(|c| c.claims).collect();
        Ok(PolicyHistory::new(counts, lambdas, self.prior())?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PanelDataset {
    pub policyholders: Vec<Policyholder>,
}

impl PanelDataset {
    pub fn new(policyholders: Vec<Policyholder>) -> Self {
        Self { policyholders }
    }

    pub fn len(&self) -> usize {
        self.policyholders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policyholders.is_empty()
    }

    pub fn n_contracts(&self) -> usize {
        self.policyholders.iter().map(|p| p.contracts.len()).sum()
    }

    pub fn total_claims(&self) -> u64 {
        self.policyholders.iter().map(|p| p.total_claims()).sum()
    }

    pub fn total_exposure(&self) -> f64 {
        self.contracts().map(|c| c.exposure).sum()
    }

    /// Claims per unit of exposure.
    pub fn mean_frequency(&self) -> f64 {
        let e = self.total_exposure();
        if e > 0.0 {
            self.total_claims() as f64 / e
        } else {
            0.0
        }
    }

    pub fn contracts(&self) -> impl Iterator<Item = &Contract> {
        self.policyholders.iter().flat_map(|p| p.contracts.iter())
    }
}
