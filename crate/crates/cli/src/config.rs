//! Run configuration: TOML file, environment overrides, command-line flags.
//!
//! Precedence is flag > environment > file > default. The fully resolved
//! configuration is what the manifest records and what `replay` re-runs.

use std::path::{Path, PathBuf};

use anyhow::Context;
use claimscore::estimate::{BicBasis, BmsStructure, Family, FitOptions, GridSpec, RegressionSpec};
use claimscore::estimate::optimizer::BfgsOptions;
use claimscore::panel::DEFAULT_LAMBDA_BAR;
use claimscore::portfolio::{SimulationSpec, TrueModel, N_COVARIATES, TABLE2_CONTRACT_COUNTS};
use serde::{Deserialize, Serialize};

use crate::ConfigError;

pub const ENV_SEED: &str = "CLAIMSCORE_SEED";
pub const ENV_OUT: &str = "CLAIMSCORE_OUT";
pub const ENV_DATA: &str = "CLAIMSCORE_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub simulate: SimulateConfig,
    pub fit: FitConfig,
    pub grid: GridConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            simulate: SimulateConfig::default(),
            fit: FitConfig::default(),
            grid: GridConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

/// Input portfolio: a directory with `contracts.csv` and optional
/// `history.csv` / `experience.csv`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    /// Share of policyholders used for fitting; the rest is the validation
    /// set scored by `evaluate`. Absent means fit and score on everything.
    pub split: Option<f64>,
    /// Seed of the split; defaults to the run seed.
    pub split_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub policyholders: usize,
    pub model: TrueModel,
    pub beta: Vec<f64>,
    pub contract_counts: Vec<f64>,
    pub covariate_means: [f64; N_COVARIATES],
    pub exposure: f64,
    pub max_experience: u32,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let d = SimulationSpec::new(TrueModel::Poisson, RegressionSpec::intercept(-2.0), 1000, 0);
        Self {
            policyholders: d.policyholders,
            model: d.model,
            beta: d.beta.as_slice().to_vec(),
            contract_counts: TABLE2_CONTRACT_COUNTS.to_vec(),
            covariate_means: d.covariate_means,
            exposure: d.exposure,
            max_experience: d.max_experience,
        }
    }
}

impl SimulateConfig {
    pub fn spec(&self, seed: u64) -> anyhow::Result<SimulationSpec> {
        let mut s = SimulationSpec::new(self.model, RegressionSpec::new(self.beta.clone())?, self.policyholders, seed);
        s.contract_counts = self.contract_counts.clone();
        s.covariate_means = self.covariate_means;
        s.exposure = self.exposure;
        s.max_experience = self.max_experience;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub families: Vec<String>,
    /// Structure used for BMS families by `fit`.
    pub structure: Option<BmsStructure>,
    pub lambda_bar: f64,
    pub gtol: f64,
    pub ftol: f64,
    pub max_iter: usize,
    pub bic_basis: BicBasis,
    pub standard_errors: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        let b = BfgsOptions::default();
        Self {
            families: vec!["poisson".into()],
            structure: None,
            lambda_bar: DEFAULT_LAMBDA_BAR,
            gtol: b.gtol,
            ftol: b.ftol,
            max_iter: b.max_iter,
            bic_basis: BicBasis::Contracts,
            standard_errors: true,
        }
    }
}

impl FitConfig {
    pub fn families(&self) -> anyhow::Result<Vec<Family>> {
        if self.families.is_empty() {
            return Err(ConfigError("no model family requested".into()).into());
        }
        self.families
            .iter()
            .map(|f| f.parse::<Family>().map_err(|_| ConfigError(format!("unknown model family `{f}`")).into()))
            .collect()
    }

    pub fn options(&self) -> FitOptions {
        FitOptions {
            lambda_bar: self.lambda_bar,
            optimizer: BfgsOptions { gtol: self.gtol, ftol: self.ftol, max_iter: self.max_iter },
            parallel: true,
            standard_errors: self.standard_errors,
            bic_basis: self.bic_basis,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub spec: String,
    pub resume: bool,
    /// Rows of the ranked table printed and written as text.
    pub top: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { spec: "s=2..11,psi=1..s,entry=1..s".into(), resume: false, top: 4 }
    }
}

impl GridConfig {
    pub fn spec(&self) -> anyhow::Result<GridSpec> {
        Ok(self.spec.parse()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Fit result files to score.
    pub fits: Vec<PathBuf>,
    /// Largest lag of the covariance curves written for BMS fits.
    pub max_lag: u32,
    /// Annual frequency used for covariance curves; defaults to the mean
    /// a-priori frequency of the scored contracts.
    pub covariance_lambda: Option<f64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { fits: Vec::new(), max_lag: 10, covariance_lambda: None }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub families: Option<Vec<String>>,
    pub structure: Option<String>,
    pub grid: Option<String>,
    pub resume: bool,
    pub policyholders: Option<usize>,
    pub fits: Option<Vec<PathBuf>>,
    pub max_lag: Option<u32>,
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn parse_structure(text: &str) -> anyhow::Result<BmsStructure> {
    let g: GridSpec = text.parse()?;
    match g.points().as_slice() {
        [one] => Ok(*one),
        _ => Err(ConfigError(format!("structure `{text}` must name a single (s, psi, entry)")).into()),
    }
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        Ok(std::env::current_dir().context("reading the working directory")?.join(p))
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text)
                    .map_err(|e| ConfigError(format!("config {}: {e}", p.display())).into())
            }
        }
    }

    /// Applies environment and flag overrides, validates, and makes paths
    /// absolute.
    pub fn resolve(mut self, o: &Overrides) -> anyhow::Result<Self> {
        if let Some(v) = env_var(ENV_SEED) {
            self.seed = v.parse().map_err(|_| ConfigError(format!("{ENV_SEED}=`{v}` is not an integer")))?;
        }
        if let Some(v) = env_var(ENV_OUT) {
            self.out = v.into();
        }
        if let Some(v) = env_var(ENV_DATA) {
            self.data.dir = Some(v.into());
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = p.clone();
        }
        if let Some(p) = &o.data {
            self.data.dir = Some(p.clone());
        }
        if let Some(f) = &o.families {
            self.fit.families = f.clone();
        }
        if let Some(s) = &o.structure {
            self.fit.structure = Some(parse_structure(s)?);
        }
        if let Some(g) = &o.grid {
            self.grid.spec = g.clone();
        }
        if o.resume {
            self.grid.resume = true;
        }
        if let Some(m) = o.policyholders {
            self.simulate.policyholders = m;
        }
        if let Some(f) = &o.fits {
            self.evaluate.fits = f.clone();
        }
        if let Some(l) = o.max_lag {
            self.evaluate.max_lag = l;
        }

        self.out = absolute(&self.out)?;
        if let Some(d) = &self.data.dir {
            self.data.dir = Some(absolute(d)?);
        }
        self.evaluate.fits = self.evaluate.fits.iter().map(|p| absolute(p)).collect::<anyhow::Result<_>>()?;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if let Some(f) = self.data.split {
            if !(f > 0.0 && f <= 1.0) {
                return Err(ConfigError(format!("data.split must lie in (0, 1], got {f}")).into());
            }
        }
        self.fit.families()?;
        if let Some(st) = self.fit.structure {
            st.validate().map_err(|e| ConfigError(format!("fit.structure: {e}")))?;
        }
        if !(self.fit.lambda_bar > 0.0 && self.fit.lambda_bar.is_finite()) {
            return Err(ConfigError("fit.lambda_bar must be > 0".into()).into());
        }
        self.grid.spec()?;
        if self.evaluate.max_lag == 0 {
            return Err(ConfigError("evaluate.max_lag must be ≥ 1".into()).into());
        }
        Ok(())
    }

    pub fn data_dir(&self) -> anyhow::Result<&Path> {
        self.data
            .dir
            .as_deref()
            .ok_or_else(|| ConfigError(format!("no input data: set data.dir, --data or {ENV_DATA}")).into())
    }

    pub fn split_seed(&self) -> u64 {
        self.data.split_seed.unwrap_or(self.seed)
    }
}
