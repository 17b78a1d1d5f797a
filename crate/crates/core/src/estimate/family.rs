//! Model families, their parameter vectors and transforms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bms::BmsConfig;
use crate::dist::CountFamily;
use crate::error::{Error, Result};
use crate::portfolio::N_COVARIATES;

/// Conditional law of the cross-section and bonus-malus families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditional {
    Poisson,
    Nb1,
    Nb2,
}

impl Conditional {
    pub fn with_tau(self, tau: Option<f64>) -> CountFamily<f64> {
        match (self, tau) {
            (Conditional::Poisson, _) => CountFamily::Poisson,
            (Conditional::Nb1, Some(t)) => CountFamily::Nb1(t),
            (Conditional::Nb2, Some(t)) => CountFamily::Nb2(t),
            (_, None) => panic!("negative binomial conditional needs a dispersion"),
        }
    }

    fn has_tau(self) -> bool {
        self != Conditional::Poisson
    }

    fn name(self) -> &'static str {
        match self {
            Conditional::Poisson => "poisson",
            Conditional::Nb1 => "nb1",
            Conditional::Nb2 => "nb2",
        }
    }
}

/// Random-effect panel kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanelKind {
    Mvnb,
    Nbbeta,
}

/// Every model the engine can fit. Bonus-malus structures are given
/// separately as a [`BmsStructure`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Cross(Conditional),
    /// Static (`hf = false`) or Harvey-Fernandes random-effect panel;
    /// `star` folds the pre-entry record into the starting state.
    Panel { kind: PanelKind, hf: bool, star: bool },
    Bms(Conditional),
}

impl Family {
    pub const ALL: [&'static str; 14] = [
        "poisson", "nb1", "nb2", "mvnb", "nbbeta", "hf-mvnb", "hf-nbbeta", "mvnb*", "nbbeta*",
        "hf-mvnb*", "hf-nbbeta*", "bms-poisson", "bms-nb1", "bms-nb2",
    ];

    pub fn name(&self) -> String {
        match *self {
            Family::Cross(c) => c.name().to_string(),
            Family::Panel { kind, hf, star } => {
                let base = match kind {
                    PanelKind::Mvnb => "mvnb",
                    PanelKind::Nbbeta => "nbbeta",
                };
                format!("{}{base}{}", if hf { "hf-" } else { "" }, if star { "*" } else { "" })
            }
            Family::Bms(c) => format!("bms-{}", c.name()),
        }
    }

    pub fn is_bms(&self) -> bool {
        matches!(self, Family::Bms(_))
    }

    pub fn is_starred(&self) -> bool {
        matches!(self, Family::Panel { star: true, .. })
    }

    /// Names of the non-regression parameters, in vector order.
    pub fn extra_names(&self) -> Vec<&'static str> {
        match *self {
            Family::Cross(c) => {
                if c.has_tau() {
                    vec!["tau"]
                } else {
                    vec![]
                }
            }
            Family::Panel { kind, hf, .. } => {
                let mut v = match kind {
                    PanelKind::Mvnb => vec!["kappa"],
                    PanelKind::Nbbeta => vec!["a", "b"],
                };
                if hf {
                    v.push("nu");
                }
                v
            }
            Family::Bms(c) => {
                let mut v = vec!["delta"];
                if c.has_tau() {
                    v.push("tau");
                }
                v
            }
        }
    }

    /// Estimated parameters: β plus the family extras.
    pub fn dim(&self) -> usize {
        N_COVARIATES + 1 + self.extra_names().len()
    }

    /// Parameter count used in AIC/BIC. Bonus-malus models also count their
    /// three structural parameters.
    pub fn n_params(&self) -> usize {
        self.dim() + if self.is_bms() { 3 } else { 0 }
    }

    pub fn parameter_names(&self) -> Vec<String> {
        (0..=N_COVARIATES)
            .map(|j| format!("beta{j}"))
            .chain(self.extra_names().into_iter().map(String::from))
            .collect()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let raw = s.trim().to_ascii_lowercase();
        let (body, star) = match raw.strip_suffix('*').or_else(|| raw.strip_suffix("-star")) {
            Some(b) => (b.to_string(), true),
            None => (raw.clone(), false),
        };
        let (body, hf) = match body.strip_prefix("hf-") {
            Some(b) => (b.to_string(), true),
            None => (body, false),
        };
        let kind = match body.as_str() {
            "mvnb" => Some(PanelKind::Mvnb),
            "nbbeta" | "nbb" => Some(PanelKind::Nbbeta),
            _ => None,
        };
        if let Some(kind) = kind {
            return Ok(Family::Panel { kind, hf, star });
        }
        if hf || star {
            return Err(Error::Config(format!("unknown model family `{s}`")));
        }
        let cond = |name: &str| match name {
            "poisson" => Some(Conditional::Poisson),
            "nb1" => Some(Conditional::Nb1),
            "nb2" => Some(Conditional::Nb2),
            _ => None,
        };
        if let Some(c) = cond(&body) {
            return Ok(Family::Cross(c));
        }
        if let Some(c) = body.strip_prefix("bms-").and_then(cond) {
            return Ok(Family::Bms(c));
        }
        Err(Error::Config(format!("unknown model family `{s}`")))
    }
}

impl Serialize for Family {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Family {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Structural triple of a bonus-malus scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BmsStructure {
    pub s: u32,
    pub psi: u32,
    pub entry: u32,
}

impl BmsStructure {
    pub fn config(&self, delta: f64) -> Result<BmsConfig<f64>> {
        BmsConfig::new(self.psi, self.s, self.entry, delta)
    }

    pub fn validate(&self) -> Result<()> {
        self.config(0.0).map(|_| ())
    }
}

impl fmt::Display for BmsStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s={} psi={} entry={}", self.s, self.psi, self.entry)
    }
}

/// Natural-scale parameters decoded from an unconstrained vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub beta: Vec<f64>,
    pub tau: Option<f64>,
    pub kappa: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub nu: Option<f64>,
    pub delta: Option<f64>,
}

/// Lower bound of the beta shape `a`; keeps the NBB variance finite.
pub const A_OFFSET: f64 = 2.0;

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One scalar transform: natural value and its derivative w.r.t. θ.
fn forward(name: &str, theta: f64) -> (f64, f64) {
    match name {
        "a" => {
            let e = theta.exp();
            (A_OFFSET + e, e)
        }
        "nu" => {
            let v = logistic(theta);
            (v, v * (1.0 - v))
        }
        n if n.starts_with("beta") => (theta, 1.0),
        _ => {
            let e = theta.exp();
            (e, e)
        }
    }
}

fn inverse(name: &str, value: f64) -> Result<f64> {
    let bad = || Error::Config(format!("parameter {name} = {value} outside its domain"));
    match name {
        "a" => {
            if value > A_OFFSET {
                Ok((value - A_OFFSET).ln())
            } else {
                Err(bad())
            }
        }
        "nu" => {
            if value > 0.0 && value < 1.0 {
                Ok((value / (1.0 - value)).ln())
            } else if value == 1.0 {
                // Boundary of the logistic; any large θ is numerically 1.
                Ok(40.0)
            } else {
                Err(bad())
            }
        }
        n if n.starts_with("beta") => Ok(value),
        _ => {
            if value > 0.0 {
                Ok(value.ln())
            } else {
                Err(bad())
            }
        }
    }
}

impl Family {
    /// Decodes an unconstrained vector.
    pub fn decode(&self, theta: &[f64]) -> Params {
        let nb = N_COVARIATES + 1;
        let mut p = Params {
            beta: theta[..nb].to_vec(),
            tau: None,
            kappa: None,
            a: None,
            b: None,
            nu: None,
            delta: None,
        };
        for (name, &t) in self.extra_names().iter().zip(&theta[nb..]) {
            let v = forward(name, t).0;
            match *name {
                "tau" => p.tau = Some(v),
                "kappa" => p.kappa = Some(v),
                "a" => p.a = Some(v),
                "b" => p.b = Some(v),
                "nu" => p.nu = Some(v),
                "delta" => p.delta = Some(v),
                _ => unreachable!(),
            }
        }
        p
    }

    /// Natural-scale values in vector order.
    pub fn natural(&self, theta: &[f64]) -> Vec<f64> {
        self.parameter_names().iter().zip(theta).map(|(n, &t)| forward(n, t).0).collect()
    }

    /// `d natural / d θ` for each coordinate (the transforms are separable).
    pub fn jacobian_diag(&self, theta: &[f64]) -> Vec<f64> {
        self.parameter_names().iter().zip(theta).map(|(n, &t)| forward(n, t).1).collect()
    }

    /// Unconstrained vector from natural-scale values.
    pub fn encode(&self, natural: &[f64]) -> Result<Vec<f64>> {
        if natural.len() != self.dim() {
            return Err(Error::Config(format!(
                "{} needs {} parameters, got {}",
                self.name(),
                self.dim(),
                natural.len()
            )));
        }
        self.parameter_names().iter().zip(natural).map(|(n, &v)| inverse(n, v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in Family::ALL {
            let f: Family = name.parse().unwrap();
            assert_eq!(f.name(), name);
        }
        assert_eq!("nbb".parse::<Family>().unwrap().name(), "nbbeta");
        assert_eq!("hf-nbb-star".parse::<Family>().unwrap().name(), "hf-nbbeta*");
        assert!("gamma".parse::<Family>().is_err());
        assert!("hf-poisson".parse::<Family>().is_err());
    }

    #[test]
    fn parameter_counts_follow_the_reference_accounting() {
        let k = |s: &str| s.parse::<Family>().unwrap().n_params();
        assert_eq!(k("poisson"), 9);
        assert_eq!(k("nb1"), 10);
        assert_eq!(k("nb2"), 10);
        assert_eq!(k("mvnb"), 10);
        assert_eq!(k("nbbeta"), 11);
        assert_eq!(k("hf-mvnb"), 11);
        assert_eq!(k("hf-nbbeta*"), 12);
        assert_eq!(k("bms-poisson"), 13);
        assert_eq!(k("bms-nb1"), 14);
    }

    #[test]
    fn transforms_invert() {
        let f: Family = "hf-nbbeta".parse().unwrap();
        let mut natural = vec![0.1; 9];
        natural.extend([264.818, 5.5, 0.9]);
        let theta = f.encode(&natural).unwrap();
        let back = f.natural(&theta);
        for (x, y) in natural.iter().zip(&back) {
            assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
        }
        let p = f.decode(&theta);
        assert!((p.nu.unwrap() - 0.9).abs() < 1e-14);
        assert!(f.encode(&[0.0; 3]).is_err());
        let mut bad = natural.clone();
        bad[9] = 1.5;
        assert!(f.encode(&bad).is_err());
    }
}
