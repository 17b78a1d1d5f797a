//! Claim-count models for longitudinal insurance portfolios.
//!
//! The crate covers the cross-section count laws (Poisson, NB1, NB2), the
//! static random-effect panels (MVNB with gamma effects, NBBeta with beta
//! effects), Harvey-Fernandes dynamic updating, and bonus-malus "claim score"
//! panels where a deterministic level process enters the likelihood.
//!
//! The closed-form modules are generic over [`Real`]; estimation, I/O and
//! scoring work in `f64`.

pub mod bms;
pub mod dist;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod hf;
pub mod panel;
pub mod portfolio;
pub mod sample;
pub mod scalar;
pub mod special;

pub use error::{DataIssue, Error, Result};
pub use scalar::Real;

pub type MeanParam64 = dist::MeanParam<f64>;
pub type MeanParam32 = dist::MeanParam<f32>;
pub type Dispersion64 = dist::Dispersion<f64>;
pub type Dispersion32 = dist::Dispersion<f32>;
pub type NbbShape64 = dist::NbbShape<f64>;
pub type NbbShape32 = dist::NbbShape<f32>;
pub type CountFamily64 = dist::CountFamily<f64>;
pub type CountFamily32 = dist::CountFamily<f32>;
pub type PolicyHistory64 = panel::PolicyHistory<f64>;
pub type PolicyHistory32 = panel::PolicyHistory<f32>;
pub type CredibilityState64 = panel::CredibilityState<f64>;
pub type CredibilityState32 = panel::CredibilityState<f32>;
pub type HfWeight64 = hf::HfWeight<f64>;
pub type HfWeight32 = hf::HfWeight<f32>;
pub type BmsConfig64 = bms::BmsConfig<f64>;
pub type BmsConfig32 = bms::BmsConfig<f32>;
pub type TransitionMatrix64 = bms::TransitionMatrix<f64>;
pub type TransitionMatrix32 = bms::TransitionMatrix<f32>;
