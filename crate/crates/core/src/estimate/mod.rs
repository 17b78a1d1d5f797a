//! Maximum-likelihood estimation over all model families.

mod family;
mod fit;
mod grid;
mod link;
mod objective;
pub mod optimizer;

pub use family::{BmsStructure, Conditional, Family, PanelKind, Params, A_OFFSET};
pub use fit::{
    fit, information_criteria, BicBasis, FitOptions, FitResult, ParameterEstimate, FIT_SCHEMA_VERSION,
};
pub use grid::{
    grid_search, GridFailure, GridResult, GridSpec, NoCache, PointCache, PointOutcome, Span,
    UNIDENTIFIED_SPREAD,
};
pub use link::{link, RegressionSpec};
pub use objective::{Likelihood, Prepared};
