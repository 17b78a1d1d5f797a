//! Search over the structural lattice `(s, Ψ, ℓ*)` of bonus-malus models.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::portfolio::PanelDataset;

use super::family::{BmsStructure, Conditional, Family};
use super::fit::{fit_prepared, FitOptions, FitResult};
use super::objective::Prepared;

/// Loglik spread below which a lattice is reported as structurally
/// unidentified.
pub const UNIDENTIFIED_SPREAD: f64 = 2.0;

/// Range of one structural coordinate; the upper end may be tied to `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub lo: u32,
    /// `None` means "up to s".
    pub hi: Option<u32>,
}

impl Span {
    fn values(&self, s: u32) -> impl Iterator<Item = u32> {
        let hi = self.hi.map_or(s, |h| h.min(s));
        self.lo.max(1)..=hi
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(h) if h == self.lo => write!(f, "{h}"),
            Some(h) => write!(f, "{}..{h}", self.lo),
            None => write!(f, "{}..s", self.lo),
        }
    }
}

/// Lattice of structures, written `s=2..11,psi=1..s,entry=1..s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s_min: u32,
    pub s_max: u32,
    pub psi: Span,
    pub entry: Span,
}

impl GridSpec {
    /// Full lattice for `s = 2..=s_max`.
    pub fn full(s_max: u32) -> Self {
        Self {
            s_min: 2,
            s_max,
            psi: Span { lo: 1, hi: None },
            entry: Span { lo: 1, hi: None },
        }
    }

    pub fn single(st: BmsStructure) -> Self {
        Self {
            s_min: st.s,
            s_max: st.s,
            psi: Span { lo: st.psi, hi: Some(st.psi) },
            entry: Span { lo: st.entry, hi: Some(st.entry) },
        }
    }

    /// Lattice points in `(s, Ψ, ℓ*)` lexicographic order.
    pub fn points(&self) -> Vec<BmsStructure> {
        let mut out = Vec::new();
        for s in self.s_min.max(2)..=self.s_max {
            for psi in self.psi.values(s) {
                for entry in self.entry.values(s) {
                    out.push(BmsStructure { s, psi, entry });
                }
            }
        }
        out
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s={}..{},psi={},entry={}", self.s_min, self.s_max, self.psi, self.entry)
    }
}

fn parse_bound(v: &str, allow_s: bool) -> Option<Option<u32>> {
    if allow_s && v == "s" {
        return Some(None);
    }
    v.parse().ok().map(Some)
}

fn parse_span(v: &str, allow_s: bool) -> Option<(u32, Option<u32>)> {
    match v.split_once("..") {
        Some((a, b)) => Some((a.trim().parse().ok()?, parse_bound(b.trim(), allow_s)?)),
        None => {
            let x: u32 = v.trim().parse().ok()?;
            Some((x, Some(x)))
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("grid `{text}`: {why}"));
        let mut s = None;
        let mut psi = Span { lo: 1, hi: None };
        let mut entry = Span { lo: 1, hi: None };
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, val) = part.split_once('=').ok_or_else(|| bad("expected key=range"))?;
            match key.trim().to_ascii_lowercase().as_str() {
                "s" => {
                    let (lo, hi) = parse_span(val, false).ok_or_else(|| bad("bad s range"))?;
                    s = Some((lo, hi.expect("numeric")));
                }
                "psi" | "jump" => {
                    let (lo, hi) = parse_span(val, true).ok_or_else(|| bad("bad psi range"))?;
                    psi = Span { lo, hi };
                }
                "entry" | "l*" | "ell" => {
                    let (lo, hi) = parse_span(val, true).ok_or_else(|| bad("bad entry range"))?;
                    entry = Span { lo, hi };
                }
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        let (s_min, s_max) = s.ok_or_else(|| bad("missing s range"))?;
        let spec = GridSpec { s_min, s_max, psi, entry };
        if s_min < 2 || s_max < s_min {
            return Err(bad("s range must satisfy 2 ≤ lo ≤ hi"));
        }
        if psi.lo < 1 || entry.lo < 1 {
            return Err(bad("psi and entry start at 1"));
        }
        if spec.points().is_empty() {
            return Err(bad("lattice is empty"));
        }
        Ok(spec)
    }
}

/// Outcome of one lattice point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum PointOutcome {
    Fitted { fit: Box<FitResult> },
    Failed { structure: BmsStructure, reason: String },
}

/// Store for finished lattice points, consulted before fitting so that an
/// interrupted search can resume.
pub trait PointCache: Sync {
    fn load(&self, structure: &BmsStructure) -> Option<PointOutcome>;
    fn store(&self, structure: &BmsStructure, outcome: &PointOutcome) -> Result<()>;
}

/// Cache that remembers nothing.
pub struct NoCache;

impl PointCache for NoCache {
    fn load(&self, _: &BmsStructure) -> Option<PointOutcome> {
        None
    }

    fn store(&self, _: &BmsStructure, _: &PointOutcome) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub structure: BmsStructure,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub family: Family,
    pub grid: GridSpec,
    /// Successful fits, best loglik first.
    pub ranking: Vec<FitResult>,
    pub failures: Vec<GridFailure>,
    /// Max minus min loglik over the successful points.
    pub loglik_spread: f64,
    pub structurally_unidentified: bool,
}

impl GridResult {
    pub fn best(&self) -> Option<&FitResult> {
        self.ranking.first()
    }

    /// Aligned text table of the `top` best points.
    pub fn table(&self, top: usize) -> String {
        let mut out = format!(
            "{:>4} {:>4} {:>4} {:>5} {:>14} {:>14} {:>14} {:>9}\n",
            "s", "psi", "l*", "k", "loglik", "AIC", "BIC", "delta"
        );
        for r in self.ranking.iter().take(top) {
            let st = r.structure.expect("BMS fit");
            let delta = r.get("delta").map_or(f64::NAN, |p| p.value);
            out.push_str(&format!(
                "{:>4} {:>4} {:>4} {:>5} {:>14.2} {:>14.2} {:>14.2} {:>9.4}\n",
                st.s, st.psi, st.entry, r.n_params, r.loglik, r.aic, r.bic, delta
            ));
        }
        if self.structurally_unidentified {
            out.push_str(&format!(
                "warning: loglik spread {:.3} < {UNIDENTIFIED_SPREAD}; structure not identified\n",
                self.loglik_spread
            ));
        }
        out
    }
}

/// Fits the bonus-malus model with conditional law `conditional` at every
/// lattice point. Points are fitted concurrently, each single-threaded;
/// standard errors are computed only for the winner.
pub fn grid_search(
    dataset: &PanelDataset,
    conditional: Conditional,
    grid: &GridSpec,
    options: &FitOptions,
    cache: &dyn PointCache,
) -> Result<GridResult> {
    let data = Prepared::new(dataset);
    let family = Family::Bms(conditional);
    let points = grid.points();

    // Shared warm start: the cross-section fit of the same conditional law.
    let start = match &options.start {
        Some(s) => s.clone(),
        None => {
            let cross = fit_prepared(
                &data,
                Family::Cross(conditional),
                None,
                &FitOptions { standard_errors: false, ..options.clone() },
            )?;
            let mut v = cross.beta();
            v.push(0.1);
            if let Some(t) = cross.get("tau") {
                v.push(t.value);
            }
            v
        }
    };
    let point_opts = FitOptions {
        parallel: false,
        standard_errors: false,
        start: Some(start),
        ..options.clone()
    };

    let store_error: Mutex<Option<Error>> = Mutex::new(None);
    let outcomes: Vec<PointOutcome> = points
        .par_iter()
        .map(|st| {
            if let Some(hit) = cache.load(st) {
                return hit;
            }
            let outcome = match fit_prepared(&data, family, Some(*st), &point_opts) {
                Ok(fit) => PointOutcome::Fitted { fit: Box::new(fit) },
                Err(e) => PointOutcome::Failed { structure: *st, reason: e.to_string() },
            };
            if let Err(e) = cache.store(st, &outcome) {
                store_error.lock().expect("poisoned").get_or_insert(e);
            }
            outcome
        })
        .collect();
    if let Some(e) = store_error.into_inner().expect("poisoned") {
        return Err(e);
    }

    let mut ranking = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            PointOutcome::Fitted { fit } => ranking.push(*fit),
            PointOutcome::Failed { structure, reason } => failures.push(GridFailure { structure, reason }),
        }
    }
    ranking.sort_by(|a, b| {
        b.loglik
            .total_cmp(&a.loglik)
            .then_with(|| a.structure.cmp(&b.structure))
    });
    let spread = match (ranking.first(), ranking.last()) {
        (Some(a), Some(b)) => a.loglik - b.loglik,
        _ => 0.0,
    };
    if options.standard_errors {
        if let Some(best) = ranking.first_mut() {
            let natural = best.parameters.iter().map(|p| p.value).collect();
            let refit = fit_prepared(
                &data,
                family,
                best.structure,
                &FitOptions { start: Some(natural), ..options.clone() },
            )?;
            if refit.loglik >= best.loglik - 1e-6 * best.loglik.abs().max(1.0) {
                *best = refit;
            }
        }
    }
    Ok(GridResult {
        family,
        grid: *grid,
        structurally_unidentified: ranking.len() > 1 && spread < UNIDENTIFIED_SPREAD,
        loglik_spread: spread,
        ranking,
        failures,
    })
}
