//! The subcommands. Each returns the files it read and wrote so that the
//! caller can record them in the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use claimscore::bms::{BmsCovariance, BmsLevel};
use claimscore::dist::MeanParam;
use claimscore::estimate::{
    fit, grid_search, link, BmsStructure, Family, FitResult, GridResult, PointCache, PointOutcome, RegressionSpec,
};
use claimscore::evaluate::{compare, predict_premiums, score, PremiumSchedule, ScoreReport};
use claimscore::portfolio::{load_csv, simulate, split, write_csv, CsvPaths, PanelDataset};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::{sha256_bytes, sha256_file};
use crate::ConfigError;

#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    /// Relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub warnings: usize,
}

pub fn run(command: &str, cfg: &RunConfig) -> anyhow::Result<Outcome> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating output directory {}", cfg.out.display()))?;
    match command {
        "simulate" => cmd_simulate(cfg),
        "fit" => cmd_fit(cfg),
        "grid" => cmd_grid(cfg),
        "evaluate" => cmd_evaluate(cfg),
        other => Err(ConfigError(format!("unknown command `{other}`")).into()),
    }
}

/// File-name form of a model label.
fn slug(family: Family, structure: Option<BmsStructure>) -> String {
    let mut s = family.name().replace('*', "-star");
    if let Some(st) = structure {
        write!(s, "-s{}-p{}-e{}", st.s, st.psi, st.entry).expect("string write");
    }
    s
}

struct Writer<'a> {
    dir: &'a Path,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, written: Vec::new() }
    }

    fn text(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(PathBuf::from(name));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }
}

fn csv_paths(dir: &Path) -> CsvPaths {
    let mut p = CsvPaths::in_dir(dir);
    p.history = p.history.filter(|h| h.exists());
    p.experience = p.experience.filter(|e| e.exists());
    p
}

struct Input {
    fit: PanelDataset,
    validation: PanelDataset,
    files: Vec<PathBuf>,
    warnings: usize,
}

fn load_input(cfg: &RunConfig) -> anyhow::Result<Input> {
    let dir = cfg.data_dir()?;
    let paths = csv_paths(dir);
    let loaded = load_csv(&paths)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let files: Vec<PathBuf> =
        std::iter::once(paths.contracts.clone()).chain(paths.history.clone()).chain(paths.experience.clone()).collect();
    let (fit, validation) = match cfg.data.split {
        Some(f) => split(&loaded.dataset, f, cfg.split_seed())?,
        None => (loaded.dataset.clone(), loaded.dataset),
    };
    Ok(Input { fit, validation, files, warnings: loaded.warnings.len() })
}

fn cmd_simulate(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let spec = cfg.simulate.spec(cfg.seed)?;
    let sim = simulate(&spec)?;
    let d = &sim.dataset;
    write_csv(d, &CsvPaths::in_dir(&cfg.out))?;
    let mut w = Writer::new(&cfg.out);
    w.written.extend(["contracts.csv", "history.csv", "experience.csv"].map(PathBuf::from));
    #[derive(Serialize)]
    struct Truth<'a> {
        spec: &'a claimscore::portfolio::SimulationSpec,
        policyholders: &'a [claimscore::portfolio::Latent],
    }
    w.json("truth.json", &Truth { spec: &spec, policyholders: &sim.truth })?;
    println!(
        "policyholders {}  contracts {}  claims {}  mean frequency {:.6}",
        d.len(),
        d.n_contracts(),
        d.total_claims(),
        if d.n_contracts() > 0 { d.mean_frequency() } else { 0.0 }
    );
    Ok(Outcome { inputs: Vec::new(), outputs: w.written, warnings: 0 })
}

fn cmd_fit(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let input = load_input(cfg)?;
    let options = cfg.fit.options();
    let mut w = Writer::new(&cfg.out);
    let mut fits = Vec::new();
    let mut warnings = input.warnings;
    for family in cfg.fit.families()? {
        let structure = if family.is_bms() {
            Some(cfg.fit.structure.ok_or_else(|| {
                ConfigError(format!("{family} needs fit.structure or --structure s=..,psi=..,entry=.."))
            })?)
        } else {
            None
        };
        let r = fit(&input.fit, family, structure, &options)?;
        if !r.converged {
            warnings += 1;
            eprintln!("warning: {} did not converge: {}", family, r.diagnostics.join("; "));
        }
        w.json(&format!("fit_{}.json", slug(family, structure)), &r)?;
        fits.push(r);
    }
    let table = compare(&[], &fits);
    w.json("comparison.json", &table)?;
    let text = table.to_text();
    w.text("comparison.txt", &text)?;
    print!("{text}");
    Ok(Outcome { inputs: input.files, outputs: w.written, warnings })
}

/// Lattice points stored as JSON files, keyed by the dataset and options
/// hash, family and structure.
struct FileCache {
    dir: PathBuf,
    key: String,
    family: Family,
    read: bool,
}

impl FileCache {
    fn path(&self, st: &BmsStructure) -> PathBuf {
        self.dir.join(format!("{}-{}.json", self.key, slug(self.family, Some(*st))))
    }
}

impl PointCache for FileCache {
    fn load(&self, st: &BmsStructure) -> Option<PointOutcome> {
        if !self.read {
            return None;
        }
        let text = fs::read_to_string(self.path(st)).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn store(&self, st: &BmsStructure, outcome: &PointOutcome) -> claimscore::Result<()> {
        let path = self.path(st);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string(outcome)?)?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

fn lattice_csv(g: &GridResult) -> String {
    let mut out = String::from("s,psi,entry,loglik,aic,bic,delta,converged\n");
    let mut rows: Vec<&FitResult> = g.ranking.iter().collect();
    rows.sort_by_key(|r| r.structure);
    for r in rows {
        let st = r.structure.expect("BMS fit");
        let delta = r.get("delta").map_or(f64::NAN, |p| p.value);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            st.s, st.psi, st.entry, r.loglik, r.aic, r.bic, delta, r.converged
        )
        .expect("string write");
    }
    for f in &g.failures {
        writeln!(out, "{},{},{},,,,,failed", f.structure.s, f.structure.psi, f.structure.entry).expect("string write");
    }
    out
}

fn cmd_grid(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let input = load_input(cfg)?;
    let spec = cfg.grid.spec()?;
    let options = cfg.fit.options();
    let families = cfg.fit.families()?;
    if let Some(f) = families.iter().find(|f| !f.is_bms()) {
        return Err(ConfigError(format!("grid search needs BMS families, got {f}")).into());
    }

    let mut key_material = String::new();
    for f in &input.files {
        key_material.push_str(&sha256_file(f)?);
    }
    write!(key_material, "{:?}{:?}{}{:?}", cfg.data.split, cfg.data.split_seed, cfg.seed, cfg.fit)?;
    let key = sha256_bytes(key_material.as_bytes())[..16].to_string();
    let cache_dir = cfg.out.join("cache");
    fs::create_dir_all(&cache_dir).with_context(|| format!("creating {}", cache_dir.display()))?;

    let mut w = Writer::new(&cfg.out);
    let mut warnings = input.warnings;
    for family in families {
        let Family::Bms(conditional) = family else { unreachable!() };
        let cache = FileCache { dir: cache_dir.clone(), key: key.clone(), family, read: cfg.grid.resume };
        let g = grid_search(&input.fit, conditional, &spec, &options, &cache)?;
        for f in &g.failures {
            warnings += 1;
            eprintln!("warning: {family} at {} failed: {}", f.structure, f.reason);
        }
        if g.structurally_unidentified {
            warnings += 1;
        }
        let name = slug(family, None);
        w.json(&format!("grid_{name}.json"), &g)?;
        w.text(&format!("grid_{name}.csv"), &lattice_csv(&g))?;
        let text = format!("{family} over {spec}\n{}", g.table(cfg.grid.top));
        w.text(&format!("grid_{name}.txt"), &text)?;
        print!("{text}");
        if let Some(best) = g.best() {
            w.json(&format!("fit_{}.json", slug(family, best.structure)), best)?;
        }
    }
    Ok(Outcome { inputs: input.files, outputs: w.written, warnings })
}

fn premiums_csv(s: &PremiumSchedule) -> String {
    let mut out = String::from("id,period,premium\n");
    for p in &s.premiums {
        writeln!(out, "{},{},{}", p.id, p.period, p.premium).expect("string write");
    }
    out
}

/// Mean a-priori frequency of the scored contracts under `model`.
fn mean_lambda(model: &FitResult, data: &PanelDataset) -> anyhow::Result<f64> {
    let beta = RegressionSpec::new(model.beta())?;
    let mut sum = 0.0;
    for c in data.contracts() {
        sum += link(&c.covariates, c.exposure, &beta)?.value();
    }
    Ok(sum / data.n_contracts() as f64)
}

fn covariance_csv(model: &FitResult, lambda: f64, max_lag: u32) -> anyhow::Result<String> {
    let p = model.params();
    let st = model.structure.expect("BMS fit");
    let cfg = st.config(p.delta.expect("delta"))?;
    let Family::Bms(cond) = model.family else { unreachable!() };
    let lam = MeanParam::new(lambda)?;
    let mut cov = BmsCovariance::new(lam, &cfg, cond.with_tau(p.tau))?;
    let mut out = String::from("level,lag,covariance\n");
    for level in 1..=st.s {
        let l = BmsLevel::new(level, &cfg)?;
        for j in 1..=max_lag {
            writeln!(out, "{level},{j},{}", cov.at(l, lam, j)?).expect("string write");
        }
    }
    Ok(out)
}

fn cmd_evaluate(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    if cfg.evaluate.fits.is_empty() {
        return Err(ConfigError("no fit results to evaluate: set evaluate.fits or --fits".into()).into());
    }
    let input = load_input(cfg)?;
    let data = &input.validation;
    if data.n_contracts() == 0 {
        return Err(ConfigError("validation set is empty".into()).into());
    }
    let mut inputs = input.files.clone();
    let mut fits = Vec::new();
    for path in &cfg.evaluate.fits {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        fits.push(FitResult::from_json(&text).with_context(|| format!("parsing {}", path.display()))?);
        inputs.push(path.clone());
    }

    let mut w = Writer::new(&cfg.out);
    let mut scores = Vec::new();
    for model in &fits {
        let name = slug(model.family, model.structure);
        let schedule = predict_premiums(model, data)?;
        w.text(&format!("premiums_{name}.csv"), &premiums_csv(&schedule))?;
        scores.push(score(&schedule, data)?);
        if model.family.is_bms() {
            let lambda = match cfg.evaluate.covariance_lambda {
                Some(l) => l,
                None => mean_lambda(model, data)?,
            };
            w.text(&format!("covariance_{name}.csv"), &covariance_csv(model, lambda, cfg.evaluate.max_lag)?)?;
        }
    }
    let table = compare(&scores, &fits);
    #[derive(Serialize)]
    struct Report<'a> {
        scores: &'a ScoreReport,
        comparison: &'a claimscore::evaluate::Comparison,
    }
    let report = ScoreReport::new(scores);
    w.json("scores.json", &Report { scores: &report, comparison: &table })?;
    let text = table.to_text();
    w.text("scores.txt", &text)?;
    print!("{text}");
    Ok(Outcome { inputs, outputs: w.written, warnings: input.warnings })
}
