//! CSV reading and writing with row-level diagnostics.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{DataIssue, Error, Result};
use crate::panel::MAX_PRIOR_YEARS;

use super::{Contract, PanelDataset, Policyholder, N_COVARIATES};

const CONTRACT_HEADER: [&str; 12] = [
    "policy_id", "period", "exposure", "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "claims",
];
const HISTORY_HEADER: [&str; 3] = ["policy_id", "prior_year", "prior_claims"];
const EXPERIENCE_HEADER: [&str; 2] = ["policy_id", "experience_years"];

/// Locations of the contract file and its two optional companions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvPaths {
    pub contracts: PathBuf,
    pub history: Option<PathBuf>,
    pub experience: Option<PathBuf>,
}

impl CsvPaths {
    /// `contracts.csv`, `history.csv` and `experience.csv` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            contracts: dir.join("contracts.csv"),
            history: Some(dir.join("history.csv")),
            experience: Some(dir.join("experience.csv")),
        }
    }

    pub fn contracts_only(path: impl Into<PathBuf>) -> Self {
        Self { contracts: path.into(), history: None, experience: None }
    }
}

/// A validated dataset and the non-fatal issues met while loading it.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub dataset: PanelDataset,
    pub warnings: Vec<DataIssue>,
}

struct Issues {
    file: String,
    list: Vec<DataIssue>,
}

impl Issues {
    fn new(path: &Path) -> Self {
        Self { file: path.display().to_string(), list: Vec::new() }
    }

    fn at(&mut self, line: u64, message: impl Into<String>) {
        self.list.push(DataIssue { file: self.file.clone(), line: Some(line), message: message.into() });
    }

    fn whole(&mut self, message: impl Into<String>) {
        self.list.push(DataIssue { file: self.file.clone(), line: None, message: message.into() });
    }
}

/// Rows of one CSV file with their 1-based line numbers, or `None` when the
/// file is empty.
fn read_rows(
    path: &Path,
    header: &[&str],
    issues: &mut Issues,
) -> Result<Option<Vec<(u64, csv::StringRecord)>>> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let found: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if found != header {
        issues.at(1, format!("header must be `{}`, found `{}`", header.join(","), found.join(",")));
        return Ok(Some(Vec::new()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        match record {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line());
                if r.len() != header.len() {
                    issues.at(line, format!("expected {} fields, found {}", header.len(), r.len()));
                } else {
                    rows.push((line, r));
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                issues.at(line, e.to_string());
            }
        }
    }
    Ok(Some(rows))
}

fn field<T: std::str::FromStr>(
    r: &csv::StringRecord,
    i: usize,
    name: &str,
    line: u64,
    issues: &mut Issues,
) -> Option<T> {
    let raw = r.get(i).unwrap_or("").trim();
    match raw.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            issues.at(line, format!("{name}: cannot parse `{raw}`"));
            None
        }
    }
}

fn parse_contract(r: &csv::StringRecord, line: u64, issues: &mut Issues) -> Option<(String, Contract)> {
    let id = r.get(0).unwrap_or("").trim().to_string();
    let before = issues.list.len();
    if id.is_empty() {
        issues.at(line, "policy_id is empty");
    }
    let period: Option<u32> = field(r, 1, "period", line, issues);
    let exposure: Option<f64> = field(r, 2, "exposure", line, issues);
    if let Some(d) = exposure {
        if !(d > 0.0 && d <= 1.0) {
            issues.at(line, format!("exposure must lie in (0, 1], got {d}"));
        }
    }
    let mut covariates = [0u8; N_COVARIATES];
    for (k, slot) in covariates.iter_mut().enumerate() {
        let name = CONTRACT_HEADER[3 + k];
        if let Some(v) = field::<u8>(r, 3 + k, name, line, issues) {
            if v > 1 {
                issues.at(line, format!("{name} must be 0 or 1, got {v}"));
            }
            *slot = v;
        }
    }
    let claims: Option<u64> = field(r, 11, "claims", line, issues);
    if issues.list.len() > before {
        return None;
    }
    Some((id, Contract { period: period?, exposure: exposure?, covariates, claims: claims? }))
}

/// Reads and validates a dataset. Any row-level violation makes the load
/// fail with every issue found; an empty contract file yields an empty
/// dataset and a warning.
pub fn load_csv(paths: &CsvPaths) -> Result<Loaded> {
    let mut warnings = Vec::new();
    let mut issues = Issues::new(&paths.contracts);
    let Some(rows) = read_rows(&paths.contracts, &CONTRACT_HEADER, &mut issues)? else {
        warnings.push(DataIssue {
            file: paths.contracts.display().to_string(),
            line: None,
            message: "file is empty; dataset has no policyholders".into(),
        });
        return Ok(Loaded { dataset: PanelDataset::default(), warnings });
    };

    let mut index: HashMap<String, usize> = HashMap::new();
    let mut holders: Vec<Policyholder> = Vec::new();
    let mut lines: Vec<Vec<u64>> = Vec::new();
    let mut seen: HashMap<(usize, u32), u64> = HashMap::new();
    for (line, r) in rows {
        let Some((id, contract)) = parse_contract(&r, line, &mut issues) else { continue };
        let idx = *index.entry(id.clone()).or_insert_with(|| {
            holders.push(Policyholder {
                id: id.clone(),
                contracts: Vec::new(),
                prior_claims: Vec::new(),
                experience_years: 0,
            });
            lines.push(Vec::new());
            holders.len() - 1
        });
        if let Some(first) = seen.insert((idx, contract.period), line) {
            issues.at(
                line,
                format!("duplicate row for policy `{id}` period {} (first at line {first})", contract.period),
            );
            continue;
        }
        holders[idx].contracts.push(contract);
        lines[idx].push(line);
    }
    for (h, ls) in holders.iter_mut().zip(&lines) {
        let mut order: Vec<usize> = (0..h.contracts.len()).collect();
        order.sort_by_key(|&i| h.contracts[i].period);
        let sorted: Vec<Contract> = order.iter().map(|&i| h.contracts[i].clone()).collect();
        for w in order.windows(2) {
            let (a, b) = (&h.contracts[w[0]], &h.contracts[w[1]]);
            if b.period != a.period + 1 {
                issues.at(
                    ls[w[1]],
                    format!(
                        "policy `{}` periods not consecutive: {} follows {}",
                        h.id, b.period, a.period
                    ),
                );
            }
        }
        h.contracts = sorted;
    }

    let mut all = issues.list;
    if let Some(path) = &paths.history {
        all.extend(read_history(path, &index, &mut holders)?);
    }
    let mut explicit = vec![false; holders.len()];
    if let Some(path) = &paths.experience {
        all.extend(read_experience(path, &index, &mut holders, &mut explicit)?);
    }
    for (h, given) in holders.iter_mut().zip(explicit) {
        let m = h.prior_claims.len() as u32;
        if !given {
            h.experience_years = m;
        } else if h.experience_years < m {
            warnings.push(DataIssue {
                file: paths.experience.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                line: None,
                message: format!(
                    "policy `{}` has {} experience years but {m} prior-claim years; \
                     no unobserved years are assumed",
                    h.id, h.experience_years
                ),
            });
        }
    }
    if !all.is_empty() {
        return Err(Error::Data(all));
    }
    Ok(Loaded { dataset: PanelDataset::new(holders), warnings })
}

fn read_history(
    path: &Path,
    index: &HashMap<String, usize>,
    holders: &mut [Policyholder],
) -> Result<Vec<DataIssue>> {
    let mut issues = Issues::new(path);
    let Some(rows) = read_rows(path, &HISTORY_HEADER, &mut issues)? else { return Ok(issues.list) };
    let mut by_holder: HashMap<usize, HashMap<u32, (u64, u64)>> = HashMap::new();
    for (line, r) in rows {
        let id = r.get(0).unwrap_or("").trim();
        let year: Option<u32> = field(&r, 1, "prior_year", line, &mut issues);
        let claims: Option<u64> = field(&r, 2, "prior_claims", line, &mut issues);
        let (Some(year), Some(claims)) = (year, claims) else { continue };
        let Some(&idx) = index.get(id) else {
            issues.at(line, format!("policy `{id}` has no contracts"));
            continue;
        };
        if !(1..=MAX_PRIOR_YEARS as u32).contains(&year) {
            issues.at(line, format!("prior_year must lie in 1..={MAX_PRIOR_YEARS}, got {year}"));
            continue;
        }
        let years = by_holder.entry(idx).or_default();
        if let Some((first, _)) = years.insert(year, (line, claims)) {
            issues.at(line, format!("duplicate prior year {year} for policy `{id}` (first at line {first})"));
        }
    }
    for (idx, years) in by_holder {
        let m = years.keys().copied().max().unwrap_or(0);
        let mut counts = Vec::with_capacity(m as usize);
        for y in 1..=m {
            match years.get(&y) {
                Some(&(_, c)) => counts.push(c),
                None => {
                    issues.whole(format!(
                        "policy `{}` prior years must be 1..={m} without gaps; year {y} missing",
                        holders[idx].id
                    ));
                    break;
                }
            }
        }
        holders[idx].prior_claims = counts;
    }
    Ok(issues.list)
}

fn read_experience(
    path: &Path,
    index: &HashMap<String, usize>,
    holders: &mut [Policyholder],
    explicit: &mut [bool],
) -> Result<Vec<DataIssue>> {
    let mut issues = Issues::new(path);
    let Some(rows) = read_rows(path, &EXPERIENCE_HEADER, &mut issues)? else { return Ok(issues.list) };
    let mut first_line: HashMap<usize, u64> = HashMap::new();
    for (line, r) in rows {
        let id = r.get(0).unwrap_or("").trim();
        let Some(years) = field::<u32>(&r, 1, "experience_years", line, &mut issues) else { continue };
        let Some(&idx) = index.get(id) else {
            issues.at(line, format!("policy `{id}` has no contracts"));
            continue;
        };
        if let Some(first) = first_line.insert(idx, line) {
            issues.at(line, format!("duplicate experience row for policy `{id}` (first at line {first})"));
            continue;
        }
        holders[idx].experience_years = years;
        explicit[idx] = true;
    }
    Ok(issues.list)
}

/// Writes the dataset. Floats use the shortest representation that parses
/// back to the same value, so a write/read cycle is lossless.
pub fn write_csv(dataset: &PanelDataset, paths: &CsvPaths) -> Result<()> {
    let mut w = csv::Writer::from_path(&paths.contracts)?;
    w.write_record(CONTRACT_HEADER)?;
    for h in &dataset.policyholders {
        for c in &h.contracts {
            let mut row = vec![h.id.clone(), c.period.to_string(), format!("{}", c.exposure)];
            row.extend(c.covariates.iter().map(|x| x.to_string()));
            row.push(c.claims.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    if let Some(path) = &paths.history {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(HISTORY_HEADER)?;
        for h in &dataset.policyholders {
            for (k, n) in h.prior_claims.iter().enumerate() {
                w.write_record([h.id.clone(), (k + 1).to_string(), n.to_string()])?;
            }
        }
        w.flush()?;
    }
    if let Some(path) = &paths.experience {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(EXPERIENCE_HEADER)?;
        for h in &dataset.policyholders {
            w.write_record([h.id.clone(), h.experience_years.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}
