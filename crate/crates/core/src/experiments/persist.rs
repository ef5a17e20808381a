//! Results: per-checkpoint rows, fits and verdicts, with their CSV + JSON
//! persistence and the order-independent merge of replica summaries.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats;
use super::ExperimentError;

pub const SCHEMA_VERSION: u32 = 1;

/// One aggregated statistic of a series at abscissa `x` (a checkpoint time,
/// a depth, a matrix entry, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub series: String,
    pub x: f64,
    pub count: u64,
    pub censored: u64,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub se: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub target: Option<f64>,
}

impl Row {
    /// Fraction of contributing replicas that were censored.
    pub fn censored_fraction(&self) -> f64 {
        let total = self.count + self.censored;
        if total == 0 {
            0.0
        } else {
            self.censored as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub name: String,
    pub series: String,
    /// Description of the regression axes.
    pub model: String,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub ci: Option<(f64, f64)>,
    pub ci_level: f64,
    pub ci_method: String,
    pub points: usize,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub measured: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// Human-readable statement of the tolerance.
    pub tolerance: String,
    pub status: Status,
}

impl Verdict {
    /// Pass iff lower ≤ measured ≤ upper (missing bounds are unconstrained).
    pub fn within(name: impl Into<String>, measured: f64, lower: Option<f64>, upper: Option<f64>, tolerance: impl Into<String>) -> Self {
        let ok = measured.is_finite() && lower.is_none_or(|l| measured >= l) && upper.is_none_or(|u| measured <= u);
        Verdict {
            name: name.into(),
            measured,
            lower,
            upper,
            tolerance: tolerance.into(),
            status: if ok { Status::Pass } else { Status::Fail },
        }
    }

    /// A yes/no check, recorded as measured 1 or 0 against the bound [1, 1].
    pub fn check(name: impl Into<String>, ok: bool, tolerance: impl Into<String>) -> Self {
        Self::within(name, if ok { 1.0 } else { 0.0 }, Some(1.0), Some(1.0), tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub replicas: u64,
    /// Canonical spec text the hash was taken over.
    pub spec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema_version: u32,
    pub scenario: String,
    pub provenance: Provenance,
    #[serde(skip)]
    pub rows: Vec<Row>,
    pub fits: Vec<Fit>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status == Status::Pass)
    }

    pub fn rows_of<'a>(&'a self, series: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.series == series)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn fit(&self, name: &str) -> Option<&Fit> {
        self.fits.iter().find(|f| f.name == name)
    }
}

/// `path` with its extension replaced; `out/run` and `out/run.csv` both
/// name the pair `out/run.csv` + `out/run.json`.
pub fn result_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("csv"), path.with_extension("json"))
}

pub fn persist(result: &ExperimentResult, path: &Path) -> Result<(), ExperimentError> {
    let (csv_path, json_path) = result_paths(path);
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    }
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| ExperimentError::csv(&csv_path, e))?;
    for row in &result.rows {
        writer.serialize(row).map_err(|e| ExperimentError::csv(&csv_path, e))?;
    }
    if result.rows.is_empty() {
        writer
            .write_record(["series", "x", "count", "censored", "mean", "variance", "se", "median", "min", "max", "target"])
            .map_err(|e| ExperimentError::csv(&csv_path, e))?;
    }
    writer.flush().map_err(|e| ExperimentError::io(&csv_path, e))?;
    let json = serde_json::to_string_pretty(result).map_err(|e| ExperimentError::Json(e.to_string()))?;
    std::fs::write(&json_path, json + "\n").map_err(|e| ExperimentError::io(&json_path, e))
}

pub fn load(path: &Path) -> Result<ExperimentResult, ExperimentError> {
    let (csv_path, json_path) = result_paths(path);
    let text = std::fs::read_to_string(&json_path).map_err(|e| ExperimentError::io(&json_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| ExperimentError::Json(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ExperimentError::Json("missing schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(ExperimentError::SchemaVersionMismatch {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut result: ExperimentResult = serde_json::from_value(value).map_err(|e| ExperimentError::Json(e.to_string()))?;
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| ExperimentError::csv(&csv_path, e))?;
    for row in reader.deserialize() {
        result.rows.push(row.map_err(|e| ExperimentError::csv(&csv_path, e))?);
    }
    Ok(result)
}

/// One value contributed by a replica; `None` marks a censored observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub series: String,
    pub x: f64,
    pub value: Option<f64>,
}

impl Observation {
    pub fn new(series: impl Into<String>, x: f64, value: Option<f64>) -> Self {
        Observation {
            series: series.into(),
            x,
            value,
        }
    }
}

/// Everything a replica reports back.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSummary {
    pub replica: u64,
    pub spec_hash: String,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
struct Key(String, f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0).then(self.1.total_cmp(&other.1))
    }
}

/// Summarises a set of values (sorted internally, so the result does not
/// depend on their order).
pub fn summarize(series: &str, x: f64, values: &[f64], censored: u64) -> Row {
    let v = stats::sorted(values);
    let variance = stats::variance(&v);
    Row {
        series: series.to_string(),
        x,
        count: v.len() as u64,
        censored,
        mean: stats::mean(&v),
        variance,
        se: variance.map(|s2| (s2 / v.len() as f64).sqrt()),
        median: stats::median_sorted(&v),
        min: v.first().copied(),
        max: v.last().copied(),
        target: None,
    }
}

/// Groups observations by (series, x) and summarises each group. The output
/// is sorted by (series, x) and bitwise independent of the input order.
pub fn aggregate(spec_hash: &str, partials: &[ReplicaSummary]) -> Result<Vec<Row>, ExperimentError> {
    let mut groups: BTreeMap<Key, (Vec<f64>, u64)> = BTreeMap::new();
    for p in partials {
        if p.spec_hash != spec_hash {
            return Err(ExperimentError::SpecMismatch {
                expected: spec_hash.to_string(),
                found: p.spec_hash.clone(),
            });
        }
        for o in &p.observations {
            let entry = groups.entry(Key(o.series.clone(), o.x)).or_default();
            match o.value {
                Some(v) => entry.0.push(v),
                None => entry.1 += 1,
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|(Key(series, x), (values, censored))| summarize(&series, x, &values, censored))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partial(replica: u64, values: &[(&str, f64, Option<f64>)]) -> ReplicaSummary {
        ReplicaSummary {
            replica,
            spec_hash: "h".into(),
            observations: values.iter().map(|&(s, x, v)| Observation::new(s, x, v)).collect(),
        }
    }

    fn sample() -> Vec<ReplicaSummary> {
        (0..7)
            .map(|i| {
                let v = (i as f64 * 0.37).sin() * 10.0;
                let cens = if i == 3 { None } else { Some(v + 0.1) };
                partial(i, &[("a", 1.0, Some(v)), ("a", 2.0, cens), ("b", 1.0, Some(v * v))])
            })
            .collect()
    }

    #[test]
    fn single_replica_is_its_own_summary() {
        let rows = aggregate("h", &[partial(0, &[("a", 1.0, Some(4.0))])]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].mean, Some(4.0));
        assert_eq!(rows[0].median, Some(4.0));
        assert_eq!(rows[0].variance, None);
        assert_eq!(rows[0].count, 1);
    }

    #[test]
    fn permutation_is_bitwise_invariant() {
        let mut parts = sample();
        let a = aggregate("h", &parts).unwrap();
        parts.reverse();
        parts.swap(1, 4);
        let b = aggregate("h", &parts).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let row = a.iter().find(|r| r.series == "a" && r.x == 2.0).unwrap();
        assert_eq!((row.count, row.censored), (6, 1));
    }

    #[test]
    fn copies_shrink_the_standard_error() {
        let one = sample();
        let k = 16;
        let many: Vec<ReplicaSummary> = (0..k).flat_map(|_| one.clone()).collect();
        let a = &aggregate("h", &one).unwrap()[0];
        let b = &aggregate("h", &many).unwrap()[0];
        assert!((a.mean.unwrap() - b.mean.unwrap()).abs() < 1e-12);
        // sqrt(k) up to the n − 1 denominators: sqrt((kn − 1)/(n − 1))
        let n = a.count as f64;
        let expect = ((k as f64 * n - 1.0) / (n - 1.0)).sqrt();
        let ratio = a.se.unwrap() / b.se.unwrap();
        assert!((ratio - expect).abs() < 1e-12, "{ratio} vs {expect}");
    }

    #[test]
    fn mismatched_hash_is_rejected() {
        let mut parts = sample();
        parts[2].spec_hash = "other".into();
        assert!(matches!(aggregate("h", &parts), Err(ExperimentError::SpecMismatch { .. })));
    }
}
