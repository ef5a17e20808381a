//! Experiment specifications: a scenario, a master seed, a replica count and
//! a flat table of `section.key = value` parameters.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use toml::Value;

use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scenario {
    PemantleEquivalence,
    PotentialClt,
    SnakeCovariance,
    GreensExit,
    RecurrenceTransience,
    DisplacementRecurrent,
    DisplacementCritical,
    DisplacementTransient,
    MeasureStability,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::PemantleEquivalence,
        Scenario::PotentialClt,
        Scenario::SnakeCovariance,
        Scenario::GreensExit,
        Scenario::RecurrenceTransience,
        Scenario::DisplacementRecurrent,
        Scenario::DisplacementCritical,
        Scenario::DisplacementTransient,
        Scenario::MeasureStability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::PemantleEquivalence => "pemantle-equivalence",
            Scenario::PotentialClt => "potential-clt",
            Scenario::SnakeCovariance => "snake-covariance",
            Scenario::GreensExit => "greens-exit",
            Scenario::RecurrenceTransience => "recurrence-transience",
            Scenario::DisplacementRecurrent => "displacement-recurrent",
            Scenario::DisplacementCritical => "displacement-critical",
            Scenario::DisplacementTransient => "displacement-transient",
            Scenario::MeasureStability => "measure-stability",
        }
    }

    /// Whether censored replicas make the verdicts inconclusive.
    pub fn is_displacement(self) -> bool {
        matches!(
            self,
            Scenario::DisplacementRecurrent | Scenario::DisplacementCritical | Scenario::DisplacementTransient
        )
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| ExperimentError::InvalidSpec(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub master_seed: u64,
    pub replicas: u64,
    pub output: Option<PathBuf>,
    params: BTreeMap<String, Value>,
}

/// Flattens nested tables into dotted keys.
fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Parses a command-line override value: TOML syntax when it parses,
/// otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

impl ExperimentSpec {
    /// The acceptance-scale defaults of a scenario.
    pub fn preset(scenario: Scenario) -> Self {
        let mut spec = ExperimentSpec {
            scenario,
            master_seed: 20_240_601,
            replicas: 200,
            output: None,
            params: BTreeMap::new(),
        };
        let mut set = |k: &str, v: Value| {
            spec.params.insert(k.to_string(), v);
        };
        let f = Value::Float;
        let i = Value::Integer;
        let fl = |xs: &[f64]| Value::Array(xs.iter().map(|&x| Value::Float(x)).collect());
        let il = |xs: &[i64]| Value::Array(xs.iter().map(|&x| Value::Integer(x)).collect());
        set("offspring.kind", Value::String("geometric_half".into()));
        set("offspring.gamma", f(2.0));
        match scenario {
            Scenario::PemantleEquivalence => {
                set("oracle.max_n", i(5));
                set("oracle.max_len", i(6));
            }
            Scenario::PotentialClt => {
                set("env.alpha", f(0.0));
                set("env.delta", f(1.0));
                set("tree.n", i(1_000_000));
                set("clt.depths", fl(&[0.5, 1.0]));
                set("clt.tolerance", f(0.1));
                set("clt.max_skew", f(0.1));
            }
            Scenario::SnakeCovariance => {
                set("env.delta", f(1.0));
                set("tree.n", i(20));
                set("snake.alphas", fl(&[0.0, 0.5, 1.0]));
                set("snake.samples", i(100_000));
                set("snake.max_z", f(4.0));
            }
            Scenario::GreensExit => {
                set("env.delta", f(1.0));
                set("env.weight", f(1.0));
                set("tree.n", i(30));
                set("exit.runs", i(10_000));
                set("exit.max_z", f(3.0));
            }
            Scenario::RecurrenceTransience => {
                set("env.alphas", fl(&[0.0, 0.5, 1.0, 1.5, 2.0]));
                set("env.delta", f(1.0));
                set("tree.depth_limit", i(1000));
                set("walk.horizon", i(1_000_000));
                set("walk.checkpoints", il(&[10_000, 100_000, 1_000_000]));
                set("walk.return_depths", il(&[25, 50, 100]));
                set("recurrence.return_depth", i(50));
                set("recurrence.max_return_fraction", f(0.5));
            }
            Scenario::DisplacementRecurrent => {
                set("env.alpha", f(0.0));
                set("env.deltas", fl(&[1.0, 2.0]));
                set("env.scale", f(10.0));
                set("tree.depth_limit", i(100_000));
                set("walk.horizon", i(10_000_000));
                set("fit.decades", f(2.0));
                set("fit.lower", fl(&[0.6]));
                set("fit.upper", fl(&[1.6]));
            }
            Scenario::DisplacementCritical => {
                set("env.alpha", f(1.0));
                set("env.deltas", fl(&[1.0, 5.0]));
                set("env.scale", f(1.0));
                set("tree.depth_limit", i(100_000));
                set("walk.horizon", i(10_000_000));
                set("fit.decades", f(2.0));
                set("fit.lower", fl(&[0.2, 0.1]));
                set("fit.upper", fl(&[0.45, 0.33]));
            }
            Scenario::DisplacementTransient => {
                set("env.alpha", f(2.0));
                set("env.deltas", fl(&[1.0]));
                set("tree.depth_limit", i(1_000_000));
                set("walk.horizon", i(10_000_000));
                set("fit.decades", f(2.0));
                set("transient.max_speed", f(0.2));
                set("transient.max_exponent", f(0.85));
            }
            Scenario::MeasureStability => {
                set("env.alpha", f(0.5));
                set("env.delta", f(1.0));
                set("stability.sizes", il(&[1000, 2000, 4000, 8000]));
            }
        }
        if scenario == Scenario::SnakeCovariance {
            spec.replicas = 1000;
        } else if scenario == Scenario::PotentialClt {
            spec.replicas = 20_000;
        } else if scenario == Scenario::GreensExit {
            spec.replicas = 10;
        } else if scenario == Scenario::PemantleEquivalence {
            spec.replicas = 1;
        }
        spec
    }

    /// Parses a spec file: the scenario's preset, overridden by every key in
    /// the file. `experiment.scenario` is required.
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ExperimentError::InvalidSpec(e.message().to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let scenario: Scenario = match flat.remove("experiment.scenario") {
            Some(Value::String(s)) => s.parse()?,
            _ => return Err(ExperimentError::InvalidSpec("missing `experiment.scenario`".into())),
        };
        let mut spec = Self::preset(scenario);
        for (k, v) in flat {
            spec.set(&k, v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one key. The `experiment.*` keys update the typed fields.
    pub fn set(&mut self, key: &str, value: Value) -> Result<(), ExperimentError> {
        let bad = |what: &str| ExperimentError::InvalidSpec(format!("`{key}` must be {what}"));
        match key {
            "experiment.scenario" => {
                let Value::String(s) = &value else { return Err(bad("a string")) };
                self.scenario = s.parse()?;
            }
            "experiment.seed" => {
                let Value::Integer(s) = value else { return Err(bad("an integer")) };
                self.master_seed = s as u64;
            }
            "experiment.replicas" => {
                let Value::Integer(r) = value else { return Err(bad("an integer")) };
                if r < 1 {
                    return Err(bad("at least 1"));
                }
                self.replicas = r as u64;
            }
            "experiment.output" => {
                let Value::String(s) = value else { return Err(bad("a string")) };
                self.output = Some(PathBuf::from(s));
            }
            _ => {
                self.params.insert(key.to_string(), value);
            }
        }
        Ok(())
    }

    /// Sets a key from command-line text.
    pub fn set_raw(&mut self, key: &str, raw: &str) -> Result<(), ExperimentError> {
        self.set(key, parse_value(raw))
    }

    pub fn params(&self) -> &BTreeMap<String, Value> {
        &self.params
    }

    pub fn f64(&self, key: &str) -> Result<f64, ExperimentError> {
        self.params
            .get(key)
            .and_then(as_f64)
            .ok_or_else(|| ExperimentError::InvalidSpec(format!("missing numeric `{key}`")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ExperimentError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(v) => as_f64(v).ok_or_else(|| ExperimentError::InvalidSpec(format!("`{key}` must be numeric"))),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, ExperimentError> {
        match self.params.get(key) {
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(Value::Float(x)) if *x >= 0.0 && x.fract() == 0.0 && *x < 1.8e19 => Ok(*x as u64),
            _ => Err(ExperimentError::InvalidSpec(format!("missing non-negative integer `{key}`"))),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str, ExperimentError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(ExperimentError::InvalidSpec(format!("`{key}` must be a string"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ExperimentError> {
        match self.params.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(ExperimentError::InvalidSpec(format!("`{key}` must be a boolean"))),
        }
    }

    /// A numeric list; a scalar is read as a one-element list.
    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, ExperimentError> {
        let err = || ExperimentError::InvalidSpec(format!("missing numeric list `{key}`"));
        match self.params.get(key) {
            Some(Value::Array(xs)) => xs.iter().map(|x| as_f64(x).ok_or_else(err)).collect(),
            Some(v) => as_f64(v).map(|x| vec![x]).ok_or_else(err),
            None => Err(err()),
        }
    }

    pub fn f64_list_or(&self, key: &str) -> Result<Vec<f64>, ExperimentError> {
        if self.params.contains_key(key) {
            self.f64_list(key)
        } else {
            Ok(Vec::new())
        }
    }

    /// Canonical text form: one `key = value` line per entry, sorted. The
    /// output path is excluded so that moving results does not change the hash.
    pub fn canonical(&self) -> String {
        let mut lines = vec![
            format!("experiment.replicas = {}", self.replicas),
            format!("experiment.scenario = \"{}\"", self.scenario),
            format!("experiment.seed = {}", self.master_seed),
        ];
        for (k, v) in &self.params {
            lines.push(format!("{k} = {v}"));
        }
        lines.sort();
        lines.join("\n") + "\n"
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.replicas < 1 {
            return bad("replicas must be at least 1".into());
        }
        let alpha = self.f64_or("env.alpha", f64::NAN)?;
        match self.scenario {
            Scenario::PotentialClt if !(0.0..1.0).contains(&alpha) => {
                bad(format!("potential-clt needs 0 <= alpha < 1, got {alpha}"))
            }
            Scenario::DisplacementRecurrent if !(alpha < 1.0) => {
                bad(format!("displacement-recurrent needs alpha < 1, got {alpha}"))
            }
            Scenario::DisplacementCritical if alpha != 1.0 => {
                bad(format!("displacement-critical needs alpha = 1, got {alpha}"))
            }
            Scenario::DisplacementTransient if !(alpha > 1.0) => {
                bad(format!("displacement-transient needs alpha > 1, got {alpha}"))
            }
            _ => Ok(()),
        }
    }
}
