//! Declarative Monte Carlo scenarios: seeding, parallel replication,
//! aggregation and persistence.
//!
//! Replica `i` of lane `k` always draws from the ChaCha stream
//! `(k << 40) | i` of the master seed, and replica outputs are collected
//! in index order, so results are identical for any thread count.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::environment::EnvError;
use crate::oracle::OracleError;
use crate::rng::replica_rng;
use crate::trees::TreeError;
use crate::RandomSource;

pub mod persist;
mod scenarios;
pub mod spec;
pub mod stats;

pub use persist::{
    aggregate, load, persist, ExperimentResult, Fit, Observation, Provenance, ReplicaSummary, Row, Status, Verdict,
    SCHEMA_VERSION,
};
pub use spec::{ExperimentSpec, Scenario};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("malformed result sidecar: {0}")]
    Json(String),
    #[error("result schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("partial result from spec {found} merged into spec {expected}")]
    SpecMismatch { expected: String, found: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, err: csv::Error) -> Self {
        ExperimentError::Csv {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

/// Execution options that must not influence results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

/// Generator for replica `replica` of lane `lane`.
pub fn stream_rng(master_seed: u64, lane: u64, replica: u64) -> RandomSource {
    replica_rng(master_seed, (lane << 40) | replica)
}

pub(crate) struct Runner {
    pool: rayon::ThreadPool,
    pub seed: u64,
    pub hash: String,
}

impl Runner {
    /// Runs `f(i)` for i in 0..count in parallel; output is in index order.
    pub fn map<T, F>(&self, count: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        self.pool.install(|| (0..count).into_par_iter().map(f).collect())
    }

    pub fn rng(&self, lane: u64, replica: u64) -> RandomSource {
        stream_rng(self.seed, lane, replica)
    }
}

/// Runs a spec and returns its result; nothing is written.
pub fn run(spec: &ExperimentSpec, options: RunOptions) -> Result<ExperimentResult, ExperimentError> {
    spec.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = options.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    let runner = Runner {
        pool,
        seed: spec.master_seed,
        hash: spec.hash(),
    };
    let mut result = ExperimentResult {
        schema_version: SCHEMA_VERSION,
        scenario: spec.scenario.name().to_string(),
        provenance: Provenance {
            spec_hash: runner.hash.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: spec.master_seed,
            replicas: spec.replicas,
            spec: spec.canonical(),
        },
        rows: Vec::new(),
        fits: Vec::new(),
        verdicts: Vec::new(),
        notes: Vec::new(),
    };
    scenarios::run(spec, &runner, &mut result)?;
    Ok(result)
}

/// Runs a spec and persists the result at `path` (or the spec's output path).
pub fn run_to(spec: &ExperimentSpec, options: RunOptions, path: Option<&Path>) -> Result<ExperimentResult, ExperimentError> {
    let result = run(spec, options)?;
    let target = path
        .map(Path::to_path_buf)
        .or_else(|| spec.output.clone())
        .ok_or_else(|| ExperimentError::InvalidSpec("no output path given".into()))?;
    persist(&result, &target)?;
    Ok(result)
}
