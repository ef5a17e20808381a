//! `lerrw`: tree generation, single walks, oracle checks, moment tables,
//! experiments and result reports.
//!
//! Exit codes: 0 success or pass, 1 failed verification or tolerance,
//! 2 usage or I/O error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lerrw::environment::{
    beta_prime_moment, beta_prime_moment_quadrature, initial_weights, sample_environment, DirichletParams,
    WeightMode, WeightScheme,
};
use lerrw::experiments::{self, ExperimentError, ExperimentSpec, RunOptions, Status};
use lerrw::offspring::{OffspringKind, OffspringLaw};
use lerrw::oracle::{verify_equivalence, SuiteConfig};
use lerrw::rng::{fork, replica_rng};
use lerrw::trees::{sample_conditioned_gw, sample_kesten, PlaneTree, TreeHeader, DEFAULT_MAX_VERTICES};
use lerrw::walkers::{run_ctrw, run_lerrw, run_rwde, InitialWeights, Start, TraceConfig};

#[derive(Parser, Debug)]
#[command(name = "lerrw", version, about = "Reinforced random walks on critical Galton-Watson trees")]
#[command(propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a size-conditioned or Kesten tree and write it in text form.
    GenTree(GenTreeArgs),
    /// Run one walker on a tree file and write its trace as JSON.
    Simulate(SimulateArgs),
    /// Exhaustive exact check of the reinforced walk against its Dirichlet representation.
    VerifyOracle(VerifyArgs),
    /// Closed-form versus quadrature beta-prime moments.
    Moments(MomentsArgs),
    /// Run an experiment spec.
    Experiment(ExperimentArgs),
    /// Summarise a result file.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file with `section.key = value` entries; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "RW_THREADS")]
    threads: Option<usize>,
    /// Output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenTreeArgs {
    #[command(flatten)]
    common: Common,
    /// Vertex count of the conditioned tree.
    #[arg(long)]
    n: Option<u64>,
    /// Tail index; below 2 selects the stable family.
    #[arg(long)]
    gamma: Option<f64>,
    /// Sample Kesten's tree truncated at this depth instead.
    #[arg(long)]
    kesten_depth: Option<u32>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Walker {
    Lerrw,
    Rwde,
    Ctrw,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Tree file written by gen-tree.
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, value_enum, default_value = "lerrw")]
    walker: Walker,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// rescaled_subcritical, rescaled_critical or plain_power.
    #[arg(long)]
    mode: Option<String>,
    /// n·a_n^{-1} for the rescaled modes.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 5)]
    max_n: usize,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
}

#[derive(Args, Debug)]
struct MomentsArgs {
    #[command(flatten)]
    common: Common,
    /// Shape a (repeatable); defaults to a built-in grid.
    #[arg(long = "a")]
    a: Vec<f64>,
    /// Shape b (repeatable).
    #[arg(long = "b")]
    b: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    max_k: i32,
    /// Relative tolerance for the pass/fail verdict.
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    /// Spec file (same as --config).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Scenario preset to start from when no spec file is given.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
    /// Arbitrary `section.key=value` override (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Result path (with or without the .csv/.json extension).
    result: PathBuf,
}

enum CliError {
    /// Bad input or I/O problem: exit 2.
    Usage(String),
    /// A verification or tolerance failed: exit 1.
    Failed(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::GenTree(a) => gen_tree(a),
        Command::Simulate(a) => simulate(a),
        Command::VerifyOracle(a) => verify_oracle(a),
        Command::Moments(a) => moments(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Flattened `section.key` table from an optional config file.
fn read_config(path: Option<&Path>) -> Result<toml::Table, CliError> {
    let Some(path) = path else { return Ok(toml::Table::new()) };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut flat = toml::Table::new();
    fn walk(prefix: &str, t: &toml::Table, out: &mut toml::Table) {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(inner) => walk(&key, inner, out),
                other => {
                    out.insert(key, other.clone());
                }
            }
        }
    }
    walk("", &table, &mut flat);
    Ok(flat)
}

fn cfg_f64(cfg: &toml::Table, key: &str) -> Option<f64> {
    match cfg.get(key)? {
        toml::Value::Float(x) => Some(*x),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn cfg_u64(cfg: &toml::Table, key: &str) -> Option<u64> {
    cfg_f64(cfg, key).map(|x| x as u64)
}

fn law_for(gamma: f64) -> Result<OffspringLaw, CliError> {
    if gamma == 2.0 {
        Ok(OffspringLaw::geometric_half())
    } else {
        OffspringLaw::from_config(OffspringKind::StableFamily, gamma, 1.0).map_err(usage)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn gen_tree(a: GenTreeArgs) -> CliResult {
    let cfg = read_config(a.common.config.as_deref())?;
    let seed = a.common.seed.or(cfg_u64(&cfg, "experiment.seed")).unwrap_or(1);
    let gamma = a.gamma.or(cfg_f64(&cfg, "offspring.gamma")).unwrap_or(2.0);
    let law = law_for(gamma)?;
    let mut rng = replica_rng(seed, 0);
    let kesten_depth = a.kesten_depth.or(cfg_u64(&cfg, "tree.depth_limit").map(|d| d as u32));
    let (tree, header) = match kesten_depth {
        Some(depth) => {
            let cap = cfg_u64(&cfg, "tree.max_vertices").map_or(DEFAULT_MAX_VERTICES, |c| c as usize);
            let tree = sample_kesten(&law, depth, &mut rng, cap).map_err(usage)?;
            let header = TreeHeader {
                n: tree.len() as u64,
                law: law.label(),
                seed: Some(seed),
                kesten: true,
                depth_limit: Some(depth),
            };
            (tree, header)
        }
        None => {
            let n = a.n.or(cfg_u64(&cfg, "tree.n")).ok_or_else(|| usage("gen-tree needs --n or --kesten-depth"))?;
            let tree = sample_conditioned_gw(&law, n, &mut rng, 1 << 40).map_err(usage)?;
            let header = TreeHeader {
                n,
                law: law.label(),
                seed: Some(seed),
                kesten: false,
                depth_limit: None,
            };
            (tree, header)
        }
    };
    match &a.common.out {
        Some(path) => {
            let mut w = create(path)?;
            tree.write_text(&mut w, &header).map_err(usage)?;
            w.flush().map_err(usage)?;
            eprintln!("wrote {} vertices (height {}) to {}", tree.len(), tree.height(), path.display());
        }
        None => tree.write_text(std::io::stdout().lock(), &header).map_err(usage)?,
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult {
    let cfg = read_config(a.common.config.as_deref())?;
    let file = File::open(&a.tree).map_err(|e| usage(format!("{}: {e}", a.tree.display())))?;
    let (header, tree): (TreeHeader, PlaneTree) = PlaneTree::read_text(BufReader::new(file)).map_err(usage)?;
    let seed = a.common.seed.or(cfg_u64(&cfg, "experiment.seed")).unwrap_or(1);
    let alpha = a.alpha.or(cfg_f64(&cfg, "env.alpha")).unwrap_or(0.0);
    let delta = a.delta.or(cfg_f64(&cfg, "env.delta")).unwrap_or(1.0);
    let horizon = a.horizon.or(cfg_f64(&cfg, "walk.horizon")).unwrap_or(1e5);
    let mode: WeightMode = match a.mode.clone().or_else(|| cfg.get("env.mode").and_then(|v| v.as_str().map(String::from))) {
        Some(m) => m.parse().map_err(usage)?,
        None => WeightMode::PlainPower,
    };
    let scale = a.scale.or(cfg_f64(&cfg, "env.scale")).unwrap_or(1.0);
    let scheme = match mode {
        WeightMode::PlainPower => WeightScheme::plain_power(alpha, delta),
        m => WeightScheme::with_scale(m, alpha, delta, scale),
    }
    .map_err(usage)?;
    let mut rng = replica_rng(seed, 0);
    let trace_cfg = TraceConfig::geometric(horizon);
    let trace = match a.walker {
        Walker::Lerrw => {
            let weights = initial_weights(&scheme, &tree).map_err(usage)?;
            let mut habitat = &tree;
            run_lerrw(&mut habitat, &InitialWeights::Explicit(weights), delta, horizon as u64, &trace_cfg, &mut rng).trace
        }
        Walker::Rwde | Walker::Ctrw => {
            let weights = initial_weights(&scheme, &tree).map_err(usage)?;
            let params = DirichletParams::new(&weights, &tree, delta, true);
            let mut env_rng = fork(&mut rng, 0);
            let env = sample_environment(&params, &tree, &mut env_rng);
            match a.walker {
                Walker::Rwde => run_rwde(&tree, &env, Start::Base, horizon as u64, &trace_cfg, &mut rng),
                _ => run_ctrw(&tree, &env, Start::Base, horizon, &trace_cfg, &mut rng),
            }
        }
    };
    let doc = serde_json::json!({
        "tree": header,
        "walker": format!("{:?}", a.walker).to_lowercase(),
        "seed": seed,
        "scheme": scheme,
        "trace": trace,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(usage)?;
    match &a.common.out {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}").map_err(usage)?;
            w.flush().map_err(usage)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn verify_oracle(a: VerifyArgs) -> CliResult {
    let cfg = SuiteConfig {
        max_n: a.max_n,
        max_len: a.max_len,
        ..SuiteConfig::default()
    };
    let report = verify_equivalence(&cfg).map_err(usage)?;
    let mut text = format!(
        "trees {}\nconfigurations {}\npaths checked {}\nmismatches {}\nnormalization failures {}\n",
        report.trees,
        report.configurations,
        report.paths_checked,
        report.mismatches.len(),
        report.normalization_failures.len()
    );
    for m in &report.mismatches {
        text += &format!(
            "counterexample: child counts {:?} weights [{}] delta {} planted {} path {:?}: lerrw {} dirichlet {}\n",
            m.child_counts,
            m.weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(", "),
            m.delta,
            m.planted,
            m.path,
            m.lerrw,
            m.dirichlet
        );
    }
    for (counts, planted, len) in &report.normalization_failures {
        text += &format!("normalization failure: child counts {counts:?} planted {planted} length {len}\n");
    }
    text += if report.passed() { "PASS\n" } else { "FAIL\n" };
    print!("{text}");
    if let Some(path) = &a.common.out {
        std::fs::write(path, &text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("oracle equivalence".into()))
    }
}

fn moments(a: MomentsArgs) -> CliResult {
    let a_values = if a.a.is_empty() { vec![0.5, 1.0, 2.0, 5.0] } else { a.a.clone() };
    let b_values = if a.b.is_empty() { vec![4.5, 5.0, 6.0, 8.0, 12.0] } else { a.b.clone() };
    let mut worst: f64 = 0.0;
    let mut out = String::from("a b k closed_form quadrature rel_error\n");
    for &x in &a_values {
        for &y in &b_values {
            for k in 1..=a.max_k {
                let Ok(exact) = beta_prime_moment(x, y, k) else {
                    out += &format!("{x} {y} {k} pole - -\n");
                    continue;
                };
                let quad = beta_prime_moment_quadrature(x, y, k);
                let rel = ((quad - exact) / exact).abs();
                worst = worst.max(rel);
                out += &format!("{x} {y} {k} {exact:.15e} {quad:.15e} {rel:.3e}\n");
            }
        }
    }
    let verdict = worst <= a.tolerance;
    out += &format!("max relative error {worst:.3e} (tolerance {:e}) {}\n", a.tolerance, if verdict { "PASS" } else { "FAIL" });
    print!("{out}");
    if let Some(path) = &a.common.out {
        std::fs::write(path, &out).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    if verdict {
        Ok(())
    } else {
        Err(CliError::Failed(format!("moment mismatch {worst:.3e}")))
    }
}

/// Sets `key` or, when the preset uses a list-valued sibling `key + "s"`, that list.
fn override_param(spec: &mut ExperimentSpec, key: &str, value: f64) -> Result<(), CliError> {
    let plural = format!("{key}s");
    let target = if spec.params().contains_key(&plural) { plural } else { key.to_string() };
    spec.set_raw(&target, &format!("{value:?}"))?;
    Ok(())
}

fn experiment(a: ExperimentArgs) -> CliResult {
    let path = a.spec.as_ref().or(a.common.config.as_ref());
    let mut spec = match (path, &a.scenario) {
        (Some(p), _) => ExperimentSpec::load(p)?,
        (None, Some(name)) => ExperimentSpec::preset(name.parse()?),
        (None, None) => return Err(usage("experiment needs --spec FILE or --scenario NAME")),
    };
    if let Some(s) = a.common.seed {
        spec.master_seed = s;
    }
    if let Some(r) = a.replicas {
        spec.set_raw("experiment.replicas", &r.to_string())?;
    }
    if let Some(x) = a.alpha {
        override_param(&mut spec, "env.alpha", x)?;
    }
    if let Some(x) = a.delta {
        override_param(&mut spec, "env.delta", x)?;
    }
    if let Some(g) = a.gamma {
        spec.set_raw("offspring.gamma", &format!("{g:?}"))?;
        let kind = if g == 2.0 { "geometric_half" } else { "stable_family" };
        spec.set_raw("offspring.kind", &format!("\"{kind}\""))?;
    }
    if let Some(n) = a.n {
        spec.set_raw("tree.n", &n.to_string())?;
    }
    if let Some(h) = a.horizon {
        spec.set_raw("walk.horizon", &h.to_string())?;
    }
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        spec.set_raw(k.trim(), v.trim())?;
    }
    spec.validate()?;
    let options = RunOptions { threads: a.common.threads };
    let out_path = a.common.out.clone().or_else(|| spec.output.clone());
    let result = match &out_path {
        Some(p) => experiments::run_to(&spec, options, Some(p))?,
        None => experiments::run(&spec, options)?,
    };
    print!("{}", render_report(&result));
    if let Some(p) = &out_path {
        eprintln!("wrote {} and {}", p.with_extension("csv").display(), p.with_extension("json").display());
    }
    if result.passed() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} did not pass every tolerance", result.scenario)))
    }
}

fn render_report(result: &experiments::ExperimentResult) -> String {
    let mut s = format!(
        "scenario {}\nspec hash {}\nseed {}  replicas {}  code {}\n",
        result.scenario,
        result.provenance.spec_hash,
        result.provenance.master_seed,
        result.provenance.replicas,
        result.provenance.code_version
    );
    for f in &result.fits {
        let ci = f.ci.map_or("n/a".to_string(), |(lo, hi)| format!("[{lo:.4}, {hi:.4}] ({:.0}%)", f.ci_level * 100.0));
        let target = f.target.map_or("-".to_string(), |t| format!("{t:.4}"));
        s += &format!("fit {}: slope {:.4} (target {target}), CI {ci}, {} points\n", f.name, f.slope, f.points);
    }
    for v in &result.verdicts {
        let status = match v.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        };
        s += &format!("{status} {}: measured {:.6}; {}\n", v.name, v.measured, v.tolerance);
    }
    for n in &result.notes {
        s += &format!("note: {n}\n");
    }
    s += &format!("overall {}\n", if result.passed() { "PASS" } else { "FAIL" });
    s
}

fn report(a: ReportArgs) -> CliResult {
    let result = experiments::load(&a.result)?;
    print!("{}", render_report(&result));
    println!("rows {}", result.rows.len());
    if result.passed() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("{} did not pass every tolerance", result.scenario)))
    }
}
