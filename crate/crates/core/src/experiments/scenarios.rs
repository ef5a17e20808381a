//! Scenario bodies.

use crate::environment::{
    branch_limit_targets, initial_weights, sample_environment, sample_log_rho_along_path, DirichletParams,
    WeightMode, WeightScheme,
};
use crate::offspring::OffspringLaw;
use crate::oracle::{exact_exit_stats, snake_covariance, verify_equivalence, SuiteConfig};
use crate::rng::fork;
use crate::snake::sample_snake;
use crate::trees::{sample_conditioned_gw, KestenExplorer, PlaneTree};
use crate::walkers::{ctrw_exit, run_lerrw, InitialWeights, Start, TraceConfig, WalkTrace, BASE};

use super::persist::{aggregate, summarize, Fit, Observation, ReplicaSummary, Row, Status, Verdict};
use super::spec::{ExperimentSpec, Scenario};
use super::stats;
use super::{ExperimentError, ExperimentResult, Runner};

const REJECTION_BUDGET: u64 = 1 << 40;
const BOOTSTRAP_RESAMPLES: usize = 200;
const CI_LEVEL: f64 = 0.95;

pub(super) fn run(spec: &ExperimentSpec, runner: &Runner, out: &mut ExperimentResult) -> Result<(), ExperimentError> {
    match spec.scenario {
        Scenario::PemantleEquivalence => pemantle(spec, out),
        Scenario::PotentialClt => potential_clt(spec, runner, out),
        Scenario::SnakeCovariance => snake(spec, runner, out),
        Scenario::GreensExit => greens_exit(spec, runner, out),
        Scenario::RecurrenceTransience => recurrence(spec, runner, out),
        Scenario::DisplacementRecurrent | Scenario::DisplacementCritical | Scenario::DisplacementTransient => {
            displacement(spec, runner, out)
        }
        Scenario::MeasureStability => measure_stability(spec, runner, out),
    }
}

fn law(spec: &ExperimentSpec) -> Result<OffspringLaw, ExperimentError> {
    let kind = spec
        .str_or("offspring.kind", "geometric_half")?
        .parse()
        .map_err(|e: crate::offspring::OffspringError| ExperimentError::InvalidSpec(e.to_string()))?;
    let gamma = spec.f64_or("offspring.gamma", 2.0)?;
    let c = spec.f64_or("offspring.an_constant", 1.0)?;
    OffspringLaw::from_config(kind, gamma, c).map_err(|e| ExperimentError::InvalidSpec(e.to_string()))
}

fn fmt_param(x: f64) -> String {
    format!("{x}")
}

fn pemantle(spec: &ExperimentSpec, out: &mut ExperimentResult) -> Result<(), ExperimentError> {
    let cfg = SuiteConfig {
        max_n: spec.u64("oracle.max_n")? as usize,
        max_len: spec.u64("oracle.max_len")? as usize,
        ..SuiteConfig::default()
    };
    let report = verify_equivalence(&cfg)?;
    let row = |series: &str, v: f64| Row {
        mean: Some(v),
        ..summarize(series, 0.0, &[], 0)
    };
    out.rows.push(row("trees", report.trees as f64));
    out.rows.push(row("configurations", report.configurations as f64));
    out.rows.push(row("paths_checked", report.paths_checked as f64));
    out.verdicts.push(Verdict::within(
        "equivalence",
        report.mismatches.len() as f64,
        Some(0.0),
        Some(0.0),
        "exact rational equality on every path",
    ));
    out.verdicts.push(Verdict::within(
        "normalization",
        report.normalization_failures.len() as f64,
        Some(0.0),
        Some(0.0),
        "path probabilities of each length sum to exactly 1",
    ));
    out.verdicts.push(Verdict::check("nonempty", report.paths_checked > 0, "at least one path checked"));
    for m in report.mismatches.iter().take(5) {
        out.notes.push(format!(
            "counterexample: child counts {:?}, weights {:?}, delta {}, planted {}, path {:?}: lerrw {} vs dirichlet {}",
            m.child_counts,
            m.weights.iter().map(|w| w.to_string()).collect::<Vec<_>>(),
            m.delta,
            m.planted,
            m.path,
            m.lerrw,
            m.dirichlet
        ));
    }
    Ok(())
}

/// First contour position of a vertex at graph depth `h`.
fn first_at_depth(tree: &PlaneTree, contour: &[u32], h: u32) -> Option<(usize, u32)> {
    contour.iter().position(|&v| tree.depth(v) == h).map(|i| (i, contour[i]))
}

fn potential_clt(spec: &ExperimentSpec, runner: &Runner, out: &mut ExperimentResult) -> Result<(), ExperimentError> {
    let law = law(spec)?;
    let n = spec.u64("tree.n")?;
    let alpha = spec.f64("env.alpha")?;
    let delta = spec.f64("env.delta")?;
    let depths = spec.f64_list("clt.depths")?;
    let tol = spec.f64("clt.tolerance")?;
    let max_skew = spec.f64("clt.max_skew")?;
    let an = law.scaling_an(n);
    let scheme = WeightScheme::new(WeightMode::RescaledSubcritical, alpha, delta, n as f64, an)?;
    let scale = scheme.scale();
    let wanted: Vec<u32> = depths.iter().map(|d| ((d * scale).round() as u32).max(1)).collect();

    // one fixed tree, tall enough to contain every requested depth
    let mut tree_rng = runner.rng(0, 0);
    let mut attempts = 0;
    let (tree, points) = loop {
        attempts += 1;
        let tree = sample_conditioned_gw(&law, n, &mut tree_rng, REJECTION_BUDGET)?;
        let contour = tree.contour_order_padded();
        let pts: Option<Vec<(usize, u32)>> = wanted.iter().map(|&h| first_at_depth(&tree, &contour, h)).collect();
        if let Some(p) = pts {
            break (tree, p);
        }
        if attempts >= 100 {
            return Err(ExperimentError::InvalidSpec(format!(
                "no tree of size {n} reached depth {} in 100 attempts",
                wanted.iter().max().unwrap_or(&0)
            )));
        }
    };
    out.notes.push(format!(
        "tree: n = {n}, height {}, n/a_n = {scale:.6}, {attempts} sample(s) drawn",
        tree.height()
    ));

    let hash = runner.hash.clone();
    let point_depths: Vec<u32> = points.iter().map(|&(_, v)| tree.depth(v)).collect();
    let partials = runner.map(spec.replicas, |i| {
        let mut rng = runner.rng(1, i);
        let observations = point_depths
            .iter()
            .map(|&h| {
                let v: f64 = sample_log_rho_along_path(&scheme, h, &mut rng).iter().sum();
                let w = v + alpha * f64::from(h).ln();
                Observation::new("W", f64::from(h) / scale, Some(w))
            })
            .collect();
        ReplicaSummary {
            replica: i,
            spec_hash: hash.clone(),
            observations,
        }
    });
    let mut rows = aggregate(&runner.hash, &partials)?;
    for (k, &(pos, v)) in points.iter().enumerate() {
        let h = point_depths[k];
        let d = f64::from(h) / scale;
        let (mean_target, var_target) = branch_limit_targets(&scheme, d);
        let values: Vec<f64> = partials.iter().map(|p| p.observations[k].value.unwrap_or(f64::NAN)).collect();
        let row = rows.iter_mut().find(|r| r.x == d).expect("row for every point");
        row.target = Some(mean_target);
        let mean = row.mean.unwrap_or(f64::NAN);
        let var = row.variance.unwrap_or(f64::NAN);
        let skew = stats::skewness(&values).unwrap_or(f64::NAN);
        let label = format!("d={d:.4}");
        out.notes.push(format!(
            "point {label}: contour index {pos} (t = {:.6}), vertex {v}, depth {h}; targets mean {mean_target:.6}, variance {var_target:.6}; kurtosis {:.4}",
            pos as f64 / (2 * n) as f64,
            stats::excess_kurtosis(&values).unwrap_or(f64::NAN)
        ));
        out.verdicts.push(Verdict::within(
            format!("variance {label}"),
            var / var_target,
            Some(1.0 - tol),
            Some(1.0 + tol),
            format!("empirical variance within {}% of {var_target:.6}", tol * 100.0),
        ));
        out.verdicts.push(Verdict::within(
            format!("mean {label}"),
            mean / mean_target,
            Some(1.0 - tol),
            Some(1.0 + tol),
            format!("empirical mean within {}% of {mean_target:.6}", tol * 100.0),
        ));
        out.verdicts.push(Verdict::within(
            format!("skewness {label}"),
            skew,
            Some(-max_skew),
            Some(max_skew),
            format!("|skewness| <= {max_skew}"),
        ));
        let var_row = Row {
            series: "W_variance".into(),
            target: Some(var_target),
            ..summarize("W_variance", d, &[var], 0)
        };
        rows.push(var_row);
    }
    out.rows = rows;
    Ok(())
}

fn snake(spec: &ExperimentSpec, runner: &Runner, out: &mut ExperimentResult) -> Result<(), ExperimentError> {
    let law = law(spec)?;
    let n = spec.u64("tree.n")?;
    let delta = spec.f64("env.delta")?;
    let alphas = spec.f64_list("snake.alphas")?;
    let samples = spec.u64("snake.samples")?;
    let max_z = spec.f64("snake.max_z")?;
    let rescale = spec.f64_or("snake.rescale", law.scaling_an(n) / n as f64)?;
    let blocks = spec.replicas;
    if samples < blocks {
        return Err(ExperimentError::InvalidSpec("snake.samples must be at least the replica count".into()));
    }
    let tree = sample_conditioned_gw(&law, n, &mut runner.rng(0, 0), REJECTION_BUDGET)?;
    let size = tree.len();
    let pairs: Vec<(usize, usize)> = (0..size).flat_map(|i| (i..size).map(move |j| (i, j))).collect();
    out.notes.push(format!("tree child counts {:?}, rescale {rescale}", tree.child_counts()));
    for (lane, &alpha) in alphas.iter().enumerate() {
        let series = format!("cov[alpha={}]", fmt_param(alpha));
        let exact = snake_covariance(&tree, rescale, alpha);
        let hash = runner.hash.clone();
        let partials = runner.map(blocks, |b| {
            let mut rng = runner.rng(lane as u64 + 1, b);
            // samples split as evenly as possible over blocks
            let m = samples / blocks + u64::from(b < samples % blocks);
            let mut acc = vec![0.0; pairs.len()];
            for _ in 0..m {
                let f = sample_snake(&tree, rescale, alpha, delta, &mut rng);
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    acc[k] += f.phi[i] * f.phi[j];
                }
            }
            ReplicaSummary {
                replica: b,
                spec_hash: hash.clone(),
                observations: pairs
                    .iter()
                    .zip(&acc)
                    .map(|(&(i, j), s)| Observation::new(series.clone(), (i * size + j) as f64, Some(s / m as f64)))
                    .collect(),
            }
        });
        let mut rows = aggregate(&runner.hash, &partials)?;
        let mut worst: f64 = 0.0;
        for row in &mut rows {
            let idx = row.x as usize;
            let target = exact[idx];
            row.target = Some(target);
            let (mean, se) = (row.mean.unwrap_or(f64::NAN), row.se.unwrap_or(f64::NAN));
            let z = if se > 0.0 {
                (mean - target) / se
            } else if mean == target {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z.abs());
        }
        out.verdicts.push(Verdict::within(
            format!("max |z| alpha={}", fmt_param(alpha)),
            worst,
            None,
            Some(max_z),
            format!("every covariance entry within {max_z} SE of the exact value ({} entries)", pairs.len()),
        ));
        out.rows.extend(rows);
    }
    Ok(())
}

fn greens_exit(spec: &ExperimentSpec, runner: &Runner, out: &mut ExperimentResult) -> Result<(), ExperimentError> {
    let law = law(spec)?;
    let n = spec.u64("tree.n")?;
    let delta = spec.f64("env.delta")?;
    let weight = spec.f64("env.weight")?;
    let runs = spec.u64("exit.runs")?;
    let max_z = spec.f64("exit.max_z")?;
    let results = runner.map(spec.replicas, |i| -> Result<(Row, Row, f64), ExperimentError> {
        let mut rng = runner.rng(0, i);
        let tree = sample_conditioned_gw(&law, n, &mut rng, REJECTION_BUDGET)?;
        let weights = vec![weight; tree.len()];
        let params = DirichletParams::new(&weights, &tree, delta, true);
        let env = sample_environment(&params, &tree, &mut rng);
        let absorbing: Vec<bool> = (0..tree.len() as u32).map(|v| tree.child_count(v) == 0).collect();
        let conductance: Vec<f64> = (0..tree.len() as u32).map(|v| env.conductance(v)).collect();
        let exact = exact_exit_stats(&tree, &conductance, true, &absorbing, true)?;
        let mut times = Vec::with_capacity(runs as usize);
        let mut at_base = Vec::with_capacity(runs as usize);
        for _ in 0..runs {
            let (t, v) = ctrw_exit(&tree, &env, Start::Vertex(0), &absorbing, true, &mut rng);
            times.push(t);
            at_base.push(if v == BASE { 1.0 } else { 0.0 });
        }
        let x = i as f64;
        let time_row = Row {
            target: Some(exact.expected_time[0]),
            ..summarize("exit_time", x, &times, 0)
        };
        let base_col = exact.boundary.len() - 1;
        let base_row = Row {
            target: Some(exact.exit_probability[0][base_col]),
            ..summarize("exit_at_base", x, &at_base, 0)
        };
        let z = (time_row.mean.unwrap_or(f64::NAN) - exact.expected_time[0]) / time_row.se.unwrap_or(f64::NAN);
        Ok((time_row, base_row, z))
    });
    for r in results {
        let (time_row, base_row, z) = r?;
        out.verdicts.push(Verdict::within(
            format!("exit time z environment={}", time_row.x),
            z,
            Some(-max_z),
            Some(max_z),
            format!("mean exit time from the root within {max_z} SE of the exact value"),
        ));
        out.rows.push(time_row);
        out.rows.push(base_row);
    }
    out.rows.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    Ok(())
}

fn walk_checkpoints(spec: &ExperimentSpec, horizon: u64) -> Result<Vec<f64>, ExperimentError> {
    let listed = spec.f64_list_or("walk.checkpoints")?;
    if !listed.is_empty() {
        return Ok(listed);
    }
    let start = spec.f64_or("walk.first_checkpoint", 1000.0)?;
    let per_decade = spec.f64_or("walk.per_decade", 4.0)?;
    Ok(TraceConfig::log_grid(start, 10f64.powf(1.0 / per_decade), horizon as f64).checkpoints)
}

/// One LERRW run on a lazily grown Kesten tree.
fn kesten_walk(
    law: &OffspringLaw,
    scheme: &WeightScheme,
    depth_limit: u32,
    max_vertices: usize,
    horizon: u64,
    cfg: &TraceConfig,
    mut rng: crate::RandomSource,
) -> WalkTrace {
    let mut explorer = KestenExplorer::new(law.clone(), depth_limit, max_vertices, fork(&mut rng, 0));
    let mut walk_rng = fork(&mut rng, 1);
    run_lerrw(&mut explorer, &InitialWeights::ByDepth(*scheme), scheme.delta, horizon, cfg, &mut walk_rng).trace
}

/// Per-checkpoint observations: `value(k)` for reached checkpoints, `None`
/// (censored) for the rest.
fn per_checkpoint(series: &str, cfg: &TraceConfig, trace: &WalkTrace, value: impl Fn(usize) -> f64) -> Vec<Observation> {
    cfg.checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| Observation::new(series, t, (k < trace.checkpoint_times.len()).then(|| value(k))))
        .collect()
}

fn recurrence(spec: &ExperimentSpec, runner: &Runner, out: &mut ExperimentResult) -> Result<(), ExperimentError> {
    let law = law(spec)?;
    let alphas = spec.f64_list("env.alphas")?;
    let delta = spec.f64("env.delta")?;
    let depth_limit = spec.u64("tree.depth_limit")? as u32;
    let max_vertices = spec.u64("tree.max_vertices").unwrap_or(20_000_000) as usize;
    let horizon = spec.u64("walk.horizon")?;
    let return_depths: Vec<u32> = spec.f64_list("walk.return_depths")?.iter().map(|&d| d as u32).collect();
    let key_depth = spec.u64("recurrence.return_depth")? as u32;
    let max_fraction = spec.f64("recurrence.max_return_fraction")?;
    let recurrent = spec.f64_list("recurrence.recurrent_alphas").unwrap_or_else(|_| vec![0.0, 1.0]);
    let transient = spec.f64_list("recurrence.transient_alphas").unwrap_or_else(|_| vec![2.0]);
    let cfg = TraceConfig {
        checkpoints: walk_checkpoints(spec, horizon)?,
        return_depths: return_depths.clone(),
        ..Default::default()
    };
    for (lane, &alpha) in alphas.iter().enumerate() {
        let scheme = WeightScheme::plain_power(alpha, delta)?;
        let tag = format!("alpha={}", fmt_param(alpha));
        let hash = runner.hash.clone();
        let partials = runner.map(spec.replicas, |i| {
            let trace = kesten_walk(&law, &scheme, depth_limit, max_vertices, horizon, &cfg, runner.rng(lane as u64, i));
            let mut observations = per_checkpoint(&format!("root_returns[{tag}]"), &cfg, &trace, |k| trace.root_returns[k] as f64);
            for (j, &d) in return_depths.iter().enumerate() {
                let (reached, returned) = trace.returned_after_depth[j];
                observations.push(Observation::new(format!("reached_depth[{tag}]"), f64::from(d), Some(f64::from(u8::from(reached)))));
                if reached {
                    observations.push(Observation::new(
                        format!("returned_after_depth[{tag}]"),
                        f64::from(d),
                        Some(f64::from(u8::from(returned))),
                    ));
                }
            }
            ReplicaSummary {
                replica: i,
                spec_hash: hash.clone(),
                observations,
            }
        });
        let rows = aggregate(&runner.hash, &partials)?;
        let returns: Vec<&Row> = rows.iter().filter(|r| r.series == format!("root_returns[{tag}]")).collect();
        let censored = partials.iter().filter(|p| p.observations.iter().any(|o| o.value.is_none())).count();
        out.notes.push(format!("{tag}: {censored} of {} replicas censored before the horizon", spec.replicas));
        if recurrent.contains(&alpha) {
            let medians: Vec<f64> = returns.iter().map(|r| r.median.unwrap_or(f64::NAN)).collect();
            let increasing = medians.len() >= 2 && medians.windows(2).all(|w| w[1] > w[0]);
            let mut v = Verdict::check(
                format!("median returns increase {tag}"),
                increasing,
                format!("median root-return count strictly increases across checkpoints {medians:?}"),
            );
            if returns.iter().any(|r| r.censored > 0) {
                v.status = Status::Inconclusive;
            }
            out.verdicts.push(v);
        }
        if transient.contains(&alpha) {
            let frac = rows
                .iter()
                .find(|r| r.series == format!("returned_after_depth[{tag}]") && r.x == f64::from(key_depth));
            let measured = frac.and_then(|r| r.mean).unwrap_or(f64::NAN);
            let reached = frac.map_or(0, |r| r.count);
            out.verdicts.push(Verdict::within(
                format!("return fraction after depth {key_depth} {tag}"),
                measured,
                None,
                Some(max_fraction - f64::EPSILON),
                format!("fraction of the {reached} replicas reaching depth {key_depth} that return to the root is below {max_fraction}"),
            ));
        }
        out.rows.extend(rows);
    }
    Ok(())
}

/// (x, y) transform of a checkpoint and its median for each displacement regime.
fn fit_axes(scenario: Scenario, alpha: f64, scale: f64, t: f64, median: f64) -> (f64, f64) {
    match scenario {
        Scenario::DisplacementRecurrent => (t.ln().powf(1.0 / (1.0 - alpha)), median / scale),
        _ => (t.ln(), median.ln()),
    }
}

fn displacement(spec: &ExperimentSpec, runner: &Runner, out: &mut ExperimentResult) -> Result<(), ExperimentError> {
    let scenario = spec.scenario;
    let law = law(spec)?;
    let gamma = law.gamma();
    let alpha = spec.f64("env.alpha")?;
    let deltas = spec.f64_list("env.deltas")?;
    let scale = spec.f64_or("env.scale", 1.0)?;
    let depth_limit = spec.u64("tree.depth_limit")? as u32;
    let max_vertices = spec.u64("tree.max_vertices").unwrap_or(20_000_000) as usize;
    let horizon = spec.u64("walk.horizon")?;
    let decades = spec.f64("fit.decades")?;
    let lower = spec.f64_list_or("fit.lower")?;
    let upper = spec.f64_list_or("fit.upper")?;
    let max_censored = spec.f64_or("walk.max_censored_fraction", 0.01)?;
    let cfg = TraceConfig {
        checkpoints: walk_checkpoints(spec, horizon)?,
        ..Default::default()
    };
    let fit_from = horizon as f64 * 10f64.powf(-decades) * (1.0 - 1e-9);
    let fit_idx: Vec<usize> = (0..cfg.checkpoints.len()).filter(|&k| cfg.checkpoints[k] >= fit_from).collect();
    let mut slopes = Vec::new();
    for (lane, &delta) in deltas.iter().enumerate() {
        let scheme = match scenario {
            Scenario::DisplacementRecurrent => WeightScheme::with_scale(WeightMode::RescaledSubcritical, alpha, delta, scale)?,
            Scenario::DisplacementCritical => WeightScheme::with_scale(WeightMode::RescaledCritical, alpha, delta, scale)?,
            _ => WeightScheme::plain_power(alpha, delta)?,
        };
        let tag = format!("delta={}", fmt_param(delta));
        let series = format!("max_displacement[{tag}]");
        let hash = runner.hash.clone();
        let traces = runner.map(spec.replicas, |i| {
            kesten_walk(&law, &scheme, depth_limit, max_vertices, horizon, &cfg, runner.rng(lane as u64, i))
        });
        let partials: Vec<ReplicaSummary> = traces
            .iter()
            .enumerate()
            .map(|(i, tr)| ReplicaSummary {
                replica: i as u64,
                spec_hash: hash.clone(),
                observations: per_checkpoint(&series, &cfg, tr, |k| f64::from(tr.max_displacement[k])),
            })
            .collect();
        let mut rows = aggregate(&runner.hash, &partials)?;
        let censored = traces.iter().filter(|t| t.censored()).count();
        let censored_fraction = censored as f64 / traces.len() as f64;
        out.notes.push(format!(
            "{tag}: {censored} of {} replicas censored (depth limit {depth_limit}, vertex budget {max_vertices})",
            traces.len()
        ));
        let inconclusive = censored_fraction >= max_censored;

        // medians at the fit checkpoints, then the same fit on bootstrap resamples
        let median_at = |units: &[Vec<Option<f64>>], k: usize| -> Option<f64> {
            let v: Vec<f64> = units.iter().filter_map(|u| u[k]).collect();
            stats::median(&v)
        };
        let fit_of = |units: &[Vec<Option<f64>>]| -> Option<stats::LineFit> {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (k, &ci) in fit_idx.iter().enumerate() {
                let m = median_at(units, k)?;
                let (x, y) = fit_axes(scenario, alpha, scale, cfg.checkpoints[ci], m);
                if !y.is_finite() {
                    return None;
                }
                xs.push(x);
                ys.push(y);
            }
            stats::linear_fit(&xs, &ys)
        };
        let units: Vec<Vec<Option<f64>>> = partials
            .iter()
            .map(|p| fit_idx.iter().map(|&ci| p.observations[ci].value).collect())
            .collect();
        let target = match scenario {
            Scenario::DisplacementRecurrent => ((1.0 - alpha) / delta).powf(1.0 / (1.0 - alpha)),
            Scenario::DisplacementCritical => {
                if delta <= (2.0 * gamma - 1.0) / (gamma - 1.0) {
                    (gamma - 1.0) / (2.0 * gamma - 1.0)
                } else {
                    1.0 / delta
                }
            }
            _ => (2.0 * gamma - 1.0) / (2.0 * gamma),
        };
        let model = match scenario {
            Scenario::DisplacementRecurrent => "median max displacement / scale against (ln t)^(1/(1-alpha))",
            _ => "ln median max displacement against ln t",
        };
        let Some(fit) = fit_of(&units) else {
            out.verdicts.push(Verdict {
                name: format!("fit {tag}"),
                measured: 0.0,
                lower: None,
                upper: None,
                tolerance: "fit needs a finite median at every fit checkpoint".into(),
                status: Status::Inconclusive,
            });
            out.rows.extend(rows);
            slopes.push(None);
            continue;
        };
        let mut boot_rng = runner.rng(1 << 20, lane as u64);
        let ci = stats::bootstrap_interval(&units, BOOTSTRAP_RESAMPLES, CI_LEVEL, &mut boot_rng, |s| {
            fit_of(s).map(|f| f.slope)
        });
        out.fits.push(Fit {
            name: format!("growth {tag}"),
            series: series.clone(),
            model: model.into(),
            slope: fit.slope,
            intercept: fit.intercept,
            slope_se: fit.slope_se,
            ci,
            ci_level: CI_LEVEL,
            ci_method: format!("percentile bootstrap over replicas, {BOOTSTRAP_RESAMPLES} resamples"),
            points: fit_idx.len(),
            target: Some(target),
        });
        for row in &mut rows {
            if scenario == Scenario::DisplacementRecurrent {
                row.target = Some(target * row.x.ln().powf(1.0 / (1.0 - alpha)) * scale);
            }
        }
        let mut push = |mut v: Verdict| {
            if inconclusive {
                v.status = Status::Inconclusive;
                v.tolerance += &format!(" [censored fraction {censored_fraction:.3} >= {max_censored}]");
            }
            out.verdicts.push(v);
        };
        match scenario {
            Scenario::DisplacementRecurrent => {
                if let (Some(&lo), Some(&hi)) = (lower.get(lane), upper.get(lane)) {
                    push(Verdict::within(
                        format!("slope ratio {tag}"),
                        fit.slope / target,
                        Some(lo),
                        Some(hi),
                        format!("fitted slope / {target:.6} within [{lo}, {hi}]"),
                    ));
                }
            }
            Scenario::DisplacementCritical => {
                if let (Some(&lo), Some(&hi)) = (lower.get(lane), upper.get(lane)) {
                    push(Verdict::within(
                        format!("exponent {tag}"),
                        fit.slope,
                        Some(lo),
                        Some(hi),
                        format!("fitted exponent within [{lo}, {hi}] (target {target:.6})"),
                    ));
                }
            }
            _ => {
                let max_speed = spec.f64("transient.max_speed")?;
                let max_exponent = spec.f64("transient.max_exponent")?;
                let speeds: Vec<f64> = rows
                    .iter()
                    .map(|r| r.median.unwrap_or(f64::NAN) / r.x)
                    .collect();
                let last = *speeds.last().unwrap_or(&f64::NAN);
                push(Verdict::within(
                    format!("final speed {tag}"),
                    last,
                    None,
                    Some(max_speed - f64::EPSILON),
                    format!("median M(t)/t at the horizon below {max_speed}"),
                ));
                let tail = &speeds[speeds.len().saturating_sub(3)..];
                let decreasing = tail.len() == 3 && tail.windows(2).all(|w| w[1] < w[0]);
                push(Verdict::check(
                    format!("speed decreasing {tag}"),
                    decreasing,
                    format!("median M(t)/t strictly decreasing over the last three checkpoints {tail:?}"),
                ));
                push(Verdict::within(
                    format!("exponent {tag}"),
                    fit.slope,
                    None,
                    Some(max_exponent),
                    format!("fitted growth exponent at most {max_exponent} (ceiling {target:.6})"),
                ));
                for (row, s) in rows.iter().zip(&speeds) {
                    out.rows.push(Row {
                        series: format!("speed[{tag}]"),
                        ..summarize("", row.x, &[*s], row.censored)
                    });
                }
            }
        }
        slopes.push(Some((delta, fit.slope, inconclusive)));
        out.rows.extend(rows);
    }
    // raising Δ must lower the fitted slope
    if scenario != Scenario::DisplacementTransient && deltas.len() >= 2 {
        let known: Vec<(f64, f64, bool)> = slopes.iter().flatten().copied().collect();
        let mut v = if known.len() == deltas.len() {
            let mut sorted = known.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let ok = sorted.windows(2).all(|w| w[1].1 < w[0].1);
            Verdict::check(
                "monotone in delta",
                ok,
                format!(
                    "fitted slope strictly decreases as delta increases: {:?}",
                    sorted.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>()
                ),
            )
        } else {
            Verdict {
                name: "monotone in delta".into(),
                measured: 0.0,
                lower: Some(1.0),
                upper: Some(1.0),
                tolerance: "needs a fit for every delta".into(),
                status: Status::Inconclusive,
            }
        };
        if known.iter().any(|s| s.2) {
            v.status = Status::Inconclusive;
        }
        out.verdicts.push(v);
    }
    out.rows.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.total_cmp(&b.x)));
    Ok(())
}

fn measure_stability(spec: &ExperimentSpec, runner: &Runner, out: &mut ExperimentResult) -> Result<(), ExperimentError> {
    let law = law(spec)?;
    let alpha = spec.f64("env.alpha")?;
    let delta = spec.f64("env.delta")?;
    let sizes: Vec<u64> = spec.f64_list("stability.sizes")?.iter().map(|&n| n as u64).collect();
    let mut samples: Vec<Vec<f64>> = Vec::new();
    for (lane, &n) in sizes.iter().enumerate() {
        let an = law.scaling_an(n);
        let scheme = if alpha < 1.0 {
            WeightScheme::new(WeightMode::RescaledSubcritical, alpha, delta, n as f64, an)?
        } else {
            WeightScheme::new(WeightMode::RescaledCritical, alpha, delta, n as f64, an)?
        };
        let c_n = if alpha < 1.0 {
            scheme.scale().powf(-alpha) / (2 * n) as f64
        } else {
            1.0 / (2 * n) as f64
        };
        let values = runner.map(spec.replicas, |i| -> Result<f64, ExperimentError> {
            let mut rng = runner.rng(lane as u64, i);
            let tree = sample_conditioned_gw(&law, n, &mut rng, REJECTION_BUDGET)?;
            let weights = initial_weights(&scheme, &tree)?;
            let params = DirichletParams::new(&weights, &tree, delta, true);
            let env = sample_environment(&params, &tree, &mut rng);
            let mut nu = env.nu().to_vec();
            nu.sort_by(f64::total_cmp);
            Ok(c_n * nu.iter().sum::<f64>())
        });
        let values: Vec<f64> = values.into_iter().collect::<Result<_, _>>()?;
        out.rows.push(summarize("c_nu", n as f64, &values, 0));
        samples.push(values);
    }
    for k in 1..samples.len() {
        let d = stats::ks_statistic(&samples[k - 1], &samples[k]).unwrap_or(f64::NAN);
        let p = stats::ks_p_value(d, samples[k - 1].len(), samples[k].len());
        out.rows.push(Row {
            series: "ks".into(),
            ..summarize("ks", sizes[k] as f64, &[d], 0)
        });
        out.notes.push(format!("KS({} vs {}) = {d:.5}, asymptotic p = {p:.4}", sizes[k - 1], sizes[k]));
    }
    Ok(())
}
