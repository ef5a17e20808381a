//! Initial weights, Dirichlet parameters, and the random environment they
//! induce: conductance ratios ρ, potential V, edge resistances and measure ν.
//!
//! Per-edge quantities are indexed by the child endpoint: entry `v` belongs to
//! the edge {parent(v), v}, and entry 0 to the planted edge {base, root}.

use std::io::Write;
use std::ops::{Add, Div};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::integrate_panels;
use crate::trees::{PlaneTree, TreeMetricView};
use crate::RandomSource;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid weight scheme: {0}")]
    InvalidScheme(String),
    #[error("nonpositive weight {weight} at depth {depth}")]
    NonpositiveWeight { depth: u32, weight: f64 },
    #[error("log of zero depth with alpha = {alpha}")]
    Domain { alpha: f64 },
    #[error("moment of order {k} does not exist for beta-prime({a}, {b})")]
    Pole { a: f64, b: f64, k: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// L^{1-α}·d^α with L = n/a_n, α < 1.
    RescaledSubcritical,
    /// d + L, α = 1.
    RescaledCritical,
    /// d^α, any α.
    PlainPower,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::RescaledSubcritical => "rescaled_subcritical",
            WeightMode::RescaledCritical => "rescaled_critical",
            WeightMode::PlainPower => "plain_power",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rescaled_subcritical" => Ok(WeightMode::RescaledSubcritical),
            "rescaled_critical" => Ok(WeightMode::RescaledCritical),
            "plain_power" => Ok(WeightMode::PlainPower),
            other => Err(EnvError::InvalidScheme(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightScheme {
    pub alpha: f64,
    pub delta: f64,
    pub mode: WeightMode,
    pub n: f64,
    pub an: f64,
}

impl WeightScheme {
    pub fn new(mode: WeightMode, alpha: f64, delta: f64, n: f64, an: f64) -> Result<Self, EnvError> {
        let scheme = WeightScheme { alpha, delta, mode, n, an };
        scheme.validate()?;
        Ok(scheme)
    }

    /// Scheme with n·a_n^{-1} given directly.
    pub fn with_scale(mode: WeightMode, alpha: f64, delta: f64, scale: f64) -> Result<Self, EnvError> {
        Self::new(mode, alpha, delta, scale, 1.0)
    }

    pub fn plain_power(alpha: f64, delta: f64) -> Result<Self, EnvError> {
        Self::new(WeightMode::PlainPower, alpha, delta, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidScheme(m.to_string()));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if !(self.n > 0.0 && self.an > 0.0 && self.scale().is_finite()) {
            return bad("n and a_n must be positive");
        }
        if !self.alpha.is_finite() {
            return bad("alpha must be finite");
        }
        match self.mode {
            WeightMode::RescaledSubcritical if self.alpha >= 1.0 => bad("rescaled_subcritical needs alpha < 1"),
            WeightMode::RescaledCritical if self.alpha != 1.0 => bad("rescaled_critical needs alpha = 1"),
            _ => Ok(()),
        }
    }

    /// n·a_n^{-1}.
    pub fn scale(&self) -> f64 {
        self.n / self.an
    }

    /// Weight of the edge whose lower endpoint has depth `depth`; depth 0 is
    /// the planted edge and uses (0 ∨ 1)^α.
    pub fn edge_weight(&self, depth: u32) -> f64 {
        let d = f64::from(depth.max(1));
        match self.mode {
            WeightMode::RescaledSubcritical => self.scale().powf(1.0 - self.alpha) * d.powf(self.alpha),
            WeightMode::RescaledCritical => {
                if depth == 0 {
                    self.scale()
                } else {
                    d + self.scale()
                }
            }
            WeightMode::PlainPower => d.powf(self.alpha),
        }
    }

    /// Δ_n: the reinforcement in units where the depth-d weight is d^α.
    pub fn delta_n(&self) -> f64 {
        match self.mode {
            WeightMode::RescaledSubcritical => self.delta * self.scale().powf(-(1.0 - self.alpha)),
            _ => self.delta,
        }
    }
}

/// Edge weights of `tree` indexed by child vertex; entry 0 is the planted edge.
pub fn initial_weights(scheme: &WeightScheme, tree: &PlaneTree) -> Result<Vec<f64>, EnvError> {
    scheme.validate()?;
    tree.depths()
        .iter()
        .map(|&d| {
            let w = scheme.edge_weight(d);
            if w > 0.0 && w.is_finite() {
                Ok(w)
            } else {
                Err(EnvError::NonpositiveWeight { depth: d, weight: w })
            }
        })
        .collect()
}

/// Per-vertex Dirichlet vectors: the parent edge first (absent at the root of
/// an unplanted tree), then child edges in order.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams<T = f64> {
    planted: bool,
    offsets: Vec<usize>,
    values: Vec<T>,
}

impl<T> DirichletParams<T>
where
    T: Clone + Add<Output = T> + Div<Output = T>,
{
    /// b_v[0] = (α_{e0} + Δ)/(2Δ), b_v[i] = α_{ei}/(2Δ).
    pub fn new(weights: &[T], tree: &PlaneTree, delta: T, planted: bool) -> Self {
        assert_eq!(weights.len(), tree.len(), "one weight per vertex edge");
        let two_delta = delta.clone() + delta.clone();
        let mut offsets = Vec::with_capacity(tree.len() + 1);
        let mut values = Vec::with_capacity(2 * tree.len());
        for v in 0..tree.len() as u32 {
            offsets.push(values.len());
            if v != 0 || planted {
                values.push((weights[v as usize].clone() + delta.clone()) / two_delta.clone());
            }
            for &c in tree.children(v) {
                values.push(weights[c as usize].clone() / two_delta.clone());
            }
        }
        offsets.push(values.len());
        DirichletParams { planted, offsets, values }
    }
}

impl<T> DirichletParams<T> {
    pub fn planted(&self) -> bool {
        self.planted
    }

    pub fn vector(&self, v: u32) -> &[T] {
        &self.values[self.offsets[v as usize]..self.offsets[v as usize + 1]]
    }

    /// Slot of the parent edge in `v`'s vector.
    pub fn parent_slot(&self, v: u32) -> Option<usize> {
        (v != 0 || self.planted).then_some(0)
    }

    /// Slot of the i-th child edge in `v`'s vector.
    pub fn child_slot(&self, v: u32, i: usize) -> usize {
        i + usize::from(v != 0 || self.planted)
    }
}

/// log of a Gamma(shape, 1) draw. Shapes below 1 use
/// Gamma(a) = Gamma(a + 1)·U^{1/a}, kept in log space against underflow.
pub fn sample_log_gamma(shape: f64, rng: &mut RandomSource) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}

/// log of a beta-prime(a, b) draw as log G_a − log G_b.
pub fn sample_log_beta_prime(a: f64, b: f64, rng: &mut RandomSource) -> f64 {
    sample_log_gamma(a, rng) - sample_log_gamma(b, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    planted: bool,
    log_rho: Vec<f64>,
    potential: Vec<f64>,
    edge_resistance: Vec<f64>,
    nu: Vec<f64>,
    fingerprint: u64,
}

impl Environment {
    /// Builds V, resistances and ν from log ρ (entry 0 ignored; ρ is
    /// undefined at the root).
    pub fn from_log_rho(tree: &PlaneTree, log_rho: Vec<f64>, planted: bool, fingerprint: u64) -> Self {
        let n = tree.len();
        assert_eq!(log_rho.len(), n);
        let mut potential = vec![0.0; n];
        for v in 1..n as u32 {
            let p = tree.parent(v).expect("non-root");
            potential[v as usize] = potential[p as usize] + log_rho[v as usize];
        }
        let edge_resistance: Vec<f64> = potential.iter().map(|&x| x.exp()).collect();
        let mut nu = vec![0.0; n];
        for v in 0..n as u32 {
            let own = if v == 0 { 0.0 } else { (-potential[v as usize]).exp() };
            let below: f64 = tree.children(v).iter().map(|&c| (-potential[c as usize]).exp()).sum();
            nu[v as usize] = own + below;
        }
        Environment {
            planted,
            log_rho,
            potential,
            edge_resistance,
            nu,
            fingerprint,
        }
    }

    pub fn planted(&self) -> bool {
        self.planted
    }

    pub fn len(&self) -> usize {
        self.log_rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_rho.is_empty()
    }

    pub fn log_rho(&self) -> &[f64] {
        &self.log_rho
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// Resistance e^{V(v)} of the edge {parent(v), v}; entry 0 is the planted
    /// edge, normalised to 1.
    pub fn edge_resistances(&self) -> &[f64] {
        &self.edge_resistance
    }

    /// Conductance e^{−V(v)} of the edge above `v`.
    pub fn conductance(&self, v: u32) -> f64 {
        (-self.potential[v as usize]).exp()
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Sum of conductances at `v`, including the planted edge at the root.
    pub fn total_conductance(&self, v: u32) -> f64 {
        if v == 0 && self.planted {
            self.nu[0] + 1.0
        } else {
            self.nu[v as usize]
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Writes `vertex log_rho V nu` rows.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "vertex log_rho V nu")?;
        for v in 0..self.len() {
            writeln!(out, "{} {} {} {}", v, self.log_rho[v], self.potential[v], self.nu[v])?;
        }
        Ok(())
    }
}

fn rng_fingerprint(rng: &RandomSource) -> u64 {
    let seed = rng.get_seed();
    let head = u64::from_le_bytes(seed[..8].try_into().expect("8 bytes"));
    head ^ rng.get_stream().rotate_left(32) ^ (rng.get_word_pos() as u64)
}

/// Draws independent Gamma weights at every vertex and forms
/// ρ_x = W_p^{parent slot} / W_p^{x slot} for each child x of p. At the root
/// of an unplanted tree the reference weight is 1.
pub fn sample_environment(params: &DirichletParams<f64>, tree: &PlaneTree, rng: &mut RandomSource) -> Environment {
    let fingerprint = rng_fingerprint(rng);
    let mut log_rho = vec![0.0; tree.len()];
    for p in 0..tree.len() as u32 {
        let b = params.vector(p);
        let log_w: Vec<f64> = b.iter().map(|&s| sample_log_gamma(s, rng)).collect();
        let reference = params.parent_slot(p).map_or(0.0, |s| log_w[s]);
        for (i, &c) in tree.children(p).iter().enumerate() {
            log_rho[c as usize] = reference - log_w[params.child_slot(p, i)];
        }
    }
    Environment::from_log_rho(tree, log_rho, params.planted(), fingerprint)
}

/// W = V + α·log d for α < 1 and W = V for α = 1.
pub fn potential_w(env: &Environment, tree: &PlaneTree, v: u32, scheme: &WeightScheme) -> Result<f64, EnvError> {
    let base = env.potential()[v as usize];
    if scheme.alpha == 1.0 || scheme.alpha == 0.0 {
        return Ok(base);
    }
    let d = tree.depth(v);
    if d == 0 {
        return Err(EnvError::Domain { alpha: scheme.alpha });
    }
    Ok(base + scheme.alpha * f64::from(d).ln())
}

/// Effective resistance between `u` and `v`: Σ_{x ∈ [u,v] \ {u∧v}} e^{V(x)}.
pub fn resistance(env: &Environment, view: &TreeMetricView<'_>, u: u32, v: u32) -> f64 {
    let m = view.mrca(u, v);
    let tree = view.tree();
    let mut total = 0.0;
    for start in [u, v] {
        let mut x = start;
        while x != m {
            total += env.edge_resistances()[x as usize];
            x = tree.parent(x).expect("below the mrca");
        }
    }
    total
}

/// E[X^k] for X ~ β′(a, b): Π_{j<k} (a+j)/(b−1−j), and (a,b) swapped for k<0.
pub fn beta_prime_moment(a: f64, b: f64, k: i32) -> Result<f64, EnvError> {
    let (num, den) = if k >= 0 { (a, b) } else { (b, a) };
    let mut prod = 1.0;
    for j in 0..k.unsigned_abs() {
        let j = f64::from(j);
        let d = den - 1.0 - j;
        if d <= 0.0 {
            return Err(EnvError::Pole { a, b, k });
        }
        prod *= (num + j) / d;
    }
    Ok(prod)
}

/// The same moment in weight units: ρ ~ β′((A+Δ)/(2Δ), B/(2Δ)) has
/// E[ρ^k] = Π_{j<k} (A+(2j+1)Δ)/(B−(2j+2)Δ) and
/// E[ρ^{−k}] = Π_{j<k} (B+2jΔ)/(A−(2j+1)Δ).
pub fn weight_form_moment(parent_weight: f64, own_weight: f64, delta: f64, k: i32) -> Result<f64, EnvError> {
    let (a, b) = ((parent_weight + delta) / (2.0 * delta), own_weight / (2.0 * delta));
    let mut prod = 1.0;
    for j in 0..k.unsigned_abs() {
        let j = f64::from(j);
        let (num, den) = if k > 0 {
            (parent_weight + (2.0 * j + 1.0) * delta, own_weight - (2.0 * j + 2.0) * delta)
        } else {
            (own_weight + 2.0 * j * delta, parent_weight - (2.0 * j + 1.0) * delta)
        };
        if den <= 0.0 {
            return Err(EnvError::Pole { a, b, k });
        }
        prod *= num / den;
    }
    Ok(prod)
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Density of Y = log X for X ~ β′(a, b).
fn log_beta_prime_density(a: f64, b: f64) -> impl Fn(f64) -> f64 {
    let lnb = ln_beta(a, b);
    move |y: f64| {
        let softplus = if y > 0.0 { y + (-y).exp().ln_1p() } else { y.exp().ln_1p() };
        (a * y - (a + b) * softplus - lnb).exp()
    }
}

/// Integration window for Y = log X: the density decays like e^{a y} on the
/// left and e^{−b y} on the right, so the window extends until both tails
/// are below `tail_tol` relative to the weight `e^{k y}`.
fn log_window(a: f64, b: f64, k: f64) -> (f64, f64) {
    let centre = (a / b).ln();
    let spread = (1.0 / a + 1.0 / b).sqrt();
    let left_rate = a + k;
    let right_rate = b - k;
    let lo = centre - 12.0 * spread - 60.0 / left_rate;
    let hi = centre + 12.0 * spread + 60.0 / right_rate;
    (lo, hi)
}

/// E[X^k] for X ~ β′(a, b) by numerical integration in log coordinates.
pub fn beta_prime_moment_quadrature(a: f64, b: f64, k: i32) -> f64 {
    let kf = f64::from(k);
    let density = log_beta_prime_density(a, b);
    let (lo, hi) = log_window(a, b, kf);
    integrate_panels(|y| (kf * y).exp() * density(y), lo, hi, 256, 1e-15)
}

/// Mean and variance of log X for X ~ β′(a, b) by numerical integration.
pub fn log_beta_prime_mean_var(a: f64, b: f64) -> (f64, f64) {
    let density = log_beta_prime_density(a, b);
    let (lo, hi) = log_window(a, b, 0.0);
    let mass = integrate_panels(&density, lo, hi, 256, 1e-15);
    let mean = integrate_panels(|y| y * density(y), lo, hi, 256, 1e-15) / mass;
    let var = integrate_panels(|y| (y - mean).powi(2) * density(y), lo, hi, 256, 1e-17) / mass;
    (mean, var)
}

/// β′ parameters of ρ at a depth-d vertex of a planted tree.
pub fn rho_params(depth: u32, scheme: &WeightScheme) -> (f64, f64) {
    let parent = scheme.edge_weight(depth - 1);
    let own = scheme.edge_weight(depth);
    ((parent + scheme.delta) / (2.0 * scheme.delta), own / (2.0 * scheme.delta))
}

/// Exact (E[ρ − 1], Var ρ) at depth `depth` ≥ 1 of a planted tree, in the
/// weight form: with A the parent-edge weight and B the own-edge weight,
/// E[ρ] = (A+Δ)/(B−2Δ) and Var ρ = 2Δ(A+Δ)(A+B−Δ)/((B−4Δ)(B−2Δ)²).
pub fn rho_mean_var(depth: u32, scheme: &WeightScheme) -> Result<(f64, f64), EnvError> {
    assert!(depth >= 1, "ρ is defined below the root");
    let a_w = scheme.edge_weight(depth - 1);
    let b_w = scheme.edge_weight(depth);
    let dl = scheme.delta;
    if b_w - 4.0 * dl <= 0.0 {
        let (a, b) = rho_params(depth, scheme);
        return Err(EnvError::Pole { a, b, k: 2 });
    }
    let mean = (a_w + dl) / (b_w - 2.0 * dl);
    let var = 2.0 * dl * (a_w + dl) * (a_w + b_w - dl) / ((b_w - 4.0 * dl) * (b_w - 2.0 * dl).powi(2));
    Ok((mean - 1.0, var))
}

/// Limits of the mean and variance of W at continuum depth d.
pub fn branch_limit_targets(scheme: &WeightScheme, d: f64) -> (f64, f64) {
    let (a, dl) = (scheme.alpha, scheme.delta);
    if a < 1.0 {
        let s = d.powf(1.0 - a) / (1.0 - a);
        (dl * s, 4.0 * dl * s)
    } else {
        let s = (d + 1.0).ln();
        ((dl - 1.0) * s, 4.0 * dl * s)
    }
}

/// Samples log ρ along a root path of `depth` vertices of a planted tree
/// whose weights depend only on depth; entry j is log ρ at depth j + 1.
/// Each ρ uses only its own Gamma pair, so this matches the full sampler in law.
pub fn sample_log_rho_along_path(scheme: &WeightScheme, depth: u32, rng: &mut RandomSource) -> Vec<f64> {
    (1..=depth)
        .map(|d| {
            let (a, b) = rho_params(d, scheme);
            sample_log_beta_prime(a, b, rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::OffspringLaw;
    use crate::rng::replica_rng;
    use crate::trees::sample_conditioned_gw;
    use approx::assert_relative_eq;

    fn star(k: u64) -> PlaneTree {
        let mut counts = vec![k];
        counts.extend(std::iter::repeat_n(0, k as usize));
        PlaneTree::from_child_counts(&counts).unwrap()
    }

    #[test]
    fn weight_examples() {
        let sub = WeightScheme::with_scale(WeightMode::RescaledSubcritical, 0.0, 1.0, 1000.0).unwrap();
        assert_eq!(sub.edge_weight(0), 1000.0);
        assert_eq!(sub.edge_weight(7), 1000.0);
        let pp = WeightScheme::plain_power(2.0, 1.0).unwrap();
        assert_eq!(pp.edge_weight(3), 9.0);
        assert_eq!(pp.edge_weight(0), 1.0);
        let crit = WeightScheme::with_scale(WeightMode::RescaledCritical, 1.0, 1.0, 1000.0).unwrap();
        assert_eq!(crit.edge_weight(5), 1005.0);
        assert_eq!(crit.edge_weight(0), 1000.0);
        assert!(WeightScheme::with_scale(WeightMode::RescaledSubcritical, 1.0, 1.0, 10.0).is_err());
        assert!(WeightScheme::with_scale(WeightMode::RescaledCritical, 0.5, 1.0, 10.0).is_err());
        assert!(WeightScheme::plain_power(1.0, 0.0).is_err());
    }

    #[test]
    fn dirichlet_param_examples() {
        // Path root - x - y, all weights 1, Δ = 1.
        let path = PlaneTree::from_child_counts(&[1, 1, 0]).unwrap();
        let p = DirichletParams::new(&[1.0, 1.0, 1.0], &path, 1.0, true);
        assert_eq!(p.vector(1), &[1.0, 0.5]);
        let leaf = DirichletParams::new(&[1.0, 1.0, 3.0], &path, 1.0, true);
        assert_eq!(leaf.vector(2), &[2.0]);
        let s = star(2);
        let un = DirichletParams::new(&[9.0, 3.0, 5.0], &s, 2.0, false);
        assert_eq!(un.vector(0), &[0.75, 1.25]);
        assert_eq!(un.parent_slot(0), None);
        assert_eq!(un.child_slot(0, 1), 1);
    }

    #[test]
    fn environment_invariants() {
        let law = OffspringLaw::geometric_half();
        let mut rng = replica_rng(21, 0);
        for planted in [false, true] {
            for _ in 0..50 {
                let tree = sample_conditioned_gw(&law, 40, &mut rng, 100).unwrap();
                let scheme = WeightScheme::plain_power(0.5, 0.7).unwrap();
                let w = initial_weights(&scheme, &tree).unwrap();
                let params = DirichletParams::new(&w, &tree, 0.7, planted);
                let env = sample_environment(&params, &tree, &mut rng);
                assert_eq!(env.potential()[0], 0.0);
                assert_eq!(env.edge_resistances()[0], 1.0);
                assert!(env.edge_resistances().iter().all(|&r| r > 0.0));
                let again = Environment::from_log_rho(&tree, env.log_rho().to_vec(), planted, env.fingerprint());
                assert_eq!(again, env);
                // detailed balance: ν(x)·p(x→y) = c(y) with p ∝ conductance
                for x in 0..tree.len() as u32 {
                    for &y in tree.children(x) {
                        let p = env.conductance(y) / env.total_conductance(x);
                        assert_relative_eq!(env.total_conductance(x) * p, env.conductance(y), max_relative = 1e-12);
                        assert_relative_eq!(env.edge_resistances()[y as usize] * env.conductance(y), 1.0, max_relative = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn resistance_is_additive() {
        let law = OffspringLaw::geometric_half();
        let mut rng = replica_rng(22, 0);
        for _ in 0..200 {
            let tree = sample_conditioned_gw(&law, 30, &mut rng, 100).unwrap();
            let w = vec![1.0; tree.len()];
            let env = sample_environment(&DirichletParams::new(&w, &tree, 1.0, true), &tree, &mut rng);
            let view = TreeMetricView::new(&tree);
            let u = rng.random_range(0..tree.len() as u32);
            let v = rng.random_range(0..tree.len() as u32);
            assert_eq!(resistance(&env, &view, u, u), 0.0);
            let path = view.path(u, v);
            let w_mid = path[rng.random_range(0..path.len())];
            let total = resistance(&env, &view, u, v);
            assert_relative_eq!(total, resistance(&env, &view, u, w_mid) + resistance(&env, &view, w_mid, v), max_relative = 1e-12);
            if let Some(&c) = tree.children(0).first() {
                assert_relative_eq!(resistance(&env, &view, 0, c), env.potential()[c as usize].exp());
            }
        }
    }

    #[test]
    fn rho_mean_at_fixed_vertex() {
        // ρ ~ β′(a, b) with a = 2, b = 3 (weights A = 3, B = 6, Δ = 1).
        let tree = PlaneTree::from_child_counts(&[1, 0]).unwrap();
        let params = DirichletParams::new(&[3.0, 6.0], &tree, 1.0, true);
        assert_eq!(params.vector(0), &[2.0, 3.0]);
        let mut rng = replica_rng(23, 0);
        let trials = 1_000_000;
        let xs: Vec<f64> = (0..trials)
            .map(|_| sample_environment(&params, &tree, &mut rng).log_rho()[1].exp())
            .collect();
        let mean = xs.iter().sum::<f64>() / trials as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
        let se = (var / trials as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn sibling_subtrees_are_uncorrelated() {
        // root with two children, each with one child
        let tree = PlaneTree::from_child_counts(&[2, 1, 0, 1, 0]).unwrap();
        let w = vec![1.0; tree.len()];
        let params = DirichletParams::new(&w, &tree, 1.0, true);
        let mut rng = replica_rng(24, 0);
        let trials = 100_000;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..trials {
            let env = sample_environment(&params, &tree, &mut rng);
            let x = env.log_rho()[2];
            let y = env.log_rho()[4];
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let n = trials as f64;
        let cov = sxy / n - sx * sy / n / n;
        let corr = cov / ((sxx / n - (sx / n).powi(2)) * (syy / n - (sy / n).powi(2))).sqrt();
        assert!(corr.abs() < 4.0 / n.sqrt(), "{corr}");
    }

    #[test]
    fn small_shape_gamma_has_right_log_mean() {
        // E[log G_a] = ψ(a); ψ(0.1) = −10.4237549404...
        let mut rng = replica_rng(25, 0);
        let trials = 400_000;
        let xs: Vec<f64> = (0..trials).map(|_| sample_log_gamma(0.1, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / trials as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / trials as f64;
        assert!((mean + 10.423_754_940_411_076).abs() < 4.0 * (var / trials as f64).sqrt());
    }

    #[test]
    fn potential_w_examples() {
        let tree = PlaneTree::from_child_counts(&[1, 1, 0]).unwrap();
        let env = Environment::from_log_rho(&tree, vec![0.0, 0.3, -0.1], true, 0);
        let zero = WeightScheme::with_scale(WeightMode::RescaledSubcritical, 0.0, 1.0, 10.0).unwrap();
        let half = WeightScheme::with_scale(WeightMode::RescaledSubcritical, 0.5, 1.0, 10.0).unwrap();
        let one = WeightScheme::with_scale(WeightMode::RescaledCritical, 1.0, 1.0, 10.0).unwrap();
        assert_eq!(potential_w(&env, &tree, 2, &zero).unwrap(), env.potential()[2]);
        assert_eq!(potential_w(&env, &tree, 2, &one).unwrap(), env.potential()[2]);
        assert_eq!(potential_w(&env, &tree, 1, &half).unwrap(), env.potential()[1]);
        assert_relative_eq!(potential_w(&env, &tree, 2, &half).unwrap(), 0.2 + 0.5 * 2f64.ln());
        assert!(matches!(potential_w(&env, &tree, 0, &half), Err(EnvError::Domain { .. })));
    }

    #[test]
    fn beta_prime_examples() {
        assert_eq!(beta_prime_moment(3.0, 2.0, 1).unwrap(), 3.0);
        let m1 = beta_prime_moment(3.0, 4.0, 1).unwrap();
        let m2 = beta_prime_moment(3.0, 4.0, 2).unwrap();
        assert_relative_eq!(m2 - m1 * m1, 1.0, max_relative = 1e-14);
        assert!(matches!(beta_prime_moment(3.0, 2.0, 2), Err(EnvError::Pole { .. })));
        assert_eq!(beta_prime_moment(3.0, 2.0, 0).unwrap(), 1.0);
        let exact = beta_prime_moment(1.7, 5.2, 2).unwrap();
        let quad = beta_prime_moment_quadrature(1.7, 5.2, 2);
        assert_relative_eq!(exact, quad, max_relative = 1e-8);
        let neg = beta_prime_moment(1.7, 5.2, -1).unwrap();
        assert_relative_eq!(neg, beta_prime_moment_quadrature(1.7, 5.2, -1), max_relative = 1e-8);
    }

    #[test]
    fn weight_form_agrees_with_normalised_form() {
        for &(aw, bw, dl) in &[(1.0, 9.0, 0.5), (10.0, 12.0, 1.0), (1000.0, 1001.0, 1.0), (3.0, 40.0, 2.5)] {
            let a = (aw + dl) / (2.0 * dl);
            let b = bw / (2.0 * dl);
            for k in -2..=4 {
                match (beta_prime_moment(a, b, k), weight_form_moment(aw, bw, dl, k)) {
                    (Ok(x), Ok(y)) => assert_relative_eq!(x, y, max_relative = 1e-12),
                    (Err(_), Err(_)) => {}
                    other => panic!("disagree on existence: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn rho_mean_var_examples() {
        let l = 100.0;
        let s = WeightScheme::with_scale(WeightMode::RescaledSubcritical, 0.0, 1.0, l).unwrap();
        let dn = s.delta_n();
        let (m, _) = rho_mean_var(3, &s).unwrap();
        assert_relative_eq!(m, 3.0 * dn / (1.0 - 2.0 * dn), max_relative = 1e-12);
        let c = WeightScheme::with_scale(WeightMode::RescaledCritical, 1.0, 1.0, 1000.0).unwrap();
        let (_, v) = rho_mean_var(1, &c).unwrap();
        let displayed = 2.0 * 1001.0 * (2.0 * 1001.0 - 2.0) / (997.0 * 999.0f64.powi(2));
        assert_relative_eq!(v, displayed, max_relative = 1e-14);
        // exact − 4Δ/(d + L) is O(L^{-2}): doubling L quarters it
        let gap = |l: f64| {
            let s = WeightScheme::with_scale(WeightMode::RescaledCritical, 1.0, 1.0, l).unwrap();
            rho_mean_var(1, &s).unwrap().1 - 4.0 / (1.0 + l)
        };
        let ratio = gap(1000.0) / gap(2000.0);
        assert!((3.8..4.2).contains(&ratio), "{ratio}");
        assert!(gap(1000.0).abs() < 50.0 / 1000.0f64.powi(2));
        for scheme in [s, c, WeightScheme::plain_power(0.5, 0.2).unwrap()] {
            for d in 1..20 {
                let (a, b) = rho_params(d, &scheme);
                let (m, v) = rho_mean_var(d, &scheme).unwrap();
                let m1 = beta_prime_moment(a, b, 1).unwrap();
                let m2 = beta_prime_moment(a, b, 2).unwrap();
                assert_relative_eq!(m + 1.0, m1, max_relative = 1e-12);
                assert_relative_eq!(v, m2 - m1 * m1, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn branch_limit_examples() {
        let s = |a: f64, dl: f64| WeightScheme::with_scale(
            if a < 1.0 { WeightMode::RescaledSubcritical } else { WeightMode::RescaledCritical }, a, dl, 10.0,
        ).unwrap();
        assert_eq!(branch_limit_targets(&s(0.0, 1.0), 1.0), (1.0, 4.0));
        let (m, v) = branch_limit_targets(&s(1.0, 2.0), std::f64::consts::E - 1.0);
        assert_relative_eq!(m, 1.0, max_relative = 1e-15);
        assert_relative_eq!(v, 8.0, max_relative = 1e-15);
        let (m, v) = branch_limit_targets(&s(0.5, 1.0), 4.0);
        assert_relative_eq!(m, 4.0);
        assert_relative_eq!(v, 16.0);
    }

    #[test]
    fn log_moments_by_quadrature() {
        // Var log X = ψ'(a) + ψ'(b); ψ'(1) = π²/6, ψ'(2) = π²/6 − 1.
        let (mean, var) = log_beta_prime_mean_var(1.0, 2.0);
        let z = std::f64::consts::PI.powi(2) / 6.0;
        assert_relative_eq!(var, 2.0 * z - 1.0, max_relative = 1e-9);
        // ψ(1) − ψ(2) = −1
        assert_relative_eq!(mean, -1.0, max_relative = 1e-9);
    }

    #[test]
    fn spine_variance_sum_matches_limit() {
        // n = 10^6, γ = 2 so a_n = 1000 and depth D = 1000 reaches d = 1.
        let scheme = WeightScheme::new(WeightMode::RescaledSubcritical, 0.0, 1.0, 1e6, 1e3).unwrap();
        let total: f64 = (1..=1000).map(|d| {
            let (a, b) = rho_params(d, &scheme);
            log_beta_prime_mean_var(a, b).1
        }).sum();
        let (_, target) = branch_limit_targets(&scheme, 1.0);
        assert!((total / target - 1.0).abs() < 0.05, "{total} vs {target}");
    }
}
