//! Exact small-instance computations.
//!
//! Both sides of the LERRW / random-Dirichlet-environment identity are
//! computed in exact rational arithmetic. On the Dirichlet side a vertex v
//! with parameters b (already divided by 2Δ) contributes, for a path that
//! leaves v k_i times through slot i,
//!
//!   Π_i Π_{j<k_i} (b_i + j) / Π_{j<k} (B + j),   B = Σ b_i, k = Σ k_i.
//!
//! This is the Pólya-urn reading of the walk: between two departures from v
//! through the same edge the walk must come back across it, so that edge's
//! weight grows by 2Δ per departure, and after dividing by 2Δ each departure
//! adds one ball of its colour.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::environment::DirichletParams;
use crate::trees::{enumerate_plane_trees, PlaneTree, TreeMetricView};
use crate::walkers::BASE;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("vertices {0} and {1} are not adjacent")]
    InvalidPath(u32, u32),
    #[error("enumeration budget exceeded: max_n = {0} > 8")]
    BudgetExceeded(usize),
    #[error("a component of the region never reaches the absorbing set")]
    DisconnectedRegion,
}

/// An exact probability, or a real approximation with an error bound when
/// some input was irrational.
#[derive(Debug, Clone, PartialEq)]
pub enum ExactProb {
    Rational(BigRational),
    Real { value: f64, error: f64 },
}

impl ExactProb {
    pub fn to_f64(&self) -> f64 {
        match self {
            ExactProb::Rational(r) => ratio_to_f64(r),
            ExactProb::Real { value, .. } => *value,
        }
    }
}

pub fn ratio_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Identifies the edge crossed by the step a → b: the vertex below it
/// (0 for the planted edge {base, root}).
fn step_edge(tree: &PlaneTree, planted: bool, a: u32, b: u32) -> Result<u32, OracleError> {
    let is_base_edge = (a == BASE && b == 0) || (a == 0 && b == BASE);
    if is_base_edge && planted {
        return Ok(0);
    }
    if a != BASE && b != BASE {
        if tree.parent(b) == Some(a) {
            return Ok(b);
        }
        if tree.parent(a) == Some(b) {
            return Ok(a);
        }
    }
    Err(OracleError::InvalidPath(a, b))
}

/// Edges incident to `x` (identified by their lower vertex).
fn incident(tree: &PlaneTree, planted: bool, x: u32) -> Vec<u32> {
    if x == BASE {
        return vec![0];
    }
    let mut out = Vec::with_capacity(tree.child_count(x) + 1);
    if x != 0 || planted {
        out.push(x);
    }
    out.extend_from_slice(tree.children(x));
    out
}

/// Probability that LERRW with the given initial edge weights follows
/// `path`. `weights[v]` is the weight of the edge above v (entry 0 the
/// planted edge, used only when `planted`).
pub fn lerrw_path_probability(
    tree: &PlaneTree,
    weights: &[BigRational],
    delta: &BigRational,
    planted: bool,
    path: &[u32],
) -> Result<BigRational, OracleError> {
    let mut live = weights.to_vec();
    let mut prob = BigRational::one();
    for pair in path.windows(2) {
        let e = step_edge(tree, planted, pair[0], pair[1])?;
        let total = incident(tree, planted, pair[0])
            .iter()
            .fold(BigRational::zero(), |acc, &f| acc + &live[f as usize]);
        prob *= &live[e as usize] / total;
        live[e as usize] += delta;
    }
    Ok(prob)
}

/// Slot at `x` used by the step x → y in a Dirichlet vector.
fn step_slot<T>(tree: &PlaneTree, params: &DirichletParams<T>, x: u32, y: u32) -> Result<usize, OracleError> {
    if x == BASE {
        return if y == 0 && params.planted() { Ok(0) } else { Err(OracleError::InvalidPath(x, y)) };
    }
    if y == BASE {
        return if x == 0 && params.planted() { Ok(0) } else { Err(OracleError::InvalidPath(x, y)) };
    }
    if tree.parent(x) == Some(y) {
        return Ok(0);
    }
    match tree.children(x).iter().position(|&c| c == y) {
        Some(i) => Ok(params.child_slot(x, i)),
        None => Err(OracleError::InvalidPath(x, y)),
    }
}

/// Annealed probability of `path` for the walk in a random environment with
/// independent Dirichlet(b_v) transition vectors.
pub fn annealed_rwde_path_probability(
    tree: &PlaneTree,
    params: &DirichletParams<BigRational>,
    path: &[u32],
) -> Result<BigRational, OracleError> {
    let mut counts: Vec<Vec<u64>> = (0..tree.len() as u32).map(|v| vec![0; params.vector(v).len()]).collect();
    let mut prob = BigRational::one();
    for pair in path.windows(2) {
        let (x, y) = (pair[0], pair[1]);
        let slot = step_slot(tree, params, x, y)?;
        if x == BASE {
            continue;
        }
        let b = params.vector(x);
        let k = &mut counts[x as usize];
        let total: u64 = k.iter().sum();
        let big_b = b.iter().fold(BigRational::zero(), |acc, v| acc + v);
        let num = &b[slot] + BigRational::from_integer(BigInt::from(k[slot]));
        let den = big_b + BigRational::from_integer(BigInt::from(total));
        prob *= num / den;
        k[slot] += 1;
    }
    Ok(prob)
}

/// A disagreement found by the exhaustive suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub child_counts: Vec<u64>,
    pub weights: Vec<BigRational>,
    pub delta: BigRational,
    pub planted: bool,
    pub path: Vec<u32>,
    pub lerrw: BigRational,
    pub dirichlet: BigRational,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub trees: usize,
    pub configurations: usize,
    pub paths_checked: u64,
    pub mismatches: Vec<Counterexample>,
    /// (child counts, planted, length) triples whose path probabilities do
    /// not sum to one.
    pub normalization_failures: Vec<(Vec<u64>, bool, usize)>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.normalization_failures.is_empty() && self.paths_checked > 0
    }
}

/// Options for [`verify_equivalence`].
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub max_n: usize,
    pub max_len: usize,
    pub weight_grid: Vec<BigRational>,
    pub deltas: Vec<BigRational>,
    pub modes: Vec<bool>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            max_n: 5,
            max_len: 6,
            weight_grid: vec![rational(1, 2), rational(1, 1), rational(2, 1)],
            deltas: vec![rational(1, 2), rational(1, 1)],
            modes: vec![false, true],
        }
    }
}

struct DfsState<'a> {
    tree: &'a PlaneTree,
    planted: bool,
    delta: &'a BigRational,
    params: &'a DirichletParams<BigRational>,
    /// Σ b_v per vertex.
    param_sums: Vec<BigRational>,
    live: Vec<BigRational>,
    counts: Vec<Vec<u64>>,
    path: Vec<u32>,
    max_len: usize,
    /// Σ over paths of each length of the LERRW probability.
    level_sums: Vec<BigRational>,
    checked: u64,
    mismatch: Option<(Vec<u32>, BigRational, BigRational)>,
}

impl DfsState<'_> {
    fn visit(&mut self, p_lerrw: &BigRational, p_dir: &BigRational) {
        self.checked += 1;
        let len = self.path.len() - 1;
        self.level_sums[len] += p_lerrw;
        if p_lerrw != p_dir && self.mismatch.is_none() {
            self.mismatch = Some((self.path.clone(), p_lerrw.clone(), p_dir.clone()));
        }
        if len == self.max_len {
            return;
        }
        let x = *self.path.last().expect("nonempty");
        let edges = incident(self.tree, self.planted, x);
        let total = edges.iter().fold(BigRational::zero(), |acc, &f| acc + &self.live[f as usize]);
        for &e in &edges {
            let y = if x == BASE {
                0
            } else if e == x {
                self.tree.parent(x).unwrap_or(BASE)
            } else {
                e
            };
            let step_l = &self.live[e as usize] / &total;
            let next_l = p_lerrw * step_l;
            let next_d = if x == BASE {
                p_dir.clone()
            } else {
                let slot = step_slot(self.tree, self.params, x, y).expect("adjacent");
                let k = &self.counts[x as usize];
                let kt: u64 = k.iter().sum();
                let num = &self.params.vector(x)[slot] + BigRational::from_integer(BigInt::from(k[slot]));
                let den = &self.param_sums[x as usize] + BigRational::from_integer(BigInt::from(kt));
                self.counts[x as usize][slot] += 1;
                p_dir * num / den
            };
            self.live[e as usize] += self.delta;
            self.path.push(y);
            self.visit(&next_l, &next_d);
            self.path.pop();
            self.live[e as usize] -= self.delta;
            if x != BASE {
                let slot = step_slot(self.tree, self.params, x, y).expect("adjacent");
                self.counts[x as usize][slot] -= 1;
            }
        }
    }
}

/// Checks every path of length ≤ `max_len` on one tree, weights and Δ.
/// Returns (paths checked, first mismatch, per-length probability sums).
pub fn check_configuration(
    tree: &PlaneTree,
    weights: &[BigRational],
    delta: &BigRational,
    planted: bool,
    max_len: usize,
) -> (u64, Option<(Vec<u32>, BigRational, BigRational)>, Vec<BigRational>) {
    let params = DirichletParams::new(weights, tree, delta.clone(), planted);
    let param_sums = (0..tree.len() as u32)
        .map(|v| params.vector(v).iter().fold(BigRational::zero(), |acc, b| acc + b))
        .collect();
    let counts = (0..tree.len() as u32).map(|v| vec![0; params.vector(v).len()]).collect();
    let start = if planted { BASE } else { 0 };
    let mut state = DfsState {
        tree,
        planted,
        delta,
        params: &params,
        param_sums,
        live: weights.to_vec(),
        counts,
        path: vec![start],
        max_len,
        level_sums: vec![BigRational::zero(); max_len + 1],
        checked: 0,
        mismatch: None,
    };
    if tree.len() == 1 && !planted {
        // The lone root has no edge: only the empty path exists.
        state.checked = 1;
        state.level_sums = vec![BigRational::one()];
        return (state.checked, None, state.level_sums);
    }
    state.visit(&BigRational::one(), &BigRational::one());
    (state.checked, state.mismatch, state.level_sums)
}

fn weight_assignments(grid: &[BigRational], edges: usize) -> Vec<Vec<BigRational>> {
    let mut out = vec![Vec::with_capacity(edges)];
    for _ in 0..edges {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                grid.iter().map(move |g| {
                    let mut p = prefix.clone();
                    p.push(g.clone());
                    p
                })
            })
            .collect();
    }
    out
}

/// Exhaustive comparison of the two path laws on all small trees.
///
/// Unplanted walks start at the root; planted walks start at the base, and
/// the planted edge takes its weight from the grid as well.
pub fn verify_equivalence(cfg: &SuiteConfig) -> Result<OracleReport, OracleError> {
    if cfg.max_n > 8 {
        return Err(OracleError::BudgetExceeded(cfg.max_n));
    }
    let mut report = OracleReport::default();
    for n in 1..=cfg.max_n {
        for tree in enumerate_plane_trees(n) {
            report.trees += 1;
            for &planted in &cfg.modes {
                for assignment in weight_assignments(&cfg.weight_grid, n - 1 + usize::from(planted)) {
                    let weights: Vec<BigRational> = if planted {
                        assignment
                    } else {
                        std::iter::once(BigRational::one()).chain(assignment).collect()
                    };
                    for delta in &cfg.deltas {
                        report.configurations += 1;
                        let (checked, mismatch, sums) = check_configuration(&tree, &weights, delta, planted, cfg.max_len);
                        report.paths_checked += checked;
                        if let Some((path, lerrw, dirichlet)) = mismatch {
                            report.mismatches.push(Counterexample {
                                child_counts: tree.child_counts(),
                                weights: weights.clone(),
                                delta: delta.clone(),
                                planted,
                                path,
                                lerrw,
                                dirichlet,
                            });
                        }
                        for (len, s) in sums.iter().enumerate() {
                            if !s.is_one() {
                                report.normalization_failures.push((tree.child_counts(), planted, len));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

/// All plane trees with 1..=max_n vertices paired with every root-started
/// nearest-neighbour path of at most `max_len` steps.
pub fn enumerate_small(max_n: usize, max_len: usize) -> Result<Vec<(PlaneTree, Vec<u32>)>, OracleError> {
    if max_n > 8 {
        return Err(OracleError::BudgetExceeded(max_n));
    }
    let mut out = Vec::new();
    for n in 1..=max_n {
        for tree in enumerate_plane_trees(n) {
            let mut stack = vec![vec![0u32]];
            while let Some(path) = stack.pop() {
                if path.len() <= max_len {
                    let x = *path.last().expect("nonempty");
                    let nbrs = tree.parent(x).into_iter().chain(tree.children(x).iter().copied());
                    for y in nbrs {
                        let mut next = path.clone();
                        next.push(y);
                        stack.push(next);
                    }
                }
                out.push((tree.clone(), path));
            }
        }
    }
    Ok(out)
}

/// Exit statistics of the continuous-time walk (exp(1) holding at every
/// vertex except the base, which is crossed instantly).
#[derive(Debug, Clone, PartialEq)]
pub struct ExitStats {
    /// Absorbing vertices, in increasing id order with the base last.
    pub boundary: Vec<u32>,
    /// exit_probability[x][j]: probability that the walk from x exits at boundary[j].
    pub exit_probability: Vec<Vec<f64>>,
    /// Expected exit time from each vertex (0 on the boundary).
    pub expected_time: Vec<f64>,
    /// Same quantities started from the base (planted trees only).
    pub base_exit_probability: Option<Vec<f64>>,
    pub base_expected_time: Option<f64>,
}

/// Solves f(x) = r(x) + Σ_y p(x, y) f(y) off the absorbing set, f = g on it,
/// by eliminating leaves towards the root.
///
/// `conductance[v]` belongs to the edge above v; entry 0 is the planted
/// edge when `planted`.
fn solve_harmonic(
    tree: &PlaneTree,
    conductance: &[f64],
    planted: bool,
    absorbing: &[bool],
    base_absorbing: bool,
    r: &[f64],
    g: &[f64],
    g_base: f64,
) -> (Vec<f64>, f64) {
    let n = tree.len();
    let mut a = vec![0.0; n];
    let mut c = vec![0.0; n];
    let total = |x: u32| -> f64 {
        let up = if x != 0 || planted { conductance[x as usize] } else { 0.0 };
        up + tree.children(x).iter().map(|&y| conductance[y as usize]).sum::<f64>()
    };
    for x in (0..n as u32).rev() {
        if absorbing[x as usize] {
            continue;
        }
        let tot = total(x);
        let mut rhs = r[x as usize];
        let mut s = 0.0;
        for &y in tree.children(x) {
            let p = conductance[y as usize] / tot;
            if absorbing[y as usize] {
                rhs += p * g[y as usize];
            } else {
                rhs += p * a[y as usize];
                s += p * c[y as usize];
            }
        }
        let p_up = if x != 0 || planted { conductance[x as usize] / tot } else { 0.0 };
        a[x as usize] = rhs / (1.0 - s);
        c[x as usize] = p_up / (1.0 - s);
    }
    let mut f = g.to_vec();
    // base: if not absorbing, f(base) = f(root) (instant crossing)
    let root_value = if absorbing[0] {
        g[0]
    } else if planted && !base_absorbing {
        a[0] / (1.0 - c[0])
    } else if planted {
        a[0] + c[0] * g_base
    } else {
        a[0]
    };
    f[0] = root_value;
    let f_base = if planted && !base_absorbing { root_value } else { g_base };
    for x in 1..n as u32 {
        if !absorbing[x as usize] {
            let p = tree.parent(x).expect("non-root");
            f[x as usize] = a[x as usize] + c[x as usize] * f[p as usize];
        }
    }
    (f, f_base)
}

/// Exact exit probabilities and expected exit times on a finite tree.
pub fn exact_exit_stats(
    tree: &PlaneTree,
    conductance: &[f64],
    planted: bool,
    absorbing: &[bool],
    base_absorbing: bool,
) -> Result<ExitStats, OracleError> {
    let n = tree.len();
    assert_eq!(conductance.len(), n);
    assert_eq!(absorbing.len(), n);
    check_connected(tree, planted, absorbing, base_absorbing)?;
    let mut boundary: Vec<u32> = (0..n as u32).filter(|&v| absorbing[v as usize]).collect();
    if planted && base_absorbing {
        boundary.push(BASE);
    }
    let ones: Vec<f64> = (0..n).map(|v| if absorbing[v] { 0.0 } else { 1.0 }).collect();
    let zeros = vec![0.0; n];
    let (expected_time, base_time) = solve_harmonic(tree, conductance, planted, absorbing, base_absorbing, &ones, &zeros, 0.0);
    let mut exit_probability = vec![Vec::with_capacity(boundary.len()); n];
    let mut base_probs = Vec::with_capacity(boundary.len());
    for &z in &boundary {
        let mut g = vec![0.0; n];
        let g_base = if z == BASE { 1.0 } else { 0.0 };
        if z != BASE {
            g[z as usize] = 1.0;
        }
        let (h, hb) = solve_harmonic(tree, conductance, planted, absorbing, base_absorbing, &zeros, &g, g_base);
        for x in 0..n {
            exit_probability[x].push(h[x]);
        }
        base_probs.push(hb);
    }
    Ok(ExitStats {
        boundary,
        exit_probability,
        expected_time,
        base_exit_probability: planted.then_some(base_probs),
        base_expected_time: planted.then_some(base_time),
    })
}

fn check_connected(tree: &PlaneTree, planted: bool, absorbing: &[bool], base_absorbing: bool) -> Result<(), OracleError> {
    // Every non-absorbing component must touch an absorbing vertex.
    let n = tree.len();
    let mut comp = vec![usize::MAX; n];
    let mut has_exit = Vec::new();
    for s in 0..n {
        if absorbing[s] || comp[s] != usize::MAX {
            continue;
        }
        let id = has_exit.len();
        let mut exit = false;
        let mut stack = vec![s as u32];
        comp[s] = id;
        while let Some(x) = stack.pop() {
            let up = tree.parent(x);
            if x == 0 && planted && base_absorbing {
                exit = true;
            }
            for y in up.into_iter().chain(tree.children(x).iter().copied()) {
                if absorbing[y as usize] {
                    exit = true;
                } else if comp[y as usize] == usize::MAX {
                    comp[y as usize] = id;
                    stack.push(y);
                }
            }
        }
        has_exit.push(exit);
    }
    if has_exit.iter().all(|&e| e) {
        Ok(())
    } else {
        Err(OracleError::DisconnectedRegion)
    }
}

/// Cov(φ(u), φ(v)) = f(rescale·depth(u∧v)) with f(d) = d^{1−α} (α < 1) or
/// log(d + 1) (α = 1), as a dense row-major n×n table.
pub fn snake_covariance(tree: &PlaneTree, rescale: f64, alpha: f64) -> Vec<f64> {
    let view = TreeMetricView::new(tree);
    let n = tree.len();
    let mut out = vec![0.0; n * n];
    for u in 0..n as u32 {
        for v in u..n as u32 {
            let d = rescale * f64::from(tree.depth(view.mrca(u, v)));
            let c = snake_clock(d, alpha);
            out[u as usize * n + v as usize] = c;
            out[v as usize * n + u as usize] = c;
        }
    }
    out
}

/// The variance clock d ↦ d^{1−α} (α < 1) or log(d + 1) (α = 1).
pub fn snake_clock(d: f64, alpha: f64) -> f64 {
    if alpha < 1.0 {
        if d == 0.0 {
            0.0
        } else {
            d.powf(1.0 - alpha)
        }
    } else {
        d.ln_1p()
    }
}

/// Symmetric pivoted Cholesky; true if no pivot falls below −tol·max diag.
pub fn is_positive_semidefinite(matrix: &[f64], n: usize, tol: f64) -> bool {
    let mut a = matrix.to_vec();
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut remaining: Vec<usize> = (0..n).collect();
    while !remaining.is_empty() {
        let (pos, &p) = remaining
            .iter()
            .enumerate()
            .max_by(|x, y| a[x.1 * n + x.1].total_cmp(&a[y.1 * n + y.1]))
            .expect("nonempty");
        let pivot = a[p * n + p];
        if pivot < -tol * scale {
            return false;
        }
        remaining.swap_remove(pos);
        if pivot <= tol * scale {
            // rest must be (numerically) zero
            return remaining.iter().all(|&i| remaining.iter().all(|&j| a[i * n + j].abs() <= tol * scale * 10.0));
        }
        for &i in &remaining {
            let f = a[i * n + p] / pivot;
            for &j in &remaining {
                a[i * n + j] -= f * a[p * n + j];
            }
        }
    }
    true
}
