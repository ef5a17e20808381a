//! Walkers: the linearly edge-reinforced walk, the quenched walk in a fixed
//! environment, and its continuous-time version, all recording a [`WalkTrace`].

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, WeightScheme};
use crate::trees::{Habitat, PlaneTree};
use crate::RandomSource;

/// Sentinel id of the base vertex of a planted tree.
pub const BASE: u32 = u32::MAX;

/// What to record during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Increasing times at which the state is sampled.
    pub checkpoints: Vec<f64>,
    /// Increasing radii r for the first time the walk is farther than r.
    pub radii: Vec<u32>,
    /// Depths D for "returns to the root after first reaching depth D".
    pub return_depths: Vec<u32>,
    /// Keep the full position log (used by the weight audit).
    pub record_positions: bool,
}

impl TraceConfig {
    /// Checkpoints 1, 2, 4, ..., up to and including `horizon` if it is a power of 2.
    pub fn geometric(horizon: f64) -> Self {
        let mut checkpoints = Vec::new();
        let mut t = 1.0;
        while t <= horizon {
            checkpoints.push(t);
            t *= 2.0;
        }
        TraceConfig {
            checkpoints,
            ..Default::default()
        }
    }

    /// Checkpoints at `base`^k·`start` up to `horizon`, always including `horizon`.
    pub fn log_grid(start: f64, factor: f64, horizon: f64) -> Self {
        let mut checkpoints = Vec::new();
        let mut t = start;
        while t < horizon * (1.0 - 1e-12) {
            checkpoints.push(t.round());
            t *= factor;
        }
        checkpoints.push(horizon);
        checkpoints.dedup();
        TraceConfig {
            checkpoints,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    /// Checkpoints reached before censoring (a prefix of the configured list).
    pub checkpoint_times: Vec<f64>,
    pub displacement: Vec<u32>,
    pub max_displacement: Vec<u32>,
    /// Cumulative number of arrivals at the root, per checkpoint.
    pub root_returns: Vec<u64>,
    /// Per configured radius: first time the distance to the root exceeded it.
    pub first_exit_times: Vec<Option<f64>>,
    /// Per configured depth D: (reached D, visited the root after that).
    pub returned_after_depth: Vec<(bool, bool)>,
    pub censored_at: Option<f64>,
    /// Total jumps made.
    pub jumps: u64,
    pub final_time: f64,
    pub positions: Option<Vec<u32>>,
}

impl WalkTrace {
    pub fn censored(&self) -> bool {
        self.censored_at.is_some()
    }
}

struct Recorder<'a> {
    cfg: &'a TraceConfig,
    trace: WalkTrace,
    max_disp: u32,
    returns: u64,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a TraceConfig, start: u32) -> Self {
        let trace = WalkTrace {
            checkpoint_times: Vec::with_capacity(cfg.checkpoints.len()),
            displacement: Vec::with_capacity(cfg.checkpoints.len()),
            max_displacement: Vec::with_capacity(cfg.checkpoints.len()),
            root_returns: Vec::with_capacity(cfg.checkpoints.len()),
            first_exit_times: vec![None; cfg.radii.len()],
            returned_after_depth: vec![(false, false); cfg.return_depths.len()],
            censored_at: None,
            jumps: 0,
            final_time: 0.0,
            positions: cfg.record_positions.then(|| vec![start]),
        };
        Recorder {
            cfg,
            trace,
            max_disp: 0,
            returns: 0,
        }
    }

    fn next_checkpoint(&self) -> f64 {
        self.cfg
            .checkpoints
            .get(self.trace.checkpoint_times.len())
            .copied()
            .unwrap_or(f64::INFINITY)
    }

    fn push_checkpoint(&mut self, t: f64, depth: u32) {
        self.trace.checkpoint_times.push(t);
        self.trace.displacement.push(depth);
        self.trace.max_displacement.push(self.max_disp);
        self.trace.root_returns.push(self.returns);
    }

    /// Records checkpoints at times ≤ t with the current state.
    fn flush_through(&mut self, t: f64, depth: u32) {
        while self.next_checkpoint() <= t {
            let c = self.next_checkpoint();
            self.push_checkpoint(c, depth);
        }
    }

    /// Records checkpoints at times < t with the current state.
    fn flush_before(&mut self, t: f64, depth: u32) {
        while self.next_checkpoint() < t {
            let c = self.next_checkpoint();
            self.push_checkpoint(c, depth);
        }
    }

    /// Registers arrival at `v` (depth `depth`) at time `t`.
    #[inline]
    fn arrive(&mut self, t: f64, v: u32, depth: u32) {
        self.trace.jumps += 1;
        if let Some(p) = self.trace.positions.as_mut() {
            p.push(v);
        }
        if depth > self.max_disp {
            self.max_disp = depth;
            for (i, &r) in self.cfg.radii.iter().enumerate() {
                if depth > r && self.trace.first_exit_times[i].is_none() {
                    self.trace.first_exit_times[i] = Some(t);
                }
            }
            for (i, &d) in self.cfg.return_depths.iter().enumerate() {
                if depth >= d {
                    self.trace.returned_after_depth[i].0 = true;
                }
            }
        }
        if v == 0 {
            self.returns += 1;
            for flag in &mut self.trace.returned_after_depth {
                if flag.0 {
                    flag.1 = true;
                }
            }
        }
    }

    fn finish(mut self, t: f64) -> WalkTrace {
        self.trace.final_time = t;
        self.trace
    }
}

/// Initial LERRW weights: explicit per-vertex edge weights (entry v is the
/// edge above v) or a depth-based scheme for lazily revealed trees.
#[derive(Debug, Clone)]
pub enum InitialWeights {
    Explicit(Vec<f64>),
    ByDepth(WeightScheme),
}

impl InitialWeights {
    #[inline]
    fn weight(&self, v: u32, depth: u32) -> f64 {
        match self {
            InitialWeights::Explicit(w) => w[v as usize],
            InitialWeights::ByDepth(s) => s.edge_weight(depth),
        }
    }
}

/// Result of a LERRW run: the trace plus the traversal count of every edge.
#[derive(Debug, Clone)]
pub struct LerrwRun {
    pub trace: WalkTrace,
    /// Traversals of the edge above each vertex, indexed by vertex id.
    pub traversals: Vec<u32>,
    /// Live weight of the edge above each vertex at the end of the run.
    pub live_weights: Vec<f64>,
}

/// Discrete-time LERRW from the root of an unplanted tree for `horizon` steps.
///
/// From w the walk crosses an incident edge e with probability N_e / Σ N,
/// then N_e grows by Δ. The live weight of an edge is always
/// initial + Δ·(traversals), evaluated in that form so an audit can
/// recompute it exactly.
pub fn run_lerrw<H: Habitat>(
    habitat: &mut H,
    weights: &InitialWeights,
    delta: f64,
    horizon: u64,
    cfg: &TraceConfig,
    rng: &mut RandomSource,
) -> LerrwRun {
    let mut rec = Recorder::new(cfg, 0);
    let mut initial: Vec<f64> = Vec::with_capacity(1024);
    let mut count: Vec<u32> = Vec::with_capacity(1024);
    let ensure = |initial: &mut Vec<f64>, count: &mut Vec<u32>, habitat: &H| {
        while initial.len() < habitat.vertex_count() {
            let v = initial.len() as u32;
            initial.push(weights.weight(v, habitat.depth(v)));
            count.push(0);
        }
    };
    ensure(&mut initial, &mut count, habitat);
    let mut w = 0u32;
    rec.flush_through(0.0, 0);
    let mut t = 0u64;
    let mut scratch: Vec<f64> = Vec::with_capacity(16);
    while t < horizon {
        if habitat.reveal(w).is_err() {
            rec.trace.censored_at = Some(t as f64);
            break;
        }
        ensure(&mut initial, &mut count, habitat);
        let parent = habitat.parent(w);
        let k = habitat.child_count(w);
        scratch.clear();
        if parent.is_some() {
            scratch.push(initial[w as usize] + delta * f64::from(count[w as usize]));
        }
        for i in 0..k {
            let c = habitat.child(w, i) as usize;
            scratch.push(initial[c] + delta * f64::from(count[c]));
        }
        if scratch.is_empty() {
            // isolated root: nothing to cross
            break;
        }
        let total: f64 = scratch.iter().sum();
        debug_assert!((scratch.iter().map(|x| x / total).sum::<f64>() - 1.0).abs() < 1e-12);
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = scratch.len() - 1;
        for (i, &x) in scratch.iter().enumerate() {
            acc += x;
            if u < acc {
                pick = i;
                break;
            }
        }
        let next = match (parent, pick) {
            (Some(p), 0) => {
                count[w as usize] += 1;
                p
            }
            (Some(_), i) => {
                let c = habitat.child(w, i - 1);
                count[c as usize] += 1;
                c
            }
            (None, i) => {
                let c = habitat.child(w, i);
                count[c as usize] += 1;
                c
            }
        };
        t += 1;
        w = next;
        let depth = habitat.depth(w);
        rec.arrive(t as f64, w, depth);
        rec.flush_through(t as f64, depth);
    }
    let live_weights = initial.iter().zip(&count).map(|(&a, &c)| a + delta * f64::from(c)).collect();
    LerrwRun {
        trace: rec.finish(t as f64),
        traversals: count,
        live_weights,
    }
}

/// Recomputes live weights from a position log and compares them bitwise.
pub fn audit_lerrw<H: Habitat>(habitat: &H, weights: &InitialWeights, delta: f64, run: &LerrwRun) -> bool {
    let Some(positions) = &run.trace.positions else {
        return false;
    };
    let mut count = vec![0u32; run.traversals.len()];
    for pair in positions.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let lower = if habitat.parent(b) == Some(a) {
            b
        } else if habitat.parent(a) == Some(b) {
            a
        } else {
            return false;
        };
        count[lower as usize] += 1;
    }
    count == run.traversals
        && (0..count.len()).all(|v| {
            let expect = weights.weight(v as u32, habitat.depth(v as u32)) + delta * f64::from(count[v]);
            expect.to_bits() == run.live_weights[v].to_bits()
        })
}

/// Where a quenched walk starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Vertex(u32),
    /// The base of a planted tree.
    Base,
}

/// Quenched neighbour weights at `x`, relative to the conductance of the edge
/// above `x`: parent (or base) gets 1, child y gets 1/ρ_y.
fn neighbours(tree: &PlaneTree, env: &Environment, x: u32, out: &mut Vec<(u32, f64)>) {
    out.clear();
    if x == BASE {
        out.push((0, 1.0));
        return;
    }
    match tree.parent(x) {
        Some(p) => out.push((p, 1.0)),
        None if env.planted() => out.push((BASE, 1.0)),
        None => {}
    }
    for &c in tree.children(x) {
        out.push((c, (-env.log_rho()[c as usize]).exp()));
    }
}

fn pick(rng: &mut RandomSource, options: &[(u32, f64)]) -> u32 {
    let total: f64 = options.iter().map(|o| o.1).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(v, w) in options {
        acc += w;
        if u < acc {
            return v;
        }
    }
    options.last().expect("nonempty").0
}

fn depth_of(tree: &PlaneTree, v: u32) -> u32 {
    if v == BASE {
        0
    } else {
        tree.depth(v)
    }
}

fn start_vertex(start: Start) -> u32 {
    match start {
        Start::Vertex(v) => v,
        Start::Base => BASE,
    }
}

/// Discrete-time walk in the fixed environment `env` for `horizon` jumps.
pub fn run_rwde(
    tree: &PlaneTree,
    env: &Environment,
    start: Start,
    horizon: u64,
    cfg: &TraceConfig,
    rng: &mut RandomSource,
) -> WalkTrace {
    let mut x = start_vertex(start);
    let mut rec = Recorder::new(cfg, x);
    rec.flush_through(0.0, depth_of(tree, x));
    let mut opts = Vec::with_capacity(16);
    let mut t = 0u64;
    while t < horizon {
        if x != BASE && tree.is_truncation_boundary(x) {
            rec.trace.censored_at = Some(t as f64);
            break;
        }
        neighbours(tree, env, x, &mut opts);
        if opts.is_empty() {
            break;
        }
        x = pick(rng, &opts);
        t += 1;
        let d = depth_of(tree, x);
        rec.arrive(t as f64, x, d);
        rec.flush_through(t as f64, d);
    }
    rec.finish(t as f64)
}

/// Continuous-time walk: exp(1) holding at every vertex except the base,
/// which is left instantly; jumps as in [`run_rwde`]. Runs until real time
/// `horizon`.
pub fn run_ctrw(
    tree: &PlaneTree,
    env: &Environment,
    start: Start,
    horizon: f64,
    cfg: &TraceConfig,
    rng: &mut RandomSource,
) -> WalkTrace {
    let mut x = start_vertex(start);
    let mut rec = Recorder::new(cfg, x);
    let mut opts = Vec::with_capacity(16);
    let mut t = 0.0;
    loop {
        if x != BASE && tree.is_truncation_boundary(x) {
            rec.trace.censored_at = Some(t);
            rec.flush_before(t, depth_of(tree, x));
            break;
        }
        let hold: f64 = if x == BASE { 0.0 } else { Exp1.sample(rng) };
        let next_t = t + hold;
        if next_t > horizon {
            rec.flush_through(horizon, depth_of(tree, x));
            t = horizon;
            break;
        }
        neighbours(tree, env, x, &mut opts);
        if opts.is_empty() {
            rec.flush_through(horizon, depth_of(tree, x));
            t = horizon;
            break;
        }
        rec.flush_before(next_t, depth_of(tree, x));
        x = pick(rng, &opts);
        t = next_t;
        rec.arrive(t, x, depth_of(tree, x));
    }
    rec.finish(t)
}

/// Runs the continuous-time walk from `start` until it first hits a vertex
/// with `absorbing[v]` set (the base counts as absorbing when
/// `base_absorbing`). Returns (exit time, exit vertex).
pub fn ctrw_exit(
    tree: &PlaneTree,
    env: &Environment,
    start: Start,
    absorbing: &[bool],
    base_absorbing: bool,
    rng: &mut RandomSource,
) -> (f64, u32) {
    let mut x = start_vertex(start);
    let mut t = 0.0;
    let mut opts = Vec::with_capacity(16);
    let stop = |v: u32| if v == BASE { base_absorbing } else { absorbing[v as usize] };
    while !stop(x) {
        if x != BASE {
            let hold: f64 = Exp1.sample(rng);
            t += hold;
        }
        neighbours(tree, env, x, &mut opts);
        x = pick(rng, &opts);
    }
    (t, x)
}
