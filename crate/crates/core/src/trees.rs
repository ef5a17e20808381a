//! Plane trees, their codings, and Galton-Watson samplers.
//!
//! Vertex ids of a [`PlaneTree`] are assigned in lexicographic (depth-first)
//! order, so id 0 is the root and the exploration order x_0, x_1, ... used by
//! the Lukasiewicz path is the identity on ids. Children of a vertex are kept
//! in increasing id order, which is their Ulam-Harris order.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::offspring::{OffspringKind, OffspringLaw};
use crate::RandomSource;

/// Sentinel parent id of the root.
pub const NO_PARENT: u32 = u32::MAX;

/// Default cap on vertex counts for Kesten samplers.
pub const DEFAULT_MAX_VERTICES: usize = 50_000_000;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("no tree of size {n} has positive probability under {law}")]
    InfeasibleSize { n: u64, law: String },
    #[error("conditioned-sum rejection exceeded {attempts} attempts")]
    RejectionBudgetExceeded { attempts: u64 },
    #[error("tree exceeded the vertex budget of {cap}")]
    MemoryBudgetExceeded { cap: usize },
    #[error("malformed tree: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A rooted ordered tree in flat-array form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaneTree {
    parent: Vec<u32>,
    depth: Vec<u32>,
    child_offsets: Vec<u32>,
    children: Vec<u32>,
    spine: Option<Vec<bool>>,
    depth_limit: Option<u32>,
}

impl PlaneTree {
    /// The one-vertex tree.
    pub fn singleton() -> Self {
        Self::from_parents(vec![NO_PARENT], None, None).expect("singleton is valid")
    }

    /// Builds a tree from a parent array listed in depth-first order.
    ///
    /// Every vertex's parent must be on the current root path when the vertex
    /// is reached, i.e. ids must be a valid lexicographic labelling.
    pub fn from_parents(parent: Vec<u32>, spine: Option<Vec<bool>>, depth_limit: Option<u32>) -> Result<Self, TreeError> {
        let n = parent.len();
        if n == 0 {
            return Err(TreeError::Malformed("empty tree".into()));
        }
        if n >= NO_PARENT as usize {
            return Err(TreeError::Malformed("too many vertices".into()));
        }
        if parent[0] != NO_PARENT {
            return Err(TreeError::Malformed("vertex 0 must be the root".into()));
        }
        if let Some(s) = &spine {
            if s.len() != n {
                return Err(TreeError::Malformed("spine length mismatch".into()));
            }
        }
        let mut depth = vec![0u32; n];
        let mut path: Vec<u32> = vec![0];
        for v in 1..n {
            let p = parent[v];
            if p == NO_PARENT {
                return Err(TreeError::Malformed(format!("second root at {v}")));
            }
            while let Some(&top) = path.last() {
                if top == p {
                    break;
                }
                path.pop();
            }
            if path.is_empty() {
                return Err(TreeError::Malformed(format!("vertex {v} is not in depth-first order")));
            }
            depth[v] = depth[p as usize] + 1;
            path.push(v as u32);
        }
        let mut child_offsets = vec![0u32; n + 1];
        for &p in &parent[1..] {
            child_offsets[p as usize + 1] += 1;
        }
        for v in 0..n {
            child_offsets[v + 1] += child_offsets[v];
        }
        let mut fill = child_offsets.clone();
        let mut children = vec![0u32; n - 1];
        for (v, &p) in parent.iter().enumerate().skip(1) {
            let slot = &mut fill[p as usize];
            children[*slot as usize] = v as u32;
            *slot += 1;
        }
        let tree = PlaneTree {
            parent,
            depth,
            child_offsets,
            children,
            spine,
            depth_limit,
        };
        if let Some(limit) = depth_limit {
            if tree.depth.iter().any(|&d| d > limit) {
                return Err(TreeError::Malformed("vertex deeper than the depth limit".into()));
            }
        }
        Ok(tree)
    }

    /// Decodes a sequence of child counts listed in depth-first order.
    pub fn from_child_counts(counts: &[u64]) -> Result<Self, TreeError> {
        let n = counts.len();
        let total: u64 = counts.iter().sum();
        if n == 0 || total + 1 != n as u64 {
            return Err(TreeError::Malformed("child counts do not sum to n - 1".into()));
        }
        let mut parent = Vec::with_capacity(n);
        parent.push(NO_PARENT);
        // (vertex, children still to attach)
        let mut stack: Vec<(u32, u64)> = vec![(0, counts[0])];
        for (v, &k) in counts.iter().enumerate().skip(1) {
            while matches!(stack.last(), Some(&(_, 0))) {
                stack.pop();
            }
            let Some(top) = stack.last_mut() else {
                return Err(TreeError::Malformed("Lukasiewicz path hits -1 early".into()));
            };
            top.1 -= 1;
            parent.push(top.0);
            stack.push((v as u32, k));
        }
        Self::from_parents(parent, None, None)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> u32 {
        0
    }

    pub fn parent(&self, v: u32) -> Option<u32> {
        let p = self.parent[v as usize];
        (p != NO_PARENT).then_some(p)
    }

    pub fn parents(&self) -> &[u32] {
        &self.parent
    }

    pub fn depth(&self, v: u32) -> u32 {
        self.depth[v as usize]
    }

    pub fn depths(&self) -> &[u32] {
        &self.depth
    }

    pub fn children(&self, v: u32) -> &[u32] {
        let lo = self.child_offsets[v as usize] as usize;
        let hi = self.child_offsets[v as usize + 1] as usize;
        &self.children[lo..hi]
    }

    pub fn child_count(&self, v: u32) -> usize {
        (self.child_offsets[v as usize + 1] - self.child_offsets[v as usize]) as usize
    }

    pub fn spine(&self) -> Option<&[bool]> {
        self.spine.as_deref()
    }

    pub fn is_spine(&self, v: u32) -> bool {
        self.spine.as_ref().is_some_and(|s| s[v as usize])
    }

    pub fn depth_limit(&self) -> Option<u32> {
        self.depth_limit
    }

    /// Whether `v` sits on the truncation boundary of a depth-limited tree.
    pub fn is_truncation_boundary(&self, v: u32) -> bool {
        self.depth_limit == Some(self.depth[v as usize])
    }

    pub fn height(&self) -> u32 {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// W_0 = 0, W_{m+1} = W_m + k_{x_m} - 1; ends at -1.
    pub fn lukasiewicz(&self) -> Vec<i64> {
        let mut path = Vec::with_capacity(self.len() + 1);
        let mut w = 0i64;
        path.push(w);
        for v in 0..self.len() as u32 {
            w += self.child_count(v) as i64 - 1;
            path.push(w);
        }
        path
    }

    /// Child counts in depth-first order.
    pub fn child_counts(&self) -> Vec<u64> {
        (0..self.len() as u32).map(|v| self.child_count(v) as u64).collect()
    }

    /// Vertices visited by the contour traversal: 2(n-1)+1 entries.
    pub fn contour_order(&self) -> Vec<u32> {
        let mut order = Vec::with_capacity(2 * self.len() - 1);
        let mut stack: Vec<(u32, usize)> = vec![(0, 0)];
        order.push(0);
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            let kids = self.children(v);
            if *next < kids.len() {
                let c = kids[*next];
                *next += 1;
                order.push(c);
                stack.push((c, 0));
            } else {
                stack.pop();
                if let Some(&(p, _)) = stack.last() {
                    order.push(p);
                }
            }
        }
        order
    }

    /// The contour function C(i) = depth of the i-th contour vertex.
    pub fn contour(&self) -> Vec<u32> {
        self.contour_order().into_iter().map(|v| self.depth(v)).collect()
    }

    /// Contour zero-padded to 2n + 1 samples, for indexing by ⌊2nt⌋.
    pub fn contour_padded(&self) -> Vec<u32> {
        let mut c = self.contour();
        c.resize(2 * self.len() + 1, 0);
        c
    }

    /// Contour vertex order padded with the root to 2n + 1 entries.
    pub fn contour_order_padded(&self) -> Vec<u32> {
        let mut c = self.contour_order();
        c.resize(2 * self.len() + 1, 0);
        c
    }

    /// Number of vertices at each depth.
    pub fn generation_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0u64; self.height() as usize + 1];
        for &d in &self.depth {
            sizes[d as usize] += 1;
        }
        sizes
    }

    /// Vertices on the path from the root to `v`, root first.
    pub fn ancestry(&self, v: u32) -> Vec<u32> {
        let mut path = Vec::with_capacity(self.depth(v) as usize + 1);
        let mut x = v;
        path.push(x);
        while let Some(p) = self.parent(x) {
            path.push(p);
            x = p;
        }
        path.reverse();
        path
    }

    /// Checks the structural invariants; used by tests and after loading.
    pub fn validate(&self) -> Result<(), TreeError> {
        for v in 1..self.len() as u32 {
            let p = self.parent(v).ok_or_else(|| TreeError::Malformed("extra root".into()))?;
            if self.depth(v) != self.depth(p) + 1 {
                return Err(TreeError::Malformed(format!("depth of {v}")));
            }
            if !self.children(p).contains(&v) {
                return Err(TreeError::Malformed(format!("{v} missing from children of {p}")));
            }
        }
        if let Some(spine) = &self.spine {
            if !spine[0] {
                return Err(TreeError::Malformed("root must be special".into()));
            }
            let top = self.depth_limit.unwrap_or_else(|| self.height());
            let mut per_level = vec![0u32; top as usize + 1];
            for v in 0..self.len() as u32 {
                if spine[v as usize] {
                    per_level[self.depth(v) as usize] += 1;
                    if let Some(p) = self.parent(v) {
                        if !spine[p as usize] {
                            return Err(TreeError::Malformed("special vertex with normal parent".into()));
                        }
                    }
                }
            }
            if per_level.iter().any(|&c| c != 1) {
                return Err(TreeError::Malformed("spine is not a single ray".into()));
            }
        }
        Ok(())
    }

    /// Writes `id parent depth spine_flag` rows after a JSON header line.
    pub fn write_text<W: Write>(&self, mut out: W, header: &TreeHeader) -> std::io::Result<()> {
        writeln!(out, "{}", serde_json::to_string(header)?)?;
        for v in 0..self.len() as u32 {
            let parent = self.parent(v).map_or(-1, i64::from);
            writeln!(out, "{} {} {} {}", v, parent, self.depth(v), u8::from(self.is_spine(v)))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<(TreeHeader, PlaneTree), TreeError> {
        let mut lines = input.lines();
        let header_line = lines.next().ok_or_else(|| TreeError::Malformed("missing header".into()))??;
        let header: TreeHeader =
            serde_json::from_str(&header_line).map_err(|e| TreeError::Malformed(format!("header: {e}")))?;
        let mut parent = Vec::with_capacity(header.n as usize);
        let mut depth = Vec::with_capacity(header.n as usize);
        let mut spine = Vec::with_capacity(header.n as usize);
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || TreeError::Malformed(format!("row {row}: `{line}`"));
            if fields.len() != 4 {
                return Err(bad());
            }
            let id: usize = fields[0].parse().map_err(|_| bad())?;
            let p: i64 = fields[1].parse().map_err(|_| bad())?;
            let d: u32 = fields[2].parse().map_err(|_| bad())?;
            let s: u8 = fields[3].parse().map_err(|_| bad())?;
            if id != parent.len() {
                return Err(bad());
            }
            parent.push(if p < 0 { NO_PARENT } else { p as u32 });
            depth.push(d);
            spine.push(s == 1);
        }
        if parent.len() as u64 != header.n {
            return Err(TreeError::Malformed(format!("header says {} vertices, found {}", header.n, parent.len())));
        }
        let spine = header.kesten.then_some(spine);
        let tree = PlaneTree::from_parents(parent, spine, header.depth_limit)?;
        if tree.depth != depth {
            return Err(TreeError::Malformed("depth column disagrees with parents".into()));
        }
        tree.validate()?;
        Ok((header, tree))
    }
}

/// Metadata line of the tree text format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeHeader {
    pub n: u64,
    pub law: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub kesten: bool,
    #[serde(default)]
    pub depth_limit: Option<u32>,
}

/// Ancestor tables for most-recent-common-ancestor queries.
#[derive(Debug, Clone)]
pub struct TreeMetricView<'a> {
    tree: &'a PlaneTree,
    /// up[j][v] = 2^j-th ancestor of v (root maps to itself).
    up: Vec<Vec<u32>>,
}

impl<'a> TreeMetricView<'a> {
    pub fn new(tree: &'a PlaneTree) -> Self {
        let n = tree.len();
        let levels = (u32::BITS - tree.height().leading_zeros()).max(1) as usize;
        let mut up = Vec::with_capacity(levels);
        up.push((0..n as u32).map(|v| tree.parent(v).unwrap_or(0)).collect::<Vec<_>>());
        for j in 1..levels {
            let prev = &up[j - 1];
            let next = (0..n).map(|v| prev[prev[v] as usize]).collect();
            up.push(next);
        }
        TreeMetricView { tree, up }
    }

    pub fn tree(&self) -> &'a PlaneTree {
        self.tree
    }

    /// The ancestor of `v` at depth `target` (which must not exceed depth(v)).
    pub fn ancestor_at_depth(&self, mut v: u32, target: u32) -> u32 {
        let mut lift = self.tree.depth(v) - target;
        let mut j = 0;
        while lift > 0 {
            if lift & 1 == 1 {
                v = self.up[j][v as usize];
            }
            lift >>= 1;
            j += 1;
        }
        v
    }

    pub fn mrca(&self, u: u32, v: u32) -> u32 {
        let du = self.tree.depth(u);
        let dv = self.tree.depth(v);
        let (mut a, mut b) = if du >= dv {
            (self.ancestor_at_depth(u, dv), v)
        } else {
            (u, self.ancestor_at_depth(v, du))
        };
        if a == b {
            return a;
        }
        for j in (0..self.up.len()).rev() {
            let (pa, pb) = (self.up[j][a as usize], self.up[j][b as usize]);
            if pa != pb {
                a = pa;
                b = pb;
            }
        }
        self.up[0][a as usize]
    }

    pub fn distance(&self, u: u32, v: u32) -> u32 {
        let m = self.mrca(u, v);
        self.tree.depth(u) + self.tree.depth(v) - 2 * self.tree.depth(m)
    }

    /// The vertices of [u, v] in path order from u to v.
    pub fn path(&self, u: u32, v: u32) -> Vec<u32> {
        let m = self.mrca(u, v);
        let mut left = Vec::new();
        let mut x = u;
        while x != m {
            left.push(x);
            x = self.tree.parent(x).expect("below the mrca");
        }
        left.push(m);
        let mut right = Vec::new();
        let mut y = v;
        while y != m {
            right.push(y);
            y = self.tree.parent(y).expect("below the mrca");
        }
        left.extend(right.into_iter().rev());
        left
    }
}

/// Samples a GW(ξ) tree conditioned to have exactly `n` vertices.
///
/// Increments ξ_i - 1 are drawn conditioned on summing to -1, rotated by the
/// cycle lemma to the unique first-passage representative, then decoded.
pub fn sample_conditioned_gw(
    law: &OffspringLaw,
    n: u64,
    rng: &mut RandomSource,
    attempt_budget: u64,
) -> Result<PlaneTree, TreeError> {
    if !law.size_feasible(n) {
        return Err(TreeError::InfeasibleSize { n, law: law.label() });
    }
    let counts = match law.kind() {
        OffspringKind::GeometricHalf => uniform_weak_composition(n, rng),
        OffspringKind::StableFamily => conditioned_counts_by_rejection(law, n, rng, attempt_budget)?,
    };
    PlaneTree::from_child_counts(&cycle_lemma_rotation(&counts))
}

/// Geometric(1/2) counts conditioned on their sum are uniform over weak
/// compositions of n - 1 into n parts: a uniform arrangement of n - 1 stars
/// and n - 1 bars.
fn uniform_weak_composition(n: u64, rng: &mut RandomSource) -> Vec<u64> {
    let n = n as usize;
    let mut symbols = vec![false; 2 * (n - 1)];
    symbols[..n - 1].fill(true);
    // Fisher-Yates
    for i in (1..symbols.len()).rev() {
        let j = rng.random_range(0..=i);
        symbols.swap(i, j);
    }
    let mut counts = Vec::with_capacity(n);
    let mut run = 0u64;
    for s in symbols {
        if s {
            run += 1;
        } else {
            counts.push(run);
            run = 0;
        }
    }
    counts.push(run);
    counts
}

fn conditioned_counts_by_rejection(
    law: &OffspringLaw,
    n: u64,
    rng: &mut RandomSource,
    attempt_budget: u64,
) -> Result<Vec<u64>, TreeError> {
    let target = n - 1;
    let mut counts = Vec::with_capacity(n as usize);
    for _ in 0..attempt_budget {
        counts.clear();
        let mut sum = 0u64;
        let mut overshoot = false;
        for _ in 0..n {
            let k = law.sample(rng);
            sum = sum.saturating_add(k);
            if sum > target {
                overshoot = true;
                break;
            }
            counts.push(k);
        }
        if !overshoot && sum == target {
            return Ok(counts);
        }
    }
    Err(TreeError::RejectionBudgetExceeded { attempts: attempt_budget })
}

/// Rotates child counts (increments summing to -1) so that the partial sums
/// of k - 1 stay nonnegative until the last step.
pub fn cycle_lemma_rotation(counts: &[u64]) -> Vec<u64> {
    let mut best = 0i64;
    let mut start = 0usize;
    let mut s = 0i64;
    for (j, &k) in counts.iter().enumerate() {
        s += k as i64 - 1;
        if s < best {
            best = s;
            start = j + 1;
        }
    }
    let start = start % counts.len();
    counts[start..].iter().chain(&counts[..start]).copied().collect()
}

/// Samples Kesten's tree truncated at `depth_limit`.
///
/// Special vertices reproduce via the size-biased law with one uniformly
/// chosen special child; normal vertices via ξ. Vertices at depth
/// `depth_limit` are kept but their children are cut.
pub fn sample_kesten(
    law: &OffspringLaw,
    depth_limit: u32,
    rng: &mut RandomSource,
    max_vertices: usize,
) -> Result<PlaneTree, TreeError> {
    let mut parent = Vec::new();
    let mut spine = Vec::new();
    // (parent id, depth, special)
    let mut stack: Vec<(u32, u32, bool)> = vec![(NO_PARENT, 0, true)];
    let mut pending: Vec<(u32, u32, bool)> = Vec::new();
    while let Some((p, depth, special)) = stack.pop() {
        let id = parent.len() as u32;
        if parent.len() >= max_vertices {
            return Err(TreeError::MemoryBudgetExceeded { cap: max_vertices });
        }
        parent.push(p);
        spine.push(special);
        if depth >= depth_limit {
            continue;
        }
        pending.clear();
        if special {
            let k = law.sample_size_biased(rng);
            let chosen = rng.random_range(0..k);
            pending.extend((0..k).map(|i| (id, depth + 1, i == chosen)));
        } else {
            let k = law.sample(rng);
            pending.extend((0..k).map(|_| (id, depth + 1, false)));
        }
        if stack.len() + pending.len() + parent.len() > max_vertices {
            return Err(TreeError::MemoryBudgetExceeded { cap: max_vertices });
        }
        stack.extend(pending.drain(..).rev());
    }
    PlaneTree::from_parents(parent, Some(spine), Some(depth_limit))
}

/// Every plane tree with exactly `n` vertices, in lexicographic order of
/// their child-count sequences.
pub fn enumerate_plane_trees(n: usize) -> Vec<PlaneTree> {
    fn extend(counts: &mut Vec<u64>, height: i64, n: usize, out: &mut Vec<PlaneTree>) {
        let remaining = n - counts.len();
        if remaining == 0 {
            if height == -1 {
                out.push(PlaneTree::from_child_counts(counts).expect("valid coding"));
            }
            return;
        }
        if height < 0 {
            return;
        }
        // Each later vertex lowers the path by at most 1.
        let max_k = (remaining as i64 - 2 - height).max(-1) + 1;
        for k in 0..=max_k {
            let next = height + k - 1;
            if next + 1 > remaining as i64 - 1 {
                break;
            }
            counts.push(k as u64);
            extend(counts, next, n, out);
            counts.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        extend(&mut Vec::with_capacity(n), 0, n, &mut out);
    }
    out
}

/// Unnormalised GW weight Π_v ξ(k_v) of a fixed plane tree.
pub fn gw_weight(law: &OffspringLaw, tree: &PlaneTree) -> f64 {
    (0..tree.len() as u32).map(|v| law.pmf(tree.child_count(v) as u64)).product()
}

/// Reason a walker could not see the children of a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Depth,
    Memory,
}

/// The tree interface walkers move on. Children become visible after
/// [`Habitat::reveal`], which lets infinite trees grow on demand.
pub trait Habitat {
    fn parent(&self, v: u32) -> Option<u32>;
    fn depth(&self, v: u32) -> u32;
    /// Number of children of a revealed vertex.
    fn child_count(&self, v: u32) -> usize;
    fn child(&self, v: u32, i: usize) -> u32;
    fn reveal(&mut self, v: u32) -> Result<(), Truncation>;
    fn vertex_count(&self) -> usize;
}

impl Habitat for &PlaneTree {
    fn parent(&self, v: u32) -> Option<u32> {
        PlaneTree::parent(self, v)
    }

    fn depth(&self, v: u32) -> u32 {
        PlaneTree::depth(self, v)
    }

    fn child_count(&self, v: u32) -> usize {
        PlaneTree::child_count(self, v)
    }

    fn child(&self, v: u32, i: usize) -> u32 {
        self.children(v)[i]
    }

    fn reveal(&mut self, v: u32) -> Result<(), Truncation> {
        if self.is_truncation_boundary(v) {
            Err(Truncation::Depth)
        } else {
            Ok(())
        }
    }

    fn vertex_count(&self) -> usize {
        self.len()
    }
}

const UNREVEALED: u32 = u32::MAX;

/// Kesten's tree grown lazily: a vertex's children are sampled the first
/// time they are requested. Ids follow allocation order, not depth-first
/// order; siblings get consecutive ids.
#[derive(Debug, Clone)]
pub struct KestenExplorer {
    law: OffspringLaw,
    depth_limit: u32,
    max_vertices: usize,
    parent: Vec<u32>,
    depth: Vec<u32>,
    spine: Vec<bool>,
    first_child: Vec<u32>,
    child_count: Vec<u32>,
    rng: RandomSource,
}

impl KestenExplorer {
    pub fn new(law: OffspringLaw, depth_limit: u32, max_vertices: usize, rng: RandomSource) -> Self {
        KestenExplorer {
            law,
            depth_limit,
            max_vertices,
            parent: vec![NO_PARENT],
            depth: vec![0],
            spine: vec![true],
            first_child: vec![0],
            child_count: vec![UNREVEALED],
            rng,
        }
    }

    pub fn is_spine(&self, v: u32) -> bool {
        self.spine[v as usize]
    }

    pub fn is_revealed(&self, v: u32) -> bool {
        self.child_count[v as usize] != UNREVEALED
    }

    pub fn depth_limit(&self) -> u32 {
        self.depth_limit
    }
}

impl Habitat for KestenExplorer {
    fn parent(&self, v: u32) -> Option<u32> {
        let p = self.parent[v as usize];
        (p != NO_PARENT).then_some(p)
    }

    fn depth(&self, v: u32) -> u32 {
        self.depth[v as usize]
    }

    fn child_count(&self, v: u32) -> usize {
        self.child_count[v as usize] as usize
    }

    fn child(&self, v: u32, i: usize) -> u32 {
        self.first_child[v as usize] + i as u32
    }

    fn reveal(&mut self, v: u32) -> Result<(), Truncation> {
        let vi = v as usize;
        if self.child_count[vi] != UNREVEALED {
            return Ok(());
        }
        if self.depth[vi] >= self.depth_limit {
            return Err(Truncation::Depth);
        }
        let special = self.spine[vi];
        let k = if special {
            self.law.sample_size_biased(&mut self.rng)
        } else {
            self.law.sample(&mut self.rng)
        };
        let first = self.parent.len();
        if first as u64 + k > self.max_vertices as u64 {
            return Err(Truncation::Memory);
        }
        let chosen = if special { self.rng.random_range(0..k) } else { u64::MAX };
        let d = self.depth[vi] + 1;
        for i in 0..k {
            self.parent.push(v);
            self.depth.push(d);
            self.spine.push(i == chosen);
            self.first_child.push(0);
            self.child_count.push(UNREVEALED);
        }
        self.first_child[vi] = first as u32;
        self.child_count[vi] = k as u32;
        Ok(())
    }

    fn vertex_count(&self) -> usize {
        self.parent.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;
    use std::collections::{HashMap, VecDeque};

    fn cherry() -> PlaneTree {
        PlaneTree::from_child_counts(&[2, 0, 0]).unwrap()
    }

    fn path2() -> PlaneTree {
        PlaneTree::from_child_counts(&[1, 1, 0]).unwrap()
    }

    #[test]
    fn lukasiewicz_examples() {
        assert_eq!(PlaneTree::singleton().lukasiewicz(), vec![0, -1]);
        assert_eq!(cherry().lukasiewicz(), vec![0, 1, 0, -1]);
        assert_eq!(path2().lukasiewicz(), vec![0, 0, 0, -1]);
    }

    #[test]
    fn contour_examples() {
        assert_eq!(cherry().contour(), vec![0, 1, 0, 1, 0]);
        assert_eq!(path2().contour(), vec![0, 1, 2, 1, 0]);
        assert_eq!(PlaneTree::singleton().contour(), vec![0]);
        assert_eq!(cherry().contour_padded(), vec![0, 1, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn generation_size_examples() {
        assert_eq!(PlaneTree::singleton().generation_sizes(), vec![1]);
        assert_eq!(cherry().generation_sizes(), vec![1, 2]);
    }

    #[test]
    fn rejects_out_of_order_parents() {
        // vertex 2 hangs off 1, then vertex 3 off 1 again is fine; 3 off 2 after
        // leaving 2's subtree is not.
        assert!(PlaneTree::from_parents(vec![NO_PARENT, 0, 1, 0, 2], None, None).is_err());
        assert!(PlaneTree::from_child_counts(&[0, 1]).is_err());
    }

    #[test]
    fn conditioned_size_one_is_singleton() {
        let mut rng = replica_rng(3, 0);
        // heavy-tailed spine offspring: a lighter tail keeps the sizes bounded
        for law in [OffspringLaw::geometric_half(), OffspringLaw::stable_family(1.8).unwrap()] {
            let t = sample_conditioned_gw(&law, 1, &mut rng, 100).unwrap();
            assert_eq!(t, PlaneTree::singleton());
        }
    }

    #[test]
    fn infeasible_sizes_are_reported() {
        let mut rng = replica_rng(3, 0);
        let binary = OffspringLaw::stable_family(2.0).unwrap();
        assert!(matches!(
            sample_conditioned_gw(&binary, 4, &mut rng, 100),
            Err(TreeError::InfeasibleSize { .. })
        ));
        let stable = OffspringLaw::stable_family(1.5).unwrap();
        assert!(matches!(
            sample_conditioned_gw(&stable, 2, &mut rng, 100),
            Err(TreeError::InfeasibleSize { .. })
        ));
    }

    #[test]
    fn rejection_budget_is_enforced() {
        let mut rng = replica_rng(3, 0);
        let stable = OffspringLaw::stable_family(1.5).unwrap();
        assert!(matches!(
            sample_conditioned_gw(&stable, 2001, &mut rng, 1),
            Err(TreeError::RejectionBudgetExceeded { .. })
        ));
    }

    #[test]
    fn catalan_counts() {
        let counts: Vec<usize> = (1..=7).map(|n| enumerate_plane_trees(n).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 5, 14, 42, 132]);
    }

    #[test]
    fn size_three_shapes_are_equally_likely_under_geometric() {
        // Enumerated weights: ξ(1)²ξ(0) = 2^-5 = ξ(2)ξ(0)², so 1/2 each.
        let law = OffspringLaw::geometric_half();
        let mut rng = replica_rng(5, 0);
        let trials = 100_000;
        let cherries = (0..trials)
            .filter(|_| sample_conditioned_gw(&law, 3, &mut rng, 1000).unwrap() == cherry())
            .count() as f64;
        let se = (0.25 / trials as f64).sqrt();
        assert!((cherries / trials as f64 - 0.5).abs() < 3.0 * se);
    }

    fn enumerated_mean_height(law: &OffspringLaw, n: usize) -> f64 {
        let trees = enumerate_plane_trees(n);
        let weights: Vec<f64> = trees.iter().map(|t| gw_weight(law, t)).collect();
        let z: f64 = weights.iter().sum();
        trees.iter().zip(&weights).map(|(t, w)| t.height() as f64 * w / z).sum()
    }

    #[test]
    fn size_four_mean_height_matches_enumeration() {
        let law = OffspringLaw::geometric_half();
        let exact = enumerated_mean_height(&law, 4);
        let mut rng = replica_rng(6, 0);
        let trials = 100_000;
        let hs: Vec<f64> = (0..trials)
            .map(|_| sample_conditioned_gw(&law, 4, &mut rng, 1000).unwrap().height() as f64)
            .collect();
        let mean = hs.iter().sum::<f64>() / trials as f64;
        let var = hs.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
        assert!((mean - exact).abs() < 3.0 * (var / trials as f64).sqrt(), "{mean} vs {exact}");
    }

    #[test]
    fn conditioned_sampler_is_exact_on_small_sizes() {
        // heavy-tailed spine offspring: a lighter tail keeps the sizes bounded
        for law in [OffspringLaw::geometric_half(), OffspringLaw::stable_family(1.8).unwrap()] {
            let mut rng = replica_rng(7, 0);
            for n in 2..=5usize {
                if !law.size_feasible(n as u64) {
                    continue;
                }
                let trees = enumerate_plane_trees(n);
                let weights: Vec<f64> = trees.iter().map(|t| gw_weight(&law, t)).collect();
                let z: f64 = weights.iter().sum();
                let trials = 1_000_000;
                let mut freq: HashMap<Vec<u64>, u64> = HashMap::new();
                for _ in 0..trials {
                    let t = sample_conditioned_gw(&law, n as u64, &mut rng, 100_000).unwrap();
                    *freq.entry(t.child_counts()).or_default() += 1;
                }
                for (t, w) in trees.iter().zip(&weights) {
                    let p = w / z;
                    let got = *freq.get(&t.child_counts()).unwrap_or(&0) as f64 / trials as f64;
                    let se = (p * (1.0 - p) / trials as f64).sqrt().max(1e-12);
                    assert!((got - p).abs() <= 4.0 * se, "{} n={n} {:?}: {got} vs {p}", law.label(), t.child_counts());
                }
            }
        }
    }

    #[test]
    fn kesten_root_child_count_is_size_biased() {
        let law = OffspringLaw::geometric_half();
        let mut rng = replica_rng(8, 0);
        let trials = 1_000_000;
        let counts: Vec<f64> = (0..trials)
            .map(|_| sample_kesten(&law, 1, &mut rng, 1000).unwrap().child_count(0) as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / trials as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
        // size-biased mean E[k²] = Σ k² 2^{-(k+1)} = 3
        let exact: f64 = (0..200).map(|k| (k * k) as f64 * 0.5f64.powi(k + 1)).sum();
        assert!((exact - 3.0).abs() < 1e-12);
        assert!((mean - 3.0).abs() < 3.0 * (var / trials as f64).sqrt(), "{mean}");
    }

    #[test]
    fn kesten_spine_is_a_single_ray() {
        // heavy-tailed spine offspring: a lighter tail keeps the sizes bounded
        for law in [OffspringLaw::geometric_half(), OffspringLaw::stable_family(1.8).unwrap()] {
            let mut rng = replica_rng(9, 0);
            for _ in 0..200 {
                let t = sample_kesten(&law, 20, &mut rng, 10_000_000).unwrap();
                t.validate().unwrap();
                let gens = t.generation_sizes();
                assert_eq!(gens.len(), 21);
                assert!(gens.iter().all(|&g| g >= 1));
                let spine_count = t.spine().unwrap().iter().filter(|&&s| s).count();
                assert_eq!(spine_count, 21);
            }
        }
    }

    #[test]
    fn kesten_budget_is_enforced() {
        let law = OffspringLaw::geometric_half();
        let mut rng = replica_rng(9, 1);
        assert!(matches!(
            sample_kesten(&law, 200, &mut rng, 50),
            Err(TreeError::MemoryBudgetExceeded { .. })
        ));
    }

    fn bfs_distance(tree: &PlaneTree, u: u32, v: u32) -> u32 {
        let mut dist = vec![u32::MAX; tree.len()];
        let mut queue = VecDeque::from([u]);
        dist[u as usize] = 0;
        while let Some(x) = queue.pop_front() {
            let nbrs = tree.parent(x).into_iter().chain(tree.children(x).iter().copied());
            for y in nbrs {
                if dist[y as usize] == u32::MAX {
                    dist[y as usize] = dist[x as usize] + 1;
                    queue.push_back(y);
                }
            }
        }
        dist[v as usize]
    }

    #[test]
    fn mrca_distance_matches_bfs() {
        let law = OffspringLaw::geometric_half();
        let mut rng = replica_rng(10, 0);
        for _ in 0..1000 {
            let n = rng.random_range(1..60);
            let t = sample_conditioned_gw(&law, n, &mut rng, 1000).unwrap();
            let view = TreeMetricView::new(&t);
            let u = rng.random_range(0..t.len() as u32);
            let v = rng.random_range(0..t.len() as u32);
            assert_eq!(view.distance(u, v), bfs_distance(&t, u, v));
            assert_eq!(view.mrca(0, v), 0);
            assert_eq!(view.distance(0, v), t.depth(v));
            assert_eq!(view.path(u, v).len() as u32, view.distance(u, v) + 1);
        }
        let c = cherry();
        let view = TreeMetricView::new(&c);
        assert_eq!(view.mrca(1, 2), 0);
        assert_eq!(view.distance(1, 2), 2);
    }

    #[test]
    fn text_format_round_trip() {
        let law = OffspringLaw::geometric_half();
        let mut rng = replica_rng(12, 0);
        let t = sample_kesten(&law, 6, &mut rng, 10_000).unwrap();
        let header = TreeHeader {
            n: t.len() as u64,
            law: law.label(),
            seed: Some(12),
            kesten: true,
            depth_limit: Some(6),
        };
        let mut buf = Vec::new();
        t.write_text(&mut buf, &header).unwrap();
        let (h2, t2) = PlaneTree::read_text(buf.as_slice()).unwrap();
        assert_eq!(h2, header);
        assert_eq!(t2, t);
    }

    #[test]
    fn explorer_grows_a_kesten_tree() {
        let law = OffspringLaw::geometric_half();
        let mut ex = KestenExplorer::new(law, 30, 1_000_000, replica_rng(13, 0));
        // Walk straight down the spine.
        let mut v = 0u32;
        for d in 0..30 {
            ex.reveal(v).unwrap();
            let k = ex.child_count(v);
            assert!(k >= 1);
            let specials: Vec<u32> = (0..k).map(|i| ex.child(v, i)).filter(|&c| ex.is_spine(c)).collect();
            assert_eq!(specials.len(), 1);
            v = specials[0];
            assert_eq!(ex.depth(v), d + 1);
        }
        assert_eq!(ex.reveal(v), Err(Truncation::Depth));
    }

    proptest::proptest! {
        #[test]
        fn decode_inverts_lukasiewicz(seed in 0u64..10_000, n in 1u64..200) {
            let law = OffspringLaw::geometric_half();
            let mut rng = replica_rng(seed, 0);
            let t = sample_conditioned_gw(&law, n, &mut rng, 10).unwrap();
            let luk = t.lukasiewicz();
            proptest::prop_assert_eq!(*luk.last().unwrap(), -1);
            proptest::prop_assert!(luk[..luk.len() - 1].iter().all(|&w| w >= 0));
            let back = PlaneTree::from_child_counts(&t.child_counts()).unwrap();
            proptest::prop_assert_eq!(&back, &t);
            let contour = t.contour();
            proptest::prop_assert_eq!(contour.len(), 2 * (t.len() - 1) + 1);
            proptest::prop_assert_eq!(*contour.iter().max().unwrap(), t.height());
            let steps: u32 = contour.windows(2).map(|w| w[0].abs_diff(w[1])).sum();
            proptest::prop_assert_eq!(steps as usize, 2 * (t.len() - 1));
        }
    }
}
