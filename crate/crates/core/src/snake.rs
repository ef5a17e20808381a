//! The tree-indexed Gaussian field φ and the distorted resistance and
//! measure it induces on a rescaled discrete tree.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};

use crate::oracle::snake_clock;
use crate::trees::{PlaneTree, TreeMetricView};
use crate::RandomSource;

/// Drift constants (A, B): (Δ/(1−α), sqrt(4Δ/(1−α))) for α < 1 and
/// (Δ − 1, sqrt(4Δ)) for α = 1.
pub fn limit_constants(alpha: f64, delta: f64) -> (f64, f64) {
    if alpha < 1.0 {
        (delta / (1.0 - alpha), (4.0 * delta / (1.0 - alpha)).sqrt())
    } else {
        (delta - 1.0, (4.0 * delta).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnakeField {
    pub rescale: f64,
    pub alpha: f64,
    pub delta: f64,
    pub phi: Vec<f64>,
}

/// d^{(α)}(u, v) with continuum distance rescale·(graph distance).
pub fn d_alpha(view: &TreeMetricView<'_>, rescale: f64, alpha: f64, u: u32, v: u32) -> f64 {
    let tree = view.tree();
    let m = view.mrca(u, v);
    let clock = |x: u32| snake_clock(rescale * f64::from(tree.depth(x)), alpha);
    clock(u) + clock(v) - 2.0 * clock(m)
}

/// Samples φ by independent Gaussian increments along edges, each with
/// variance equal to the increment of the clock.
pub fn sample_snake(tree: &PlaneTree, rescale: f64, alpha: f64, delta: f64, rng: &mut RandomSource) -> SnakeField {
    let mut phi = vec![0.0; tree.len()];
    for v in 1..tree.len() as u32 {
        let p = tree.parent(v).expect("non-root");
        let d = rescale * f64::from(tree.depth(v));
        let var = snake_clock(d, alpha) - snake_clock(d - rescale, alpha);
        let z: f64 = StandardNormal.sample(rng);
        phi[v as usize] = phi[p as usize] + var.sqrt() * z;
    }
    SnakeField {
        rescale,
        alpha,
        delta,
        phi,
    }
}

/// The field φ ≡ 0, leaving only the deterministic drift.
pub fn zero_noise(tree: &PlaneTree, rescale: f64, alpha: f64, delta: f64) -> SnakeField {
    SnakeField {
        rescale,
        alpha,
        delta,
        phi: vec![0.0; tree.len()],
    }
}

impl SnakeField {
    /// The exponent B·φ + A·clock(s), with clock(s) = s^{1−α} or log(s + 1).
    fn tilt(&self, s: f64, phi: f64) -> f64 {
        let (a, b) = limit_constants(self.alpha, self.delta);
        b * phi + a * snake_clock(s, self.alpha)
    }

    /// Resistance density at continuum depth s with field value φ.
    fn resistance_density(&self, s: f64, phi: f64) -> f64 {
        let base = if self.alpha < 1.0 { s.powf(-self.alpha) } else { 1.0 };
        base * self.tilt(s, phi).exp()
    }

    /// Measure density at vertex x.
    pub fn measure_density(&self, tree: &PlaneTree, x: u32) -> f64 {
        let s = self.rescale * f64::from(tree.depth(x));
        let base = if self.alpha < 1.0 { s.powf(self.alpha) } else { 1.0 };
        base * (-self.tilt(s, self.phi[x as usize])).exp()
    }

    /// Contribution of the edge {parent(x), x}: trapezoid rule, except on a
    /// root edge with 0 < α < 1, where the singular end is avoided by the
    /// midpoint rule.
    fn edge_resistance(&self, tree: &PlaneTree, x: u32) -> f64 {
        let p = tree.parent(x).expect("non-root");
        let (sp, sx) = (self.rescale * f64::from(tree.depth(p)), self.rescale * f64::from(tree.depth(x)));
        let (fp, fx) = (self.phi[p as usize], self.phi[x as usize]);
        if sp == 0.0 && self.alpha > 0.0 && self.alpha < 1.0 {
            self.rescale * self.resistance_density(0.5 * sx, 0.5 * (fp + fx))
        } else {
            self.rescale * 0.5 * (self.resistance_density(sp, fp) + self.resistance_density(sx, fx))
        }
    }

    /// Discretised R_φ(u, v): the sum of edge contributions along [u, v].
    pub fn distorted_resistance(&self, view: &TreeMetricView<'_>, u: u32, v: u32) -> f64 {
        let tree = view.tree();
        let m = view.mrca(u, v);
        let mut total = 0.0;
        for start in [u, v] {
            let mut x = start;
            while x != m {
                total += self.edge_resistance(tree, x);
                x = tree.parent(x).expect("below the mrca");
            }
        }
        total
    }

    /// ν_φ(A) = Σ_{x∈A} (1/n)·density(x).
    pub fn distorted_measure<I: IntoIterator<Item = u32>>(&self, tree: &PlaneTree, set: I) -> f64 {
        let mass = 1.0 / tree.len() as f64;
        set.into_iter().map(|x| mass * self.measure_density(tree, x)).sum()
    }

    /// Writes `vertex depth phi density` rows.
    pub fn write_dump<W: Write>(&self, tree: &PlaneTree, mut out: W) -> std::io::Result<()> {
        writeln!(out, "vertex depth phi density")?;
        for v in 0..tree.len() as u32 {
            writeln!(out, "{} {} {} {}", v, tree.depth(v), self.phi[v as usize], self.measure_density(tree, v))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    fn path(len: usize) -> PlaneTree {
        let mut counts = vec![1u64; len];
        counts.push(0);
        PlaneTree::from_child_counts(&counts).unwrap()
    }

    #[test]
    fn d_alpha_examples() {
        let t = path(4);
        let view = TreeMetricView::new(&t);
        assert_eq!(d_alpha(&view, 1.0, 0.5, 3, 3), 0.0);
        assert_eq!(d_alpha(&view, 1.0, 0.5, 4, 1), 1.0);
        // two leaves at continuum depth e − 1 with mrca at the root, α = 1
        let cherry = PlaneTree::from_child_counts(&[2, 0, 0]).unwrap();
        let view = TreeMetricView::new(&cherry);
        let d = d_alpha(&view, std::f64::consts::E - 1.0, 1.0, 1, 2);
        assert!((d - 2.0).abs() < 1e-14);
    }

    #[test]
    fn variance_at_depth_nine() {
        let t = path(9);
        let mut rng = replica_rng(41, 0);
        let trials = 100_000;
        let xs: Vec<f64> = (0..trials).map(|_| sample_snake(&t, 1.0, 0.5, 1.0, &mut rng).phi[9]).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / trials as f64;
        // SE of a Gaussian second moment: σ²·sqrt(2/N)
        assert!((var - 3.0).abs() < 3.0 * 3.0 * (2.0 / trials as f64).sqrt(), "{var}");
    }

    #[test]
    fn sibling_covariance() {
        // root - a, a has two leaf children: mrca of the leaves at depth 1
        let t = PlaneTree::from_child_counts(&[1, 2, 0, 0]).unwrap();
        let mut rng = replica_rng(42, 0);
        let trials = 100_000;
        let prods: Vec<f64> = (0..trials)
            .map(|_| {
                let f = sample_snake(&t, 1.0, 0.0, 1.0, &mut rng);
                assert_eq!(f.phi[0], 0.0);
                f.phi[2] * f.phi[3]
            })
            .collect();
        let m = prods.iter().sum::<f64>() / trials as f64;
        let s2 = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
        assert!((m - 1.0).abs() < 3.0 * (s2 / trials as f64).sqrt(), "{m}");
    }

    fn zero_noise_error(depth: usize, rescale: f64, delta: f64) -> f64 {
        let t = path(depth);
        let view = TreeMetricView::new(&t);
        let f = zero_noise(&t, rescale, 0.0, delta);
        let exact = ((delta * depth as f64 * rescale).exp() - 1.0) / delta;
        f.distorted_resistance(&view, 0, depth as u32) - exact
    }

    #[test]
    fn zero_noise_resistance_converges_quadratically() {
        let e1 = zero_noise_error(20, 0.1, 1.0);
        let e2 = zero_noise_error(40, 0.05, 1.0);
        let e3 = zero_noise_error(80, 0.025, 1.0);
        // trapezoid error bound (L/12)·h²·max f''
        assert!(e1.abs() <= 2.0 / 12.0 * 0.01 * 2f64.exp());
        for ratio in [e1 / e2, e2 / e3] {
            assert!((3.5..=4.5).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn resistance_basics() {
        let t = path(6);
        let view = TreeMetricView::new(&t);
        let mut rng = replica_rng(43, 0);
        let f = sample_snake(&t, 0.2, 0.5, 1.0, &mut rng);
        assert_eq!(f.distorted_resistance(&view, 3, 3), 0.0);
        let whole = f.distorted_resistance(&view, 0, 6);
        let split = f.distorted_resistance(&view, 0, 2) + f.distorted_resistance(&view, 2, 6);
        assert!((whole - split).abs() <= 1e-14 * whole);
        assert!(whole > 0.0 && whole.is_finite());
    }

    #[test]
    fn measure_examples() {
        let t = PlaneTree::from_child_counts(&[3, 0, 0, 0]).unwrap();
        let f = zero_noise(&t, 0.5, 0.0, 2.0);
        assert_eq!(f.distorted_measure(&t, std::iter::empty()), 0.0);
        let shell = [1u32, 2, 3];
        let ratio = f.distorted_measure(&t, shell) / (3.0 / 4.0);
        assert!((ratio - (-2.0f64 * 0.5).exp()).abs() < 1e-15);
        let mut rng = replica_rng(44, 0);
        let g = sample_snake(&t, 0.5, 0.5, 1.0, &mut rng);
        assert!(g.distorted_measure(&t, [1u32]) <= g.distorted_measure(&t, [1u32, 2]));
    }
}
