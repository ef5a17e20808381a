//! Adaptive numerical integration used by the moment oracles.
//!
//! Panels are integrated with double-exponential (tanh-sinh) quadrature and
//! bisected until each panel's error estimate meets its share of the budget.

/// Integrates `f` over `[a, b]` to the requested absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    let mut total = 0.0;
    let mut stack = vec![(a, b, abs_tol, 0u32)];
    while let Some((lo, hi, tol, depth)) = stack.pop() {
        let out = quadrature::double_exponential::integrate(&f, lo, hi, tol);
        // Below ~1e-14 relative the estimate is dominated by rounding.
        let floor = 1e-14 * out.integral.abs();
        if out.error_estimate <= tol.max(floor) || depth >= 16 || !out.integral.is_finite() {
            total += out.integral;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * tol, depth + 1));
            stack.push((mid, hi, 0.5 * tol, depth + 1));
        }
    }
    total
}

/// Integrates over `[a, b]` split into `panels` equal pieces first; useful for
/// sharply peaked integrands.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, abs_tol: f64) -> f64 {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let tol = abs_tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == panels { b } else { lo + width };
            integrate(&f, lo, hi, tol)
        })
        .sum()
}
