//! Gauss–Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights of a quadrature rule on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`, nodes in increasing order.
///
/// Nodes are Newton-refined roots of `P_n`; the rule is symmetric, so
/// mirrored nodes are assigned explicitly.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "quadrature rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the i-th largest root
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Maps a rule on `[-1, 1]` to `[a, b]`.
pub fn on_interval(rule: &Rule, a: f64, b: f64) -> Rule {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Rule {
        nodes: rule.nodes.iter().map(|x| mid + half * x).collect(),
        weights: rule.weights.iter().map(|w| w * half).collect(),
    }
}

/// Composite Gauss–Legendre rule on `[0, 1]` with `total` nodes, split into
/// equal panels of at most 16 nodes each.
pub fn composite_unit(total: usize) -> Rule {
    assert!(total >= 1);
    let per_panel = (1..=16)
        .rev()
        .find(|k| total.is_multiple_of(*k))
        .unwrap_or(1);
    let panels = total / per_panel;
    let base = gauss_legendre(per_panel);
    let mut nodes = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for j in 0..panels {
        let a = j as f64 / panels as f64;
        let b = (j + 1) as f64 / panels as f64;
        let r = on_interval(&base, a, b);
        nodes.extend(r.nodes);
        weights.extend(r.weights);
    }
    Rule { nodes, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let r = gauss_legendre(8);
        // degree 15 is exact for 8 nodes
        let exact = 2.0 / 15.0; // ∫ x^14 over [-1,1]
        assert!((r.integrate(|x| x.powi(14)) - exact).abs() < 1e-14);
        assert!(r.integrate(|x| x.powi(15)).abs() < 1e-15);
        assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn large_rules_are_sorted_and_symmetric() {
        for n in [1, 2, 7, 64, 129] {
            let r = gauss_legendre(n);
            assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
            for i in 0..n {
                assert_eq!(r.nodes[i], -r.nodes[n - 1 - i]);
                assert_eq!(r.weights[i], r.weights[n - 1 - i]);
            }
            assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn composite_rule_integrates_smooth_functions() {
        let r = composite_unit(256);
        assert_eq!(r.len(), 256);
        let val = r.integrate(|x| (3.0 * x).exp());
        let exact = ((3.0f64).exp() - 1.0) / 3.0;
        assert!((val - exact).abs() < 1e-13);
    }
}
