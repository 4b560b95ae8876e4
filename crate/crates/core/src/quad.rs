//! Gaussian quadrature rules from the Golub-Welsch eigenproblem.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a quadrature rule, nodes ascending.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

fn golub_welsch(n: usize, offdiag: impl Fn(usize) -> f64, mu0: f64) -> Rule {
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = offdiag(k);
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Legendre rule on `[-1, 1]`, with Newton polishing of the nodes.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut rule = golub_welsch(n, |k| k as f64 / ((4 * k * k - 1) as f64).sqrt(), 2.0);
    for (x, w) in rule.nodes.iter_mut().zip(rule.weights.iter_mut()) {
        for _ in 0..3 {
            let (p, dp) = legendre_with_derivative(n, *x);
            *x -= p / dp;
        }
        let (_, dp) = legendre_with_derivative(n, *x);
        *w = 2.0 / ((1.0 - *x * *x) * dp * dp);
    }
    rule
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Hermite rule for the weight `exp(-x^2)` on the real line.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    golub_welsch(n, |k| (k as f64 / 2.0).sqrt(), std::f64::consts::PI.sqrt())
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn legendre_on(rule: &Rule, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(move |(x, w)| (c + h * x, h * w))
}
