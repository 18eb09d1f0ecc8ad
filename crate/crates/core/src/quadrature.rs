//! Gauss–Hermite quadrature for standard-normal expectations.
//!
//! Nodes and weights come from the Golub–Welsch eigenvalue problem for the
//! Jacobi matrix of the probabilists' Hermite polynomials, whose
//! off-diagonal entries are `√k`. The weights are the squared first
//! components of the normalized eigenvectors, so they sum to one.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss–Hermite rule with `n` nodes for `E f(G)`, `G ~ N(0, 1)`.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("quadrature needs at least one node"));
        }
        let mut j = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            j[(k - 1, k)] = b;
            j[(k, k - 1)] = b;
        }
        let eig = j.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetrize to remove eigen-solver round-off
        for i in 0..n / 2 {
            let k = n - 1 - i;
            let x = 0.5 * (pairs[k].0 - pairs[i].0);
            let w = 0.5 * (pairs[k].1 + pairs[i].1);
            pairs[i] = (-x, w);
            pairs[k] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(QuadratureRule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `E f(√variance · G)` for a standard normal `G`.
pub fn gauss_expect(f: impl Fn(f64) -> f64, variance: f64, rule: &QuadratureRule) -> Result<f64> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::invalid(format!("variance must be nonnegative, got {variance}")));
    }
    let s = variance.sqrt();
    let mut acc = 0.0;
    for (i, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let v = f(s * x);
        if !v.is_finite() {
            return Err(Error::NumericDomain(format!(
                "integrand is {v} at quadrature node {i} (x = {})",
                s * x
            )));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// `E f(m + √variance · G)` with `G ~ N(0, I_d)` by the tensor-product rule.
pub fn gauss_expect_nd(
    f: impl Fn(&[f64]) -> f64,
    mean: &[f64],
    variance: f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    let d = mean.len();
    let n = rule.n_nodes();
    let s = variance.sqrt();
    let total = n.checked_pow(d as u32).ok_or_else(|| Error::invalid("tensor rule too large"))?;
    let mut x = vec![0.0; d];
    let mut acc = 0.0;
    for idx in 0..total {
        let mut r = idx;
        let mut w = 1.0;
        for k in 0..d {
            let j = r % n;
            r /= n;
            x[k] = mean[k] + s * rule.nodes[j];
            w *= rule.weights[j];
        }
        let v = f(&x);
        if !v.is_finite() {
            return Err(Error::NumericDomain(format!("integrand is {v} at x = {x:?}")));
        }
        acc += w * v;
    }
    Ok(acc)
}
