//! Gauss rules on the unit interval.
//!
//! Gauss-Jacobi rules with weight `x^beta` absorb the algebraic singularity left
//! over after a Duffy-type collapse of the near-diagonal element pairs.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

/// Nodes and weights on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule1d {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Maps the rule onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let len = b - a;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (a + len * x, len * w))
    }
}

/// Gauss-Legendre rule with `n` points on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Rule1d {
    gauss_jacobi(n, 0.0)
}

/// Gauss-Jacobi rule on `[0, 1]` for the weight `x^beta`, `beta > -1`.
///
/// Golub-Welsch on the Jacobi recurrence for `(1+x)^beta` on `[-1, 1]`.
pub fn gauss_jacobi(n: usize, beta: f64) -> Rule1d {
    assert!(n >= 1, "rule needs at least one node");
    assert!(beta > -1.0, "Jacobi exponent must exceed -1");
    let alpha = 0.0_f64;
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let diag = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        jac[(k, k)] = diag;
        if k >= 1 {
            let num = 4.0 * kf * (kf + alpha) * (kf + beta) * (kf + ab);
            let den = (2.0 * kf + ab).powi(2) * (2.0 * kf + ab + 1.0) * (2.0 * kf + ab - 1.0);
            let off = (num / den).sqrt();
            jac[(k, k - 1)] = off;
            jac[(k - 1, k)] = off;
        }
    }
    let mu0 = ((ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(ab + 2.0))
    .exp();
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // (1+x)^beta dx on [-1,1] -> 2^(beta+1) rho^beta drho on [0,1]
    let scale = 0.5_f64.powf(beta + 1.0);
    Rule1d {
        nodes: pairs.iter().map(|p| 0.5 * (1.0 + p.0)).collect(),
        weights: pairs.iter().map(|p| p.1 * scale).collect(),
    }
}

/// Tensor-product points of a 1-D rule over a box (first `dim` axes).
pub fn tensor_box(rule: &Rule1d, lo: &[f64; 3], hi: &[f64; 3], dim: usize) -> Vec<([f64; 3], f64)> {
    let m = rule.len();
    let total = m.pow(dim as u32);
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut p = [0.0; 3];
        let mut w = 1.0;
        let mut rem = flat;
        for k in 0..dim {
            let i = rem % m;
            rem /= m;
            let len = hi[k] - lo[k];
            p[k] = lo[k] + len * rule.nodes[i];
            w *= len * rule.weights[i];
        }
        out.push((p, w));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let r = gauss_legendre(4);
        for deg in 0..8 {
            let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(deg)).sum();
            assert!((v - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn jacobi_integrates_weighted_monomials() {
        for &beta in &[-0.6, -0.2, 0.0, 0.4, 0.8] {
            let r = gauss_jacobi(5, beta);
            for deg in 0..10 {
                let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(deg)).sum();
                let exact = 1.0 / (deg as f64 + beta + 1.0);
                assert!((v - exact).abs() < 1e-13, "beta {beta} degree {deg}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn tensor_box_volume() {
        let r = gauss_legendre(3);
        let pts = tensor_box(&r, &[0.0, -1.0, 0.0], &[2.0, 1.0, 0.0], 2);
        let vol: f64 = pts.iter().map(|p| p.1).sum();
        assert!((vol - 4.0).abs() < 1e-14);
    }
}
