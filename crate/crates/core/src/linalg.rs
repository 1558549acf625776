//! Dense symmetric positive-definite solvers and generalized eigenvalue helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{FracError, Result};

/// Linear solver choice for the implicit steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Jacobi-preconditioned conjugate gradients, falling back to Cholesky if it stalls.
    #[default]
    ConjugateGradient,
    Cholesky,
}

/// Outcome of one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned CG for SPD `a`. Returns the solution and the achieved relative residual.
pub fn conjugate_gradient(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = b.norm();
    if bnorm == 0.0 {
        return Ok((DVector::zeros(n), SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let inv_diag = DVector::from_iterator(n, (0..n).map(|i| 1.0 / a[(i, i)]));
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut r = b - a * &x;
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut ap = DVector::zeros(n);
    for it in 0..max_iter {
        let res = r.norm() / bnorm;
        if res <= rel_tol {
            return Ok((x, SolveStats { iterations: it, relative_residual: res }));
        }
        ap.gemv(1.0, a, &p, 0.0);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(FracError::Solver { residual: res, iterations: it });
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        z = r.component_mul(&inv_diag);
        let rz_new = r.dot(&z);
        p.axpy(1.0, &z, rz_new / rz);
        rz = rz_new;
    }
    // recompute the true residual before giving up
    let res = (b - a * &x).norm() / bnorm;
    if res <= rel_tol {
        return Ok((x, SolveStats { iterations: max_iter, relative_residual: res }));
    }
    Err(FracError::Solver { residual: res, iterations: max_iter })
}

/// Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        Cholesky::new(a.clone())
            .map(|chol| Self { chol })
            .ok_or_else(|| FracError::Precondition("matrix is not symmetric positive definite".into()))
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Solves `a x = b` with the requested method; CG falls back to Cholesky when it fails.
pub fn solve_spd(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    kind: SolverKind,
    rel_tol: f64,
    x0: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, SolveStats)> {
    let direct = |a: &DMatrix<f64>| -> Result<(DVector<f64>, SolveStats)> {
        let x = SpdFactor::new(a)?.solve(b);
        let bn = b.norm();
        let res = if bn == 0.0 { 0.0 } else { (b - a * &x).norm() / bn };
        Ok((x, SolveStats { iterations: 0, relative_residual: res }))
    };
    match kind {
        SolverKind::Cholesky => direct(a),
        SolverKind::ConjugateGradient => {
            match conjugate_gradient(a, b, x0, rel_tol, 10 * b.len().max(50)) {
                Ok(out) => Ok(out),
                Err(FracError::Solver { .. }) => direct(a),
                Err(e) => Err(e),
            }
        }
    }
}

/// `L⁻¹ A L⁻ᵀ` for the Cholesky factor `L` of an SPD normalizer `N = L Lᵀ`.
fn whiten(a: &DMatrix<f64>, normalizer: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = SpdFactor::new(normalizer)?.lower();
    let li_a = l
        .solve_lower_triangular(a)
        .ok_or_else(|| FracError::Precondition("singular normalizer".into()))?;
    let w = l
        .solve_lower_triangular(&li_a.transpose())
        .ok_or_else(|| FracError::Precondition("singular normalizer".into()))?;
    Ok(0.5 * (&w + w.transpose()))
}

/// Eigenvalues of the symmetric pencil `(a, normalizer)` in ascending order.
pub fn generalized_eigenvalues(a: &DMatrix<f64>, normalizer: &DMatrix<f64>) -> Result<Vec<f64>> {
    let w = whiten(a, normalizer)?;
    let mut ev: Vec<f64> = SymmetricEigen::new(w).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// `sup |uᵀ a v| / (‖u‖_N ‖v‖_N)` for symmetric `a`: largest absolute generalized eigenvalue.
pub fn normalized_operator_norm(a: &DMatrix<f64>, normalizer: &DMatrix<f64>) -> Result<f64> {
    let ev = generalized_eigenvalues(a, normalizer)?;
    Ok(ev.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

/// `inf uᵀ a u / uᵀ N u`.
pub fn coercivity_constant(a: &DMatrix<f64>, normalizer: &DMatrix<f64>) -> Result<f64> {
    Ok(generalized_eigenvalues(a, normalizer)?[0])
}

/// `(uᵀ M u)^{1/2}`.
pub fn weighted_norm(u: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (m * u).dot(u).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let b = DMatrix::from_fn(n, n, |_, _| next());
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    proptest! {
        #[test]
        fn cg_matches_cholesky(seed in 0u64..1000, n in 2usize..30) {
            let a = spd(n, seed);
            let b = DVector::from_fn(n, |i, _| (i as f64 + 1.0).sin());
            let (x1, st) = conjugate_gradient(&a, &b, None, 1e-12, 1000).unwrap();
            let x2 = SpdFactor::new(&a).unwrap().solve(&b);
            prop_assert!(st.relative_residual <= 1e-12);
            prop_assert!((&x1 - &x2).norm() <= 1e-8 * x2.norm().max(1.0));
        }
    }

    #[test]
    fn generalized_eigenvalues_of_scaled_pencil() {
        let n = 6;
        let m = spd(n, 3);
        let ev = generalized_eigenvalues(&(&m * 2.5), &m).unwrap();
        assert!(ev.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!((normalized_operator_norm(&(&m * -3.0), &m).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_spd_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(SpdFactor::new(&a).is_err());
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = spd(4, 1);
        let (x, st) = solve_spd(&a, &DVector::zeros(4), SolverKind::ConjugateGradient, 1e-10, None).unwrap();
        assert_eq!(x.norm(), 0.0);
        assert_eq!(st.iterations, 0);
    }
}
