//! Dirichlet-to-Neumann simulation and the identities built on it.
//!
//! For data `g` on one window the exterior value `R^s_A u_g` is read at the nodes
//! of the other window. Pairings with test data are evaluated with the Galerkin
//! coupling matrices, so `∫_{W2} Λg · h = -hᵀ (B_{W2}ᵀ w + T g)` with `w` the interior
//! part of the solution and `T` the direct window-to-window coupling.
//!
//! Time integrals are taken over the piecewise-linear interpolant of the Rothe
//! iterates against the exact data, with a Gauss rule on every Rothe interval.
//! The nodewise trapezoid pairing is also reported; for this scheme it satisfies
//! the duality and integral identities exactly up to round-off.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::control::ExteriorControl;
use crate::error::{FracError, Result};
use crate::evolve::{Evolver, RotheSolution, TimeGrid};
use crate::grid::Window;
use crate::kernel::difference_kernel_g;
use crate::point::Point;
use crate::quadrature::gauss_legendre;

/// Regularizer in relative residuals.
pub const RESIDUAL_EPS: f64 = 1e-14;

/// Gauss points per Rothe interval in time pairings.
pub const TIME_GAUSS_POINTS: usize = 3;

/// `|a - b| / (|a| + |b| + ε)`.
pub fn relative_residual(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + RESIDUAL_EPS)
}

/// Exterior measurements of one forward (or dual) solve.
#[derive(Debug, Clone)]
pub struct DtnRecord {
    pub control: ExteriorControl,
    pub measured_on: Window,
    pub grid: TimeGrid,
    pub points: Vec<Point>,
    /// `samples[(i, j)]` is the value at `points[i]` and time node `j`.
    pub samples: DMatrix<f64>,
    pub potentials: String,
    pub interior: RotheSolution,
}

impl DtnRecord {
    pub fn level(&self) -> u32 {
        self.grid.level
    }

    pub fn max_abs_difference(&self, other: &DtnRecord) -> Result<f64> {
        if self.samples.shape() != other.samples.shape() {
            return Err(FracError::InvalidParameter("records have different sample grids".into()));
        }
        Ok(self.samples.iter().zip(other.samples.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
    }
}

fn check_windows(ev: &Evolver<'_>) -> Result<()> {
    let geom = &ev.asm.disc.geometry;
    let mid = geom.w1.midpoint_box(&geom.w2);
    if !mid.intersection(ev.pots.magnetic.active_region()).is_empty() {
        return Err(FracError::Geometry(
            "midpoints of W1 × W2 meet the support of A; window pairs would be modulated".into(),
        ));
    }
    Ok(())
}

fn record(ev: &Evolver<'_>, data: &ExteriorControl, interior: RotheSolution) -> Result<DtnRecord> {
    let measured_on = data.window()?.other();
    let trace = ev.asm.trace_operator(measured_on)?;
    let grid = interior.grid;
    let cols: Vec<DVector<f64>> = (0..=grid.steps)
        .into_par_iter()
        .map(|j| trace.apply(&interior.z[j], &data.coeffs_at(grid.node(j))))
        .collect();
    Ok(DtnRecord {
        control: data.clone(),
        measured_on,
        grid,
        points: trace.points.clone(),
        samples: DMatrix::from_columns(&cols),
        potentials: ev.pots.label(),
        interior,
    })
}

/// `Λ_{A,q} g` sampled at the nodes of the other window and at the Rothe nodes.
pub fn dtn_map(ev: &Evolver<'_>, g: &ExteriorControl, grid: &TimeGrid) -> Result<DtnRecord> {
    check_windows(ev)?;
    let sol = ev.solve_forward(g, grid)?;
    record(ev, g, sol)
}

/// `Λ*_{A,q} h` from the backward problem.
pub fn dual_dtn_map(ev: &Evolver<'_>, h: &ExteriorControl, grid: &TimeGrid) -> Result<DtnRecord> {
    check_windows(ev)?;
    let sol = ev.solve_dual(h, grid)?;
    record(ev, h, sol)
}

/// `(t, weight)` pairs of a composite Gauss rule on the Rothe intervals.
pub fn time_rule(grid: &TimeGrid, points: usize) -> Vec<(f64, f64)> {
    let rule = gauss_legendre(points);
    (1..=grid.steps)
        .flat_map(|j| rule.mapped(grid.node(j - 1), grid.node(j)).collect::<Vec<_>>())
        .collect()
}

/// Trapezoid weights on the Rothe nodes.
pub fn trapezoid_weights(grid: &TimeGrid) -> Vec<f64> {
    (0..=grid.steps)
        .map(|j| if j == 0 || j == grid.steps { 0.5 * grid.h } else { grid.h })
        .collect()
}

/// `∫ ⟨Λ g(t), h(t)⟩ dt` for the record of `g` and test data `h` on the measured window.
///
/// Returns `(continuous, trapezoid)` time integrals.
pub fn pairing(ev: &Evolver<'_>, rec: &DtnRecord, test: &ExteriorControl) -> Result<(f64, f64)> {
    let measured = rec.measured_on;
    if test.window()? != measured {
        return Err(FracError::InvalidParameter("test data must live on the measured window".into()));
    }
    test.checked_for(&ev.asm.disc)?;
    let b = ev.asm.exterior_coupling(measured);
    let direct = match measured {
        Window::W2 => ev.asm.window_coupling().clone(),
        Window::W1 => ev.asm.window_coupling().transpose(),
    };
    let density = |w: &DVector<f64>, t: f64| -> f64 {
        let h = test.coeffs_at(t);
        if h.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        let g = rec.control.coeffs_at(t);
        -(h.dot(&b.tr_mul(w)) + h.dot(&(&direct * g)))
    };
    let continuous: f64 = time_rule(&rec.grid, TIME_GAUSS_POINTS)
        .into_iter()
        .map(|(t, wt)| wt * density(&rec.interior.linear_at(t), t))
        .sum();
    let trapezoid: f64 = trapezoid_weights(&rec.grid)
        .into_iter()
        .enumerate()
        .map(|(j, wt)| wt * density(&rec.interior.z[j], rec.grid.node(j)))
        .sum();
    Ok((continuous, trapezoid))
}

/// Both sides of `∫⟨Λg, h⟩ = ∫⟨Λ*h, g⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityReport {
    pub level: u32,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub trapezoid_lhs: f64,
    pub trapezoid_rhs: f64,
    /// Residual of the nodewise pairing (discrete adjoint consistency).
    pub trapezoid_residual: f64,
    /// `-∫ hᵀ T g dt`, the window-to-window part shared by both sides.
    pub direct_term: f64,
    /// Residual after removing the shared window-to-window part.
    pub interior_residual: f64,
}

pub fn duality_residual(ev: &Evolver<'_>, g: &ExteriorControl, h: &ExteriorControl, grid: &TimeGrid) -> Result<DualityReport> {
    if g.window()? == h.window()? {
        return Err(FracError::InvalidParameter("duality needs data on two different windows".into()));
    }
    let fwd = dtn_map(ev, g, grid)?;
    let dual = dual_dtn_map(ev, h, grid)?;
    let (lhs, tl) = pairing(ev, &fwd, h)?;
    let (rhs, tr) = pairing(ev, &dual, g)?;
    let (gw, hw) = if g.window()? == Window::W1 { (g, h) } else { (h, g) };
    let direct = ev.asm.window_coupling();
    let direct_term: f64 = time_rule(grid, TIME_GAUSS_POINTS)
        .into_iter()
        .map(|(t, wt)| -wt * hw.coeffs_at(t).dot(&(direct * gw.coeffs_at(t))))
        .sum();
    Ok(DualityReport {
        level: grid.level,
        lhs,
        rhs,
        residual: relative_residual(lhs, rhs),
        trapezoid_lhs: tl,
        trapezoid_rhs: tr,
        trapezoid_residual: relative_residual(tl, tr),
        direct_term,
        interior_residual: relative_residual(lhs - direct_term, rhs - direct_term),
    })
}

/// Both sides of the integral identity for two potential pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    pub level: u32,
    /// `∫⟨(Λ₁ - Λ₂) g₁, g₂⟩ dt`.
    pub lhs: f64,
    /// `∫∬ G u₁ u₂* - ∫∫ (q₂ - q₁) u₁ u₂*`.
    pub rhs: f64,
    pub residual: f64,
    pub trapezoid_lhs: f64,
    pub trapezoid_rhs: f64,
    pub trapezoid_residual: f64,
}

/// `g1` on `W1`, `g2` on `W2`; `ev1` and `ev2` must share the assembler.
pub fn integral_identity_residual(
    ev1: &Evolver<'_>,
    ev2: &Evolver<'_>,
    g1: &ExteriorControl,
    g2: &ExteriorControl,
    grid: &TimeGrid,
) -> Result<IdentityReport> {
    if !std::ptr::eq(ev1.asm, ev2.asm) {
        return Err(FracError::InvalidParameter("both potential pairs must use the same discretization".into()));
    }
    if g1.window()? != Window::W1 || g2.window()? != Window::W2 {
        return Err(FracError::InvalidParameter("g1 must live on W1 and g2 on W2".into()));
    }
    check_windows(ev1)?;
    check_windows(ev2)?;
    let asm = ev1.asm;
    let u1 = ev1.solve_forward(g1, grid)?;
    let u2 = ev2.solve_forward(g1, grid)?;
    let v2 = ev2.solve_dual(g2, grid)?;
    let b2 = asm.exterior_coupling(Window::W2);

    let lhs_density = |w1: &DVector<f64>, w2: &DVector<f64>, t: f64| -> f64 {
        let h = g2.coeffs_at(t);
        -h.dot(&b2.tr_mul(&(w1 - w2)))
    };
    let rhs_density = |v: &DVector<f64>, w: &DVector<f64>, t: f64| -> Result<f64> {
        let d = asm.magnetic_correction(&ev1.pots.magnetic, t) - asm.magnetic_correction(&ev2.pots.magnetic, t)
            + asm.potential(&ev1.pots.electric, t)?
            - asm.potential(&ev2.pots.electric, t)?;
        Ok(v.dot(&(d * w)))
    };

    let rule = time_rule(grid, TIME_GAUSS_POINTS);
    let lhs: f64 = rule.iter().map(|&(t, wt)| wt * lhs_density(&u1.linear_at(t), &u2.linear_at(t), t)).sum();
    let rhs: f64 = rule
        .par_iter()
        .map(|&(t, wt)| rhs_density(&v2.linear_at(t), &u1.linear_at(t), t).map(|v| wt * v))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();

    let trap = trapezoid_weights(grid);
    let trapezoid_lhs: f64 =
        trap.iter().enumerate().map(|(j, wt)| wt * lhs_density(&u1.z[j], &u2.z[j], grid.node(j))).sum();
    let mut trapezoid_rhs = 0.0;
    for (j, wt) in trap.iter().enumerate() {
        let t = grid.node(j);
        let d = &*ev1.operator_at(t)? - &*ev2.operator_at(t)?;
        trapezoid_rhs += wt * v2.z[j].dot(&(d * &u1.z[j]));
    }
    Ok(IdentityReport {
        level: grid.level,
        lhs,
        rhs,
        residual: relative_residual(lhs, rhs),
        trapezoid_lhs,
        trapezoid_rhs,
        trapezoid_residual: relative_residual(trapezoid_lhs, trapezoid_rhs),
    })
}

/// Measured norm of `(T_t f)(x) = ∫_Ω |G(x, y, t) f(y)| dy` on the domain nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YoungBound {
    /// `max ‖T_t f‖ / ‖f‖` over the random trials.
    pub ratio: f64,
    pub max_row_integral: f64,
    pub max_column_integral: f64,
    /// `sqrt(row · column)`, the Schur-test bound.
    pub schur_bound: f64,
}

pub fn young_operator_bound(
    ev1: &Evolver<'_>,
    ev2: &Evolver<'_>,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<YoungBound> {
    let asm = ev1.asm;
    let grid = asm.grid();
    let n = grid.interior_count();
    let vol = grid.cell_volume();
    let nodes: Vec<Point> = (0..n).map(|i| grid.node(&grid.interior_multi(i))).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Ok(0.0)
                    } else {
                        difference_kernel_g(&nodes[i], &nodes[j], t, &ev1.pots.magnetic, &ev2.pots.magnetic, &asm.params)
                            .map(|g| g.abs() * vol)
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let kmat = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let max_row_integral = kmat.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let max_column_integral = kmat.column_iter().map(|c| c.sum()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratio = 0.0f64;
    for _ in 0..trials.max(1) {
        let f = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let tf = &kmat * f.abs();
        let fnorm = f.norm();
        if fnorm > 0.0 {
            ratio = ratio.max(tf.norm() / fnorm);
        }
    }
    Ok(YoungBound {
        ratio,
        max_row_integral,
        max_column_integral,
        schur_bound: (max_row_integral * max_column_integral).sqrt(),
    })
}

/// `D_kl = Σ_j τ_j ⟨(Λ₁ - Λ₂) g_k(t_j), h_l(t_j)⟩` on the measured window from the interior
/// parts of the two forward solves of each `g_k`; the window-to-window terms cancel.
pub fn difference_pairing_matrix(
    ev: &Evolver<'_>,
    first: &[RotheSolution],
    second: &[RotheSolution],
    tests: &[ExteriorControl],
    measured: Window,
) -> Result<DMatrix<f64>> {
    if first.len() != second.len() || first.is_empty() {
        return Err(FracError::InvalidParameter("pairing needs matching, nonempty solution lists".into()));
    }
    let grid = first[0].grid;
    let b = ev.asm.exterior_coupling(measured);
    let weights = trapezoid_weights(&grid);
    let mut out = DMatrix::zeros(first.len(), tests.len());
    for (j, wt) in weights.iter().enumerate() {
        let t = grid.node(j);
        let diff = DMatrix::from_columns(&first.iter().zip(second).map(|(a, c)| &a.z[j] - &c.z[j]).collect::<Vec<_>>());
        let h = DMatrix::from_columns(&tests.iter().map(|g| g.coeffs_at(t)).collect::<Vec<_>>());
        out -= (diff.transpose() * b * h) * *wt;
    }
    Ok(out)
}
