//! Implicit Euler (Rothe) stepping for `∂t u + R^s_{A(t)} u + q(t) u = f` with zero
//! initial value, the dual backward problem, refinement studies and the a-priori
//! monitors of the scheme.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::assembly::Assembler;
use crate::control::ExteriorControl;
use crate::error::{FracError, Result};
use crate::grid::Window;
use crate::kernel::PotentialPair;
use crate::linalg::{solve_spd, weighted_norm, SolveStats, SolverKind, SpdFactor};

/// Uniform grid on `[-T, T]` with `base * 2^(level-1)` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub base: usize,
    pub level: u32,
    pub steps: usize,
    pub h: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, base: usize, level: u32) -> Result<Self> {
        if level == 0 || base == 0 {
            return Err(FracError::InvalidParameter("time level and base subdivision must be ≥ 1".into()));
        }
        if !(horizon > 0.0) {
            return Err(FracError::InvalidParameter(format!("time horizon {horizon} must be positive")));
        }
        let steps = base << (level - 1);
        let h = 2.0 * horizon / steps as f64;
        if h >= 0.5 {
            return Err(FracError::Precondition(format!("time step h = {h} must be < 1/2")));
        }
        Ok(Self { horizon, base, level, steps, h })
    }

    /// `t_j = ((2j - P)/P) T`; exactly antisymmetric under `j -> P - j`.
    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        (2.0 * j as f64 - self.steps as f64) / self.steps as f64 * self.horizon
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.node(j)).collect()
    }

    /// Index of the node equal to `t` (within 1e-12 h).
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t + self.horizon) / self.h;
        let j = x.round();
        ((x - j).abs() < 1e-9 && j >= 0.0 && j <= self.steps as f64).then_some(j as usize)
    }

    pub fn refined(&self) -> Result<Self> {
        Self::new(self.horizon, self.base, self.level + 1)
    }
}

/// Direction of the time march.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Zero value at `-T`, stepping forward.
    Forward,
    /// Zero value at `+T`, stepping backward (dual problem).
    Backward,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// Nodal coefficients `z_0..z_P` in time order, with the loads used at each node.
#[derive(Debug, Clone)]
pub struct RotheSolution {
    pub grid: TimeGrid,
    pub direction: Direction,
    pub z: Vec<DVector<f64>>,
    pub loads: Vec<DVector<f64>>,
    pub stats: Vec<SolveStats>,
}

impl RotheSolution {
    pub fn dofs(&self) -> usize {
        self.z[0].len()
    }

    /// Piecewise-linear interpolant `u^(m)(t)`.
    pub fn linear_at(&self, t: f64) -> DVector<f64> {
        let g = &self.grid;
        let x = ((t + g.horizon) / g.h).clamp(0.0, g.steps as f64);
        let j = (x.floor() as usize).min(g.steps - 1);
        let theta = x - j as f64;
        &self.z[j] * (1.0 - theta) + &self.z[j + 1] * theta
    }

    /// Step interpolant: `z_j` on `(t_{j-1}, t_j]` forward, on `[t_j, t_{j+1})` backward.
    pub fn step_at(&self, t: f64) -> DVector<f64> {
        let g = &self.grid;
        let x = ((t + g.horizon) / g.h).clamp(0.0, g.steps as f64);
        let j = match self.direction {
            Direction::Forward => (x.ceil() as usize).max(1),
            Direction::Backward => (x.floor() as usize).min(g.steps - 1),
        };
        self.z[j].clone()
    }

    /// `Z_j = (z_j - z_{j-1}) / h`, `j = 1..P`.
    pub fn difference_quotients(&self) -> Vec<DVector<f64>> {
        (1..=self.grid.steps).map(|j| (&self.z[j] - &self.z[j - 1]) / self.grid.h).collect()
    }

    /// `∫ ‖u^(m)(t)‖²_M dt` of the linear interpolant (exact).
    pub fn l2l2_norm_sq(&self, mass: &DMatrix<f64>) -> f64 {
        let h = self.grid.h;
        (1..=self.grid.steps)
            .map(|j| {
                let a = &self.z[j - 1];
                let b = &self.z[j];
                let ma = mass * a;
                let mb = mass * b;
                h / 3.0 * (ma.dot(a) + ma.dot(b) + mb.dot(b))
            })
            .sum()
    }

    /// Reversal in time: `ž_j = z_{P-j}` with the direction flipped.
    pub fn reversed(&self) -> Self {
        let mut z = self.z.clone();
        z.reverse();
        let mut loads = self.loads.clone();
        loads.reverse();
        let mut stats = self.stats.clone();
        stats.reverse();
        Self { grid: self.grid, direction: self.direction.flipped(), z, loads, stats }
    }

    pub fn max_solver_residual(&self) -> f64 {
        self.stats.iter().fold(0.0f64, |m, s| m.max(s.relative_residual))
    }
}

/// `‖u - v‖_{L²(L²)}` of linear interpolants; the grids must be nested.
pub fn l2l2_distance(a: &RotheSolution, b: &RotheSolution, mass: &DMatrix<f64>) -> Result<f64> {
    let (fine, coarse) = if a.grid.steps >= b.grid.steps { (a, b) } else { (b, a) };
    if fine.grid.steps % coarse.grid.steps != 0 || fine.grid.horizon != coarse.grid.horizon {
        return Err(FracError::Precondition("time grids are not nested".into()));
    }
    let ratio = fine.grid.steps / coarse.grid.steps;
    let h = fine.grid.h;
    let mut acc = 0.0;
    for j in 1..=fine.grid.steps {
        let c = |k: usize| -> DVector<f64> {
            let q = k / ratio;
            let r = k % ratio;
            if r == 0 {
                coarse.z[q].clone()
            } else {
                let th = r as f64 / ratio as f64;
                &coarse.z[q] * (1.0 - th) + &coarse.z[q + 1] * th
            }
        };
        let da = &fine.z[j - 1] - c(j - 1);
        let db = &fine.z[j] - c(j);
        let ma = mass * &da;
        let mb = mass * &db;
        acc += h / 3.0 * (ma.dot(&da) + ma.dot(&db) + mb.dot(&db));
    }
    Ok(acc.sqrt())
}

/// Linear solver settings for the implicit steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub solver: SolverKind,
    pub tolerance: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { solver: SolverKind::ConjugateGradient, tolerance: 1e-10 }
    }
}

/// Stepper for one potential pair; caches `S(t) + Q(t)` and step factorizations.
#[derive(Debug)]
pub struct Evolver<'a> {
    pub asm: &'a Assembler,
    pub pots: PotentialPair,
    pub options: EvolveOptions,
    operators: Mutex<HashMap<u64, Arc<DMatrix<f64>>>>,
    factors: Mutex<HashMap<(u64, u64), Arc<SpdFactor>>>,
}

impl<'a> Evolver<'a> {
    pub fn new(asm: &'a Assembler, pots: PotentialPair, options: EvolveOptions) -> Self {
        Self { asm, pots, options, operators: Mutex::new(HashMap::new()), factors: Mutex::new(HashMap::new()) }
    }

    /// `S(t) + Q(t)`.
    pub fn operator_at(&self, t: f64) -> Result<Arc<DMatrix<f64>>> {
        let key = t.to_bits();
        if let Some(op) = self.operators.lock().expect("operator cache").get(&key) {
            return Ok(Arc::clone(op));
        }
        let op = Arc::new(
            self.asm.nonlocal_stiffness(&self.pots.magnetic, t) + self.asm.potential(&self.pots.electric, t)?,
        );
        self.operators.lock().expect("operator cache").insert(key, Arc::clone(&op));
        Ok(op)
    }

    fn step_matrix(&self, t: f64, h: f64) -> Result<DMatrix<f64>> {
        Ok(self.asm.mass() / h + &*self.operator_at(t)?)
    }

    fn step_factor(&self, t: f64, h: f64) -> Result<Arc<SpdFactor>> {
        let key = (t.to_bits(), h.to_bits());
        if let Some(f) = self.factors.lock().expect("factor cache").get(&key) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(SpdFactor::new(&self.step_matrix(t, h)?)?);
        self.factors.lock().expect("factor cache").insert(key, Arc::clone(&f));
        Ok(f)
    }

    /// Solves `(M/h + S(t) + Q(t)) z = M z_prev / h + load`.
    pub fn rothe_step(&self, z_prev: &DVector<f64>, t: f64, load: &DVector<f64>, h: f64) -> Result<(DVector<f64>, SolveStats)> {
        let rhs = self.asm.mass() * z_prev / h + load;
        match self.options.solver {
            SolverKind::Cholesky => {
                let f = self.step_factor(t, h)?;
                let x = f.solve(&rhs);
                let bn = rhs.norm();
                let res = if bn == 0.0 { 0.0 } else { (&rhs - self.step_matrix(t, h)? * &x).norm() / bn };
                Ok((x, SolveStats { iterations: 0, relative_residual: res }))
            }
            SolverKind::ConjugateGradient => {
                let a = self.step_matrix(t, h)?;
                solve_spd(&a, &rhs, SolverKind::ConjugateGradient, self.options.tolerance, Some(z_prev))
            }
        }
    }

    /// Marches with Galerkin loads `load(t)` sampled at the implicit nodes.
    pub fn solve_with_loads<F>(&self, grid: &TimeGrid, direction: Direction, load: F) -> Result<RotheSolution>
    where
        F: Fn(f64) -> DVector<f64>,
    {
        let n = self.asm.dofs();
        let p = grid.steps;
        let loads: Vec<DVector<f64>> = (0..=p).map(|j| load(grid.node(j))).collect();
        let mut z = vec![DVector::zeros(n); p + 1];
        let mut stats = vec![SolveStats { iterations: 0, relative_residual: 0.0 }; p + 1];
        match direction {
            Direction::Forward => {
                for j in 1..=p {
                    let (zj, st) = self.rothe_step(&z[j - 1], grid.node(j), &loads[j], grid.h)?;
                    z[j] = zj;
                    stats[j] = st;
                }
            }
            Direction::Backward => {
                for j in (0..p).rev() {
                    let (zj, st) = self.rothe_step(&z[j + 1], grid.node(j), &loads[j], grid.h)?;
                    z[j] = zj;
                    stats[j] = st;
                }
            }
        }
        Ok(RotheSolution { grid: *grid, direction, z, loads, stats })
    }

    fn exterior_solve(&self, g: &ExteriorControl, grid: &TimeGrid, direction: Direction) -> Result<RotheSolution> {
        g.checked_for(&self.asm.disc)?;
        let w: Window = g.window()?;
        let b = self.asm.exterior_coupling(w);
        if g.is_zero() {
            return self.solve_with_loads(grid, direction, |_| DVector::zeros(self.asm.dofs()));
        }
        self.solve_with_loads(grid, direction, |t| b * g.coeffs_at(t))
    }

    /// Interior part `w = u - g` of the solution with exterior data `g` and `u(-T) = 0`.
    pub fn solve_forward(&self, g: &ExteriorControl, grid: &TimeGrid) -> Result<RotheSolution> {
        self.exterior_solve(g, grid, Direction::Forward)
    }

    /// Interior part of the dual (backward) solution with exterior data `h` and `u*(T) = 0`.
    pub fn solve_dual(&self, h: &ExteriorControl, grid: &TimeGrid) -> Result<RotheSolution> {
        self.exterior_solve(h, grid, Direction::Backward)
    }

    /// `(max_j ‖z_j‖_{H^s}, max_j ‖Z_j‖_M)`.
    pub fn apriori_monitor(&self, sol: &RotheSolution) -> Result<AprioriMonitor> {
        if sol.grid.h >= 0.5 {
            return Err(FracError::Precondition(format!("a-priori bounds need h < 1/2, got {}", sol.grid.h)));
        }
        let m = self.asm.mass();
        let hs = m + self.asm.gagliardo_stiffness();
        let max_hs = sol.z.iter().map(|z| weighted_norm(z, &hs)).fold(0.0, f64::max);
        let max_dq = sol.difference_quotients().iter().map(|z| weighted_norm(z, m)).fold(0.0, f64::max);
        Ok(AprioriMonitor { max_hs_norm: max_hs, max_difference_quotient: max_dq })
    }

    /// Largest `‖z_j‖_M - ‖z_{j-1}‖_M - h ‖f_j‖_M` over the steps (≤ 0 when the inequality holds).
    pub fn step_inequality_violation(&self, sol: &RotheSolution) -> Result<f64> {
        let m = self.asm.mass();
        let mf = SpdFactor::new(m)?;
        let h = sol.grid.h;
        let p = sol.grid.steps;
        let fnorm = |b: &DVector<f64>| b.dot(&mf.solve(b)).max(0.0).sqrt();
        let pairs: Vec<(usize, usize)> = match sol.direction {
            Direction::Forward => (1..=p).map(|j| (j, j - 1)).collect(),
            Direction::Backward => (0..p).map(|j| (j, j + 1)).collect(),
        };
        Ok(pairs
            .into_iter()
            .map(|(j, prev)| weighted_norm(&sol.z[j], m) - weighted_norm(&sol.z[prev], m) - h * fnorm(&sol.loads[j]))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// `½‖z_P‖² + h Σ_j (B_{t_j}[z_j, z_j] - ⟨f_j, z_j⟩)`, which equals `-½ Σ ‖z_j - z_{j-1}‖²_M`.
    pub fn energy_defect(&self, sol: &RotheSolution) -> Result<f64> {
        if sol.direction != Direction::Forward {
            return Err(FracError::Precondition("energy identity is stated for the forward march".into()));
        }
        let m = self.asm.mass();
        let mut acc = 0.5 * weighted_norm(&sol.z[sol.grid.steps], m).powi(2);
        for j in 1..=sol.grid.steps {
            let op = self.operator_at(sol.grid.node(j))?;
            acc += sol.grid.h * ((&*op * &sol.z[j]).dot(&sol.z[j]) - sol.loads[j].dot(&sol.z[j]));
        }
        Ok(acc)
    }

    /// `‖w^(m+1) - w^(m)‖_{L²(L²)}` over consecutive levels and the observed orders.
    pub fn refine_and_estimate(&self, g: &ExteriorControl, first: &TimeGrid, extra_levels: u32) -> Result<ConvergenceReport> {
        if extra_levels < 2 {
            return Err(FracError::Precondition("refinement study needs at least three levels".into()));
        }
        let mut grid = *first;
        let mut sols = vec![self.solve_forward(g, &grid)?];
        for _ in 0..extra_levels {
            grid = grid.refined()?;
            sols.push(self.solve_forward(g, &grid)?);
        }
        let m = self.asm.mass();
        let mut monitors = Vec::new();
        let mut step_violations = Vec::new();
        for s in &sols {
            monitors.push(self.apriori_monitor(s)?);
            step_violations.push(self.step_inequality_violation(s)?);
        }
        let diffs: Vec<f64> = sols.windows(2).map(|w| l2l2_distance(&w[0], &w[1], m)).collect::<Result<_>>()?;
        let orders = diffs.windows(2).map(|d| (d[0] / d[1]).log2()).collect();
        Ok(ConvergenceReport {
            levels: sols.iter().map(|s| s.grid.level).collect(),
            differences: diffs,
            orders,
            monitors,
            step_violations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AprioriMonitor {
    pub max_hs_norm: f64,
    pub max_difference_quotient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub levels: Vec<u32>,
    /// `differences[k] = ‖u^(levels[k+1]) - u^(levels[k])‖`.
    pub differences: Vec<f64>,
    pub orders: Vec<f64>,
    pub monitors: Vec<AprioriMonitor>,
    /// [`Evolver::step_inequality_violation`] per level.
    pub step_violations: Vec<f64>,
}

/// `∫_α^β ⟨v, u^(m) - ũ^(m)⟩ dt` by exact quadrature, and its closed form `(h/2)⟨v, z_{j1} - z_{j2}⟩`.
pub fn interpolant_gap(sol: &RotheSolution, v: &DVector<f64>, alpha: f64, beta: f64, mass: &DMatrix<f64>) -> Result<(f64, f64)> {
    let j1 = sol.grid.node_index(alpha);
    let j2 = sol.grid.node_index(beta);
    let (Some(j1), Some(j2)) = (j1, j2) else {
        return Err(FracError::Precondition(format!("interval [{alpha}, {beta}] is not aligned with the time nodes")));
    };
    if j1 > j2 || sol.direction != Direction::Forward {
        return Err(FracError::Precondition("gap needs α ≤ β and a forward solution".into()));
    }
    let mv = mass * v;
    let h = sol.grid.h;
    // two-point Gauss is exact for the linear-minus-constant integrand on each interval
    let g = 0.5 / 3f64.sqrt();
    let mut numeric = 0.0;
    for j in (j1 + 1)..=j2 {
        for tau in [0.5 - g, 0.5 + g] {
            let lin = &sol.z[j - 1] * (1.0 - tau) + &sol.z[j] * tau;
            numeric += 0.5 * h * mv.dot(&(lin - &sol.z[j]));
        }
    }
    let closed = 0.5 * h * mv.dot(&(&sol.z[j1] - &sol.z[j2]));
    Ok((numeric, closed))
}

/// Which discrete Grönwall inequality to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GronwallVariant {
    /// `α_i ≤ A + Bh Σ_{l<i} α_l  ⇒  α_i ≤ A e^{B(i-1)h}`.
    Explicit,
    /// `α_i ≤ A + Bh Σ_{l≤i} α_l, Bh < 1  ⇒  α_i ≤ A/(1-Bh) e^{B(i-1)h/(1-Bh)}`.
    Implicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallReport {
    pub bounds: Vec<f64>,
    pub hypotheses_hold: bool,
    pub satisfied: bool,
}

pub fn gronwall_bound(alphas: &[f64], a: f64, b: f64, h: f64, variant: GronwallVariant) -> Result<GronwallReport> {
    if !(a > 0.0 && b > 0.0 && h > 0.0) {
        return Err(FracError::Precondition("A, B, h must be positive".into()));
    }
    if variant == GronwallVariant::Implicit && b * h >= 1.0 {
        return Err(FracError::Precondition(format!("variant (b) needs Bh < 1, got {}", b * h)));
    }
    let tol = 1e-12;
    let mut hyp = alphas.iter().all(|&x| x >= 0.0) && alphas.first().is_none_or(|&x| x <= a * (1.0 + tol));
    let mut prefix = 0.0;
    let mut bounds = Vec::with_capacity(alphas.len());
    for (i, &x) in alphas.iter().enumerate() {
        let rhs = match variant {
            GronwallVariant::Explicit => a + b * h * prefix,
            GronwallVariant::Implicit => a + b * h * (prefix + x),
        };
        if i > 0 && x > rhs * (1.0 + tol) {
            hyp = false;
        }
        prefix += x;
        let k = i as f64;
        bounds.push(match variant {
            GronwallVariant::Explicit => a * (b * k * h).exp(),
            GronwallVariant::Implicit => a / (1.0 - b * h) * (b * k * h / (1.0 - b * h)).exp(),
        });
    }
    let satisfied = alphas.iter().zip(&bounds).all(|(x, bd)| *x <= bd * (1.0 + tol));
    Ok(GronwallReport { bounds, hypotheses_hold: hyp, satisfied })
}

/// Sequence meeting the hypothesis of `variant` with equality.
pub fn gronwall_saturating_sequence(a: f64, b: f64, h: f64, len: usize, variant: GronwallVariant) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut prefix = 0.0;
    for i in 0..len {
        let x = if i == 0 {
            a
        } else {
            match variant {
                GronwallVariant::Explicit => a + b * h * prefix,
                GronwallVariant::Implicit => (a + b * h * prefix) / (1.0 - b * h),
            }
        };
        prefix += x;
        out.push(x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_nodes_are_antisymmetric_and_cover_horizon() {
        let g = TimeGrid::new(1.0, 8, 3).unwrap();
        assert_eq!(g.steps, 32);
        assert_eq!(g.node(0), -1.0);
        assert_eq!(g.node(32), 1.0);
        for j in 0..=32 {
            assert_eq!(g.node(32 - j), -g.node(j));
        }
        assert_eq!(g.node_index(-0.5), Some(8));
        assert_eq!(g.node_index(-0.51), None);
    }

    #[test]
    fn large_step_rejected() {
        assert!(matches!(TimeGrid::new(1.0, 4, 1), Err(FracError::Precondition(_))));
    }

    #[test]
    fn gronwall_saturating_sequences_obey_bounds() {
        for h in [0.1, 0.25] {
            for variant in [GronwallVariant::Explicit, GronwallVariant::Implicit] {
                let seq = gronwall_saturating_sequence(1.0, 1.0, h, 20, variant);
                let rep = gronwall_bound(&seq, 1.0, 1.0, h, variant).unwrap();
                assert!(rep.hypotheses_hold && rep.satisfied, "{variant:?} {h}");
            }
        }
        assert!(gronwall_bound(&[0.0; 5], 1.0, 1.0, 0.1, GronwallVariant::Explicit).unwrap().satisfied);
        assert!(gronwall_bound(&[1.0], 1.0, 4.0, 0.25, GronwallVariant::Implicit).is_err());
    }
}
