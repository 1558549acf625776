//! Galerkin matrices of the form `B_t[u, v] = <R^s_{A(t)} u, v> + ∫_Ω q(t) u v` on
//! the interior hats of the domain grid, and the couplings to the exterior windows.
//!
//! For real `u, v` supported in `Ω` the magnetic form splits as
//!
//! ```text
//! <R^s_A u, v> = ∬_{Ω×Ω} (u(x)-u(y)) (v(x)-v(y)) K + 2 ∫_Ω u v κ_c
//!              + ∬_{Ω×Ω} 2 (1 - R_A) K u(x) v(y),
//! ```
//!
//! with `κ_c(x) = ∫_{Ω^c} K(x, y) dy`. The first two terms do not depend on `A`
//! and are assembled once; the last one is recomputed per time level.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{FracError, Result};
use crate::grid::{Discretization, Field, RegionTag, UniformGrid, Window};
use crate::kernel::{ElectricPotential, FracParams, MagneticPotential};
use crate::linalg::{coercivity_constant, normalized_operator_norm};
use crate::pairquad::{local_hat, Displacement, PairRules};
use crate::point::{self, Point, MAX_DIM, ORIGIN};
use crate::quadrature::{gauss_legendre, tensor_box, Rule1d};

/// Mass, stiffness and potential matrices at one time level.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub potential: DMatrix<f64>,
    pub t: f64,
}

impl GalerkinSystem {
    /// `uᵀ (S(t) + Q(t)) v`.
    pub fn bilinear_form(&self, u: &Field, v: &Field) -> f64 {
        let su = &self.stiffness * &u.coeffs + &self.potential * &u.coeffs;
        su.dot(&v.coeffs)
    }

    pub fn operator(&self) -> DMatrix<f64> {
        &self.stiffness + &self.potential
    }
}

/// Galerkin residual of the torsion identity, relative to the exact load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorsionReport {
    pub relative_l2: f64,
    pub relative_max: f64,
    pub nodes: usize,
}

/// Measured constants of the time-dependent form at `t` with difference step `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormConstants {
    pub t: f64,
    pub h: f64,
    /// `‖B_{t+h} - B_t‖ / h`.
    pub c1: f64,
    /// `‖B_{t+h} + B_{t-h} - 2B_t‖ / h²`.
    pub c2: f64,
    /// `inf B_t[u, u] / ‖u‖²`.
    pub c0: f64,
}

/// Assembles and caches the time-independent pieces for one discretization.
#[derive(Debug)]
pub struct Assembler {
    pub disc: Discretization,
    pub params: FracParams,
    rules: PairRules,
    mass: OnceLock<DMatrix<f64>>,
    gagliardo: OnceLock<DMatrix<f64>>,
    coupling_w1: OnceLock<DMatrix<f64>>,
    coupling_w2: OnceLock<DMatrix<f64>>,
    window_coupling: OnceLock<DMatrix<f64>>,
    traces: [OnceLock<TraceOperator>; 2],
}

/// Pointwise exterior trace on the nodes of a measurement window:
/// `R^s u(x) = -(from_domain · w + from_window · g)` for interior part `w` and data `g`
/// on the other window.
#[derive(Debug, Clone)]
pub struct TraceOperator {
    pub measured_on: Window,
    pub points: Vec<Point>,
    pub from_domain: DMatrix<f64>,
    pub from_window: DMatrix<f64>,
}

impl TraceOperator {
    /// Trace values at all sample points.
    pub fn apply(&self, w: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        -(&self.from_domain * w + &self.from_window * g)
    }
}

fn accumulate_parallel<F>(n_rows: usize, n_cols: usize, items: usize, f: F) -> DMatrix<f64>
where
    F: Fn(usize, &mut DMatrix<f64>) + Sync + Send,
{
    (0..items)
        .into_par_iter()
        .fold(
            || DMatrix::zeros(n_rows, n_cols),
            |mut acc, i| {
                f(i, &mut acc);
                acc
            },
        )
        .reduce(|| DMatrix::zeros(n_rows, n_cols), |a, b| a + b)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn offset_multi(base: &[usize; MAX_DIM], m: &Displacement, dim: usize) -> Option<[usize; MAX_DIM]> {
    let mut out = [0usize; MAX_DIM];
    for k in 0..dim {
        let v = base[k] as i64 + m[k];
        if v < 0 {
            return None;
        }
        out[k] = v as usize;
    }
    Some(out)
}

/// Corner offsets of `E` and of `E + d`, without duplicates.
fn pair_slots(d: &Displacement, dim: usize) -> Vec<Displacement> {
    let mut slots: Vec<Displacement> = Vec::new();
    for shift in [[0i64; MAX_DIM], *d] {
        for c in 0..(1usize << dim) {
            let mut m = [0i64; MAX_DIM];
            for k in 0..dim {
                m[k] = shift[k] + ((c >> k) & 1) as i64;
            }
            if !slots.contains(&m) {
                slots.push(m);
            }
        }
    }
    slots
}

/// Nodes on `[0, h]`, graded geometrically toward the flagged ends.
fn axis_rule(rule: &Rule1d, h: f64, at_lo: bool, at_hi: bool) -> Vec<(f64, f64)> {
    const LEVELS: usize = 12;
    let mut panels = Vec::new();
    if !at_lo && !at_hi {
        panels.push((0.0, h));
    } else {
        let (a, b) = match (at_lo, at_hi) {
            (true, true) => (0.0, 0.5 * h),
            (true, false) => (0.0, h),
            _ => (0.0, 0.0),
        };
        if at_lo {
            let mut hi = b;
            for _ in 0..LEVELS {
                panels.push((a + 0.5 * (hi - a), hi));
                hi = a + 0.5 * (hi - a);
            }
            panels.push((a, hi));
        }
        if at_hi {
            let start = if at_lo { 0.5 * h } else { 0.0 };
            let mut lo = start;
            for _ in 0..LEVELS {
                panels.push((lo, lo + 0.5 * (h - lo)));
                lo += 0.5 * (h - lo);
            }
            panels.push((lo, h));
        }
    }
    panels.iter().flat_map(|&(a, b)| rule.mapped(a, b).collect::<Vec<_>>()).collect()
}

fn tensor_axes(axes: &[Vec<(f64, f64)>], dim: usize) -> Vec<(Point, f64)> {
    let mut out = vec![(ORIGIN, 1.0)];
    for (k, axis) in axes.iter().enumerate().take(dim) {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for (p, w) in &out {
            for &(x, wx) in axis {
                let mut q = *p;
                q[k] = x;
                next.push((q, w * wx));
            }
        }
        out = next;
    }
    out
}

/// `∫_{Ω^c} K(x, y) dy` for `x` inside a box domain (n = 1, 2).
pub fn complement_kernel_integral(x: &Point, omega: &crate::grid::BoxRegion, p: &FracParams) -> f64 {
    let s = p.s;
    let c = p.kernel_scale / (2.0 * s);
    match p.n {
        1 => c * ((x[0] - omega.lo[0]).powf(-2.0 * s) + (omega.hi[0] - x[0]).powf(-2.0 * s)),
        2 => {
            // ∫ ρ(θ)^{-2s} dθ over the exit directions, one wedge per side
            let dl = x[0] - omega.lo[0];
            let dr = omega.hi[0] - x[0];
            let db = x[1] - omega.lo[1];
            let dt = omega.hi[1] - x[1];
            let rule = gauss_legendre(16);
            let wedge = |dist: f64, left: f64, right: f64| -> f64 {
                let mut acc = 0.0;
                for (lo, hi) in [(-(left / dist).atan(), 0.0), (0.0, (right / dist).atan())] {
                    for (phi, w) in rule.mapped(lo, hi) {
                        acc += w * (phi.cos() / dist).powf(2.0 * s);
                    }
                }
                acc
            };
            c * (wedge(dr, db, dt) + wedge(dt, dr, dl) + wedge(dl, dt, db) + wedge(db, dl, dr))
        }
        _ => f64::NAN,
    }
}

impl Assembler {
    pub fn new(disc: Discretization, params: FracParams) -> Result<Self> {
        if params.n != disc.dim() {
            return Err(FracError::InvalidParameter(format!(
                "kernel dimension {} does not match grid dimension {}",
                params.n,
                disc.dim()
            )));
        }
        if !(1..=2).contains(&params.n) {
            return Err(FracError::InvalidParameter(format!(
                "assembly is implemented for n = 1, 2 (got n = {})",
                params.n
            )));
        }
        if (params.radius - disc.geometry.radius).abs() > 1e-12 * params.radius {
            return Err(FracError::InvalidParameter("kernel radius differs from geometry radius".into()));
        }
        let rules = PairRules::build(&disc.omega, params.s, &disc.quad)?;
        Ok(Self {
            disc,
            params,
            rules,
            mass: OnceLock::new(),
            gagliardo: OnceLock::new(),
            coupling_w1: OnceLock::new(),
            coupling_w2: OnceLock::new(),
            window_coupling: OnceLock::new(),
            traces: [OnceLock::new(), OnceLock::new()],
        })
    }

    pub fn dim(&self) -> usize {
        self.disc.dim()
    }

    pub fn dofs(&self) -> usize {
        self.disc.omega.interior_count()
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.disc.omega
    }

    /// Total number of stored pair-quadrature nodes.
    pub fn pair_rule_points(&self) -> usize {
        self.rules.total_points()
    }

    /// `∫ w φ_i φ_j` on the interior hats of `grid`.
    ///
    /// With `graded`, cells touching the boundary use rules refined geometrically
    /// toward it, for weights that blow up there.
    fn weighted_mass<W>(&self, grid: &UniformGrid, order: usize, graded: bool, weight: W) -> Result<DMatrix<f64>>
    where
        W: Fn(&Point) -> Result<f64> + Sync,
    {
        let dim = grid.dim();
        let n = grid.interior_count();
        let rule = gauss_legendre(order);
        let nc = 1usize << dim;
        let elements: Vec<usize> = (0..grid.element_count()).collect();
        let parts = elements
            .par_iter()
            .map(|&e| {
                let em = grid.element_multi(e);
                let lo = grid.node(&em);
                let dofs = grid.element_interior_dofs(&em);
                let mut loc = vec![0.0; nc * nc];
                let mut sh = [0.0; 8];
                let axes: Vec<Vec<(f64, f64)>> = (0..dim)
                    .map(|k| {
                        let h = grid.spacing[k];
                        let at_lo = graded && em[k] == 0;
                        let at_hi = graded && em[k] + 1 == grid.cells[k];
                        axis_rule(&rule, h, at_lo, at_hi)
                    })
                    .collect();
                for (xl, w) in tensor_axes(&axes, dim) {
                    let x = point::add(&lo, &xl);
                    let wv = weight(&x)? * w;
                    grid.local_shapes(&lo, &x, &mut sh);
                    for a in 0..nc {
                        for b in 0..nc {
                            loc[a * nc + b] += wv * sh[a] * sh[b];
                        }
                    }
                }
                Ok((dofs, loc))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut m = DMatrix::zeros(n, n);
        for (dofs, loc) in parts {
            for a in 0..nc {
                let Some(i) = dofs[a] else { continue };
                for b in 0..nc {
                    if let Some(j) = dofs[b] {
                        m[(i, j)] += loc[a * nc + b];
                    }
                }
            }
        }
        symmetrize(&mut m);
        Ok(m)
    }

    /// Mass matrix `∫_Ω φ_i φ_j`.
    pub fn mass(&self) -> &DMatrix<f64> {
        self.mass.get_or_init(|| self.weighted_mass(&self.disc.omega, 2, false, |_| Ok(1.0)).expect("unit weight"))
    }

    /// Mass matrix on the interior hats of a window.
    pub fn window_mass(&self, w: Window) -> DMatrix<f64> {
        self.weighted_mass(self.disc.window_grid(w), 2, false, |_| Ok(1.0)).expect("unit weight")
    }

    /// `∫_Ω w φ_i φ_j` for a bounded weight, exact for weights polynomial on each element.
    pub fn domain_weighted_mass<W>(&self, weight: W) -> DMatrix<f64>
    where
        W: Fn(&Point) -> f64 + Sync,
    {
        self.weighted_mass(&self.disc.omega, self.disc.quad.volume, false, |x| Ok(weight(x))).expect("infallible weight")
    }

    /// `Q(t) = ∫_Ω q(t) φ_i φ_j`; fails if `q` drops below its declared bound.
    pub fn potential(&self, q: &ElectricPotential, t: f64) -> Result<DMatrix<f64>> {
        let lb = q.lower_bound();
        self.weighted_mass(&self.disc.omega, self.disc.quad.volume, false, |x| {
            let v = q.value(x, t);
            if !(v >= lb) {
                return Err(FracError::Assumption(format!(
                    "q({:?}, t={t}) = {v} below the lower bound {lb}",
                    &x[..self.dim()]
                )));
            }
            Ok(v)
        })
    }

    /// A-free stiffness `S₀` (fractional Laplacian with the exterior tail).
    pub fn gagliardo_stiffness(&self) -> &DMatrix<f64> {
        self.gagliardo.get_or_init(|| self.build_gagliardo())
    }

    fn build_gagliardo(&self) -> DMatrix<f64> {
        let grid = &self.disc.omega;
        let dim = self.dim();
        let h = grid.spacing;
        let p = self.params;
        let n = grid.interior_count();
        let disp: Vec<Displacement> = self.rules.displacements().collect();
        let locals: Vec<(Vec<Displacement>, Vec<f64>)> = disp
            .par_iter()
            .map(|d| {
                let slots = pair_slots(d, dim);
                let ns = slots.len();
                let mut loc = vec![0.0; ns * ns];
                let mut dv = vec![0.0; ns];
                for q in self.rules.get(d) {
                    let k = p.kernel_at_distance(point::dist(&q.x, &q.y)) * q.w;
                    for (a, m) in slots.iter().enumerate() {
                        dv[a] = local_hat(m, &q.x, &h, dim) - local_hat(m, &q.y, &h, dim);
                    }
                    for a in 0..ns {
                        let ka = k * dv[a];
                        if ka == 0.0 {
                            continue;
                        }
                        for b in 0..ns {
                            loc[a * ns + b] += ka * dv[b];
                        }
                    }
                }
                (slots, loc)
            })
            .collect();
        let ne = grid.element_count();
        let mut s = accumulate_parallel(n, n, ne, |e, acc| {
            let em = grid.element_multi(e);
            for f in 0..ne {
                let fm = grid.element_multi(f);
                let mut d = [0i64; MAX_DIM];
                for k in 0..dim {
                    d[k] = fm[k] as i64 - em[k] as i64;
                }
                let (slots, loc) = &locals[self.rules_index(&d)];
                let ns = slots.len();
                let ids: Vec<Option<usize>> = slots
                    .iter()
                    .map(|m| offset_multi(&em, m, dim).and_then(|g| grid.interior_index(&g)))
                    .collect();
                for a in 0..ns {
                    let Some(i) = ids[a] else { continue };
                    for b in 0..ns {
                        if let Some(j) = ids[b] {
                            acc[(i, j)] += loc[a * ns + b];
                        }
                    }
                }
            }
        });
        let omega = self.disc.geometry.omega.clone();
        let tail = self
            .weighted_mass(grid, self.disc.quad.volume, true, |x| Ok(2.0 * complement_kernel_integral(x, &omega, &p)))
            .expect("finite tail weight");
        s += tail;
        symmetrize(&mut s);
        s
    }

    fn rules_index(&self, d: &Displacement) -> usize {
        // same mixed-radix layout as PairRules
        let grid = &self.disc.omega;
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            let r = 2 * grid.cells[k] - 1;
            idx += (d[k] + grid.cells[k] as i64 - 1) as usize * stride;
            stride *= r;
        }
        idx
    }

    /// `C(t)_ij = ∬_{Ω×Ω} 2 (1 - R_{A(t)}) K φ_i(x) φ_j(y)`.
    pub fn magnetic_correction(&self, a: &MagneticPotential, t: f64) -> DMatrix<f64> {
        let grid = &self.disc.omega;
        let dim = self.dim();
        let h = grid.spacing;
        let p = self.params;
        let n = grid.interior_count();
        let ne = grid.element_count();
        let nc = 1usize << dim;
        let active = a.active_region().clone();
        if active.is_empty() {
            return DMatrix::zeros(n, n);
        }
        let mut c = accumulate_parallel(n, n, ne, |e, acc| {
            let em = grid.element_multi(e);
            let ebox = grid.element_box(&em);
            let elo = ebox.lo;
            let eids = grid.element_interior_dofs(&em);
            if eids.iter().all(Option::is_none) {
                return;
            }
            let mut sx = [0.0; 8];
            let mut sy = [0.0; 8];
            let mut loc = vec![0.0; nc * nc];
            for f in e..ne {
                let fm = grid.element_multi(f);
                let fbox = grid.element_box(&fm);
                if ebox.midpoint_box(&fbox).intersection(&active).is_empty() {
                    continue;
                }
                let fids = grid.element_interior_dofs(&fm);
                if fids.iter().all(Option::is_none) {
                    continue;
                }
                let mut d = [0i64; MAX_DIM];
                let mut flo = ORIGIN;
                for k in 0..dim {
                    d[k] = fm[k] as i64 - em[k] as i64;
                    flo[k] = d[k] as f64 * h[k];
                }
                loc.iter_mut().for_each(|v| *v = 0.0);
                for q in self.rules.get(&d) {
                    let z = point::sub(&q.x, &q.y);
                    let mid = point::add(&elo, &point::midpoint(&q.x, &q.y));
                    let theta = point::dot(&z, &a.value(&mid, t));
                    if theta == 0.0 {
                        continue;
                    }
                    let half = (0.5 * theta).sin();
                    let r = point::norm(&z);
                    let wv = q.w * 4.0 * half * half * p.kernel_at_distance(r);
                    grid.local_shapes(&ORIGIN, &q.x, &mut sx);
                    grid.local_shapes(&flo, &q.y, &mut sy);
                    for i in 0..nc {
                        let wi = wv * sx[i];
                        for j in 0..nc {
                            loc[i * nc + j] += wi * sy[j];
                        }
                    }
                }
                for i in 0..nc {
                    let Some(gi) = eids[i] else { continue };
                    for j in 0..nc {
                        let Some(gj) = fids[j] else { continue };
                        let v = loc[i * nc + j];
                        acc[(gi, gj)] += v;
                        if f != e {
                            acc[(gj, gi)] += v;
                        }
                    }
                }
            }
        });
        symmetrize(&mut c);
        c
    }

    /// `S(t) = S₀ + C(t)`.
    pub fn nonlocal_stiffness(&self, a: &MagneticPotential, t: f64) -> DMatrix<f64> {
        self.gagliardo_stiffness() + self.magnetic_correction(a, t)
    }

    pub fn system(&self, a: &MagneticPotential, q: &ElectricPotential, t: f64) -> Result<GalerkinSystem> {
        Ok(GalerkinSystem {
            mass: self.mass().clone(),
            stiffness: self.nonlocal_stiffness(a, t),
            potential: self.potential(q, t)?,
            t,
        })
    }

    /// Galerkin residual of `(-Δ)^s (1 - |x|²)_+^s = λ` tested against the hats whose
    /// nodes lie in the ball of radius `1 - margin`; `λ` refers to the operator defined
    /// by the configured kernel scale.
    pub fn torsion_residual(&self, lambda: f64, margin: f64) -> Result<TorsionReport> {
        if !(0.0..1.0).contains(&margin) {
            return Err(FracError::InvalidParameter(format!("margin {margin} outside [0, 1)")));
        }
        let g = &self.disc.omega;
        let s = self.params.s;
        let radius2 = |i: usize| {
            let x = g.node(&g.interior_multi(i));
            point::dot(&x, &x)
        };
        let u = DVector::from_fn(g.interior_count(), |i, _| (1.0 - radius2(i)).max(0.0).powf(s));
        let su = self.gagliardo_stiffness() * &u;
        let load = lambda * g.cell_volume();
        let limit = (1.0 - margin).powi(2) * (1.0 + 1e-12);
        let (mut num, mut den, mut max, mut nodes) = (0.0, 0.0, 0.0f64, 0);
        for i in (0..g.interior_count()).filter(|&i| radius2(i) <= limit) {
            let e = su[i] - load;
            num += e * e;
            den += load * load;
            max = max.max(e.abs() / load.abs());
            nodes += 1;
        }
        if nodes == 0 {
            return Err(FracError::Precondition("no test nodes inside the shrunken ball".into()));
        }
        Ok(TorsionReport { relative_l2: (num / den).sqrt(), relative_max: max, nodes })
    }

    /// `M + S₀`, the Gram matrix of the discrete `H^s` norm.
    pub fn hs_gram(&self) -> DMatrix<f64> {
        self.mass() + self.gagliardo_stiffness()
    }

    /// Difference quotients of `B_t = S(t) + Q(t)` and the coercivity of `B_t`, all in
    /// the norm of [`Assembler::hs_gram`].
    pub fn form_constants(&self, a: &MagneticPotential, q: &ElectricPotential, t: f64, h: f64) -> Result<FormConstants> {
        Ok(self.form_constant_sweep(a, q, &[t], &[h])?.remove(0))
    }

    /// [`Assembler::form_constants`] for every `(t, h)` pair, assembling each time level once.
    pub fn form_constant_sweep(
        &self,
        a: &MagneticPotential,
        q: &ElectricPotential,
        times: &[f64],
        steps: &[f64],
    ) -> Result<Vec<FormConstants>> {
        if let Some(h) = steps.iter().find(|h| !(**h > 0.0)) {
            return Err(FracError::InvalidParameter(format!("difference step {h} must be positive")));
        }
        let gram = self.hs_gram();
        let mut levels: Vec<f64> = times
            .iter()
            .flat_map(|&t| std::iter::once(t).chain(steps.iter().flat_map(move |&h| [t - h, t + h])))
            .collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let ops: HashMap<u64, DMatrix<f64>> = levels
            .iter()
            .map(|&s| Ok((s.to_bits(), self.system(a, q, s)?.operator())))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(times.len() * steps.len());
        for &t in times {
            let mid = &ops[&t.to_bits()];
            let c0 = coercivity_constant(mid, &gram)?;
            for &h in steps {
                let (prev, next) = (&ops[&(t - h).to_bits()], &ops[&(t + h).to_bits()]);
                let first = next - mid;
                let second = next + prev - mid * 2.0;
                out.push(FormConstants {
                    t,
                    h,
                    c1: normalized_operator_norm(&first, &gram)? / h,
                    c2: normalized_operator_norm(&second, &gram)? / (h * h),
                    c0,
                });
            }
        }
        Ok(out)
    }

    /// `2 ∫_{G1} ∫_{G2} ψ_i(x) χ_k(y) K(x, y)` over interior hats of two disjoint grids.
    fn far_coupling(&self, g1: &UniformGrid, g2: &UniformGrid) -> DMatrix<f64> {
        let dim = self.dim();
        let p = self.params;
        let rule = gauss_legendre(self.disc.quad.far);
        let nc = 1usize << dim;
        let n1 = g1.interior_count();
        let n2 = g2.interior_count();
        let points = |g: &UniformGrid| -> Vec<(Vec<Option<usize>>, Vec<(Point, f64, [f64; 8])>)> {
            (0..g.element_count())
                .map(|e| {
                    let em = g.element_multi(e);
                    let b = g.element_box(&em);
                    let pts = tensor_box(&rule, &b.lo, &b.hi, dim)
                        .into_iter()
                        .map(|(x, w)| {
                            let mut sh = [0.0; 8];
                            g.local_shapes(&b.lo, &x, &mut sh);
                            (x, w, sh)
                        })
                        .collect();
                    (g.element_interior_dofs(&em), pts)
                })
                .collect()
        };
        let p1 = points(g1);
        let p2 = points(g2);
        accumulate_parallel(n1, n2, p1.len(), |e, acc| {
            let (ids1, pts1) = &p1[e];
            let mut loc = vec![0.0; nc * nc];
            for (ids2, pts2) in &p2 {
                loc.iter_mut().for_each(|v| *v = 0.0);
                for (x, wx, sx) in pts1 {
                    for (y, wy, sy) in pts2 {
                        let k = 2.0 * wx * wy * p.kernel_at_distance(point::dist(x, y));
                        for a in 0..nc {
                            let ka = k * sx[a];
                            for b in 0..nc {
                                loc[a * nc + b] += ka * sy[b];
                            }
                        }
                    }
                }
                for a in 0..nc {
                    let Some(i) = ids1[a] else { continue };
                    for b in 0..nc {
                        if let Some(j) = ids2[b] {
                            acc[(i, j)] += loc[a * nc + b];
                        }
                    }
                }
            }
        })
    }

    /// `B_ik = 2 ∫_Ω ∫_W φ_i(x) ψ_k(y) K(x, y)`; the exterior load is `B g`.
    pub fn exterior_coupling(&self, w: Window) -> &DMatrix<f64> {
        let cell = match w {
            Window::W1 => &self.coupling_w1,
            Window::W2 => &self.coupling_w2,
        };
        cell.get_or_init(|| self.far_coupling(&self.disc.omega, self.disc.window_grid(w)))
    }

    /// `2 ∫_{W2} ∫_{W1} ψ²_k(x) ψ¹_l(y) K(x, y)`.
    pub fn window_coupling(&self) -> &DMatrix<f64> {
        self.window_coupling.get_or_init(|| self.far_coupling(&self.disc.w2, &self.disc.w1))
    }

    /// Galerkin load of `f = 2 ∫_W g K` for exterior data `g` on a window.
    pub fn exterior_source(&self, g: &Field) -> Result<DVector<f64>> {
        let w = match g.region {
            RegionTag::W1 => Window::W1,
            RegionTag::W2 => Window::W2,
            RegionTag::Omega => {
                return Err(FracError::Geometry("exterior data must live on a window, not on the domain".into()))
            }
        };
        Ok(self.exterior_coupling(w) * &g.coeffs)
    }

    /// Weights `(a, b)` with `2 ∫_Ω u K(x, ·) = a·u` and `2 ∫_{W} g K(x, ·) = b·g` at a point `x`.
    pub fn trace_weights(&self, x: &Point, source: Window) -> Result<(DVector<f64>, DVector<f64>)> {
        let dim = self.dim();
        let wg = self.disc.window_grid(source);
        if wg.region.contains_closed(x) || self.disc.geometry.omega.contains_closed(x) {
            return Err(FracError::Geometry(format!(
                "trace point {:?} must avoid the domain and the source window",
                &x[..dim]
            )));
        }
        let p = self.params;
        let rule = gauss_legendre(self.disc.quad.far + 1);
        let weights = |g: &UniformGrid| -> DVector<f64> {
            let mut out = DVector::zeros(g.interior_count());
            let mut sh = [0.0; 8];
            for e in 0..g.element_count() {
                let em = g.element_multi(e);
                let b = g.element_box(&em);
                let ids = g.element_interior_dofs(&em);
                for (y, w) in tensor_box(&rule, &b.lo, &b.hi, dim) {
                    let k = 2.0 * w * p.kernel_at_distance(point::dist(x, &y));
                    g.local_shapes(&b.lo, &y, &mut sh);
                    for (a, id) in ids.iter().enumerate() {
                        if let Some(i) = id {
                            out[*i] += k * sh[a];
                        }
                    }
                }
            }
            out
        };
        Ok((weights(&self.disc.omega), weights(wg)))
    }

    /// Trace operator sampled at every node (boundary included) of `measured`,
    /// with the data living on the other window.
    pub fn trace_operator(&self, measured: Window) -> Result<&TraceOperator> {
        let cell = &self.traces[measured as usize];
        if let Some(t) = cell.get() {
            return Ok(t);
        }
        let g = self.disc.window_grid(measured);
        let points: Vec<Point> = (0..g.full_count()).map(|i| g.node(&g.full_multi(i))).collect();
        let rows = points
            .par_iter()
            .map(|x| self.trace_weights(x, measured.other()))
            .collect::<Result<Vec<_>>>()?;
        let n_src = self.disc.window_grid(measured.other()).interior_count();
        let mut from_domain = DMatrix::zeros(points.len(), self.dofs());
        let mut from_window = DMatrix::zeros(points.len(), n_src);
        for (i, (a, b)) in rows.into_iter().enumerate() {
            from_domain.set_row(i, &a.transpose());
            from_window.set_row(i, &b.transpose());
        }
        let _ = cell.set(TraceOperator { measured_on: measured, points, from_domain, from_window });
        Ok(cell.get().expect("trace operator initialised"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxRegion, Geometry, QuadratureSpec};

    fn line(spacing: f64, s: f64) -> Assembler {
        let geom = Geometry::new(
            BoxRegion::interval(-1.0, 1.0),
            1.0,
            BoxRegion::interval(4.0, 5.0),
            BoxRegion::interval(6.0, 7.0),
        )
        .unwrap();
        let disc = Discretization::new(geom, spacing, QuadratureSpec::default()).unwrap();
        Assembler::new(disc, FracParams::with_default_scale(1, s, 1.0, 1.0).unwrap()).unwrap()
    }

    fn square() -> Assembler {
        let geom = Geometry::new(
            BoxRegion::square([-1.0, -1.0], [1.0, 1.0]),
            1.5,
            BoxRegion::square([5.0, -0.5], [6.0, 0.5]),
            BoxRegion::square([-0.5, 5.0], [0.5, 6.0]),
        )
        .unwrap();
        let disc = Discretization::new(geom, 0.25, QuadratureSpec::default()).unwrap();
        Assembler::new(disc, FracParams::with_default_scale(2, 0.5, 1.0, 1.5).unwrap()).unwrap()
    }

    #[test]
    fn mass_total_matches_interior_volume() {
        let asm = line(0.125, 0.5);
        let total: f64 = asm.mass().iter().sum();
        // Σ M_ij = ∫ (Σ φ_i)^2: one in the bulk, (x/h)^2 on the two boundary cells
        let h = 0.125;
        assert!((total - (2.0 - 4.0 * h / 3.0)).abs() < 1e-13, "{total}");
        let sq = square();
        let total: f64 = sq.mass().iter().sum();
        let side = 2.0 - 4.0 * 0.25 / 3.0;
        assert!((total - side * side).abs() < 1e-12, "{total}");
    }

    #[test]
    fn potential_scales_mass_and_checks_bound() {
        let asm = line(0.125, 0.5);
        let q = ElectricPotential::constant(3.0).unwrap();
        let qm = asm.potential(&q, 0.0).unwrap();
        assert!((qm - asm.mass() * 3.0).abs().max() < 1e-14);
        let bad = ElectricPotential::from_fn(0.5, "dip", |x, _| 1.0 - x[0] * x[0]).unwrap();
        assert!(matches!(asm.potential(&bad, 0.0), Err(FracError::Assumption(_))));
    }

    #[test]
    fn stiffness_even_in_potential_and_symmetric() {
        let asm = square();
        let support = BoxRegion::square([-1.0, -1.0], [1.0, 1.0]);
        let a = MagneticPotential::gaussian_bump(support.clone(), [1.5, -0.5, 0.0], [0.1, 0.0, 0.0], 0.4, vec![1.0, 0.5]);
        let s1 = asm.nonlocal_stiffness(&a, 0.3);
        let s2 = asm.nonlocal_stiffness(&a.negated(), 0.3);
        assert!((&s1 - &s2).abs().max() < 1e-14);
        assert!((&s1 - s1.transpose()).abs().max() == 0.0);
        let zero = asm.magnetic_correction(&MagneticPotential::zero(support), 0.3);
        assert_eq!(zero.abs().max(), 0.0);
        // the correction is positive semidefinite only in combination; it is nonnegative entrywise on the diagonal
        let c = asm.magnetic_correction(&a, 0.3);
        assert!((0..c.nrows()).all(|i| c[(i, i)] >= 0.0));
    }

    #[test]
    fn exterior_source_is_positive_for_positive_data() {
        let asm = line(0.125, 0.5);
        let g = crate::grid::project(&asm.disc, RegionTag::W1, |x| (1.0 - (2.0 * (x[0] - 4.5)).powi(2)).max(0.0));
        let b = asm.exterior_source(&g).unwrap();
        assert!(b.iter().all(|&v| v > 0.0));
        let zero = Field::zeros(&asm.disc, RegionTag::W1);
        assert_eq!(asm.exterior_source(&zero).unwrap().abs().max(), 0.0);
        assert!(asm.exterior_source(&Field::zeros(&asm.disc, RegionTag::Omega)).is_err());
    }

    #[test]
    fn square_tail_matches_line_tail_in_thin_limit() {
        // far from the short sides the square tail exceeds the slab tail only by the corner wedges
        let p = FracParams::with_default_scale(2, 0.5, 1.0, 2.0).unwrap();
        let omega = BoxRegion::square([-1.0, -1.0], [1.0, 1.0]);
        let x = [0.0, 0.0, 0.0];
        let v = complement_kernel_integral(&x, &omega, &p);
        // by symmetry each side contributes the same wedge: ∫_{-π/4}^{π/4} cos(φ) dφ = √2
        let expect = p.kernel_scale / (2.0 * p.s) * 4.0 * 2f64.sqrt();
        assert!((v - expect).abs() < 1e-12 * expect, "{v} {expect}");
    }
}
