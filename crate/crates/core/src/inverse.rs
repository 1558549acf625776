//! Recovery of `±A` and `q` from exterior measurements.
//!
//! Controls are synthesised by least squares over a finite space-time basis (Runge
//! approximation), localized probes of the difference kernel `G` are read off the
//! DtN difference pairing, `R` is obtained by dividing by `2K`, and `|A|` follows from
//! inverting the cosine.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::control::{ExteriorControl, SpaceTimeData, SpaceTimeTerm, TimeProfile};
use crate::error::{FracError, Result};
use crate::evolve::{Direction, Evolver, RotheSolution, TimeGrid};
use crate::dtn::{difference_pairing_matrix, dtn_map};
use crate::grid::{project, BoxRegion, Discretization, RegionTag, Window};
use crate::kernel::smooth_bump;
use crate::linalg::SpdFactor;
use crate::point::{self, Point, MAX_DIM, ORIGIN};

/// Relative singular-value cutoff of the Runge least-squares solve.
pub const RUNGE_RCOND: f64 = 1e-11;

/// Finite family of smooth space-time controls on one window.
#[derive(Debug, Clone)]
pub struct ControlBasis {
    pub window: Window,
    pub elements: Vec<ExteriorControl>,
}

fn bit_reversal_order(n: usize) -> Vec<usize> {
    // coarse-to-fine ordering so that prefixes are spread over the index range
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut denom = 1usize;
    while order.len() < n {
        for k in 0..denom {
            let i = ((2 * k + 1) * n) / (2 * denom);
            if i < n && !seen[i] {
                seen[i] = true;
                order.push(i);
            }
        }
        denom *= 2;
        if denom > 4 * n {
            for (i, s) in seen.iter_mut().enumerate() {
                if !*s {
                    *s = true;
                    order.push(i);
                }
            }
        }
    }
    order
}

/// `count` C¹ bells on equal overlapping subintervals that tile `(-horizon, horizon)`.
pub fn time_bells(horizon: f64, count: usize) -> Vec<TimeProfile> {
    let step = 2.0 * horizon / (count + 1) as f64;
    (0..count)
        .map(|i| {
            let c = -horizon + (i + 1) as f64 * step;
            TimeProfile::CosineBell { a: c - step, b: c + step }
        })
        .collect()
}

impl ControlBasis {
    /// Tensor products of Gaussians centred on a `per_axis^n` lattice inside the window
    /// and the given time profiles, ordered coarse to fine.
    pub fn tensor(disc: &Discretization, window: Window, per_axis: usize, profiles: &[TimeProfile]) -> Result<Self> {
        if per_axis == 0 || profiles.is_empty() {
            return Err(FracError::InvalidParameter("control basis needs at least one element".into()));
        }
        let region = disc.geometry.window(window).clone();
        let dim = disc.dim();
        let mut centers = Vec::new();
        let mut idx = [0usize; MAX_DIM];
        loop {
            let mut c = ORIGIN;
            for k in 0..dim {
                c[k] = region.lo[k] + (idx[k] as f64 + 0.5) * region.width(k) / per_axis as f64;
            }
            centers.push(c);
            let mut k = 0;
            while k < dim {
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == dim {
                break;
            }
        }
        let width = (0..dim).map(|k| region.width(k)).fold(f64::INFINITY, f64::min) / (2.0 * per_axis as f64);
        let spatial: Vec<DVector<f64>> = centers
            .iter()
            .map(|c| {
                project(disc, window.into(), |x| {
                    let d = point::sub(x, c);
                    (-point::dot(&d, &d) / (2.0 * width * width)).exp()
                })
                .coeffs
            })
            .collect();
        let so = bit_reversal_order(spatial.len());
        let to = bit_reversal_order(profiles.len());
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (ri, _) in so.iter().enumerate() {
            for (rk, _) in to.iter().enumerate() {
                pairs.push((ri, rk));
            }
        }
        pairs.sort_by_key(|&(ri, rk)| (ri.max(rk), ri, rk));
        let len = spatial[0].len();
        let elements = pairs
            .into_iter()
            .map(|(ri, rk)| {
                SpaceTimeData::new(
                    window.into(),
                    len,
                    vec![SpaceTimeTerm { spatial: spatial[so[ri]].clone(), profile: profiles[to[rk]].clone() }],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { window, elements })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// The first `k` elements.
    pub fn prefix(&self, k: usize) -> Self {
        Self { window: self.window, elements: self.elements[..k.min(self.len())].to_vec() }
    }

    /// `Σ c_k e_k`.
    pub fn combine(&self, coeffs: &DVector<f64>) -> Result<ExteriorControl> {
        let refs: Vec<&ExteriorControl> = self.elements.iter().collect();
        SpaceTimeData::combination(coeffs.as_slice(), &refs)
    }
}

/// Outcome of one Runge least-squares fit.
#[derive(Debug, Clone)]
pub struct RungeFit {
    pub coeffs: DVector<f64>,
    pub control: ExteriorControl,
    /// `‖P g - f‖ / ‖f‖` in the discrete `L²(Ω × (-T, T))` norm.
    pub residual: f64,
    /// `‖P g - f‖`.
    pub abs_residual: f64,
    pub target_norm: f64,
    pub rank: usize,
    /// Whether singular values were discarded.
    pub truncated: bool,
    pub solution: RotheSolution,
}

/// Responses of every basis element, ready for repeated least-squares fits.
///
/// The space-time inner product is `Σ_j τ_j u(t_j)ᵀ M v(t_j)` with trapezoid weights
/// `τ_j` on the Rothe nodes.
#[derive(Debug, Clone)]
pub struct RungeSystem {
    pub basis: ControlBasis,
    pub direction: Direction,
    pub grid: TimeGrid,
    pub solutions: Vec<RotheSolution>,
    weights: Vec<f64>,
    mass_factor: DMatrix<f64>,
    snapshots: DMatrix<f64>,
}

impl RungeSystem {
    pub fn new(ev: &Evolver<'_>, basis: ControlBasis, grid: &TimeGrid, direction: Direction) -> Result<Self> {
        if basis.is_empty() {
            return Err(FracError::InvalidParameter("empty control basis".into()));
        }
        let solutions = basis
            .elements
            .iter()
            .map(|g| match direction {
                Direction::Forward => ev.solve_forward(g, grid),
                Direction::Backward => ev.solve_dual(g, grid),
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = crate::dtn::trapezoid_weights(grid);
        let lower = SpdFactor::new(ev.asm.mass())?.lower();
        let mass_factor = lower.transpose();
        let n = ev.asm.dofs();
        let rows = (grid.steps + 1) * n;
        let mut snapshots = DMatrix::zeros(rows, solutions.len());
        for (k, sol) in solutions.iter().enumerate() {
            let col = Self::stack(&weights, &mass_factor, &sol.z);
            snapshots.set_column(k, &col);
        }
        Ok(Self { basis, direction, grid: *grid, solutions, weights, mass_factor, snapshots })
    }

    fn stack(weights: &[f64], lt: &DMatrix<f64>, z: &[DVector<f64>]) -> DVector<f64> {
        let n = lt.nrows();
        let mut out = DVector::zeros(weights.len() * n);
        for (j, w) in weights.iter().enumerate() {
            let v = lt * &z[j] * w.sqrt();
            out.rows_mut(j * n, n).copy_from(&v);
        }
        out
    }

    /// Coefficients of the interior target sampled at the Rothe nodes.
    pub fn target_nodes(&self, target: &SpaceTimeData) -> Result<Vec<DVector<f64>>> {
        if target.region != RegionTag::Omega || target.len != self.mass_factor.nrows() {
            return Err(FracError::InvalidParameter("Runge target must live on the domain hats".into()));
        }
        Ok((0..=self.grid.steps).map(|j| target.coeffs_at(self.grid.node(j))).collect())
    }

    /// Discrete `L²(Ω × (-T, T))` norm of a nodal sequence.
    pub fn norm(&self, z: &[DVector<f64>]) -> f64 {
        Self::stack(&self.weights, &self.mass_factor, z).norm()
    }

    /// `Σ c_k u_k`.
    pub fn combined_solution(&self, coeffs: &DVector<f64>) -> RotheSolution {
        let mut out = self.solutions[0].clone();
        for z in out.z.iter_mut().chain(out.loads.iter_mut()) {
            z.fill(0.0);
        }
        for (k, sol) in self.solutions.iter().enumerate().take(coeffs.len()) {
            for j in 0..out.z.len() {
                out.z[j].axpy(coeffs[k], &sol.z[j], 1.0);
                out.loads[j].axpy(coeffs[k], &sol.loads[j], 1.0);
            }
        }
        out
    }

    /// Least-squares fit of `target` using the first `k` basis elements.
    pub fn fit_prefix(&self, target: &SpaceTimeData, k: usize) -> Result<RungeFit> {
        let k = k.min(self.basis.len()).max(1);
        let nodes = self.target_nodes(target)?;
        let f = Self::stack(&self.weights, &self.mass_factor, &nodes);
        let target_norm = f.norm();
        let a = self.snapshots.columns(0, k).into_owned();
        let svd = a.clone().svd(true, true);
        let smax = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
        let u = svd.u.as_ref().expect("left singular vectors");
        let vt = svd.v_t.as_ref().expect("right singular vectors");
        let mut coeffs = DVector::zeros(k);
        let mut rank = 0;
        for (i, &sv) in svd.singular_values.iter().enumerate() {
            if sv > RUNGE_RCOND * smax && sv > 0.0 {
                rank += 1;
                let c = u.column(i).dot(&f) / sv;
                coeffs.axpy(c, &vt.row(i).transpose(), 1.0);
            }
        }
        let abs_residual = (&a * &coeffs - &f).norm();
        let control = self.basis.prefix(k).combine(&coeffs)?;
        Ok(RungeFit {
            residual: if target_norm > 0.0 { abs_residual / target_norm } else { 0.0 },
            abs_residual,
            target_norm,
            rank,
            truncated: rank < k,
            solution: self.combined_solution(&coeffs),
            coeffs,
            control,
        })
    }

    pub fn fit(&self, target: &SpaceTimeData) -> Result<RungeFit> {
        self.fit_prefix(target, self.basis.len())
    }

    /// Residuals for each nested prefix size.
    pub fn nested_residuals(&self, target: &SpaceTimeData, sizes: &[usize]) -> Result<Vec<(usize, f64)>> {
        sizes
            .par_iter()
            .map(|&k| self.fit_prefix(target, k).map(|f| (k.min(self.basis.len()), f.residual)))
            .collect()
    }
}

/// Interior target `1_{[a, b]}(t) φ(x)`.
pub fn slab_target<F: Fn(&Point) -> f64>(disc: &Discretization, a: f64, b: f64, phi: F) -> SpaceTimeData {
    SpaceTimeData::single(project(disc, RegionTag::Omega, phi), TimeProfile::Indicator { a, b })
}

/// DtN-difference data between a known pair (`ev1`) and the measured pair (`ev2`) for a
/// forward basis on `W1` and a dual basis on `W2`.
#[derive(Debug, Clone)]
pub struct ProbeSystem {
    /// Forward responses under the known pair.
    pub forward: RungeSystem,
    /// Dual responses under the measured pair.
    pub dual: RungeSystem,
    /// `data[(k, l)] = Σ_j τ_j ⟨(Λ₁ - Λ₂) g_k, h_l⟩(t_j)`.
    pub data: DMatrix<f64>,
    /// `max |q₂ - q₁|` over domain nodes and Rothe nodes.
    pub q_gap: f64,
    /// Interior parts of the measured forward solves of the forward basis.
    pub measured: Vec<RotheSolution>,
}

/// One localized probe of `∫_a^b ∫∫ G φ₁(y) φ₂(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeEstimate {
    pub estimate: f64,
    pub forward_residual: f64,
    pub dual_residual: f64,
    /// `max|q₂ - q₁| (‖φ̃₂‖ ‖u₁ - φ̃₁‖ + ‖u₁‖ ‖u₂* - φ̃₂‖)`, the size of the neglected potential term.
    pub q_term_bound: f64,
}

/// Smooth bumps of common radius at `y₀` (paired with `u₁`) and `x₀` (paired with `u₂*`)
/// on the time slab `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpProbe {
    pub y0: Point,
    pub x0: Point,
    pub radius: f64,
    pub slab: (f64, f64),
}

impl BumpProbe {
    fn support(&self, c: &Point, dim: usize) -> BoxRegion {
        let mut lo = ORIGIN;
        let mut hi = ORIGIN;
        for k in 0..dim {
            lo[k] = c[k] - self.radius;
            hi[k] = c[k] + self.radius;
        }
        BoxRegion::new(dim, lo, hi)
    }

    /// Checks disjoint supports inside the domain.
    pub fn validate(&self, disc: &Discretization) -> Result<()> {
        let dim = disc.dim();
        let s1 = self.support(&self.y0, dim);
        let s2 = self.support(&self.x0, dim);
        if s1.overlaps_open(&s2) {
            return Err(FracError::Precondition("probe supports overlap; separate the bump centres".into()));
        }
        let omega = &disc.geometry.omega;
        if !s1.is_subset_of(omega) || !s2.is_subset_of(omega) {
            return Err(FracError::Precondition("probe bumps must lie inside the domain".into()));
        }
        if self.slab.0 >= self.slab.1 {
            return Err(FracError::Precondition("empty probe slab".into()));
        }
        Ok(())
    }

    pub fn targets(&self, disc: &Discretization) -> (SpaceTimeData, SpaceTimeData) {
        let r2 = self.radius * self.radius;
        let bump = |c: Point| move |x: &Point| {
            let d = point::sub(x, &c);
            smooth_bump(point::dot(&d, &d) / r2)
        };
        (
            slab_target(disc, self.slab.0, self.slab.1, bump(self.y0)),
            slab_target(disc, self.slab.0, self.slab.1, bump(self.x0)),
        )
    }
}

impl ProbeSystem {
    /// `ev2` plays the unknown pair: its forward solves are only read through the DtN map.
    pub fn new(
        ev1: &Evolver<'_>,
        ev2: &Evolver<'_>,
        forward_basis: ControlBasis,
        dual_basis: ControlBasis,
        grid: &TimeGrid,
    ) -> Result<Self> {
        if forward_basis.window != Window::W1 || dual_basis.window != Window::W2 {
            return Err(FracError::InvalidParameter("forward basis must live on W1 and dual basis on W2".into()));
        }
        let measured: Vec<RotheSolution> = forward_basis
            .elements
            .iter()
            .map(|g| dtn_map(ev2, g, grid).map(|r| r.interior))
            .collect::<Result<_>>()?;
        let forward = RungeSystem::new(ev1, forward_basis, grid, Direction::Forward)?;
        let dual = RungeSystem::new(ev2, dual_basis, grid, Direction::Backward)?;
        let data = difference_pairing_matrix(ev1, &forward.solutions, &measured, &dual.basis.elements, Window::W2)?;
        let q_gap = Self::q_gap(ev1, ev2, grid);
        Ok(Self { forward, dual, data, q_gap, measured })
    }

    fn q_gap(ev1: &Evolver<'_>, ev2: &Evolver<'_>, grid: &TimeGrid) -> f64 {
        let g = ev1.asm.grid();
        let mut q_gap = 0.0f64;
        for j in 0..=grid.steps {
            let t = grid.node(j);
            for i in 0..g.interior_count() {
                let x = g.node(&g.interior_multi(i));
                q_gap = q_gap.max((ev2.pots.electric.value(&x, t) - ev1.pots.electric.value(&x, t)).abs());
            }
        }
        q_gap
    }

    /// Same measurements and dual responses, new known pair.
    pub fn rebased(&self, ev1: &Evolver<'_>, ev2: &Evolver<'_>) -> Result<Self> {
        let forward = RungeSystem::new(ev1, self.forward.basis.clone(), &self.forward.grid, Direction::Forward)?;
        let data =
            difference_pairing_matrix(ev1, &forward.solutions, &self.measured, &self.dual.basis.elements, Window::W2)?;
        Ok(Self {
            q_gap: Self::q_gap(ev1, ev2, &self.forward.grid),
            forward,
            dual: self.dual.clone(),
            data,
            measured: self.measured.clone(),
        })
    }

    /// `c₁ᵀ D c₂` for the Runge fits of the two slab targets.
    pub fn probe_targets(&self, phi1: &SpaceTimeData, phi2: &SpaceTimeData) -> Result<(ProbeEstimate, RungeFit, RungeFit)> {
        let f1 = self.forward.fit(phi1)?;
        let f2 = self.dual.fit(phi2)?;
        let estimate = f1.coeffs.dot(&(&self.data * &f2.coeffs));
        let u1 = self.forward.norm(&f1.solution.z);
        let q_term_bound = self.q_gap * (f2.target_norm * f1.abs_residual + u1 * f2.abs_residual);
        Ok((
            ProbeEstimate { estimate, forward_residual: f1.residual, dual_residual: f2.residual, q_term_bound },
            f1,
            f2,
        ))
    }

    pub fn probe(&self, disc: &Discretization, probe: &BumpProbe) -> Result<ProbeEstimate> {
        probe.validate(disc)?;
        let (p1, p2) = probe.targets(disc);
        Ok(self.probe_targets(&p1, &p2)?.0)
    }
}

/// Settings of the cosine inversion at one midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineInversion {
    /// Probe offset length `δ`.
    pub delta: f64,
    /// Allowed excess of `|ρ|` over 1 before the data are rejected.
    pub consistency_tol: f64,
    /// Required distance of `arccos ρ` from the branch point `π`.
    pub margin: f64,
}

impl CosineInversion {
    pub fn new(delta: f64) -> Self {
        Self { delta, consistency_tol: 1e-9, margin: 0.2 }
    }

    fn angle(&self, rho: f64) -> Result<f64> {
        if !rho.is_finite() || rho.abs() > 1.0 + self.consistency_tol {
            return Err(FracError::DataInconsistency(format!("cosine sample {rho} outside [-1, 1]")));
        }
        let theta = rho.clamp(-1.0, 1.0).acos();
        if theta > std::f64::consts::PI - self.margin {
            return Err(FracError::ProbeScale(format!(
                "arccos branch margin below {} rad at δ = {}; reduce δ",
                self.margin, self.delta
            )));
        }
        Ok(theta)
    }
}

fn unit(k: usize) -> Point {
    let mut e = ORIGIN;
    e[k] = 1.0;
    e
}

/// Offsets `δ e_k` followed, for `n = 2`, by `δ (e_0 + e_1)` and `δ (e_0 - e_1)`.
pub fn probe_offsets(dim: usize, delta: f64) -> Vec<Point> {
    let mut out: Vec<Point> = (0..dim).map(|k| point::scale(&unit(k), delta)).collect();
    for l in 1..dim {
        out.push(point::scale(&point::add(&unit(0), &unit(l)), delta));
        out.push(point::scale(&point::sub(&unit(0), &unit(l)), delta));
    }
    out
}

/// Flips `a` so that its largest-magnitude component is nonnegative.
pub fn canonical_sign(a: &Point, dim: usize) -> Point {
    let k = (0..dim).fold(0, |best, k| if a[k].abs() > a[best].abs() { k } else { best });
    if a[k] < 0.0 {
        point::scale(a, -1.0)
    } else {
        *a
    }
}

/// `±A(m, t)` from cosine samples `ρ(m, d, t) = cos(d · A(m, t))`.
pub fn recover_a_from_r<F>(sampler: F, m: &Point, dim: usize, t: f64, opts: &CosineInversion) -> Result<Point>
where
    F: Fn(&Point, &Point, f64) -> Result<f64>,
{
    let d = opts.delta;
    let offsets = probe_offsets(dim, d);
    let mut mags = [0.0; MAX_DIM];
    for k in 0..dim {
        mags[k] = opts.angle(sampler(m, &offsets[k], t)?)? / d;
    }
    let mut a = ORIGIN;
    a[0] = mags[0];
    for l in 1..dim {
        let plus = opts.angle(sampler(m, &offsets[dim + 2 * (l - 1)], t)?)? / d;
        let minus = opts.angle(sampler(m, &offsets[dim + 2 * (l - 1) + 1], t)?)? / d;
        let (mk, ml) = (mags[0], mags[l]);
        let same = (plus - (mk + ml)).abs() + (minus - (mk - ml).abs()).abs();
        let opposite = (plus - (mk - ml).abs()).abs() + (minus - (mk + ml)).abs();
        a[l] = if same <= opposite { ml } else { -ml };
    }
    Ok(canonical_sign(&a, dim))
}

/// As [`recover_a_from_r`], halving `δ` while the branch margin is violated.
pub fn recover_a_adaptive<F>(
    sampler: F,
    m: &Point,
    dim: usize,
    t: f64,
    opts: &CosineInversion,
    max_halvings: usize,
) -> Result<(Point, f64)>
where
    F: Fn(&Point, &Point, f64) -> Result<f64>,
{
    let mut o = *opts;
    for _ in 0..=max_halvings {
        match recover_a_from_r(&sampler, m, dim, t, &o) {
            Ok(a) => return Ok((a, o.delta)),
            Err(FracError::ProbeScale(_)) => o.delta *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(FracError::ProbeScale(format!("branch margin still violated at δ = {}", o.delta)))
}

/// `max |cos(d · a) - ρ(m, d, t)|` over the probe offsets, for `a` and `-a` alike.
pub fn resynthesis_deviation<F>(sampler: F, m: &Point, a: &Point, dim: usize, t: f64, delta: f64) -> Result<f64>
where
    F: Fn(&Point, &Point, f64) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for d in probe_offsets(dim, delta) {
        let rho = sampler(m, &d, t)?;
        for sign in [1.0, -1.0] {
            let phase = sign * point::dot(&d, a);
            worst = worst.max((phase.cos() - rho).abs());
        }
    }
    Ok(worst)
}

/// Aligns neighbouring samples and fixes the global sign: the first component of the
/// largest-magnitude sample is made nonnegative.
pub fn gauge_field(samples: &mut [Point], dim: usize) {
    for i in 1..samples.len() {
        if point::dot(&samples[i], &samples[i - 1]) < 0.0 {
            samples[i] = point::scale(&samples[i], -1.0);
        }
    }
    let Some(big) = samples
        .iter()
        .copied()
        .max_by(|a, b| point::norm(a).total_cmp(&point::norm(b)))
    else {
        return;
    };
    if big[0] < 0.0 || (big[0] == 0.0 && canonical_sign(&big, dim) != big) {
        for s in samples.iter_mut() {
            *s = point::scale(s, -1.0);
        }
    }
}
