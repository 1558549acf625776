//! End-to-end recovery of `±A` and `q` from simulated exterior data.
//!
//! A known reference pair (`ev_known`, usually `A = 0`) is compared with the pair behind
//! the measurements (`ev_truth`, read only through its DtN map and dual responses).
//! For each time slab the difference kernel is probed with bump pairs, `R` is formed by
//! dividing by `2K`, and `±A` follows from the cosine inversion. The potential is then
//! fitted by linear least squares with the recovered `A` as the new reference.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::control::{SpaceTimeData, TimeProfile};
use crate::dtn::trapezoid_weights;
use crate::error::{FracError, Result};
use crate::evolve::{Evolver, TimeGrid};
use crate::grid::{project, BoxRegion, Discretization, RegionTag, Window};
use crate::inverse::{
    gauge_field, recover_a_from_r, slab_target, time_bells, BumpProbe, ControlBasis, CosineInversion, ProbeSystem,
};
use crate::kernel::{cos_modulation, smooth_bump, ElectricPotential, MagneticPotential, PotentialPair};
use crate::point::{self, Point, MAX_DIM, ORIGIN};

/// Bells resolving the edges of `[a, b]` on the Rothe grid plus `extra` tiling bells;
/// profiles leaving `(-horizon, horizon)` are dropped.
pub fn slab_profiles(a: f64, b: f64, h: f64, horizon: f64, extra: usize) -> Vec<TimeProfile> {
    let mut v = vec![
        TimeProfile::CosineBell { a: a - h, b: a + h },
        TimeProfile::CosineBell { a: b, b: b + 2.0 * h },
        TimeProfile::CosineBell { a: a - h, b: b + h },
        TimeProfile::CosineBell { a, b: a + 2.0 * h },
        TimeProfile::CosineBell { a: b - h, b: b + h },
        TimeProfile::CosineBell { a: a - 2.0 * h, b: a },
    ];
    v.extend(time_bells(horizon, extra));
    v.retain(|p| p.supported_inside(horizon));
    v
}

/// Consecutive slabs of the given width covering `[lo, hi]`.
pub fn tile_slabs(lo: f64, hi: f64, width: f64) -> Vec<(f64, f64)> {
    let count = ((hi - lo) / width).round().max(1.0) as usize;
    let w = (hi - lo) / count as f64;
    (0..count).map(|k| (lo + k as f64 * w, lo + (k + 1) as f64 * w)).collect()
}

/// Tensor lattice of points from per-axis coordinates.
pub fn lattice(axes: &[Vec<f64>]) -> Vec<Point> {
    let mut out = vec![ORIGIN];
    for (k, axis) in axes.iter().enumerate() {
        out = out
            .iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = *p;
                    q[k] = x;
                    q
                })
            })
            .collect();
    }
    out
}

/// Pipeline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionSettings {
    /// Spatial controls per axis on each window.
    pub per_axis: usize,
    /// Tiling bells added to the slab-edge bells.
    pub extra_bells: usize,
    /// Slabs probed for `A`.
    pub a_slabs: Vec<(f64, f64)>,
    /// Slabs tiling `(-T, T)` for the potential.
    pub q_slabs: Vec<(f64, f64)>,
    /// Centre distance of the two bumps of a probe (the cosine probe scale `δ`).
    pub probe_separation: f64,
    pub probe_radius: f64,
    /// Per-axis midpoint coordinates.
    pub midpoint_axes: Vec<Vec<f64>>,
    /// Potential cells per axis; must divide the element count per axis.
    pub q_cells: usize,
    /// Relative singular-value cutoff of the potential fit.
    pub q_rcond: f64,
    /// Tolerance on `|ρ| - 1` for probe-derived cosines.
    pub consistency_tol: f64,
    /// Alternating rounds; each `A` step after the first uses the previous `(A, q)`
    /// estimates as reference pair.
    pub rounds: usize,
}

impl InversionSettings {
    /// Desk defaults for a domain `[-1, 1]^n` and horizon `T`.
    pub fn desk(disc: &Discretization, horizon: f64) -> Self {
        let omega = &disc.geometry.omega;
        let dim = disc.dim();
        let separation = 0.8;
        let radius = 0.3;
        let reach = 0.5 * separation + radius;
        let midpoint_axes = (0..dim)
            .map(|k| {
                let lo = omega.lo[k] + reach;
                let hi = omega.hi[k] - reach;
                let n = 5;
                (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
            })
            .collect();
        Self {
            per_axis: 4,
            extra_bells: 2,
            a_slabs: tile_slabs(-0.5 * horizon, 0.5 * horizon, 0.25 * horizon),
            q_slabs: tile_slabs(-horizon, horizon, 0.25 * horizon),
            probe_separation: separation,
            probe_radius: radius,
            midpoint_axes,
            q_cells: 8,
            q_rcond: 1e-2,
            consistency_tol: 0.25,
            rounds: 2,
        }
    }
}

/// One probe used by the `A` step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRecord {
    pub slab: (f64, f64),
    pub midpoint: Point,
    pub offset: Point,
    pub estimate: f64,
    /// `G` estimate at the bump centres.
    pub g_estimate: f64,
    pub rho: f64,
    pub forward_residual: f64,
    pub dual_residual: f64,
    pub q_term_bound: f64,
}

/// Output of the pipeline.
#[derive(Debug, Clone)]
pub struct RecoveredField {
    pub dim: usize,
    pub a_times: Vec<f64>,
    pub midpoint_axes: Vec<Vec<f64>>,
    pub midpoints: Vec<Point>,
    /// `a_est[k][i]` at `a_times[k]`, `midpoints[i]`, in canonical gauge.
    pub a_est: Vec<Vec<Point>>,
    pub q_times: Vec<f64>,
    pub cell_centers: Vec<Point>,
    /// `q_est[k][c]` at `q_times[k]`, `cell_centers[c]`.
    pub q_est: Vec<Vec<f64>>,
    /// `q_est - q_known` at the same samples.
    pub dq_est: Vec<Vec<f64>>,
    pub probes: Vec<ProbeRecord>,
    pub q_condition: f64,
    pub q_residual: f64,
    /// Singular values of the potential design matrix, descending.
    pub q_singular_values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl RecoveredField {
    /// `min_± ‖a_est ∓ A‖ / ‖A‖` over the samples.
    pub fn a_error(&self, truth: &MagneticPotential) -> f64 {
        let mut plus = 0.0;
        let mut minus = 0.0;
        let mut norm = 0.0;
        for (k, t) in self.a_times.iter().enumerate() {
            for (i, m) in self.midpoints.iter().enumerate() {
                let a = truth.value(m, *t);
                let e = &self.a_est[k][i];
                for c in 0..self.dim {
                    plus += (e[c] - a[c]).powi(2);
                    minus += (e[c] + a[c]).powi(2);
                    norm += a[c] * a[c];
                }
            }
        }
        (plus.min(minus) / norm).sqrt()
    }

    /// `‖q_est - q‖ / ‖q‖` over the samples.
    pub fn q_error(&self, truth: &ElectricPotential) -> f64 {
        let (mut err, mut norm) = (0.0, 0.0);
        for (k, t) in self.q_times.iter().enumerate() {
            for (c, x) in self.cell_centers.iter().enumerate() {
                let q = truth.value(x, *t);
                err += (self.q_est[k][c] - q).powi(2);
                norm += q * q;
            }
        }
        (err / norm).sqrt()
    }

    /// Relative error of the recovered difference `q - q_known`; the RMS error when the
    /// true difference vanishes.
    pub fn dq_error(&self, known: &ElectricPotential, truth: &ElectricPotential) -> f64 {
        let (mut err, mut norm) = (0.0, 0.0);
        for (k, t) in self.q_times.iter().enumerate() {
            for (c, x) in self.cell_centers.iter().enumerate() {
                let d = truth.value(x, *t) - known.value(x, *t);
                err += (self.dq_est[k][c] - d).powi(2);
                norm += d * d;
            }
        }
        if norm > 0.0 {
            (err / norm).sqrt()
        } else {
            (err / (self.q_times.len() * self.cell_centers.len()) as f64).sqrt()
        }
    }

    /// Piecewise-multilinear interpolant of the recovered field, zero on `∂Ω`, linear in
    /// time between slab centres.
    pub fn magnetic_potential(&self, omega: &BoxRegion) -> MagneticPotential {
        let dim = self.dim;
        let axes: Vec<Vec<f64>> = (0..dim)
            .map(|k| {
                let mut v = vec![omega.lo[k]];
                v.extend(self.midpoint_axes[k].iter().copied());
                v.push(omega.hi[k]);
                v
            })
            .collect();
        let inner: Vec<usize> = self.midpoint_axes.iter().map(|a| a.len()).collect();
        let times = self.a_times.clone();
        let values = self.a_est.clone();
        let lookup = move |k: usize, idx: &[usize; MAX_DIM]| -> Point {
            for d in 0..dim {
                if idx[d] == 0 || idx[d] == inner[d] + 1 {
                    return ORIGIN;
                }
            }
            let mut flat = 0;
            for d in 0..dim {
                flat = flat * inner[d] + (idx[d] - 1);
            }
            values[k][flat]
        };
        MagneticPotential::from_fn(omega.clone(), "recovered", move |x, t| {
            let mut cell = [0usize; MAX_DIM];
            let mut frac = [0.0; MAX_DIM];
            for d in 0..dim {
                let ax = &axes[d];
                let j = ax.partition_point(|&v| v <= x[d]).clamp(1, ax.len() - 1) - 1;
                cell[d] = j;
                frac[d] = ((x[d] - ax[j]) / (ax[j + 1] - ax[j])).clamp(0.0, 1.0);
            }
            let spatial = |k: usize| -> Point {
                let mut out = ORIGIN;
                for corner in 0..(1usize << dim) {
                    let mut idx = [0usize; MAX_DIM];
                    let mut w = 1.0;
                    for d in 0..dim {
                        let bit = (corner >> d) & 1;
                        idx[d] = cell[d] + bit;
                        w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                    }
                    if w != 0.0 {
                        out = point::add(&out, &point::scale(&lookup(k, &idx), w));
                    }
                }
                out
            };
            let j = times.partition_point(|&v| v <= t);
            if j == 0 {
                spatial(0)
            } else if j == times.len() {
                spatial(times.len() - 1)
            } else {
                let th = (t - times[j - 1]) / (times[j] - times[j - 1]);
                point::add(&point::scale(&spatial(j - 1), 1.0 - th), &point::scale(&spatial(j), th))
            }
        })
    }
}

fn slab_system(
    ev_known: &Evolver<'_>,
    ev_truth: &Evolver<'_>,
    grid: &TimeGrid,
    settings: &InversionSettings,
    slab: (f64, f64),
) -> Result<ProbeSystem> {
    let disc = &ev_known.asm.disc;
    let prof = slab_profiles(slab.0, slab.1, grid.h, grid.horizon, settings.extra_bells);
    let b1 = ControlBasis::tensor(disc, Window::W1, settings.per_axis, &prof)?;
    let b2 = ControlBasis::tensor(disc, Window::W2, settings.per_axis, &prof)?;
    ProbeSystem::new(ev_known, ev_truth, b1, b2, grid)
}

fn slab_measure(grid: &TimeGrid, slab: (f64, f64)) -> f64 {
    trapezoid_weights(grid)
        .iter()
        .enumerate()
        .filter(|(j, _)| {
            let t = grid.node(*j);
            t >= slab.0 && t <= slab.1
        })
        .map(|(_, w)| w)
        .sum()
}

fn check_slab(grid: &TimeGrid, slab: (f64, f64)) -> Result<()> {
    let on_node = |t: f64| grid.node_index(t).is_some();
    if !on_node(slab.0) || !on_node(slab.1) || slab.0 >= slab.1 {
        return Err(FracError::InvalidParameter(format!(
            "slab [{}, {}] must be a nonempty interval between Rothe nodes",
            slab.0, slab.1
        )));
    }
    Ok(())
}

struct AStep {
    times: Vec<f64>,
    samples: Vec<Vec<Point>>,
    probes: Vec<ProbeRecord>,
    warnings: Vec<String>,
    systems: HashMap<(u64, u64), ProbeSystem>,
}

/// Samples `±A` on the midpoint lattice of every slab, with `ev_ref` as the reference pair.
fn recover_a(
    ev_ref: &Evolver<'_>,
    ev_truth: &Evolver<'_>,
    grid: &TimeGrid,
    settings: &InversionSettings,
    midpoints: &[Point],
    previous: Option<&[Vec<Point>]>,
) -> Result<AStep> {
    let asm = ev_ref.asm;
    let disc = &asm.disc;
    let dim = disc.dim();
    let vol = disc.omega.cell_volume();
    let opts = CosineInversion {
        delta: settings.probe_separation,
        consistency_tol: settings.consistency_tol,
        margin: 0.2,
    };
    let mut out = AStep {
        times: Vec::new(),
        samples: Vec::new(),
        probes: Vec::new(),
        warnings: Vec::new(),
        systems: HashMap::new(),
    };
    for (k, &slab) in settings.a_slabs.iter().enumerate() {
        let sys = slab_system(ev_ref, ev_truth, grid, settings, slab)?;
        let tc = 0.5 * (slab.0 + slab.1);
        let measure = slab_measure(grid, slab);
        let log = Mutex::new(Vec::new());
        let sampler = |m: &Point, off: &Point, _t: f64| -> Result<f64> {
            let half = point::scale(off, 0.5);
            let probe = BumpProbe {
                y0: point::sub(m, &half),
                x0: point::add(m, &half),
                radius: settings.probe_radius,
                slab,
            };
            probe.validate(disc)?;
            let (p1, p2) = probe.targets(disc);
            let (est, _, _) = sys.probe_targets(&p1, &p2)?;
            let int1 = p1.terms[0].spatial.sum() * vol;
            let int2 = p2.terms[0].spatial.sum() * vol;
            let g_estimate = est.estimate / (measure * int1 * int2);
            let k = asm.params.kernel_at_distance(point::norm(off));
            let known = cos_modulation(&probe.x0, &probe.y0, tc, &ev_ref.pots.magnetic);
            let rho = known + g_estimate / (2.0 * k);
            log.lock().expect("probe log").push(ProbeRecord {
                slab,
                midpoint: *m,
                offset: *off,
                estimate: est.estimate,
                g_estimate,
                rho,
                forward_residual: est.forward_residual,
                dual_residual: est.dual_residual,
                q_term_bound: est.q_term_bound,
            });
            Ok(rho)
        };
        let mut samples = midpoints
            .par_iter()
            .map(|m| recover_a_from_r(sampler, m, dim, tc, &opts))
            .collect::<Result<Vec<_>>>()?;
        gauge_field(&mut samples, dim);
        let anchor = previous.map(|p| &p[k]).or(out.samples.last());
        if let Some(prev) = anchor {
            let dot: f64 = samples.iter().zip(prev).map(|(a, b)| point::dot(a, b)).sum();
            if dot < 0.0 {
                samples.iter_mut().for_each(|s| *s = point::scale(s, -1.0));
            }
        }
        let mut log = log.into_inner().expect("probe log");
        if log.iter().any(|p| p.rho.abs() > 1.0) {
            out.warnings.push(format!("slab [{}, {}]: probe cosines outside [-1, 1] were clamped", slab.0, slab.1));
        }
        out.probes.append(&mut log);
        out.samples.push(samples);
        out.times.push(tc);
        out.systems.insert((slab.0.to_bits(), slab.1.to_bits()), sys);
    }
    Ok(out)
}

/// Runs the full pipeline.
pub fn run_inversion(
    ev_known: &Evolver<'_>,
    ev_truth: &Evolver<'_>,
    grid: &TimeGrid,
    settings: &InversionSettings,
) -> Result<RecoveredField> {
    run_pipeline(ev_known, ev_truth, grid, settings, false)
}

/// One magnetic pass against the known pair; the potential fields stay empty.
pub fn recover_magnetic(
    ev_known: &Evolver<'_>,
    ev_truth: &Evolver<'_>,
    grid: &TimeGrid,
    settings: &InversionSettings,
) -> Result<RecoveredField> {
    run_pipeline(ev_known, ev_truth, grid, settings, true)
}

fn run_pipeline(
    ev_known: &Evolver<'_>,
    ev_truth: &Evolver<'_>,
    grid: &TimeGrid,
    settings: &InversionSettings,
    magnetic_only: bool,
) -> Result<RecoveredField> {
    if !std::ptr::eq(ev_known.asm, ev_truth.asm) {
        return Err(FracError::InvalidParameter("known and measured pairs must share the discretization".into()));
    }
    let asm = ev_known.asm;
    let disc = &asm.disc;
    let dim = disc.dim();
    if settings.midpoint_axes.len() != dim {
        return Err(FracError::InvalidParameter("one midpoint axis per dimension required".into()));
    }
    for s in settings.a_slabs.iter().chain(&settings.q_slabs) {
        check_slab(grid, *s)?;
    }
    let midpoints = lattice(&settings.midpoint_axes);
    let mut field = RecoveredField {
        dim,
        a_times: Vec::new(),
        midpoint_axes: settings.midpoint_axes.clone(),
        midpoints,
        a_est: Vec::new(),
        q_times: Vec::new(),
        cell_centers: Vec::new(),
        q_est: Vec::new(),
        dq_est: Vec::new(),
        probes: Vec::new(),
        q_condition: f64::NAN,
        q_residual: f64::NAN,
        q_singular_values: Vec::new(),
        warnings: Vec::new(),
    };
    if settings.rounds == 0 {
        return Err(FracError::InvalidParameter("at least one recovery round required".into()));
    }
    let cells = potential_cells(disc, settings.q_cells)?;
    field.cell_centers = cells.iter().map(|c| c.center()).collect();
    field.q_times = settings.q_slabs.iter().map(|s| 0.5 * (s.0 + s.1)).collect();
    let mut a_ref = ev_known.pots.magnetic.clone();
    let mut q_ref = ev_known.pots.electric.clone();
    for round in 0..settings.rounds {
        let ev_a = Evolver::new(asm, PotentialPair::new(a_ref.clone(), q_ref.clone()), ev_known.options);
        let previous = (round > 0).then_some(field.a_est.as_slice());
        let step = recover_a(&ev_a, ev_truth, grid, settings, &field.midpoints, previous)?;
        field.a_times = step.times;
        field.a_est = step.samples;
        field.probes = step.probes;
        field.warnings = step.warnings;
        a_ref = field.magnetic_potential(&disc.geometry.omega);
        if magnetic_only {
            return Ok(field);
        }
        let ev_q = Evolver::new(asm, PotentialPair::new(a_ref.clone(), q_ref.clone()), ev_known.options);
        let q = recover_q(&ev_q, ev_truth, grid, settings, &cells, step.systems)?;
        field.q_est = q.values;
        field.q_condition = q.condition;
        field.q_residual = q.residual;
        field.q_singular_values = q.singular_values;
        field.warnings.extend(q.warnings);
        let floor = 0.5 * ev_known.pots.electric.lower_bound();
        let (electric, clamped) = piecewise_potential(settings, &cells, &field.q_est, floor)?;
        if clamped {
            field.warnings.push(format!("round {round}: recovered potential clamped at {floor} for the next reference"));
        }
        q_ref = electric;
    }
    field.dq_est = field
        .q_times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            field.cell_centers.iter().enumerate().map(|(c, x)| field.q_est[k][c] - ev_known.pots.electric.value(x, t)).collect()
        })
        .collect();
    Ok(field)
}

fn slab_index(slabs: &[(f64, f64)], t: f64) -> Option<usize> {
    let last = slabs.len().checked_sub(1)?;
    slabs.iter().enumerate().position(|(k, &(a, b))| t >= a && (t < b || (k == last && t <= b)))
}

/// Cellwise constant potential from `values[slab][cell]`, floored at `floor`.
fn piecewise_potential(
    settings: &InversionSettings,
    cells: &[BoxRegion],
    values: &[Vec<f64>],
    floor: f64,
) -> Result<(ElectricPotential, bool)> {
    let clamped = values.iter().flatten().any(|&v| v < floor);
    let cells = cells.to_vec();
    let slabs = settings.q_slabs.clone();
    let values: Vec<Vec<f64>> = values.iter().map(|r| r.iter().map(|v| v.max(floor)).collect()).collect();
    let q = ElectricPotential::from_fn(floor, "recovered", move |x, t| {
        let k = slab_index(&slabs, t).unwrap_or(if t < slabs[0].0 { 0 } else { slabs.len() - 1 });
        let c = cells.iter().position(|c| c.contains_closed(x)).unwrap_or(0);
        values[k][c]
    })?;
    Ok((q, clamped))
}

fn potential_cells(disc: &Discretization, cells: usize) -> Result<Vec<BoxRegion>> {
    let g = &disc.omega;
    let dim = disc.dim();
    for k in 0..dim {
        if cells == 0 || !g.cells[k].is_multiple_of(cells) {
            return Err(FracError::InvalidParameter(format!(
                "{cells} potential cells do not align with {} elements per axis",
                g.cells[k]
            )));
        }
    }
    let omega = &disc.geometry.omega;
    let axes: Vec<Vec<f64>> =
        (0..dim).map(|k| (0..cells).map(|i| omega.lo[k] + i as f64 * omega.width(k) / cells as f64).collect()).collect();
    Ok(lattice(&axes)
        .into_iter()
        .map(|lo| {
            let mut hi = lo;
            for k in 0..dim {
                hi[k] = lo[k] + omega.width(k) / cells as f64;
            }
            BoxRegion::new(dim, lo, hi)
        })
        .collect())
}

struct QStep {
    values: Vec<Vec<f64>>,
    condition: f64,
    residual: f64,
    singular_values: Vec<f64>,
    warnings: Vec<String>,
}

/// Fits `q_truth - q_ref` on cells × slabs from `∫∫ (q₂ - q₁) u₁ u₂* = -(DtN difference)`
/// with the design matrix built from the actual Runge approximants.
fn recover_q(
    ev_ref: &Evolver<'_>,
    ev_truth: &Evolver<'_>,
    grid: &TimeGrid,
    settings: &InversionSettings,
    cells: &[BoxRegion],
    mut systems: HashMap<(u64, u64), ProbeSystem>,
) -> Result<QStep> {
    let asm = ev_ref.asm;
    let disc = &asm.disc;
    let dim = disc.dim();
    let cell_mass: Vec<DMatrix<f64>> = cells
        .iter()
        .map(|c| {
            let c = c.clone();
            asm.domain_weighted_mass(move |x| if c.contains_closed(x) { 1.0 } else { 0.0 })
        })
        .collect();
    let nslab = settings.q_slabs.len();
    let trap = trapezoid_weights(grid);
    let unknowns = cells.len() * nslab;
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let ones = project(disc, RegionTag::Omega, |_| 1.0);

    for &slab in &settings.q_slabs {
        let key = (slab.0.to_bits(), slab.1.to_bits());
        let sys = match systems.remove(&key) {
            Some(s) => s.rebased(ev_ref, ev_truth)?,
            None => slab_system(ev_ref, ev_truth, grid, settings, slab)?,
        };
        let bumps: Vec<SpaceTimeData> = cells
            .iter()
            .map(|cell| {
                let c = cell.center();
                let r2: f64 = (0..dim).map(|k| (0.5 * cell.width(k)).powi(2)).fold(0.0, f64::max);
                slab_target(disc, slab.0, slab.1, |x| {
                    let d = point::sub(x, &c);
                    smooth_bump(point::dot(&d, &d) / r2)
                })
            })
            .collect();
        let mut duals = bumps.clone();
        duals.push(SpaceTimeData::single(ones.clone(), TimeProfile::Indicator { a: slab.0, b: slab.1 }));
        let forward = bumps.par_iter().map(|f| sys.forward.fit(f)).collect::<Result<Vec<_>>>()?;
        let dual = duals.par_iter().map(|f| sys.dual.fit(f)).collect::<Result<Vec<_>>>()?;
        // M_c w_i(t_j) for every forward fit, cell and node
        let weighted: Vec<Vec<Vec<DVector<f64>>>> = forward
            .par_iter()
            .map(|f| cell_mass.iter().map(|m| f.solution.z.iter().map(|w| m * w).collect()).collect())
            .collect();
        let pairs: Vec<(usize, usize)> =
            (0..forward.len()).flat_map(|i| (0..dual.len()).map(move |l| (i, l))).collect();
        let lines: Vec<(DVector<f64>, f64)> = pairs
            .par_iter()
            .map(|&(i, l)| {
                let e = forward[i].coeffs.dot(&(&sys.data * &dual[l].coeffs));
                let mut row = DVector::zeros(unknowns);
                for j in 0..=grid.steps {
                    let t = grid.node(j);
                    let Some(k) = slab_index(&settings.q_slabs, t) else { continue };
                    let v = &dual[l].solution.z[j];
                    for ci in 0..cells.len() {
                        row[k * cells.len() + ci] -= trap[j] * v.dot(&weighted[i][ci][j]);
                    }
                }
                (row, e)
            })
            .collect();
        for (row, e) in lines {
            rows.push(row);
            rhs.push(e);
        }
    }

    let z = DMatrix::from_fn(rows.len(), unknowns, |i, j| rows[i][j]);
    let e = DVector::from_vec(rhs);
    let svd = z.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
    let u = svd.u.as_ref().expect("left singular vectors");
    let vt = svd.v_t.as_ref().expect("right singular vectors");
    let mut beta = DVector::zeros(unknowns);
    let mut smin = smax;
    let mut dropped = 0;
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv > settings.q_rcond * smax {
            smin = smin.min(sv);
            beta.axpy(u.column(i).dot(&e) / sv, &vt.row(i).transpose(), 1.0);
        } else {
            dropped += 1;
        }
    }
    let mut warnings = Vec::new();
    if dropped > 0 {
        warnings.push(format!(
            "potential fit: {dropped} of {unknowns} singular values below {:.1e} relative were discarded (condition {:.2e})",
            settings.q_rcond,
            smax / svd.singular_values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
        ));
    }
    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let en = e.norm();
    let values = settings
        .q_slabs
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let t = 0.5 * (s.0 + s.1);
            cells
                .iter()
                .enumerate()
                .map(|(c, cell)| ev_ref.pots.electric.value(&cell.center(), t) + beta[k * cells.len() + c])
                .collect()
        })
        .collect();
    Ok(QStep {
        values,
        condition: smax / smin,
        residual: if en > 0.0 { (&z * &beta - &e).norm() / en } else { 0.0 },
        singular_values,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lattice_is_row_major_tensor_product() {
        let pts = lattice(&[vec![0.0, 1.0], vec![2.0, 3.0, 4.0]]);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0][..2], [0.0, 2.0]);
        assert_eq!(pts[1][..2], [0.0, 3.0]);
        assert_eq!(pts[5][..2], [1.0, 4.0]);
    }

    #[test]
    fn slab_profiles_stay_inside_horizon() {
        for p in slab_profiles(-1.0, -0.5, 0.125, 1.0, 3) {
            assert!(p.supported_inside(1.0));
        }
        assert_eq!(slab_profiles(-0.5, 0.5, 0.0625, 1.0, 2).len(), 8);
    }

    #[test]
    fn slab_index_is_half_open() {
        let slabs = tile_slabs(-1.0, 1.0, 0.5);
        assert_eq!(slab_index(&slabs, -1.0), Some(0));
        assert_eq!(slab_index(&slabs, -0.5), Some(1));
        assert_eq!(slab_index(&slabs, 1.0), Some(3));
        assert_eq!(slab_index(&slabs, 1.5), None);
    }

    proptest! {
        #[test]
        fn tiles_cover_the_interval(lo in -2.0f64..0.0, len in 0.1f64..3.0, w in 0.05f64..1.0) {
            let s = tile_slabs(lo, lo + len, w);
            prop_assert!((s[0].0 - lo).abs() < 1e-12);
            prop_assert!((s.last().unwrap().1 - (lo + len)).abs() < 1e-12);
            for pair in s.windows(2) {
                prop_assert!((pair[0].1 - pair[1].0).abs() < 1e-12);
            }
        }
    }
}
