//! Verification suites: each returns pass/fail rows against explicit tolerances plus
//! plot-ready tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::Assembler;
use crate::config::Tolerances;
use crate::control::{ExteriorControl, SpaceTimeData, TimeProfile};
use crate::dtn::{duality_residual, dtn_map, integral_identity_residual};
use crate::error::{FracError, Result};
use crate::evolve::{
    gronwall_bound, gronwall_saturating_sequence, interpolant_gap, Direction, Evolver, GronwallVariant, TimeGrid,
};
use crate::grid::{project, Discretization, RegionTag, Window};
use crate::inverse::{recover_a_from_r, slab_target, ControlBasis, CosineInversion};
use crate::io::{fmt_f64, CheckRow, Table};
use crate::kernel::{cos_modulation, smooth_bump, MagneticPotential};
use crate::point::{self, Point};
use crate::recovery::{lattice, slab_profiles};

/// Rows and tables produced by one suite.
#[derive(Debug, Clone, Default)]
pub struct SuiteOutput {
    pub checks: Vec<CheckRow>,
    pub tables: Vec<(String, Table)>,
}

impl SuiteOutput {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn extend(&mut self, other: SuiteOutput) {
        self.checks.extend(other.checks);
        self.tables.extend(other.tables);
    }
}

fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return 0.0;
    }
    (hi - lo) / lo.abs()
}

/// Galerkin residual of the torsion identity for a given constant `λ`.
pub fn torsion(asm: &Assembler, lambda: f64, margin: f64, tol: &Tolerances) -> Result<SuiteOutput> {
    let r = asm.torsion_residual(lambda, margin)?;
    let mut t = Table::new(["lambda", "margin", "nodes", "relative_l2", "relative_max"]);
    t.push(vec![fmt_f64(lambda), fmt_f64(margin), r.nodes.to_string(), fmt_f64(r.relative_l2), fmt_f64(r.relative_max)]);
    Ok(SuiteOutput {
        checks: vec![CheckRow::at_most("torsion residual", None, r.relative_l2, tol.torsion)],
        tables: vec![("torsion.csv".into(), t)],
    })
}

/// `C₁`, `C₂` over the step sweep (maximised over `times`) and `c₀` at every time.
pub fn estimates(ev: &Evolver<'_>, times: &[f64], steps: &[f64], tol: &Tolerances) -> Result<SuiteOutput> {
    let rows = ev.asm.form_constant_sweep(&ev.pots.magnetic, &ev.pots.electric, times, steps)?;
    let mut t = Table::new(["t", "h", "c1", "c2", "c0"]);
    for r in &rows {
        t.push(vec![fmt_f64(r.t), fmt_f64(r.h), fmt_f64(r.c1), fmt_f64(r.c2), fmt_f64(r.c0)]);
    }
    let per_step = |f: fn(&crate::assembly::FormConstants) -> f64| -> Vec<f64> {
        steps
            .iter()
            .map(|h| rows.iter().filter(|r| r.h == *h).map(f).fold(0.0, f64::max))
            .collect()
    };
    let c1 = per_step(|r| r.c1);
    let c2 = per_step(|r| r.c2);
    let c0 = rows.iter().map(|r| r.c0).fold(f64::INFINITY, f64::min);
    Ok(SuiteOutput {
        checks: vec![
            CheckRow::at_most("C1 spread over h", None, spread(&c1), tol.form_spread),
            CheckRow::at_most("C2 spread over h", None, spread(&c2), tol.form_spread),
            CheckRow::flag("coercivity c0", None, c0, 0.0, c0 > 0.0),
        ],
        tables: vec![("estimates.csv".into(), t)],
    })
}

/// Rothe refinement study over `levels` (consecutive, at least three).
pub fn convergence(ev: &Evolver<'_>, g: &ExteriorControl, first: &TimeGrid, extra: u32, tol: &Tolerances) -> Result<SuiteOutput> {
    let r = ev.refine_and_estimate(g, first, extra)?;
    let mut t = Table::new(["level", "difference_to_next", "order", "max_hs_norm", "max_difference_quotient", "step_violation"]);
    for (k, level) in r.levels.iter().enumerate() {
        t.push(vec![
            level.to_string(),
            r.differences.get(k).map(|v| fmt_f64(*v)).unwrap_or_default(),
            k.checked_sub(1).and_then(|i| r.orders.get(i)).map(|v| fmt_f64(*v)).unwrap_or_default(),
            fmt_f64(r.monitors[k].max_hs_norm),
            fmt_f64(r.monitors[k].max_difference_quotient),
            fmt_f64(r.step_violations[k]),
        ]);
    }
    let mut checks = Vec::new();
    for (k, o) in r.orders.iter().enumerate() {
        checks.push(CheckRow::at_most("Rothe order deviation from 1", Some(r.levels[k + 1]), (o - 1.0).abs(), tol.order));
    }
    for w in r.monitors.windows(2).zip(&r.levels[1..]) {
        let (m, level) = w;
        let a = (m[1].max_hs_norm - m[0].max_hs_norm).abs() / m[0].max_hs_norm;
        let b = (m[1].max_difference_quotient - m[0].max_difference_quotient).abs() / m[0].max_difference_quotient;
        checks.push(CheckRow::at_most("H^s monitor change", Some(*level), a, tol.monitor_spread));
        checks.push(CheckRow::at_most("difference-quotient monitor change", Some(*level), b, tol.monitor_spread));
    }
    for (level, v) in r.levels.iter().zip(&r.step_violations) {
        checks.push(CheckRow::at_most("per-step inequality violation", Some(*level), *v, tol.step_violation));
    }
    Ok(SuiteOutput { checks, tables: vec![("convergence.csv".into(), t)] })
}

/// Random smooth Gaussian control on a window with a bump in time.
pub fn random_control(disc: &Discretization, window: Window, horizon: f64, rng: &mut ChaCha8Rng) -> ExteriorControl {
    let region = disc.geometry.window(window);
    let dim = disc.dim();
    let mut c = region.center();
    for k in 0..dim {
        c[k] += rng.random_range(-0.25..0.25) * region.width(k);
    }
    let side = (0..dim).map(|k| region.width(k)).fold(f64::INFINITY, f64::min);
    let w = rng.random_range(0.15..0.3) * side;
    let field = project(disc, RegionTag::from(window), |x| {
        let d = point::sub(x, &c);
        (-point::dot(&d, &d) / (2.0 * w * w)).exp()
    });
    let center = rng.random_range(-0.3..0.3) * horizon;
    let half_width = rng.random_range(0.4..0.6) * horizon;
    SpaceTimeData::single(field, TimeProfile::Bump { center, half_width })
}

/// `count` independent `(g, h)` pairs from `seed`.
pub fn random_pairs(disc: &Discretization, horizon: f64, seed: u64, count: usize) -> Vec<(ExteriorControl, ExteriorControl)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let g = random_control(disc, Window::W1, horizon, &mut rng);
            let h = random_control(disc, Window::W2, horizon, &mut rng);
            (g, h)
        })
        .collect()
}

fn decreasing_ratio(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max)
}

/// Duality residuals at every level; `gate` is the level held to `tol.duality`, and the
/// residual must decrease strictly over the levels from `gate - 1` on.
pub fn duality(
    ev: &Evolver<'_>,
    pairs: &[(ExteriorControl, ExteriorControl)],
    horizon: f64,
    base: usize,
    levels: &[u32],
    gate: u32,
    tol: &Tolerances,
) -> Result<SuiteOutput> {
    let mut t = Table::new(["pair", "level", "lhs", "rhs", "residual", "trapezoid_residual"]);
    let mut checks = Vec::new();
    for (k, (g, h)) in pairs.iter().enumerate() {
        let mut tail = Vec::new();
        for &level in levels {
            let r = duality_residual(ev, g, h, &TimeGrid::new(horizon, base, level)?)?;
            t.push(vec![
                k.to_string(),
                level.to_string(),
                fmt_f64(r.lhs),
                fmt_f64(r.rhs),
                fmt_f64(r.residual),
                fmt_f64(r.trapezoid_residual),
            ]);
            if level == gate {
                checks.push(CheckRow::at_most(format!("duality residual pair {k}"), Some(level), r.residual, tol.duality));
            }
            if level + 1 >= gate {
                tail.push(r.residual);
            }
        }
        if tail.len() >= 2 {
            checks.push(CheckRow::at_most(
                format!("duality residual ratio under refinement pair {k}"),
                None,
                decreasing_ratio(&tail),
                1.0 - f64::EPSILON,
            ));
        }
    }
    Ok(SuiteOutput { checks, tables: vec![("duality.csv".into(), t)] })
}

/// Integral identity with equal pairs at `gate` and with distinct pairs at every level.
#[allow(clippy::too_many_arguments)]
pub fn identity(
    ev1: &Evolver<'_>,
    ev2: &Evolver<'_>,
    g1: &ExteriorControl,
    g2: &ExteriorControl,
    horizon: f64,
    base: usize,
    levels: &[u32],
    gate: u32,
    tol: &Tolerances,
) -> Result<SuiteOutput> {
    let mut t = Table::new(["case", "level", "lhs", "rhs", "residual", "trapezoid_residual"]);
    let mut checks = Vec::new();
    let gate_grid = TimeGrid::new(horizon, base, gate)?;
    let same = integral_identity_residual(ev1, ev1, g1, g2, &gate_grid)?;
    t.push(vec![
        "equal".into(),
        gate.to_string(),
        fmt_f64(same.lhs),
        fmt_f64(same.rhs),
        fmt_f64(same.residual),
        fmt_f64(same.trapezoid_residual),
    ]);
    checks.push(CheckRow::at_most("identity |lhs| with equal pairs", Some(gate), same.lhs.abs(), tol.identity_equal));
    checks.push(CheckRow::at_most("identity |rhs| with equal pairs", Some(gate), same.rhs.abs(), tol.identity_equal));
    let mut tail = Vec::new();
    for &level in levels {
        let r = integral_identity_residual(ev1, ev2, g1, g2, &TimeGrid::new(horizon, base, level)?)?;
        t.push(vec![
            "distinct".into(),
            level.to_string(),
            fmt_f64(r.lhs),
            fmt_f64(r.rhs),
            fmt_f64(r.residual),
            fmt_f64(r.trapezoid_residual),
        ]);
        if level == gate {
            checks.push(CheckRow::at_most("identity residual", Some(level), r.residual, tol.identity));
        }
        if level >= gate {
            tail.push(r.residual);
        }
    }
    if tail.len() >= 2 {
        checks.push(CheckRow::at_most("identity residual ratio under refinement", None, decreasing_ratio(&tail), 1.0 - f64::EPSILON));
    }
    Ok(SuiteOutput { checks, tables: vec![("identity.csv".into(), t)] })
}

/// DtN records under `A` and `-A`.
pub fn sign_invariance(ev: &Evolver<'_>, g: &ExteriorControl, grid: &TimeGrid, tol: &Tolerances) -> Result<SuiteOutput> {
    let flipped = Evolver::new(ev.asm, ev.pots.with_negated_magnetic(), ev.options);
    let a = dtn_map(ev, g, grid)?;
    let b = dtn_map(&flipped, g, grid)?;
    let d = a.max_abs_difference(&b)?;
    let scale = a.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut t = Table::new(["level", "max_abs_difference", "max_abs_sample"]);
    t.push(vec![grid.level.to_string(), fmt_f64(d), fmt_f64(scale)]);
    Ok(SuiteOutput {
        checks: vec![CheckRow::at_most("DtN difference A vs -A", Some(grid.level), d, tol.sign)],
        tables: vec![("sign.csv".into(), t)],
    })
}

/// Runge approximation of a bump times the indicator of `[a, b]` with a nested basis.
pub struct RungeStudy<'a> {
    pub per_axis: usize,
    pub extra_bells: usize,
    pub slab: (f64, f64),
    pub center: Point,
    pub radius: f64,
    pub sizes: &'a [usize],
}

pub fn runge(ev: &Evolver<'_>, grid: &TimeGrid, study: &RungeStudy<'_>, tol: &Tolerances) -> Result<SuiteOutput> {
    let disc = &ev.asm.disc;
    let (a, b) = study.slab;
    let profiles = slab_profiles(a, b, grid.h, grid.horizon, study.extra_bells);
    let basis = ControlBasis::tensor(disc, Window::W1, study.per_axis, &profiles)?;
    let len = basis.len();
    let sys = crate::inverse::RungeSystem::new(ev, basis, grid, Direction::Forward)?;
    let c = study.center;
    let r2 = study.radius * study.radius;
    let target = slab_target(disc, a, b, |x| {
        let d = point::sub(x, &c);
        smooth_bump(point::dot(&d, &d) / r2)
    });
    let sizes: Vec<usize> = if study.sizes.is_empty() { (1..=len).collect() } else { study.sizes.to_vec() };
    if sizes.iter().any(|&k| k == 0 || k > len) || sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FracError::InvalidParameter(format!("basis sizes must increase within 1..={len}")));
    }
    let res = sys.nested_residuals(&target, &sizes)?;
    let mut t = Table::new(["basis_size", "residual"]);
    for (k, r) in &res {
        t.push(vec![k.to_string(), fmt_f64(*r)]);
    }
    let worst_increase = res.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max);
    let last = res.last().map(|r| r.1).unwrap_or(f64::NAN);
    Ok(SuiteOutput {
        checks: vec![
            CheckRow::at_most("Runge residual increase under nesting", None, worst_increase.max(0.0), 1e-12),
            CheckRow::at_most(format!("Runge residual with {} controls", sizes.last().unwrap_or(&0)), Some(grid.level), last, tol.runge),
        ],
        tables: vec![("runge.csv".into(), t)],
    })
}

/// Cosine inversion fed with exact samples of `A` on a `per_axis^n` midpoint lattice.
pub fn exact_inversion(
    disc: &Discretization,
    a: &MagneticPotential,
    times: &[f64],
    per_axis: usize,
    delta: f64,
    tol: &Tolerances,
) -> Result<SuiteOutput> {
    let dim = disc.dim();
    let omega = &disc.geometry.omega;
    let reach = delta;
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|k| {
            let lo = omega.lo[k] + reach;
            let hi = omega.hi[k] - reach;
            (0..per_axis).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / per_axis as f64).collect()
        })
        .collect();
    let mids = lattice(&axes);
    let opts = CosineInversion::new(delta);
    let sampler = |m: &Point, off: &Point, t: f64| -> Result<f64> {
        let half = point::scale(off, 0.5);
        Ok(cos_modulation(&point::add(m, &half), &point::sub(m, &half), t, a))
    };
    let mut worst = 0.0f64;
    let mut t = Table::new(["t", "max_error"]);
    for &time in times {
        let mut e = 0.0f64;
        for m in &mids {
            let est = recover_a_from_r(sampler, m, dim, time, &opts)?;
            let v = a.value(m, time);
            let plus = (0..dim).map(|c| (est[c] - v[c]).abs()).fold(0.0, f64::max);
            let minus = (0..dim).map(|c| (est[c] + v[c]).abs()).fold(0.0, f64::max);
            e = e.max(plus.min(minus));
        }
        t.push(vec![fmt_f64(time), fmt_f64(e)]);
        worst = worst.max(e);
    }
    Ok(SuiteOutput {
        checks: vec![CheckRow::at_most("cosine inversion with exact samples", None, worst, tol.exact_inversion)],
        tables: vec![("exact_inversion.csv".into(), t)],
    })
}

/// Allowed relative deviation of the finest gap ratio from 2.
pub const GAP_HALVING_TOL: f64 = 0.1;

/// Discrete Grönwall bounds on saturating sequences, a-priori monitors and the
/// interpolant-gap identity.
pub fn appendix(ev: &Evolver<'_>, g: &ExteriorControl, horizon: f64, base: usize, levels: &[u32], tol: &Tolerances) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    let mut gt = Table::new(["variant", "h", "index", "alpha", "bound"]);
    for (name, variant) in [("a", GronwallVariant::Explicit), ("b", GronwallVariant::Implicit)] {
        for h in [0.1, 0.25] {
            let (a, b) = (1.0, 1.5);
            let seq = gronwall_saturating_sequence(a, b, h, 20, variant);
            let r = gronwall_bound(&seq, a, b, h, variant)?;
            let worst = seq.iter().zip(&r.bounds).map(|(x, bd)| x / bd).fold(0.0, f64::max);
            for (i, (x, bd)) in seq.iter().zip(&r.bounds).enumerate() {
                gt.push(vec![name.into(), fmt_f64(h), (i + 1).to_string(), fmt_f64(*x), fmt_f64(*bd)]);
            }
            out.checks.push(CheckRow::flag(
                format!("Gronwall variant {name} h={h}: max alpha/bound"),
                None,
                worst,
                1.0,
                r.hypotheses_hold && r.satisfied,
            ));
        }
    }
    out.tables.push(("gronwall.csv".into(), gt));

    let mass = ev.asm.mass();
    let v = nalgebra::DVector::from_element(ev.asm.dofs(), 1.0);
    let (alpha, beta) = (-0.5 * horizon, 0.5 * horizon);
    let mut it = Table::new(["level", "numeric", "closed_form", "difference"]);
    let mut gaps = Vec::new();
    let mut mt = Table::new(["level", "h", "max_hs_norm", "max_difference_quotient"]);
    for &level in levels {
        let grid = match TimeGrid::new(horizon, base, level) {
            Ok(grid) => grid,
            Err(FracError::Precondition(_)) => {
                let h = 2.0 * horizon / (base << (level - 1)) as f64;
                out.checks.push(CheckRow::flag("a-priori step precondition h < 1/2", Some(level), h, 0.5, false));
                continue;
            }
            Err(e) => return Err(e),
        };
        let sol = ev.solve_forward(g, &grid)?;
        match ev.apriori_monitor(&sol) {
            Ok(m) => {
                mt.push(vec![level.to_string(), fmt_f64(grid.h), fmt_f64(m.max_hs_norm), fmt_f64(m.max_difference_quotient)]);
                let finite = m.max_hs_norm.is_finite() && m.max_difference_quotient.is_finite();
                out.checks.push(CheckRow::flag("a-priori monitors finite", Some(level), m.max_hs_norm, f64::INFINITY, finite));
            }
            Err(FracError::Precondition(_)) => {
                out.checks.push(CheckRow::flag("a-priori step precondition h < 1/2", Some(level), grid.h, 0.5, false));
            }
            Err(e) => return Err(e),
        }
        let (numeric, closed) = interpolant_gap(&sol, &v, alpha, beta, mass)?;
        let diff = (numeric - closed).abs();
        it.push(vec![level.to_string(), fmt_f64(numeric), fmt_f64(closed), fmt_f64(diff)]);
        out.checks.push(CheckRow::at_most(
            "interpolant gap identity",
            Some(level),
            diff / closed.abs().max(1.0),
            tol.gap_identity,
        ));
        gaps.push((level, closed));
    }
    let mut rt = Table::new(["level", "ratio_to_previous"]);
    for w in gaps.windows(2) {
        rt.push(vec![w[1].0.to_string(), fmt_f64(w[0].1 / w[1].1)]);
    }
    if let Some(w) = gaps.windows(2).last() {
        let ratio = w[0].1 / w[1].1;
        out.checks.push(CheckRow::at_most("interpolant gap halving |ratio - 2|/2", Some(w[1].0), (ratio - 2.0).abs() / 2.0, GAP_HALVING_TOL));
    }
    out.tables.push(("interpolant_gap_ratios.csv".into(), rt));
    out.tables.push(("apriori_monitors.csv".into(), mt));
    out.tables.push(("interpolant_gap.csv".into(), it));
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn spread_and_ratio() {
        assert_eq!(spread(&[2.0, 2.0]), 0.0);
        assert!((spread(&[1.0, 1.2, 1.1]) - 0.2).abs() < 1e-12);
        assert_eq!(spread(&[0.0, 0.0]), 0.0);
        assert!((decreasing_ratio(&[1.0, 0.5, 0.4]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn coarse_step_gives_precondition_row() {
        let cfg = ExperimentConfig::desk();
        let asm = cfg.assembler().unwrap();
        let ev = Evolver::new(&asm, cfg.known_pair().unwrap(), cfg.options());
        let g = cfg.controls().unwrap().forward.build(&asm.disc, Window::W1).unwrap();
        let out = appendix(&ev, &g, 1.0, 2, &[1, 2], &cfg.run.tolerances).unwrap();
        let row = out.checks.iter().find(|c| c.check.starts_with("a-priori step precondition")).unwrap();
        assert!(!row.pass);
        assert_eq!(row.level, Some(1));
        assert!(!out.pass());
    }

    #[test]
    fn random_pairs_are_seeded() {
        let disc = ExperimentConfig::desk().discretization().unwrap();
        let a = random_pairs(&disc, 1.0, 3, 2);
        let b = random_pairs(&disc, 1.0, 3, 2);
        let c = random_pairs(&disc, 1.0, 4, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        for (g, h) in &a {
            assert_eq!(g.window().unwrap(), Window::W1);
            assert_eq!(h.window().unwrap(), Window::W2);
            assert!(g.supported_inside(1.0) && h.supported_inside(1.0));
        }
    }
}
