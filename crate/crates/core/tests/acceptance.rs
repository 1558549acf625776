//! Acceptance criteria at desk scale (n = 1) and on the n = 2 smoke configuration.
//! Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

mod common;

use std::time::Instant;

use fracmag::assembly::Assembler;
use fracmag::config::ExperimentConfig;
use fracmag::evolve::Evolver;
use fracmag::grid::Window;
use fracmag::io::CheckRow;
use fracmag::point;
use fracmag::recovery::run_inversion;
use fracmag::runner::{EXACT_DELTA, EXACT_PER_AXIS, GATE_LEVEL, TORSION_MARGIN};
use fracmag::suites::{self, RungeStudy, SuiteOutput};
use fracmag::Result;

struct Case {
    cfg: ExperimentConfig,
    asm: Assembler,
}

impl Case {
    fn new(cfg: ExperimentConfig) -> Self {
        cfg.validate().expect("valid preset");
        let asm = cfg.assembler().expect("assembler");
        Self { cfg, asm }
    }

    fn known(&self) -> Evolver<'_> {
        Evolver::new(&self.asm, self.cfg.known_pair().unwrap(), self.cfg.options())
    }

    fn measured(&self) -> Evolver<'_> {
        Evolver::new(&self.asm, self.cfg.truth_pair().unwrap(), self.cfg.options())
    }
}

fn report(id: u32, label: &str, started: Instant, out: Result<SuiteOutput>) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match out {
        Ok(out) => {
            let failed: Vec<&CheckRow> = out.checks.iter().filter(|c| !c.pass).collect();
            let pass = !out.checks.is_empty() && failed.is_empty();
            let detail = if pass {
                out.checks.iter().map(|c| format!("{} = {:.3e}", c.check, c.measured)).collect::<Vec<_>>().join("; ")
            } else {
                failed.iter().map(|c| format!("{} = {:.3e} (target {:.3e})", c.check, c.measured, c.target)).collect::<Vec<_>>().join("; ")
            };
            println!("criterion {id} [{label}]: {} in {secs:.1}s: {detail}", if pass { "PASS" } else { "FAIL" });
            pass
        }
        Err(e) => {
            println!("criterion {id} [{label}]: FAIL in {secs:.1}s: error {e}");
            false
        }
    }
}

fn torsion(case: &Case) -> Result<SuiteOutput> {
    let p = &case.asm.params;
    let lambda = common::torsion_lambda_quadrature(p.n, p.s, p.kernel_scale);
    suites::torsion(&case.asm, lambda, TORSION_MARGIN, &case.cfg.run.tolerances)
}

fn estimates(case: &Case, ev: &Evolver<'_>) -> Result<SuiteOutput> {
    let e = &case.cfg.run.estimates;
    let steps: Vec<f64> = e.step_exponents.iter().map(|&k| 2f64.powi(-k)).collect();
    suites::estimates(ev, &e.times, &steps, &case.cfg.run.tolerances)
}

fn convergence(case: &Case, ev: &Evolver<'_>) -> Result<SuiteOutput> {
    let g = case.cfg.controls()?.forward.build(&case.asm.disc, Window::W1)?;
    let levels = &case.cfg.run.levels;
    suites::convergence(ev, &g, &case.cfg.grid(levels[0])?, (levels.len() - 1) as u32, &case.cfg.run.tolerances)
}

fn duality(case: &Case, ev: &Evolver<'_>) -> Result<SuiteOutput> {
    let c = &case.cfg;
    let pairs = suites::random_pairs(&case.asm.disc, c.physics.horizon, c.run.seed, c.run.duality_pairs);
    suites::duality(ev, &pairs, c.physics.horizon, c.run.base_steps, &c.run.levels, GATE_LEVEL, &c.run.tolerances)
}

fn desk() -> bool {
    let case = Case::new(ExperimentConfig::desk());
    let cfg = &case.cfg;
    let tol = &cfg.run.tolerances;
    let horizon = cfg.physics.horizon;
    let base = cfg.run.base_steps;
    let label = "desk n=1";
    let known = case.known();
    let measured = case.measured();
    let controls = cfg.controls().unwrap();
    let g1 = controls.forward.build(&case.asm.disc, Window::W1).unwrap();
    let g2 = controls.dual.build(&case.asm.disc, Window::W2).unwrap();
    let mut pass = true;

    let t = Instant::now();
    pass &= report(1, label, t, torsion(&case));
    let t = Instant::now();
    pass &= report(2, label, t, estimates(&case, &measured));
    let t = Instant::now();
    pass &= report(3, label, t, convergence(&case, &measured));
    let t = Instant::now();
    pass &= report(4, label, t, duality(&case, &measured));

    let t = Instant::now();
    let out = suites::identity(&known, &measured, &g1, &g2, horizon, base, &cfg.run.levels, GATE_LEVEL, tol);
    pass &= report(5, label, t, out);

    let t = Instant::now();
    let out = cfg.grid(GATE_LEVEL).and_then(|grid| suites::sign_invariance(&measured, &g1, &grid, tol));
    pass &= report(6, label, t, out);

    let t = Instant::now();
    let rc = &cfg.run.runge;
    let center = if rc.center.is_empty() { case.asm.disc.geometry.omega.center() } else { point::from_slice(&rc.center) };
    let study = RungeStudy {
        per_axis: rc.per_axis,
        extra_bells: rc.extra_bells,
        slab: (rc.slab[0], rc.slab[1]),
        center,
        radius: rc.radius,
        sizes: &rc.sizes,
    };
    let out = cfg.grid(rc.level).and_then(|grid| suites::runge(&measured, &grid, &study, tol));
    pass &= report(7, label, t, out);

    let t = Instant::now();
    let out = (|| {
        let truth = cfg.truth_pair()?;
        let grid = cfg.grid(cfg.run.probe.level)?;
        let field = run_inversion(&known, &measured, &grid, &cfg.inversion_settings(&case.asm.disc))?;
        let a_err = field.a_error(&truth.magnetic);
        let q_err = field.q_error(&truth.electric);
        let mut out = SuiteOutput {
            checks: vec![
                CheckRow::at_most("relative A error", Some(grid.level), a_err, tol.a_error),
                CheckRow::at_most("relative q error", Some(grid.level), q_err, tol.q_error),
            ],
            tables: Vec::new(),
        };
        out.extend(suites::exact_inversion(&case.asm.disc, &truth.magnetic, &field.a_times, EXACT_PER_AXIS, EXACT_DELTA, tol)?);
        Ok(out)
    })();
    pass &= report(8, label, t, out);

    let t = Instant::now();
    pass &= report(9, label, t, suites::appendix(&known, &g1, horizon, base, &cfg.run.levels, tol));
    pass
}

fn smoke() -> bool {
    let case = Case::new(ExperimentConfig::smoke());
    let label = "smoke n=2";
    let measured = case.measured();
    let mut pass = true;
    let t = Instant::now();
    pass &= report(1, label, t, torsion(&case));
    let t = Instant::now();
    pass &= report(2, label, t, estimates(&case, &measured));
    let t = Instant::now();
    pass &= report(3, label, t, convergence(&case, &measured));
    let t = Instant::now();
    pass &= report(4, label, t, duality(&case, &measured));
    pass
}

fn main() {
    if let Err(e) = fracmag::runner::configure_threads() {
        eprintln!("{e}");
        std::process::exit(2);
    }
    let desk = desk();
    let smoke = smoke();
    let all = desk && smoke;
    println!("acceptance: {}", if all { "PASS" } else { "FAIL" });
    if !all {
        std::process::exit(1);
    }
}
