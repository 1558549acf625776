//! Runge approximation of a space-time bump by exterior controls with a nested basis.

use fracmag::config::ExperimentConfig;
use fracmag::evolve::Evolver;
use fracmag::point;
use fracmag::suites::{runge, RungeStudy};

fn main() -> fracmag::Result<()> {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler()?;
    let ev = Evolver::new(&asm, cfg.truth_pair()?, cfg.options());
    let rc = &cfg.run.runge;
    let study = RungeStudy {
        per_axis: rc.per_axis,
        extra_bells: rc.extra_bells,
        slab: (rc.slab[0], rc.slab[1]),
        center: point::ORIGIN,
        radius: rc.radius,
        sizes: &[1, 2, 4, 8, 16, 24, 32],
    };
    let out = runge(&ev, &cfg.grid(rc.level)?, &study, &cfg.run.tolerances)?;
    print!("{}", out.tables[0].1.to_csv());
    for c in &out.checks {
        println!("{}: {:.3e} (target {:.3e})", c.check, c.measured, c.target);
    }
    Ok(())
}
