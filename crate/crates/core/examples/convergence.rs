//! Rothe refinement study: observed order and a-priori monitors over levels 1 to 4.

use fracmag::config::ExperimentConfig;
use fracmag::evolve::Evolver;
use fracmag::grid::Window;

fn main() -> fracmag::Result<()> {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler()?;
    let ev = Evolver::new(&asm, cfg.truth_pair()?, cfg.options());
    let g = cfg.controls()?.forward.build(&asm.disc, Window::W1)?;
    let r = ev.refine_and_estimate(&g, &cfg.grid(1)?, 3)?;
    println!("level  max H^s norm  max diff quotient  step violation");
    for (k, level) in r.levels.iter().enumerate() {
        let m = &r.monitors[k];
        println!("{level:>5}  {:>12.5e}  {:>17.5e}  {:>14.3e}", m.max_hs_norm, m.max_difference_quotient, r.step_violations[k]);
    }
    println!("differences {:?}", r.differences);
    println!("orders      {:?}", r.orders);
    Ok(())
}
