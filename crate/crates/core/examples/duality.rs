//! Duality between the forward and backward DtN maps, and the integral identity for two
//! potential pairs, under time refinement.

use fracmag::config::ExperimentConfig;
use fracmag::dtn::{duality_residual, integral_identity_residual};
use fracmag::evolve::Evolver;
use fracmag::grid::Window;

fn main() -> fracmag::Result<()> {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler()?;
    let known = Evolver::new(&asm, cfg.known_pair()?, cfg.options());
    let truth = Evolver::new(&asm, cfg.truth_pair()?, cfg.options());
    let controls = cfg.controls()?;
    let g = controls.forward.build(&asm.disc, Window::W1)?;
    let h = controls.dual.build(&asm.disc, Window::W2)?;

    println!("level  duality residual  identity lhs      identity rhs      identity residual");
    for level in 1..=4 {
        let grid = cfg.grid(level)?;
        let d = duality_residual(&truth, &g, &h, &grid)?;
        let i = integral_identity_residual(&known, &truth, &g, &h, &grid)?;
        println!("{level:>5}  {:>16.3e}  {:>16.6e}  {:>16.6e}  {:>17.3e}", d.residual, i.lhs, i.rhs, i.residual);
    }
    Ok(())
}
