//! Forward Rothe solve on the desk problem and the exterior DtN record on `W2`.

use fracmag::config::ExperimentConfig;
use fracmag::dtn::dtn_map;
use fracmag::evolve::Evolver;
use fracmag::grid::Window;

fn main() -> fracmag::Result<()> {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler()?;
    let ev = Evolver::new(&asm, cfg.truth_pair()?, cfg.options());
    let g = cfg.controls()?.forward.build(&asm.disc, Window::W1)?;
    let grid = cfg.grid(3)?;

    let sol = ev.solve_forward(&g, &grid)?;
    let monitor = ev.apriori_monitor(&sol)?;
    println!("{} steps of length {}", grid.steps, grid.h);
    println!("max H^s norm              {:.6e}", monitor.max_hs_norm);
    println!("max difference quotient   {:.6e}", monitor.max_difference_quotient);
    println!("energy defect             {:.3e}", ev.energy_defect(&sol)?);
    println!("step inequality violation {:.3e}", ev.step_inequality_violation(&sol)?);

    let rec = dtn_map(&ev, &g, &grid)?;
    let peak = rec.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("DtN record: {} points x {} times, max |value| {:.6e}", rec.points.len(), rec.samples.ncols(), peak);
    Ok(())
}
