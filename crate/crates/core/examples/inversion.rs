//! Recovery of `A` and `q` from simulated DtN data on the desk problem.

use fracmag::config::ExperimentConfig;
use fracmag::evolve::Evolver;
use fracmag::recovery::run_inversion;

fn main() -> fracmag::Result<()> {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler()?;
    let truth = cfg.truth_pair()?;
    let known = Evolver::new(&asm, cfg.known_pair()?, cfg.options());
    let measured = Evolver::new(&asm, truth.clone(), cfg.options());
    let grid = cfg.grid(cfg.run.probe.level)?;
    let settings = cfg.inversion_settings(&asm.disc);

    let field = run_inversion(&known, &measured, &grid, &settings)?;
    for (k, t) in field.a_times.iter().enumerate() {
        let row: Vec<String> = field
            .midpoints
            .iter()
            .zip(&field.a_est[k])
            .map(|(m, a)| format!("{:+.3}/{:+.3}", a[0], truth.magnetic.value(m, *t)[0]))
            .collect();
        println!("A at t = {t:+.3}: {}", row.join(" "));
    }
    println!("relative A error {:.4}", field.a_error(&truth.magnetic));
    println!("relative q error {:.4}", field.q_error(&truth.electric));
    println!("potential fit condition {:.3e}", field.q_condition);
    for w in &field.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
