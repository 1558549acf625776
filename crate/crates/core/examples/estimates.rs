//! Step-size dependence of the form constants `C₁`, `C₂` and the coercivity constant `c₀`.

use fracmag::config::ExperimentConfig;

fn main() -> fracmag::Result<()> {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler()?;
    let pair = cfg.truth_pair()?;
    let steps: Vec<f64> = (3..=7).map(|k| 2f64.powi(-k)).collect();
    let rows = asm.form_constant_sweep(&pair.magnetic, &pair.electric, &[-0.5, 0.0, 0.5], &steps)?;
    println!("     t          h        C1        C2        c0");
    for r in rows {
        println!("{:>6.2} {:>10.6} {:>9.5} {:>9.5} {:>9.5}", r.t, r.h, r.c1, r.c2, r.c0);
    }
    Ok(())
}
