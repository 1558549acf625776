//! Kernel normalisation: the torsion function `(1-|x|²)_+^s` against its closed-form eigenvalue.

use fracmag::config::ExperimentConfig;
use fracmag::kernel::fractional_laplacian_constant;
use fracmag::runner::{torsion_lambda, TORSION_MARGIN};

fn main() -> fracmag::Result<()> {
    for cfg in [ExperimentConfig::desk(), ExperimentConfig::smoke()] {
        let asm = cfg.assembler()?;
        let p = &asm.params;
        let lambda = torsion_lambda(p);
        let r = asm.torsion_residual(lambda, TORSION_MARGIN)?;
        println!(
            "n = {} s = {} c_(n,s) = {:.6} scale = {:.6} lambda = {:.6}: relative residual {:.3e} over {} nodes",
            p.n,
            p.s,
            fractional_laplacian_constant(p.n, p.s),
            p.kernel_scale,
            lambda,
            r.relative_l2,
            r.nodes
        );
    }
    Ok(())
}
