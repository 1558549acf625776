use fracmag::config::ExperimentConfig;
use fracmag::control::SpaceTimeData;
use fracmag::dtn::{dtn_map, dual_dtn_map, duality_residual};
use fracmag::evolve::Evolver;
use fracmag::grid::Window;

#[test]
fn dtn_map_is_linear_in_the_control() {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler().unwrap();
    let ev = Evolver::new(&asm, cfg.truth_pair().unwrap(), cfg.options());
    let grid = cfg.grid(2).unwrap();
    let mut rng = {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(7)
    };
    let g1 = fracmag::suites::random_control(&asm.disc, Window::W1, 1.0, &mut rng);
    let g2 = fracmag::suites::random_control(&asm.disc, Window::W1, 1.0, &mut rng);
    let sum = SpaceTimeData::combination(&[2.0, -0.5], &[&g1, &g2]).unwrap();
    let r1 = dtn_map(&ev, &g1, &grid).unwrap();
    let r2 = dtn_map(&ev, &g2, &grid).unwrap();
    let rs = dtn_map(&ev, &sum, &grid).unwrap();
    let expected = &r1.samples * 2.0 - &r2.samples * 0.5;
    let scale = expected.amax();
    assert!(scale > 0.0);
    assert!((rs.samples - expected).amax() <= 1e-8 * scale);
}

#[test]
fn zero_control_gives_zero_record() {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler().unwrap();
    let ev = Evolver::new(&asm, cfg.truth_pair().unwrap(), cfg.options());
    let grid = cfg.grid(1).unwrap();
    let g = cfg.controls().unwrap().forward.build(&asm.disc, Window::W1).unwrap().scaled(0.0);
    let h = cfg.controls().unwrap().dual.build(&asm.disc, Window::W2).unwrap().scaled(0.0);
    assert_eq!(dtn_map(&ev, &g, &grid).unwrap().samples.amax(), 0.0);
    assert_eq!(dual_dtn_map(&ev, &h, &grid).unwrap().samples.amax(), 0.0);
}

#[test]
fn duality_residual_decreases_under_refinement() {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler().unwrap();
    let ev = Evolver::new(&asm, cfg.truth_pair().unwrap(), cfg.options());
    let c = cfg.controls().unwrap();
    let g = c.forward.build(&asm.disc, Window::W1).unwrap();
    let h = c.dual.build(&asm.disc, Window::W2).unwrap();
    let res: Vec<f64> = (1..=3).map(|l| duality_residual(&ev, &g, &h, &cfg.grid(l).unwrap()).unwrap().residual).collect();
    assert!(res.windows(2).all(|w| w[1] < w[0]), "{res:?}");
}
