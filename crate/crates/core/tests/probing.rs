use fracmag::config::ExperimentConfig;
use fracmag::evolve::Evolver;
use fracmag::grid::Window;
use fracmag::inverse::{BumpProbe, ControlBasis, ProbeSystem};
use fracmag::kernel::PotentialPair;
use fracmag::recovery::slab_profiles;

fn system(cfg: &ExperimentConfig, ev1: &Evolver<'_>, ev2: &Evolver<'_>) -> ProbeSystem {
    let disc = &ev1.asm.disc;
    let grid = cfg.grid(1).unwrap();
    let profiles = slab_profiles(-0.25, 0.25, grid.h, grid.horizon, 2);
    let fwd = ControlBasis::tensor(disc, Window::W1, 3, &profiles).unwrap();
    let dual = ControlBasis::tensor(disc, Window::W2, 3, &profiles).unwrap();
    ProbeSystem::new(ev1, ev2, fwd, dual, &grid).unwrap()
}

fn probe() -> BumpProbe {
    BumpProbe { y0: [-0.4, 0.0, 0.0], x0: [0.4, 0.0, 0.0], radius: 0.3, slab: (-0.25, 0.25) }
}

#[test]
fn equal_pairs_give_zero_data() {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler().unwrap();
    let ev = Evolver::new(&asm, cfg.truth_pair().unwrap(), cfg.options());
    let sys = system(&cfg, &ev, &ev);
    assert_eq!(sys.data.amax(), 0.0);
    let e = sys.probe(&asm.disc, &probe()).unwrap();
    assert_eq!(e.estimate, 0.0);
}

#[test]
fn negated_magnetic_potential_gives_zero_data() {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler().unwrap();
    let pair = cfg.truth_pair().unwrap();
    let ev1 = Evolver::new(&asm, pair.clone(), cfg.options());
    let ev2 = Evolver::new(&asm, pair.with_negated_magnetic(), cfg.options());
    let sys = system(&cfg, &ev1, &ev2);
    assert!(sys.data.amax() <= 1e-14, "{}", sys.data.amax());
}

#[test]
fn distinct_pairs_give_nonzero_data() {
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler().unwrap();
    let truth = cfg.truth_pair().unwrap();
    let known = cfg.known_pair().unwrap();
    let ev1 = Evolver::new(&asm, known, cfg.options());
    let ev2 = Evolver::new(&asm, PotentialPair::new(truth.magnetic, truth.electric), cfg.options());
    let sys = system(&cfg, &ev1, &ev2);
    assert!(sys.data.amax() > 1e-8);
}

#[test]
fn overlapping_probes_are_rejected() {
    let cfg = ExperimentConfig::desk();
    let disc = cfg.discretization().unwrap();
    let p = BumpProbe { y0: [-0.1, 0.0, 0.0], x0: [0.1, 0.0, 0.0], radius: 0.3, slab: (-0.25, 0.25) };
    assert!(p.validate(&disc).is_err());
}

#[test]
fn negated_truth_is_recovered_up_to_sign() {
    use fracmag::recovery::recover_magnetic;
    let cfg = ExperimentConfig::desk();
    let asm = cfg.assembler().unwrap();
    let truth = cfg.truth_pair().unwrap();
    let known = Evolver::new(&asm, truth.with_negated_magnetic(), cfg.options());
    let measured = Evolver::new(&asm, truth.clone(), cfg.options());
    let grid = cfg.grid(3).unwrap();
    let field = recover_magnetic(&known, &measured, &grid, &cfg.inversion_settings(&asm.disc)).unwrap();
    let err = field.a_error(&truth.magnetic);
    assert!(err < 1e-6, "{err}");
}
