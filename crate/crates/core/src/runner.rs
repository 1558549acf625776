//! Command execution shared by the binary and the examples.

use std::path::{Path, PathBuf};

use clap::ValueEnum;

use crate::config::ExperimentConfig;
use crate::dtn::{dtn_map, dual_dtn_map};
use crate::error::{FracError, Result};
use crate::evolve::{Evolver, TimeGrid};
use crate::grid::Window;
use crate::io::{dtn_table, electric_table, fmt_f64, magnetic_table, solution_table, summary, CheckRow, Manifest, RunDir, Table};
use crate::kernel::{fractional_laplacian_constant, torsion_constant, FracParams};
use crate::point;
use crate::recovery::{recover_magnetic, run_inversion, RecoveredField};
use crate::suites::{self, RungeStudy, SuiteOutput};

/// Top-level subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Forward,
    Dual,
    Verify,
    Runge,
    Invert,
    Convergence,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Dual => "dual",
            Command::Verify => "verify",
            Command::Runge => "runge",
            Command::Invert => "invert",
            Command::Convergence => "convergence",
        }
    }
}

/// Check groups of `verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Suite {
    Torsion,
    Estimates,
    Duality,
    Identity,
    Sign,
    Appendix,
    #[default]
    All,
}

/// How far `invert` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Stage {
    #[value(name = "G")]
    G,
    #[value(name = "A")]
    A,
    #[value(name = "q")]
    Q,
    #[default]
    Full,
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub level: Option<u32>,
    pub seed: Option<u64>,
    pub suite: Suite,
    pub stage: Stage,
}

/// Process exit codes.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Exit code for an error that aborted a run.
pub fn exit_code(err: &FracError) -> i32 {
    match err {
        FracError::Config(_)
        | FracError::Geometry(_)
        | FracError::InvalidParameter(_)
        | FracError::Precondition(_)
        | FracError::Assumption(_)
        | FracError::Io(_) => EXIT_CONFIG,
        _ => EXIT_CHECK_FAIL,
    }
}

/// Caps the rayon pool at `FRACMAG_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("FRACMAG_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| FracError::Config(format!("FRACMAG_THREADS must be a positive integer, got {raw:?}")))?;
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Loads the config, runs the command and returns the exit code.
pub fn run(args: &RunArgs) -> i32 {
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(args.command.name()));
    let result = configure_threads()
        .and_then(|_| ExperimentConfig::load(&args.config))
        .and_then(|cfg| execute(&cfg, args, &out));
    match result {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_CHECK_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code(&e);
            write_error(&out, args.command, &e, code);
            code
        }
    }
}

fn write_error(out: &Path, command: Command, err: &FracError, code: i32) {
    let record = serde_json::json!({
        "command": command.name(),
        "error": err.to_string(),
        "exit_code": code,
        "version": crate::io::VERSION,
    });
    if std::fs::create_dir_all(out).is_ok() {
        let _ = std::fs::write(out.join("error.json"), serde_json::to_string_pretty(&record).unwrap_or_default() + "\n");
    }
}

/// Runs one command against a loaded config, writing into `out`; returns whether all checks passed.
pub fn execute(cfg: &ExperimentConfig, args: &RunArgs, out: &Path) -> Result<bool> {
    cfg.validate()?;
    let asm = cfg.assembler()?;
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let manifest = Manifest::new(args.command.name(), seed, asm.disc.grid_hash(), asm.params.kernel_scale, cfg.to_toml());
    let mut dir = RunDir::create(out, manifest)?;
    dir.manifest.value("window_shape", "axis-aligned boxes");
    let output = match args.command {
        Command::Forward => forward(cfg, &asm, args.level, &mut dir, Window::W1)?,
        Command::Dual => forward(cfg, &asm, args.level, &mut dir, Window::W2)?,
        Command::Verify => verify(cfg, &asm, args.suite, args.level, seed)?,
        Command::Runge => runge(cfg, &asm, args.level)?,
        Command::Invert => invert(cfg, &asm, args.stage, args.level, &mut dir)?,
        Command::Convergence => convergence(cfg, &asm)?,
    };
    for (name, table) in &output.tables {
        dir.write_table(name, table)?;
    }
    for row in &output.checks {
        dir.manifest.check(row.clone());
    }
    println!("{}", summary(&output.checks));
    dir.finish()
}

fn default_level(cfg: &ExperimentConfig, level: Option<u32>) -> u32 {
    level.unwrap_or_else(|| cfg.run.levels.iter().copied().max().unwrap_or(1))
}

/// Pair that generates the measurements: the truth pair when configured, otherwise the known pair.
fn measured_pair(cfg: &ExperimentConfig) -> Result<crate::kernel::PotentialPair> {
    if cfg.physics.truth.is_some() {
        cfg.truth_pair()
    } else {
        cfg.known_pair()
    }
}

fn forward(cfg: &ExperimentConfig, asm: &crate::assembly::Assembler, level: Option<u32>, dir: &mut RunDir, window: Window) -> Result<SuiteOutput> {
    let controls = cfg.controls()?;
    let ev = Evolver::new(asm, cfg.known_pair()?, cfg.options());
    let grid = cfg.grid(default_level(cfg, level))?;
    let (sol, rec) = match window {
        Window::W1 => {
            let g = controls.forward.build(&asm.disc, Window::W1)?;
            (ev.solve_forward(&g, &grid)?, dtn_map(&ev, &g, &grid)?)
        }
        Window::W2 => {
            let h = controls.dual.build(&asm.disc, Window::W2)?;
            (ev.solve_dual(&h, &grid)?, dual_dtn_map(&ev, &h, &grid)?)
        }
    };
    let monitor = ev.apriori_monitor(&sol)?;
    let violation = ev.step_inequality_violation(&sol)?;
    // The energy identity is stated for the forward march only.
    let defect = if window == Window::W1 { ev.energy_defect(&sol)? } else { f64::NAN };
    dir.manifest.value("max_hs_norm", monitor.max_hs_norm);
    dir.manifest.value("max_difference_quotient", monitor.max_difference_quotient);
    if window == Window::W1 {
        dir.manifest.value("energy_defect", defect);
    }
    dir.manifest.value("max_solver_residual", sol.max_solver_residual());
    let mut m = Table::new(["level", "steps", "max_hs_norm", "max_difference_quotient", "step_violation", "energy_defect"]);
    m.push(vec![
        grid.level.to_string(),
        grid.steps.to_string(),
        fmt_f64(monitor.max_hs_norm),
        fmt_f64(monitor.max_difference_quotient),
        fmt_f64(violation),
        fmt_f64(defect),
    ]);
    Ok(SuiteOutput {
        checks: vec![CheckRow::at_most("per-step inequality violation", Some(grid.level), violation, cfg.run.tolerances.step_violation)],
        tables: vec![
            ("solution.csv".into(), solution_table(&asm.disc.omega, &sol)),
            ("dtn.csv".into(), dtn_table(&rec, asm.dim())),
            ("monitors.csv".into(), m),
        ],
    })
}

/// Torsion constant for the kernel normalisation of `p`.
pub fn torsion_lambda(p: &FracParams) -> f64 {
    torsion_constant(p.n, p.s) * 2.0 * p.kernel_scale / fractional_laplacian_constant(p.n, p.s)
}

/// Margin excluded near the boundary of the unit ball in the torsion check.
pub const TORSION_MARGIN: f64 = 0.25;

/// Level gate for the duality and identity checks.
pub const GATE_LEVEL: u32 = 3;

fn verify(cfg: &ExperimentConfig, asm: &crate::assembly::Assembler, suite: Suite, level: Option<u32>, seed: u64) -> Result<SuiteOutput> {
    let tol = &cfg.run.tolerances;
    let horizon = cfg.physics.horizon;
    let base = cfg.run.base_steps;
    let levels = &cfg.run.levels;
    let gate = level.unwrap_or(GATE_LEVEL);
    let mut out = SuiteOutput::default();
    let run = |s: Suite| suite == Suite::All || suite == s;
    let known = Evolver::new(asm, cfg.known_pair()?, cfg.options());
    let measured = Evolver::new(asm, measured_pair(cfg)?, cfg.options());
    if run(Suite::Torsion) {
        out.extend(suites::torsion(asm, torsion_lambda(&asm.params), TORSION_MARGIN, tol)?);
    }
    if run(Suite::Estimates) {
        let steps: Vec<f64> = cfg.run.estimates.step_exponents.iter().map(|&k| 2f64.powi(-k)).collect();
        out.extend(suites::estimates(&measured, &cfg.run.estimates.times, &steps, tol)?);
    }
    if run(Suite::Duality) {
        let pairs = suites::random_pairs(&asm.disc, horizon, seed, cfg.run.duality_pairs);
        out.extend(suites::duality(&measured, &pairs, horizon, base, levels, gate, tol)?);
    }
    if run(Suite::Identity) || run(Suite::Sign) || run(Suite::Appendix) {
        let controls = cfg.controls()?;
        let g1 = controls.forward.build(&asm.disc, Window::W1)?;
        if run(Suite::Identity) {
            let g2 = controls.dual.build(&asm.disc, Window::W2)?;
            out.extend(suites::identity(&known, &measured, &g1, &g2, horizon, base, levels, gate, tol)?);
        }
        if run(Suite::Sign) {
            out.extend(suites::sign_invariance(&measured, &g1, &cfg.grid(gate)?, tol)?);
        }
        if run(Suite::Appendix) {
            out.extend(suites::appendix(&known, &g1, horizon, base, levels, tol)?);
        }
    }
    Ok(out)
}

fn runge(cfg: &ExperimentConfig, asm: &crate::assembly::Assembler, level: Option<u32>) -> Result<SuiteOutput> {
    let rc = &cfg.run.runge;
    let ev = Evolver::new(asm, measured_pair(cfg)?, cfg.options());
    let grid = cfg.grid(level.unwrap_or(rc.level))?;
    let center = if rc.center.is_empty() { asm.disc.geometry.omega.center() } else { point::from_slice(&rc.center) };
    let study = RungeStudy {
        per_axis: rc.per_axis,
        extra_bells: rc.extra_bells,
        slab: (rc.slab[0], rc.slab[1]),
        center,
        radius: rc.radius,
        sizes: &rc.sizes,
    };
    suites::runge(&ev, &grid, &study, &cfg.run.tolerances)
}

fn convergence(cfg: &ExperimentConfig, asm: &crate::assembly::Assembler) -> Result<SuiteOutput> {
    let levels = &cfg.run.levels;
    let first = *levels.first().ok_or_else(|| FracError::Config("run.levels is empty".into()))?;
    if levels.windows(2).any(|w| w[1] != w[0] + 1) || levels.len() < 3 {
        return Err(FracError::Config("convergence needs at least three consecutive levels".into()));
    }
    let g = cfg.controls()?.forward.build(&asm.disc, Window::W1)?;
    let ev = Evolver::new(asm, measured_pair(cfg)?, cfg.options());
    suites::convergence(&ev, &g, &cfg.grid(first)?, (levels.len() - 1) as u32, &cfg.run.tolerances)
}

/// Cosine-inversion step length used with exact samples.
pub const EXACT_DELTA: f64 = 0.1;

/// Midpoints per axis for the exact-sample inversion check.
pub const EXACT_PER_AXIS: usize = 16;

/// Per-probe diagnostics.
pub fn probe_table(field: &RecoveredField) -> Table {
    let dim = field.dim;
    let mut t = Table::new(
        ["slab_lo", "slab_hi"]
            .into_iter()
            .map(String::from)
            .chain((0..dim).map(|k| format!("m{}", k + 1)))
            .chain((0..dim).map(|k| format!("e{}", k + 1)))
            .chain(["estimate", "g_estimate", "rho", "forward_residual", "dual_residual", "q_term_bound"].map(String::from)),
    );
    for p in &field.probes {
        let mut row = vec![fmt_f64(p.slab.0), fmt_f64(p.slab.1)];
        row.extend((0..dim).map(|k| fmt_f64(p.midpoint[k])));
        row.extend((0..dim).map(|k| fmt_f64(p.offset[k])));
        row.extend([p.estimate, p.g_estimate, p.rho, p.forward_residual, p.dual_residual, p.q_term_bound].map(fmt_f64));
        t.push(row);
    }
    t
}

fn invert(cfg: &ExperimentConfig, asm: &crate::assembly::Assembler, stage: Stage, level: Option<u32>, dir: &mut RunDir) -> Result<SuiteOutput> {
    let tol = &cfg.run.tolerances;
    let truth_pair = cfg.truth_pair()?;
    let known = Evolver::new(asm, cfg.known_pair()?, cfg.options());
    let truth = Evolver::new(asm, truth_pair.clone(), cfg.options());
    let grid: TimeGrid = cfg.grid(level.unwrap_or(cfg.run.probe.level))?;
    let settings = cfg.inversion_settings(&asm.disc);
    let field = match stage {
        Stage::G | Stage::A => recover_magnetic(&known, &truth, &grid, &settings)?,
        Stage::Q | Stage::Full => run_inversion(&known, &truth, &grid, &settings)?,
    };
    for w in &field.warnings {
        eprintln!("warning: {w}");
    }
    dir.manifest.warnings.extend(field.warnings.iter().cloned());
    let mut out = SuiteOutput { checks: Vec::new(), tables: vec![("probes.csv".into(), probe_table(&field))] };
    if stage == Stage::G {
        return Ok(out);
    }
    let a_err = field.a_error(&truth_pair.magnetic);
    dir.manifest.value("a_error", a_err);
    out.tables.push(("magnetic.csv".into(), magnetic_table(&field, Some(&truth_pair.magnetic))));
    out.checks.push(CheckRow::at_most("relative A error", Some(grid.level), a_err, tol.a_error));
    out.extend(suites::exact_inversion(&asm.disc, &truth_pair.magnetic, &field.a_times, EXACT_PER_AXIS, EXACT_DELTA, tol)?);
    if stage == Stage::A {
        return Ok(out);
    }
    let q_err = field.q_error(&truth_pair.electric);
    dir.manifest.value("q_error", q_err);
    dir.manifest.value("q_condition", field.q_condition);
    dir.manifest.value("q_residual", field.q_residual);
    dir.manifest.value("q_singular_values", &field.q_singular_values);
    out.tables.push(("electric.csv".into(), electric_table(&field, Some(&truth_pair.electric))));
    out.checks.push(CheckRow::at_most("relative q error", Some(grid.level), q_err, tol.q_error));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&FracError::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&FracError::Geometry("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&FracError::Solver { residual: 1.0, iterations: 3 }), EXIT_CHECK_FAIL);
        assert_eq!(exit_code(&FracError::DataInconsistency("x".into())), EXIT_CHECK_FAIL);
    }

    #[test]
    fn torsion_lambda_follows_kernel_scale() {
        let p = FracParams::with_default_scale(1, 0.5, 1.0, 1.0).unwrap();
        assert!((torsion_lambda(&p) - 1.0).abs() < 1e-12);
        let doubled = FracParams::new(1, 0.5, 2.0 * p.kernel_scale, 1.0, 1.0).unwrap();
        assert!((torsion_lambda(&doubled) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stage_names() {
        assert_eq!(Stage::from_str("G", false).unwrap(), Stage::G);
        assert_eq!(Stage::from_str("q", false).unwrap(), Stage::Q);
        assert_eq!(Suite::from_str("appendix", false).unwrap(), Suite::Appendix);
    }
}
