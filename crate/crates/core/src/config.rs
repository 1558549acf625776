//! Experiment configuration: a TOML file with geometry, discretization, physics and run
//! blocks. Unknown keys are rejected and every block is re-validated when built.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::Assembler;
use crate::control::{ExteriorControl, SpaceTimeData, TimeProfile};
use crate::error::{FracError, Result};
use crate::evolve::{EvolveOptions, TimeGrid};
use crate::grid::{project, BoxRegion, Discretization, Geometry, QuadratureSpec, RegionTag, Window};
use crate::kernel::{ElectricPotential, FracParams, MagneticPotential, PotentialPair};
use crate::linalg::SolverKind;
use crate::point::{self, Point, ORIGIN};
use crate::recovery::{tile_slabs, InversionSettings};
use crate::samples::GriddedSamples;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxConfig {
    pub fn build(&self) -> Result<BoxRegion> {
        BoxRegion::from_bounds(&self.lo, &self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub omega: BoxConfig,
    /// Radius `r` of a ball around the origin containing `Ω`.
    pub radius: f64,
    pub w1: BoxConfig,
    pub w2: BoxConfig,
}

/// Quadrature orders; unset entries keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub radial: Option<usize>,
    pub angular: Option<usize>,
    pub inner: Option<usize>,
    pub near_regular: Option<usize>,
    pub far: Option<usize>,
    pub volume: Option<usize>,
    pub budget: Option<usize>,
}

impl QuadratureConfig {
    pub fn build(&self) -> QuadratureSpec {
        let d = QuadratureSpec::default();
        QuadratureSpec {
            radial: self.radial.unwrap_or(d.radial),
            angular: self.angular.unwrap_or(d.angular),
            inner: self.inner.unwrap_or(d.inner),
            near_regular: self.near_regular.unwrap_or(d.near_regular),
            far: self.far.unwrap_or(d.far),
            volume: self.volume.unwrap_or(d.volume),
            budget: self.budget.unwrap_or(d.budget),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub spacing: f64,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

/// `"auto"` or an explicit kernel constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelScale {
    Value(f64),
    Named(AutoScale),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoScale {
    Auto,
}

impl Default for KernelScale {
    fn default() -> Self {
        KernelScale::Named(AutoScale::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MagneticConfig {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    Gaussian {
        amplitude: Vec<f64>,
        center: Vec<f64>,
        width: f64,
        time_coeffs: Vec<f64>,
    },
    CompactBump {
        amplitude: Vec<f64>,
        center: Vec<f64>,
        radius: f64,
        time_coeffs: Vec<f64>,
    },
    /// CSV rows `t, x_1..x_n, A_1..A_n`.
    Samples {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ElectricConfig {
    Constant {
        value: f64,
    },
    Gaussian {
        base: f64,
        amplitude: f64,
        center: Vec<f64>,
        width: f64,
        time_coeffs: Vec<f64>,
        lower_bound: f64,
    },
    CompactBump {
        base: f64,
        amplitude: f64,
        center: Vec<f64>,
        radius: f64,
        time_coeffs: Vec<f64>,
        lower_bound: f64,
    },
    /// CSV rows `t, x_1..x_n, q`.
    Samples {
        file: PathBuf,
        lower_bound: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub magnetic: MagneticConfig,
    pub electric: ElectricConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub s: f64,
    pub horizon: f64,
    #[serde(default)]
    pub kernel_scale: KernelScale,
    /// Reference pair; the forward and dual commands run with it.
    pub known: PairConfig,
    /// Second pair for identity checks and inversion.
    pub truth: Option<PairConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Bump { center: f64, half_width: f64 },
    Bell { a: f64, b: f64 },
    Indicator { a: f64, b: f64 },
}

impl ProfileConfig {
    pub fn build(&self) -> TimeProfile {
        match *self {
            ProfileConfig::Bump { center, half_width } => TimeProfile::Bump { center, half_width },
            ProfileConfig::Bell { a, b } => TimeProfile::CosineBell { a, b },
            ProfileConfig::Indicator { a, b } => TimeProfile::Indicator { a, b },
        }
    }
}

/// `amplitude * exp(-|x - c|² / (2 width²)) θ(t)` on a window, or zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Centre relative to the window centre.
    #[serde(default)]
    pub offset: Vec<f64>,
    /// Width relative to the smallest window side.
    pub relative_width: f64,
    pub profile: ProfileConfig,
}

fn one() -> f64 {
    1.0
}

impl ControlConfig {
    pub fn build(&self, disc: &Discretization, window: Window) -> Result<ExteriorControl> {
        let region = disc.geometry.window(window);
        let dim = disc.dim();
        if !self.offset.is_empty() && self.offset.len() != dim {
            return Err(FracError::Config(format!("control offset needs {dim} entries")));
        }
        if !(self.relative_width > 0.0) {
            return Err(FracError::Config("control relative_width must be positive".into()));
        }
        let mut c = region.center();
        for (k, o) in self.offset.iter().enumerate() {
            c[k] += o * region.width(k);
        }
        let side = (0..dim).map(|k| region.width(k)).fold(f64::INFINITY, f64::min);
        let w = self.relative_width * side;
        let amp = self.amplitude;
        let field = project(disc, RegionTag::from(window), |x| {
            let d = point::sub(x, &c);
            amp * (-point::dot(&d, &d) / (2.0 * w * w)).exp()
        });
        Ok(SpaceTimeData::single(field, self.profile.build()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsConfig {
    /// Data on `W₁` for the forward problem.
    pub forward: ControlConfig,
    /// Data on `W₂` for the dual problem.
    pub dual: ControlConfig,
}

/// Pass/fail thresholds of the verification suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative Galerkin residual of the torsion identity.
    pub torsion: f64,
    /// Relative spread of `C₁`, `C₂` over the step sweep.
    pub form_spread: f64,
    /// Allowed deviation of the empirical Rothe order from 1.
    pub order: f64,
    /// Relative spread of the a-priori monitors between levels.
    pub monitor_spread: f64,
    pub step_violation: f64,
    pub duality: f64,
    /// `|lhs|, |rhs|` bound of the identity with equal pairs.
    pub identity_equal: f64,
    pub identity: f64,
    pub sign: f64,
    pub runge: f64,
    pub a_error: f64,
    pub q_error: f64,
    pub exact_inversion: f64,
    pub gap_identity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            torsion: 0.05,
            form_spread: 0.25,
            order: 0.3,
            monitor_spread: 0.2,
            step_violation: 1e-8,
            duality: 2e-2,
            identity_equal: 1e-6,
            identity: 5e-2,
            sign: 1e-9,
            runge: 0.15,
            a_error: 0.15,
            q_error: 0.2,
            exact_inversion: 1e-6,
            gap_identity: 1e-12,
        }
    }
}

/// Runge demonstration: a spatial bump times the indicator of a slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RungeConfig {
    pub per_axis: usize,
    pub extra_bells: usize,
    pub slab: [f64; 2],
    pub center: Vec<f64>,
    pub radius: f64,
    pub level: u32,
    /// Nested basis sizes; empty means every size.
    pub sizes: Vec<usize>,
}

impl Default for RungeConfig {
    fn default() -> Self {
        Self {
            per_axis: 4,
            extra_bells: 2,
            slab: [-0.5, 0.5],
            center: Vec::new(),
            radius: 0.95,
            level: 3,
            sizes: Vec::new(),
        }
    }
}

/// Probing and recovery parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub level: u32,
    pub per_axis: usize,
    pub extra_bells: usize,
    /// Width of the probing slabs as a fraction of `T`.
    pub slab_fraction: f64,
    /// A slabs tile `[-fT, fT]` with `f` this fraction.
    pub a_range_fraction: f64,
    pub separation: f64,
    pub radius: f64,
    /// Midpoints per axis.
    pub midpoints: usize,
    pub q_cells: usize,
    pub q_rcond: f64,
    pub consistency_tol: f64,
    pub rounds: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            level: 3,
            per_axis: 4,
            extra_bells: 2,
            slab_fraction: 0.25,
            a_range_fraction: 0.5,
            separation: 0.8,
            radius: 0.3,
            midpoints: 5,
            q_cells: 8,
            q_rcond: 1e-2,
            consistency_tol: 0.25,
            rounds: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatesConfig {
    /// Difference steps `2^-k` for these `k`.
    pub step_exponents: Vec<i32>,
    pub times: Vec<f64>,
}

impl Default for EstimatesConfig {
    fn default() -> Self {
        Self { step_exponents: vec![3, 4, 5, 6, 7], times: vec![-0.5, 0.0, 0.5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    #[default]
    Cg,
    Cholesky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub levels: Vec<u32>,
    /// `p`: Rothe steps at level 1.
    pub base_steps: usize,
    pub seed: u64,
    pub solver: SolverChoice,
    pub solver_tolerance: f64,
    /// Independent random `(g, h)` pairs for the duality suite.
    pub duality_pairs: usize,
    pub tolerances: Tolerances,
    pub runge: RungeConfig,
    pub probe: ProbeConfig,
    pub estimates: EstimatesConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            levels: vec![1, 2, 3, 4],
            base_steps: 8,
            seed: 0,
            solver: SolverChoice::Cg,
            solver_tolerance: 1e-10,
            duality_pairs: 3,
            tolerances: Tolerances::default(),
            runge: RungeConfig::default(),
            probe: ProbeConfig::default(),
            estimates: EstimatesConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub geometry: GeometryConfig,
    pub discretization: DiscretizationConfig,
    pub physics: PhysicsConfig,
    pub controls: Option<ControlsConfig>,
    #[serde(default)]
    pub run: RunConfig,
    /// Directory that relative sample paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn point_from(v: &[f64], dim: usize, what: &str) -> Result<Point> {
    if v.len() != dim {
        return Err(FracError::Config(format!("{what} needs {dim} entries, got {}", v.len())));
    }
    let mut p = ORIGIN;
    p[..dim].copy_from_slice(v);
    Ok(p)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| FracError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FracError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Re-runs every module-level check that does not need assembly.
    pub fn validate(&self) -> Result<()> {
        let disc = self.discretization()?;
        self.params()?;
        let p = &self.physics;
        for pair in std::iter::once(&p.known).chain(&p.truth) {
            self.check_pair_shape(pair, disc.dim())?;
        }
        let r = &self.run;
        if r.levels.is_empty() || r.levels.contains(&0) {
            return Err(FracError::Config("run.levels must be nonempty and start at 1".into()));
        }
        if r.base_steps == 0 || !(r.solver_tolerance > 0.0) {
            return Err(FracError::Config("run.base_steps and run.solver_tolerance must be positive".into()));
        }
        if let Some(c) = &self.controls {
            for (which, w) in [(&c.forward, Window::W1), (&c.dual, Window::W2)] {
                if !which.profile.build().supported_inside(p.horizon) {
                    return Err(FracError::Config(format!(
                        "control profile on {} must vanish outside (-T, T)",
                        RegionTag::from(w).name()
                    )));
                }
                which.build(&disc, w)?;
            }
        }
        if !r.runge.center.is_empty() {
            point_from(&r.runge.center, disc.dim(), "runge center")?;
        }
        if !(r.runge.radius > 0.0 && r.runge.slab[0] < r.runge.slab[1]) {
            return Err(FracError::Config("runge radius must be positive and the slab nonempty".into()));
        }
        let pr = &r.probe;
        if !(pr.slab_fraction > 0.0 && pr.a_range_fraction > 0.0 && pr.a_range_fraction <= 1.0) {
            return Err(FracError::Config("probe slab fractions out of range".into()));
        }
        if pr.midpoints == 0 || pr.rounds == 0 || pr.per_axis == 0 {
            return Err(FracError::Config("probe counts must be positive".into()));
        }
        Ok(())
    }

    fn check_pair_shape(&self, pair: &PairConfig, dim: usize) -> Result<()> {
        match &pair.magnetic {
            MagneticConfig::Constant { value } => {
                point_from(value, dim, "magnetic value")?;
            }
            MagneticConfig::Gaussian { amplitude, center, .. } | MagneticConfig::CompactBump { amplitude, center, .. } => {
                point_from(amplitude, dim, "magnetic amplitude")?;
                point_from(center, dim, "magnetic center")?;
            }
            MagneticConfig::Zero | MagneticConfig::Samples { .. } => {}
        }
        match &pair.electric {
            ElectricConfig::Gaussian { center, .. } | ElectricConfig::CompactBump { center, .. } => {
                point_from(center, dim, "electric center")?;
            }
            ElectricConfig::Constant { .. } | ElectricConfig::Samples { .. } => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.geometry.omega.lo.len()
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let g = &self.geometry;
        Geometry::new(g.omega.build()?, g.radius, g.w1.build()?, g.w2.build()?)
    }

    pub fn discretization(&self) -> Result<Discretization> {
        Discretization::new(self.geometry()?, self.discretization.spacing, self.discretization.quadrature.build())
    }

    pub fn params(&self) -> Result<FracParams> {
        let p = &self.physics;
        match p.kernel_scale {
            KernelScale::Named(AutoScale::Auto) => FracParams::with_default_scale(self.dim(), p.s, p.horizon, self.geometry.radius),
            KernelScale::Value(c) => FracParams::new(self.dim(), p.s, c, p.horizon, self.geometry.radius),
        }
    }

    pub fn assembler(&self) -> Result<Assembler> {
        Assembler::new(self.discretization()?, self.params()?)
    }

    pub fn options(&self) -> EvolveOptions {
        EvolveOptions {
            solver: match self.run.solver {
                SolverChoice::Cg => SolverKind::ConjugateGradient,
                SolverChoice::Cholesky => SolverKind::Cholesky,
            },
            tolerance: self.run.solver_tolerance,
        }
    }

    pub fn grid(&self, level: u32) -> Result<TimeGrid> {
        TimeGrid::new(self.physics.horizon, self.run.base_steps, level)
    }

    fn read_samples(&self, file: &Path, components: usize) -> Result<GriddedSamples> {
        let path = if file.is_absolute() { file.to_path_buf() } else { self.base_dir.join(file) };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| FracError::Config(format!("cannot read samples {}: {e}", path.display())))?;
        GriddedSamples::from_csv(&text, self.dim(), components)
    }

    pub fn build_pair(&self, pair: &PairConfig) -> Result<PotentialPair> {
        let dim = self.dim();
        let omega = self.geometry.omega.build()?;
        let magnetic = match &pair.magnetic {
            MagneticConfig::Zero => MagneticPotential::zero(omega),
            MagneticConfig::Constant { value } => MagneticPotential::constant(omega, point_from(value, dim, "value")?),
            MagneticConfig::Gaussian { amplitude, center, width, time_coeffs } => MagneticPotential::gaussian_bump(
                omega,
                point_from(amplitude, dim, "amplitude")?,
                point_from(center, dim, "center")?,
                *width,
                time_coeffs.clone(),
            ),
            MagneticConfig::CompactBump { amplitude, center, radius, time_coeffs } => MagneticPotential::compact_bump(
                omega,
                point_from(amplitude, dim, "amplitude")?,
                point_from(center, dim, "center")?,
                *radius,
                time_coeffs.clone(),
            ),
            MagneticConfig::Samples { file } => MagneticPotential::sampled(omega, self.read_samples(file, dim)?)?,
        };
        let electric = match &pair.electric {
            ElectricConfig::Constant { value } => ElectricPotential::constant(*value)?,
            ElectricConfig::Gaussian { base, amplitude, center, width, time_coeffs, lower_bound } => {
                ElectricPotential::gaussian_bump(
                    *base,
                    *amplitude,
                    point_from(center, dim, "center")?,
                    *width,
                    time_coeffs.clone(),
                    *lower_bound,
                )?
            }
            ElectricConfig::CompactBump { base, amplitude, center, radius, time_coeffs, lower_bound } => {
                ElectricPotential::compact_bump(
                    *base,
                    *amplitude,
                    point_from(center, dim, "center")?,
                    *radius,
                    time_coeffs.clone(),
                    *lower_bound,
                )?
            }
            ElectricConfig::Samples { file, lower_bound } => {
                ElectricPotential::sampled(self.read_samples(file, 1)?, *lower_bound)?
            }
        };
        Ok(PotentialPair::new(magnetic, electric))
    }

    pub fn known_pair(&self) -> Result<PotentialPair> {
        self.build_pair(&self.physics.known)
    }

    pub fn truth_pair(&self) -> Result<PotentialPair> {
        let truth = self
            .physics
            .truth
            .as_ref()
            .ok_or_else(|| FracError::Config("physics.truth is required for this command".into()))?;
        self.build_pair(truth)
    }

    pub fn controls(&self) -> Result<&ControlsConfig> {
        self.controls.as_ref().ok_or_else(|| FracError::Config("a [controls] block is required for this command".into()))
    }

    /// Pipeline settings derived from the probe block.
    pub fn inversion_settings(&self, disc: &Discretization) -> InversionSettings {
        let pr = &self.run.probe;
        let t = self.physics.horizon;
        let omega = &disc.geometry.omega;
        let reach = 0.5 * pr.separation + pr.radius;
        let half = pr.a_range_fraction * t;
        let midpoint_axes = (0..disc.dim())
            .map(|k| {
                let lo = omega.lo[k] + reach;
                let hi = omega.hi[k] - reach;
                if pr.midpoints == 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..pr.midpoints).map(|i| lo + (hi - lo) * i as f64 / (pr.midpoints - 1) as f64).collect()
                }
            })
            .collect();
        InversionSettings {
            per_axis: pr.per_axis,
            extra_bells: pr.extra_bells,
            a_slabs: tile_slabs(-half, half, pr.slab_fraction * t),
            q_slabs: tile_slabs(-t, t, pr.slab_fraction * t),
            probe_separation: pr.separation,
            probe_radius: pr.radius,
            midpoint_axes,
            q_cells: pr.q_cells,
            q_rcond: pr.q_rcond,
            consistency_tol: pr.consistency_tol,
            rounds: pr.rounds,
        }
    }

    /// One-dimensional desk configuration: `Ω = [-1, 1]`, spacing `1/64`, `T = 1`, `p = 8`.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            geometry: GeometryConfig {
                omega: BoxConfig { lo: vec![-1.0], hi: vec![1.0] },
                radius: 1.0,
                w1: BoxConfig { lo: vec![4.0], hi: vec![5.0] },
                w2: BoxConfig { lo: vec![6.0], hi: vec![7.0] },
            },
            discretization: DiscretizationConfig { spacing: 1.0 / 64.0, quadrature: QuadratureConfig::default() },
            physics: PhysicsConfig {
                s: 0.5,
                horizon: 1.0,
                kernel_scale: KernelScale::default(),
                known: PairConfig {
                    magnetic: MagneticConfig::Zero,
                    electric: ElectricConfig::Constant { value: 1.0 },
                },
                truth: Some(PairConfig {
                    magnetic: MagneticConfig::CompactBump {
                        amplitude: vec![1.5],
                        center: vec![0.0],
                        radius: 0.9,
                        time_coeffs: vec![1.0, 0.3],
                    },
                    electric: ElectricConfig::CompactBump {
                        base: 1.0,
                        amplitude: 0.5,
                        center: vec![0.1],
                        radius: 0.7,
                        time_coeffs: vec![1.0, -0.2],
                        lower_bound: 0.2,
                    },
                }),
            },
            controls: Some(ControlsConfig {
                forward: ControlConfig {
                    amplitude: 1.0,
                    offset: vec![0.0],
                    relative_width: 0.2,
                    profile: ProfileConfig::Bump { center: 0.0, half_width: 0.8 },
                },
                dual: ControlConfig {
                    amplitude: 1.0,
                    offset: vec![0.1],
                    relative_width: 0.25,
                    profile: ProfileConfig::Bump { center: 0.1, half_width: 0.7 },
                },
            }),
            run: RunConfig::default(),
            base_dir: PathBuf::new(),
        }
    }

    /// Two-dimensional smoke configuration with `24²` interior nodes.
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.name = "smoke".into();
        c.geometry = GeometryConfig {
            omega: BoxConfig { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] },
            radius: 1.5,
            w1: BoxConfig { lo: vec![5.0, -0.5], hi: vec![6.0, 0.5] },
            w2: BoxConfig { lo: vec![-0.5, 5.0], hi: vec![0.5, 6.0] },
        };
        c.discretization.spacing = 2.0 / 25.0;
        c.physics.truth = Some(PairConfig {
            magnetic: MagneticConfig::CompactBump {
                amplitude: vec![1.2, -0.6],
                center: vec![0.0, 0.0],
                radius: 0.9,
                time_coeffs: vec![1.0, 0.3],
            },
            electric: ElectricConfig::CompactBump {
                base: 1.0,
                amplitude: 0.5,
                center: vec![0.1, -0.1],
                radius: 0.7,
                time_coeffs: vec![1.0, -0.2],
                lower_bound: 0.2,
            },
        });
        let controls = c.controls.as_mut().expect("desk has controls");
        controls.forward.offset = vec![0.0, 0.0];
        controls.dual.offset = vec![0.1, -0.1];
        c.run.levels = vec![1, 2, 3, 4];
        c.run.probe.midpoints = 3;
        c.run.probe.q_cells = 5;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "smoke" => Ok(Self::smoke()),
            other => Err(FracError::Config(format!("unknown preset {other:?}; expected desk or smoke"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for c in [ExperimentConfig::desk(), ExperimentConfig::smoke()] {
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn desk_settings_match_library_defaults() {
        let c = ExperimentConfig::desk();
        let disc = c.discretization().unwrap();
        assert_eq!(c.inversion_settings(&disc), InversionSettings::desk(&disc, c.physics.horizon));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ExperimentConfig::desk().to_toml();
        text.push_str("\n[extra]\nvalue = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(FracError::Config(_))));
        let text = ExperimentConfig::desk().to_toml().replace("spacing =", "spcing =");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn geometry_violations_surface_at_load() {
        let mut c = ExperimentConfig::desk();
        c.geometry.w1 = BoxConfig { lo: vec![2.0], hi: vec![3.0] };
        assert!(matches!(ExperimentConfig::from_toml(&c.to_toml()), Err(FracError::Geometry(_))));
    }

    #[test]
    fn explicit_kernel_scale_parses() {
        let text = ExperimentConfig::desk().to_toml().replace("kernel_scale = \"auto\"", "kernel_scale = 0.25");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.physics.kernel_scale, KernelScale::Value(0.25));
        assert_eq!(c.params().unwrap().kernel_scale, 0.25);
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let mut c = ExperimentConfig::desk();
        c.physics.truth.as_mut().unwrap().magnetic =
            MagneticConfig::Constant { value: vec![1.0, 2.0] };
        assert!(matches!(c.validate(), Err(FracError::Config(_))));
    }
}
