//! Space-time data: exterior controls on a window and interior targets on the
//! domain, both as finite sums `Σ_k c_k(x) θ_k(t)` of hat expansions times profiles.

use nalgebra::DVector;

use crate::error::{FracError, Result};
use crate::grid::{Discretization, Field, RegionTag, Window};

/// Scalar time profile.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeProfile {
    /// `exp(1 - 1/(1 - ((t - center)/half_width)^2))` inside the support, zero outside.
    Bump { center: f64, half_width: f64 },
    /// Indicator of `[a, b]`.
    Indicator { a: f64, b: f64 },
    /// `cos(π (t - c)/(b - a))^2` on `[a, b]` with `c` the midpoint, zero outside (C¹).
    CosineBell { a: f64, b: f64 },
    Constant(f64),
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Bump { center, half_width } => {
                let z = (t - center) / half_width;
                let z2 = z * z;
                if z2 >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - z2)).exp()
                }
            }
            TimeProfile::Indicator { a, b } => {
                if t >= a && t <= b {
                    1.0
                } else {
                    0.0
                }
            }
            TimeProfile::CosineBell { a, b } => {
                // centred form keeps reversal exact in floating point
                let c = 0.5 * (a + b);
                let x = (t - c) / (b - a);
                if x.abs() >= 0.5 {
                    0.0
                } else {
                    (std::f64::consts::PI * x).cos().powi(2)
                }
            }
            TimeProfile::Constant(c) => c,
        }
    }

    /// `t -> θ(-t)`.
    pub fn time_reversed(&self) -> Self {
        match *self {
            TimeProfile::Bump { center, half_width } => TimeProfile::Bump { center: -center, half_width },
            TimeProfile::Indicator { a, b } => TimeProfile::Indicator { a: -b, b: -a },
            TimeProfile::CosineBell { a, b } => TimeProfile::CosineBell { a: -b, b: -a },
            TimeProfile::Constant(c) => TimeProfile::Constant(c),
        }
    }

    /// Whether the profile vanishes outside the open interval `(-horizon, horizon)`.
    pub fn supported_inside(&self, horizon: f64) -> bool {
        match *self {
            TimeProfile::Bump { center, half_width } => center - half_width >= -horizon && center + half_width <= horizon,
            TimeProfile::Indicator { a, b } | TimeProfile::CosineBell { a, b } => a >= -horizon && b <= horizon,
            TimeProfile::Constant(c) => c == 0.0,
        }
    }

    /// Breakpoints where the profile is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            TimeProfile::Bump { center, half_width } => vec![center - half_width, center + half_width],
            TimeProfile::Indicator { a, b } | TimeProfile::CosineBell { a, b } => vec![a, b],
            TimeProfile::Constant(_) => Vec::new(),
        }
    }
}

/// One separable term `c(x) θ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeTerm {
    pub spatial: DVector<f64>,
    pub profile: TimeProfile,
}

/// `Σ_k c_k(x) θ_k(t)` with all `c_k` on the interior hats of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeData {
    pub region: RegionTag,
    pub len: usize,
    pub terms: Vec<SpaceTimeTerm>,
}

/// Exterior Dirichlet data on a window.
pub type ExteriorControl = SpaceTimeData;

impl SpaceTimeData {
    pub fn zero(region: RegionTag, len: usize) -> Self {
        Self { region, len, terms: Vec::new() }
    }

    pub fn single(field: Field, profile: TimeProfile) -> Self {
        let len = field.len();
        Self { region: field.region, len, terms: vec![SpaceTimeTerm { spatial: field.coeffs, profile }] }
    }

    pub fn new(region: RegionTag, len: usize, terms: Vec<SpaceTimeTerm>) -> Result<Self> {
        if let Some(t) = terms.iter().find(|t| t.spatial.len() != len) {
            return Err(FracError::InvalidParameter(format!(
                "space-time term has {} coefficients, region {} has {len}",
                t.spatial.len(),
                region.name()
            )));
        }
        Ok(Self { region, len, terms })
    }

    /// Window this control lives on.
    pub fn window(&self) -> Result<Window> {
        match self.region {
            RegionTag::W1 => Ok(Window::W1),
            RegionTag::W2 => Ok(Window::W2),
            RegionTag::Omega => Err(FracError::Geometry("exterior control must live on a window".into())),
        }
    }

    pub fn checked_for(&self, disc: &Discretization) -> Result<()> {
        let expected = disc.grid(self.region).interior_count();
        if expected != self.len {
            return Err(FracError::InvalidParameter(format!(
                "data has {} coefficients, region {} has {expected}",
                self.len,
                self.region.name()
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.spatial.iter().all(|&v| v == 0.0))
    }

    pub fn coeffs_at(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.len);
        for term in &self.terms {
            let v = term.profile.value(t);
            if v != 0.0 {
                out.axpy(v, &term.spatial, 1.0);
            }
        }
        out
    }

    pub fn field_at(&self, t: f64) -> Field {
        Field::new(self.coeffs_at(t), self.region)
    }

    pub fn time_reversed(&self) -> Self {
        Self {
            region: self.region,
            len: self.len,
            terms: self
                .terms
                .iter()
                .map(|t| SpaceTimeTerm { spatial: t.spatial.clone(), profile: t.profile.time_reversed() })
                .collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            region: self.region,
            len: self.len,
            terms: self
                .terms
                .iter()
                .map(|t| SpaceTimeTerm { spatial: &t.spatial * c, profile: t.profile.clone() })
                .collect(),
        }
    }

    /// `Σ_i w_i d_i`, concatenating terms.
    pub fn combination(weights: &[f64], data: &[&SpaceTimeData]) -> Result<Self> {
        let first = data.first().ok_or_else(|| FracError::InvalidParameter("empty combination".into()))?;
        let mut terms = Vec::new();
        for (w, d) in weights.iter().zip(data) {
            if d.region != first.region || d.len != first.len {
                return Err(FracError::InvalidParameter("combining data on different regions".into()));
            }
            if *w != 0.0 {
                terms.extend(d.scaled(*w).terms);
            }
        }
        Ok(Self { region: first.region, len: first.len, terms })
    }

    /// All time breakpoints of the profiles.
    pub fn kinks(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.terms.iter().flat_map(|t| t.profile.kinks()).collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    pub fn supported_inside(&self, horizon: f64) -> bool {
        self.terms.iter().all(|t| t.profile.supported_inside(horizon) || t.spatial.iter().all(|&v| v == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_is_smooth_and_compact() {
        let b = TimeProfile::Bump { center: 0.2, half_width: 0.5 };
        assert_eq!(b.value(0.2), 1.0);
        assert_eq!(b.value(0.7), 0.0);
        assert_eq!(b.value(-0.31), 0.0);
        assert!(b.value(0.69) < 1e-10);
        assert!(b.supported_inside(1.0));
        assert!(!TimeProfile::Constant(1.0).supported_inside(1.0));
    }

    #[test]
    fn reversal_is_an_exact_involution() {
        let d = SpaceTimeData::new(
            RegionTag::W1,
            3,
            vec![
                SpaceTimeTerm {
                    spatial: DVector::from_vec(vec![1.0, 2.0, 3.0]),
                    profile: TimeProfile::Bump { center: 0.3, half_width: 0.4 },
                },
                SpaceTimeTerm {
                    spatial: DVector::from_vec(vec![0.0, -1.0, 0.5]),
                    profile: TimeProfile::CosineBell { a: -0.9, b: 0.1 },
                },
            ],
        )
        .unwrap();
        assert_eq!(d.time_reversed().time_reversed(), d);
        for t in [-0.8, -0.3, 0.0, 0.35, 0.6] {
            assert_eq!(d.time_reversed().coeffs_at(t), d.coeffs_at(-t));
        }
    }

    #[test]
    fn combination_is_linear() {
        let f = Field::new(DVector::from_vec(vec![1.0, -2.0]), RegionTag::W2);
        let a = SpaceTimeData::single(f.clone(), TimeProfile::Bump { center: 0.0, half_width: 0.5 });
        let b = SpaceTimeData::single(f, TimeProfile::Indicator { a: -0.2, b: 0.4 });
        let c = SpaceTimeData::combination(&[2.0, -1.0], &[&a, &b]).unwrap();
        for t in [-0.1, 0.3, 0.45] {
            let want = a.coeffs_at(t) * 2.0 - b.coeffs_at(t);
            assert!((c.coeffs_at(t) - want).norm() < 1e-15);
        }
        assert!(SpaceTimeData::zero(RegionTag::W1, 2).is_zero());
    }
}
