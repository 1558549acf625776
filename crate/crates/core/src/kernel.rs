//! Pointwise kernels: the power-law kernel `K`, the cosine modulation
//! `R_A(x, y, t) = cos((x - y) . A((x + y) / 2, t))`, the difference kernel
//! `G = 2 (R_{A2} - R_{A1}) K`, and the potential fields themselves.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use statrs::function::gamma::gamma;

use crate::error::{FracError, Result};
use crate::grid::BoxRegion;
use crate::point::{self, Point, ORIGIN};
use crate::samples::GriddedSamples;

/// Dimension, fractional order, kernel constant, time horizon and the radius of
/// a ball containing the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracParams {
    pub n: usize,
    pub s: f64,
    pub kernel_scale: f64,
    pub horizon: f64,
    pub radius: f64,
}

impl FracParams {
    pub fn new(n: usize, s: f64, kernel_scale: f64, horizon: f64, radius: f64) -> Result<Self> {
        if !(1..=point::MAX_DIM).contains(&n) {
            return Err(FracError::InvalidParameter(format!("dimension n = {n} outside 1..=3")));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(FracError::InvalidParameter(format!("fractional order s = {s} not in (0, 1)")));
        }
        if !(kernel_scale > 0.0 && kernel_scale.is_finite()) {
            return Err(FracError::InvalidParameter(format!("kernel_scale = {kernel_scale} must be positive")));
        }
        if !(horizon > 0.0) {
            return Err(FracError::InvalidParameter(format!("time horizon T = {horizon} must be positive")));
        }
        if !(radius > 0.0) {
            return Err(FracError::InvalidParameter(format!("radius r = {radius} must be positive")));
        }
        Ok(Self { n, s, kernel_scale, horizon, radius })
    }

    /// Same as [`FracParams::new`] with `kernel_scale = default_kernel_scale(n, s)`.
    pub fn with_default_scale(n: usize, s: f64, horizon: f64, radius: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(FracError::InvalidParameter(format!("fractional order s = {s} not in (0, 1)")));
        }
        Self::new(n, s, default_kernel_scale(n, s), horizon, radius)
    }

    /// Exponent `n + 2s` of the kernel singularity.
    #[inline]
    pub fn exponent(&self) -> f64 {
        self.n as f64 + 2.0 * self.s
    }

    /// `kernel_scale * r^{-(n+2s)}` for a distance `r > 0`.
    #[inline]
    pub fn kernel_at_distance(&self, r: f64) -> f64 {
        self.kernel_scale * r.powf(-self.exponent())
    }
}

/// Constant `c_{n,s} = 4^s Gamma(n/2 + s) / (pi^{n/2} |Gamma(-s)|)` of the pointwise
/// fractional Laplacian.
pub fn fractional_laplacian_constant(n: usize, s: f64) -> f64 {
    let nh = n as f64 / 2.0;
    // |Gamma(-s)| = Gamma(1 - s) / s for 0 < s < 1
    let abs_gamma_neg_s = gamma(1.0 - s) / s;
    4f64.powf(s) * gamma(nh + s) / (PI.powf(nh) * abs_gamma_neg_s)
}

/// `λ` with `(-Δ)^s (1 - |x|²)_+^s = λ` on the unit ball:
/// `4^s Γ(1 + s) Γ(n/2 + s) / Γ(n/2)`.
pub fn torsion_constant(n: usize, s: f64) -> f64 {
    let nh = n as f64 / 2.0;
    4f64.powf(s) * gamma(1.0 + s) * gamma(nh + s) / gamma(nh)
}

/// Kernel constant for which the A-free form `∬ (u(x)-u(y))(v(x)-v(y)) K` equals
/// `((-Δ)^s u, v)` with Fourier symbol `|ξ|^{2s}`.
///
/// The operator carries a factor 2 in front of its integral, so the form constant
/// is half of the pointwise constant `c_{n,s}`.
pub fn default_kernel_scale(n: usize, s: f64) -> f64 {
    0.5 * fractional_laplacian_constant(n, s)
}

/// `K(x, y) = kernel_scale |x - y|^{-(n+2s)}`.
pub fn kernel_eval(x: &Point, y: &Point, p: &FracParams) -> Result<f64> {
    let r = point::dist(x, y);
    if r == 0.0 {
        return Err(FracError::Singularity);
    }
    Ok(p.kernel_at_distance(r))
}

type VectorFn = dyn Fn(&Point, f64) -> Point + Send + Sync;
type ScalarFn = dyn Fn(&Point, f64) -> f64 + Send + Sync;

fn poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// `exp(1 - 1/(1 - z²))` for `z² < 1`, zero otherwise.
pub fn smooth_bump(z2: f64) -> f64 {
    if z2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - z2)).exp()
    }
}

/// Time-dependent vector potential, zero-extended outside its support box.
#[derive(Clone)]
pub struct MagneticPotential {
    f: Arc<VectorFn>,
    support: BoxRegion,
    active: BoxRegion,
    label: String,
}

impl fmt::Debug for MagneticPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MagneticPotential").field("label", &self.label).field("support", &self.support).finish()
    }
}

impl MagneticPotential {
    /// Wraps a closure; values outside `support` are forced to zero.
    pub fn from_fn<F>(support: BoxRegion, label: impl Into<String>, f: F) -> Self
    where
        F: Fn(&Point, f64) -> Point + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), active: support.clone(), support, label: label.into() }
    }

    pub fn zero(support: BoxRegion) -> Self {
        let mut a = Self::from_fn(support, "zero", |_, _| ORIGIN);
        a.active = BoxRegion::empty(a.support.dim);
        a
    }

    pub fn constant(support: BoxRegion, value: Point) -> Self {
        let label = format!("constant{:?}", &value[..support.dim]);
        Self::from_fn(support, label, move |_, _| value)
    }

    /// `amplitude * exp(-|x-c|^2 / (2 width^2)) * p(t)`, truncated to the support box.
    pub fn gaussian_bump(support: BoxRegion, amplitude: Point, center: Point, width: f64, time_coeffs: Vec<f64>) -> Self {
        let label = format!(
            "gaussian(amp={:?},center={:?},width={width},t={time_coeffs:?})",
            &amplitude[..support.dim],
            &center[..support.dim]
        );
        Self::from_fn(support, label, move |x, t| {
            let d = point::sub(x, &center);
            let g = (-point::dot(&d, &d) / (2.0 * width * width)).exp() * poly(&time_coeffs, t);
            point::scale(&amplitude, g)
        })
    }

    /// `amplitude * exp(1 - 1/(1 - |x-c|^2/radius^2)) * p(t)`: C-infinity, compactly supported.
    pub fn compact_bump(support: BoxRegion, amplitude: Point, center: Point, radius: f64, time_coeffs: Vec<f64>) -> Self {
        let label = format!(
            "bump(amp={:?},center={:?},radius={radius},t={time_coeffs:?})",
            &amplitude[..support.dim],
            &center[..support.dim]
        );
        let dim = support.dim;
        let mut lo = ORIGIN;
        let mut hi = ORIGIN;
        for k in 0..dim {
            lo[k] = center[k] - radius;
            hi[k] = center[k] + radius;
        }
        let mut a = Self::from_fn(support, label, move |x, t| {
            let d = point::sub(x, &center);
            let g = smooth_bump(point::dot(&d, &d) / (radius * radius)) * poly(&time_coeffs, t);
            point::scale(&amplitude, g)
        });
        a.active = a.support.intersection(&BoxRegion::new(dim, lo, hi));
        a
    }

    /// Gridded samples with multilinear interpolation in space and a C² cubic spline in time.
    pub fn sampled(support: BoxRegion, samples: GriddedSamples) -> Result<Self> {
        if samples.components() != support.dim {
            return Err(FracError::InvalidParameter(format!(
                "magnetic samples carry {} components, dimension is {}",
                samples.components(),
                support.dim
            )));
        }
        let label = format!("sampled({})", samples.digest());
        let samples = Arc::new(samples);
        Ok(Self::from_fn(support, label, move |x, t| {
            let mut out = ORIGIN;
            samples.eval_into(x, t, &mut out);
            out
        }))
    }

    #[inline]
    pub fn value(&self, x: &Point, t: f64) -> Point {
        if !self.active.contains_closed(x) {
            return ORIGIN;
        }
        (self.f)(x, t)
    }

    pub fn support(&self) -> &BoxRegion {
        &self.support
    }

    /// Box outside of which the potential vanishes identically.
    pub fn active_region(&self) -> &BoxRegion {
        &self.active
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `x, t -> -A(x, t)`.
    pub fn negated(&self) -> Self {
        let f = Arc::clone(&self.f);
        Self {
            f: Arc::new(move |x, t| point::scale(&f(x, t), -1.0)),
            support: self.support.clone(),
            active: self.active.clone(),
            label: format!("neg({})", self.label),
        }
    }

    /// `x, t -> A(x, -t)`.
    pub fn time_reversed(&self) -> Self {
        let f = Arc::clone(&self.f);
        Self {
            f: Arc::new(move |x, t| f(x, -t)),
            support: self.support.clone(),
            active: self.active.clone(),
            label: format!("rev({})", self.label),
        }
    }
}

/// Time-dependent scalar potential with a declared positive lower bound on the domain.
#[derive(Clone)]
pub struct ElectricPotential {
    f: Arc<ScalarFn>,
    lower_bound: f64,
    label: String,
}

impl fmt::Debug for ElectricPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ElectricPotential").field("label", &self.label).field("lower_bound", &self.lower_bound).finish()
    }
}

impl ElectricPotential {
    pub fn from_fn<F>(lower_bound: f64, label: impl Into<String>, f: F) -> Result<Self>
    where
        F: Fn(&Point, f64) -> f64 + Send + Sync + 'static,
    {
        if !(lower_bound > 0.0) {
            return Err(FracError::InvalidParameter(format!("electric lower bound {lower_bound} must be positive")));
        }
        Ok(Self { f: Arc::new(f), lower_bound, label: label.into() })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::from_fn(value, format!("constant({value})"), move |_, _| value)
    }

    /// `base + amplitude * exp(-|x-c|^2/(2 width^2)) * p(t)`.
    pub fn gaussian_bump(base: f64, amplitude: f64, center: Point, width: f64, time_coeffs: Vec<f64>, lower_bound: f64) -> Result<Self> {
        let label = format!("gaussian(base={base},amp={amplitude},center={center:?},width={width},t={time_coeffs:?})");
        Self::from_fn(lower_bound, label, move |x, t| {
            let d = point::sub(x, &center);
            base + amplitude * (-point::dot(&d, &d) / (2.0 * width * width)).exp() * poly(&time_coeffs, t)
        })
    }

    /// `base + amplitude * bump((x-c)/radius) * p(t)` with the C-infinity bump.
    pub fn compact_bump(base: f64, amplitude: f64, center: Point, radius: f64, time_coeffs: Vec<f64>, lower_bound: f64) -> Result<Self> {
        let label = format!("bump(base={base},amp={amplitude},center={center:?},radius={radius},t={time_coeffs:?})");
        Self::from_fn(lower_bound, label, move |x, t| {
            let d = point::sub(x, &center);
            base + amplitude * smooth_bump(point::dot(&d, &d) / (radius * radius)) * poly(&time_coeffs, t)
        })
    }

    pub fn sampled(samples: GriddedSamples, lower_bound: f64) -> Result<Self> {
        if samples.components() != 1 {
            return Err(FracError::InvalidParameter("electric samples must be scalar".into()));
        }
        let label = format!("sampled({})", samples.digest());
        let samples = Arc::new(samples);
        Self::from_fn(lower_bound, label, move |x, t| {
            let mut out = ORIGIN;
            samples.eval_into(x, t, &mut out);
            out[0]
        })
    }

    #[inline]
    pub fn value(&self, x: &Point, t: f64) -> f64 {
        (self.f)(x, t)
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn time_reversed(&self) -> Self {
        let f = Arc::clone(&self.f);
        Self { f: Arc::new(move |x, t| f(x, -t)), lower_bound: self.lower_bound, label: format!("rev({})", self.label) }
    }

    /// `x, t -> q(x, t) + other(x, t)`; the lower bound is taken from `self` plus `min_shift`.
    pub fn shifted_by(&self, other: &ElectricPotential, min_shift: f64) -> Result<Self> {
        let f = Arc::clone(&self.f);
        let g = Arc::clone(&other.f);
        Self::from_fn(
            self.lower_bound + min_shift,
            format!("({})+({})", self.label, other.label),
            move |x, t| f(x, t) + g(x, t),
        )
    }
}

/// A magnetic/electric pair `(A, q)`.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    pub magnetic: MagneticPotential,
    pub electric: ElectricPotential,
}

impl PotentialPair {
    pub fn new(magnetic: MagneticPotential, electric: ElectricPotential) -> Self {
        Self { magnetic, electric }
    }

    pub fn time_reversed(&self) -> Self {
        Self { magnetic: self.magnetic.time_reversed(), electric: self.electric.time_reversed() }
    }

    pub fn with_negated_magnetic(&self) -> Self {
        Self { magnetic: self.magnetic.negated(), electric: self.electric.clone() }
    }

    pub fn label(&self) -> String {
        format!("A={};q={}", self.magnetic.label(), self.electric.label())
    }
}

/// `cos((x - y) . A((x + y)/2, t))`.
#[inline]
pub fn cos_modulation(x: &Point, y: &Point, t: f64, a: &MagneticPotential) -> f64 {
    let m = point::midpoint(x, y);
    let av = a.value(&m, t);
    point::dot(&point::sub(x, y), &av).cos()
}

/// `G(x, y, t) = 2 (R_{A2} - R_{A1}) K(x, y)`.
pub fn difference_kernel_g(
    x: &Point,
    y: &Point,
    t: f64,
    a1: &MagneticPotential,
    a2: &MagneticPotential,
    p: &FracParams,
) -> Result<f64> {
    let k = kernel_eval(x, y, p)?;
    Ok(2.0 * (cos_modulation(x, y, t, a2) - cos_modulation(x, y, t, a1)) * k)
}

/// Explicit majorant `C'` in `|G| <= C' |x-y|^{-(n+2s-2)}` from `1 - cos z <= z^2/2`:
/// `C' = kernel_scale * (|A1|_inf^2 + |A2|_inf^2)`.
pub fn difference_kernel_majorant(a1_sup: f64, a2_sup: f64, p: &FracParams) -> f64 {
    p.kernel_scale * (a1_sup * a1_sup + a2_sup * a2_sup)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn omega1() -> BoxRegion {
        BoxRegion::interval(-1.0, 1.0)
    }

    #[test]
    fn kernel_is_symmetric_and_homogeneous() {
        let p = FracParams::new(1, 0.5, 1.0 / PI, 1.0, 1.0).unwrap();
        let x = [0.3, 0.0, 0.0];
        let y = [1.3, 0.0, 0.0];
        assert_eq!(kernel_eval(&x, &y, &p).unwrap(), kernel_eval(&y, &x, &p).unwrap());
        assert!((kernel_eval(&x, &y, &p).unwrap() - 1.0 / PI).abs() < 1e-15);
        let y_half = [0.8, 0.0, 0.0];
        let ratio = kernel_eval(&x, &y_half, &p).unwrap() / kernel_eval(&x, &y, &p).unwrap();
        assert!((ratio - 2f64.powf(p.exponent())).abs() < 1e-12);
    }

    #[test]
    fn kernel_rejects_diagonal() {
        let p = FracParams::with_default_scale(2, 0.3, 1.0, 1.0).unwrap();
        assert!(matches!(kernel_eval(&[0.1, 0.2, 0.0], &[0.1, 0.2, 0.0], &p), Err(FracError::Singularity)));
    }

    #[test]
    fn laplacian_constant_half_order_line() {
        // c_{1,1/2} = 1/pi
        assert!((fractional_laplacian_constant(1, 0.5) - 1.0 / PI).abs() < 1e-14);
        assert!((default_kernel_scale(1, 0.5) - 0.5 / PI).abs() < 1e-14);
        // c_{2,1/2} = 4^{1/2} Gamma(3/2) / (pi * 2 sqrt(pi)) = 1/(2 pi)
        assert!((fractional_laplacian_constant(2, 0.5) - 0.5 / PI).abs() < 1e-14);
    }

    #[test]
    fn default_scale_positive_over_range() {
        for n in 1..=3 {
            for i in 1..20 {
                let s = i as f64 / 20.0;
                assert!(default_kernel_scale(n, s) > 0.0);
            }
        }
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(FracParams::new(0, 0.5, 1.0, 1.0, 1.0).is_err());
        assert!(FracParams::new(1, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(FracParams::new(1, 0.5, -1.0, 1.0, 1.0).is_err());
        assert!(FracParams::new(1, 0.5, 1.0, 0.0, 1.0).is_err());
        assert!(FracParams::new(1, 0.5, 1.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn modulation_trivial_cases() {
        let a = MagneticPotential::constant(omega1(), [1.7, 0.0, 0.0]);
        let z = MagneticPotential::zero(omega1());
        let x = [0.2, 0.0, 0.0];
        let y = [-0.4, 0.0, 0.0];
        assert_eq!(cos_modulation(&x, &x, 0.3, &a), 1.0);
        assert_eq!(cos_modulation(&x, &y, 0.3, &z), 1.0);
        assert_eq!(cos_modulation(&x, &y, 0.3, &a), cos_modulation(&x, &y, 0.3, &a.negated()));
        let r = cos_modulation(&x, &y, 0.3, &a);
        assert!((r - (0.6f64 * 1.7).cos()).abs() < 1e-15);
    }

    #[test]
    fn modulation_is_one_between_domain_and_far_window() {
        let a = MagneticPotential::constant(omega1(), [3.0, 0.0, 0.0]);
        for i in 0..20 {
            let x = [-1.0 + 0.1 * i as f64, 0.0, 0.0];
            let y = [4.0 + 0.05 * i as f64, 0.0, 0.0];
            assert_eq!(cos_modulation(&x, &y, 0.0, &a), 1.0);
        }
    }

    #[test]
    fn difference_kernel_vanishes_for_equal_or_opposite() {
        let p = FracParams::with_default_scale(1, 0.4, 1.0, 1.0).unwrap();
        let a = MagneticPotential::gaussian_bump(omega1(), [2.0, 0.0, 0.0], [0.1, 0.0, 0.0], 0.3, vec![1.0, 0.5]);
        let x = [0.3, 0.0, 0.0];
        let y = [-0.2, 0.0, 0.0];
        assert_eq!(difference_kernel_g(&x, &y, 0.2, &a, &a, &p).unwrap(), 0.0);
        assert_eq!(difference_kernel_g(&x, &y, 0.2, &a, &a.negated(), &p).unwrap(), 0.0);
    }

    #[test]
    fn time_reversal_and_negation_compose() {
        let a = MagneticPotential::gaussian_bump(omega1(), [1.0, 0.0, 0.0], [0.0; 3], 0.4, vec![0.2, 1.0, -0.3]);
        let x = [0.25, 0.0, 0.0];
        let r = a.time_reversed();
        assert_eq!(r.value(&x, 0.4), a.value(&x, -0.4));
        assert_eq!(a.negated().value(&x, 0.1)[0], -a.value(&x, 0.1)[0]);
        assert_eq!(a.value(&[1.5, 0.0, 0.0], 0.0), ORIGIN);
    }
}
