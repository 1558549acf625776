//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use fracmag::grid::{BoxRegion, Discretization, Geometry, QuadratureSpec};
use fracmag::kernel::FracParams;
use fracmag::quadrature::gauss_legendre;

/// Composite Gauss-Legendre on `[a, b]` with `panels` panels of `order` points.
pub fn composite<F: FnMut(f64) -> f64>(a: f64, b: f64, panels: usize, order: usize, mut f: F) -> f64 {
    let rule = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in rule.mapped(lo, lo + h) {
            acc += w * f(x);
        }
    }
    acc
}

/// `∫_0^a f` for `f` with an algebraic endpoint singularity at 0, by geometric grading.
pub fn graded_near_zero<F: FnMut(f64) -> f64>(a: f64, mut f: F) -> f64 {
    let mut acc = 0.0;
    let mut hi = a;
    for _ in 0..40 {
        acc += composite(hi / 2.0, hi, 1, 10, &mut f);
        hi /= 2.0;
    }
    acc
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 - u * u / 6.0
    } else {
        u.sin() / u
    }
}

/// `∫ |ξ|^{2s} φ̂_i φ̂_j dξ / (2π)` for two hats of width `h` whose centres differ by `m h`.
pub fn fourier_hat_entry_1d(s: f64, h: f64, m: f64) -> f64 {
    let u_max = 20_000.0;
    let panels = (u_max / (PI / (2.0 + 4.0 * m.abs()))).ceil() as usize;
    let f = |u: f64| u.powf(2.0 * s) * sinc(u).powi(4) * (2.0 * m * u).cos();
    let first = u_max / panels as f64;
    let int = graded_near_zero(first, f) + composite(first, u_max, panels - 1, 8, f);
    2f64.powf(2.0 * s + 1.0) / PI * h.powf(1.0 - 2.0 * s) * int
}

/// Same for two bilinear hats on a square grid of spacing `h`, offset by `(m1 h, m2 h)`.
pub fn fourier_hat_entry_2d(s: f64, h: f64, m1: f64, m2: f64) -> f64 {
    // ξ = 2u/h; S = (1/π²) (2/h)^{2s+2} h^4 ∫∫_{u>0} |u|^{2s} sinc⁴u₁ sinc⁴u₂ cos(2m₁u₁) cos(2m₂u₂) du
    let u_max = 400.0;
    let panels = (u_max / (PI / 4.0)).ceil() as usize;
    let rule = gauss_legendre(8);
    let hp = u_max / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 8 + 160);
    let mut hi = hp;
    for _ in 0..20 {
        for (x, w) in rule.mapped(hi / 2.0, hi) {
            nodes.push((x, w, sinc(x).powi(4)));
        }
        hi /= 2.0;
    }
    for p in 1..panels {
        let lo = p as f64 * hp;
        for (x, w) in rule.mapped(lo, lo + hp) {
            nodes.push((x, w, sinc(x).powi(4)));
        }
    }
    let mut acc = 0.0;
    for &(u1, w1, s1) in &nodes {
        let c1 = w1 * s1 * (2.0 * m1 * u1).cos();
        let mut row = 0.0;
        for &(u2, w2, s2) in &nodes {
            row += w2 * s2 * (2.0 * m2 * u2).cos() * (u1 * u1 + u2 * u2).powf(s);
        }
        acc += c1 * row;
    }
    (2.0 / h).powf(2.0 * s + 2.0) * h.powi(4) / (PI * PI) * acc
}

/// Eigenvalue `λ` with `(-Δ)^s (1-|x|²)_+^s = λ` in dimension `n`.
pub fn torsion_constant_closed_form(n: usize, s: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let nh = n as f64 / 2.0;
    4f64.powf(s) * gamma(1.0 + s) * gamma(nh + s) / gamma(nh)
}

pub fn line_disc(spacing: f64) -> Discretization {
    let geom = Geometry::new(
        BoxRegion::interval(-1.0, 1.0),
        1.0,
        BoxRegion::interval(4.0, 5.0),
        BoxRegion::interval(6.0, 7.0),
    )
    .unwrap();
    Discretization::new(geom, spacing, QuadratureSpec::default()).unwrap()
}

pub fn square_disc(spacing: f64) -> Discretization {
    let geom = Geometry::new(
        BoxRegion::square([-1.0, -1.0], [1.0, 1.0]),
        1.5,
        BoxRegion::square([5.0, -0.5], [6.0, 0.5]),
        BoxRegion::square([-0.5, 5.0], [0.5, 6.0]),
    )
    .unwrap();
    Discretization::new(geom, spacing, QuadratureSpec::default()).unwrap()
}

pub fn params(n: usize, s: f64, radius: f64) -> FracParams {
    FracParams::with_default_scale(n, s, 1.0, radius).unwrap()
}

/// `(-Δ)^s (1-|x|²)_+^s` at the origin by radial quadrature of the principal-value integral,
/// for the operator `2 kernel_scale PV∫ (u(x)-u(y)) |x-y|^{-n-2s} dy`.
pub fn torsion_lambda_quadrature(n: usize, s: f64, kernel_scale: f64) -> f64 {
    let sphere = match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("dimension {n} unsupported"),
    };
    let f = |r: f64| {
        let gap = if r < 1.0 { -(s * (-r * r).ln_1p()).exp_m1() } else { 1.0 };
        gap * r.powf(-1.0 - 2.0 * s)
    };
    // graded_near_zero stops at 2^-41; below it the integrand is s r^{1-2s} to leading order.
    let eps = 0.5 * 2f64.powi(-40);
    let tail = s * eps.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    let inner = tail + graded_near_zero(0.5, f) + graded_near_zero(0.5, |z| f(1.0 - z));
    2.0 * kernel_scale * sphere * (inner + 1.0 / (2.0 * s))
}
