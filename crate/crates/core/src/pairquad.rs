//! Quadrature over products of grid elements `E x F` for integrands that behave
//! like `|x - y|^{2-n-2s}` on the diagonal.
//!
//! Rules are expressed in element-local coordinates: `E` has its lower corner at
//! the origin and `F` is `E` shifted by an integer displacement `d` (in cells).
//! A uniform grid makes the rule depend on `d` only, so one rule per displacement
//! is built and reused for every element pair and every time level.
//!
//! Touching pairs (`|d_k| <= 1` on every axis) are integrated in `z = x - y`:
//! the `z`-box is cut at its kinks and at `z = 0`, pieces with the singular point
//! at a corner are Duffy-collapsed with a Gauss-Jacobi rule in the radial variable,
//! and the overlap `E ∩ (F + z)` is integrated with a tensor Gauss rule.

use rayon::prelude::*;

use crate::error::{FracError, Result};
use crate::grid::{QuadratureSpec, UniformGrid};
use crate::point::{Point, MAX_DIM, ORIGIN};
use crate::quadrature::{gauss_jacobi, gauss_legendre, tensor_box, Rule1d};

/// One quadrature node of a pair rule.
#[derive(Debug, Clone, Copy)]
pub struct PairPoint {
    pub x: Point,
    pub y: Point,
    pub w: f64,
}

/// Integer cell displacement between two elements.
pub type Displacement = [i64; MAX_DIM];

/// Pair rules for every displacement of one grid.
#[derive(Debug, Clone)]
pub struct PairRules {
    dim: usize,
    cells: [usize; MAX_DIM],
    pub spacing: Point,
    rules: Vec<Vec<PairPoint>>,
}

pub fn is_near(d: &Displacement, dim: usize) -> bool {
    (0..dim).all(|k| d[k].abs() <= 1)
}

/// Gap between `E` and `E + d h`, measured in multiples of the largest spacing.
fn gap_in_cells(d: &Displacement, dim: usize) -> f64 {
    (0..dim).map(|k| ((d[k].abs() - 1).max(0) as f64).powi(2)).sum::<f64>().sqrt()
}

impl PairRules {
    pub fn build(grid: &UniformGrid, s: f64, quad: &QuadratureSpec) -> Result<Self> {
        let dim = grid.dim();
        let cells = grid.cells;
        let spacing = grid.spacing;
        let total: usize = (0..dim).map(|k| 2 * cells[k] - 1).product();
        let jac = gauss_jacobi(quad.radial, 1.0 - 2.0 * s);
        let ang = gauss_legendre(quad.angular);
        let inner = gauss_legendre(quad.inner);
        let reg = gauss_legendre(quad.near_regular);
        let far_rules: Vec<Rule1d> = (0..=quad.far + 3).map(|p| gauss_legendre(p.max(1))).collect();
        let shell = Self { dim, cells, spacing, rules: Vec::new() };
        let rules = (0..total)
            .into_par_iter()
            .map(|idx| {
                let d = shell.displacement(idx);
                if is_near(&d, dim) {
                    let pts = near_rule(&d, &spacing, dim, s, &jac, &ang, &inner, &reg);
                    if pts.len() > quad.budget {
                        return Err(FracError::Quadrature(format!(
                            "near-pair rule for displacement {:?} needs {} points, budget is {}",
                            &d[..dim],
                            pts.len(),
                            quad.budget
                        )));
                    }
                    Ok(pts)
                } else {
                    let gap = gap_in_cells(&d, dim);
                    let p = if gap < 1.5 {
                        quad.far + 3
                    } else if gap < 3.0 {
                        quad.far + 2
                    } else if gap < 6.0 {
                        quad.far + 1
                    } else {
                        quad.far
                    };
                    Ok(far_rule(&d, &spacing, dim, &far_rules[p.min(far_rules.len() - 1)]))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rules, ..shell })
    }

    fn displacement(&self, mut idx: usize) -> Displacement {
        let mut d = [0i64; MAX_DIM];
        for k in 0..self.dim {
            let r = 2 * self.cells[k] - 1;
            d[k] = (idx % r) as i64 - (self.cells[k] as i64 - 1);
            idx /= r;
        }
        d
    }

    fn index(&self, d: &Displacement) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim {
            let r = 2 * self.cells[k] - 1;
            idx += (d[k] + self.cells[k] as i64 - 1) as usize * stride;
            stride *= r;
        }
        idx
    }

    pub fn get(&self, d: &Displacement) -> &[PairPoint] {
        &self.rules[self.index(d)]
    }

    pub fn displacements(&self) -> impl Iterator<Item = Displacement> + '_ {
        (0..self.rules.len()).map(|i| self.displacement(i))
    }

    pub fn total_points(&self) -> usize {
        self.rules.iter().map(Vec::len).sum()
    }
}

fn far_rule(d: &Displacement, h: &Point, dim: usize, rule: &Rule1d) -> Vec<PairPoint> {
    let mut hi = ORIGIN;
    let mut flo = ORIGIN;
    let mut fhi = ORIGIN;
    for k in 0..dim {
        hi[k] = h[k];
        flo[k] = d[k] as f64 * h[k];
        fhi[k] = flo[k] + h[k];
    }
    let xs = tensor_box(rule, &ORIGIN, &hi, dim);
    let ys = tensor_box(rule, &flo, &fhi, dim);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &(x, wx) in &xs {
        for &(y, wy) in &ys {
            out.push(PairPoint { x, y, w: wx * wy });
        }
    }
    out
}

/// `(z, weight)` nodes on one axis-aligned piece of the `z`-box.
fn piece_nodes(
    lo: &Point,
    hi: &Point,
    dim: usize,
    s: f64,
    jac: &Rule1d,
    ang: &Rule1d,
    reg: &Rule1d,
) -> Vec<(Point, f64)> {
    let singular = (0..dim).all(|k| lo[k] == 0.0 || hi[k] == 0.0);
    if !singular {
        return tensor_box(reg, lo, hi, dim);
    }
    // signed edge vectors pointing away from the singular corner z = 0
    let mut a = ORIGIN;
    for k in 0..dim {
        a[k] = if lo[k] == 0.0 { hi[k] } else { lo[k] };
    }
    let vol: f64 = (0..dim).map(|k| a[k].abs()).product();
    let mut out = Vec::new();
    let m = ang.len();
    let others = m.pow(dim as u32 - 1);
    for kstar in 0..dim {
        for (rho, wr) in jac.nodes.iter().zip(&jac.weights) {
            // Gauss-Jacobi absorbs rho^{1-2s}; the integrand carries rho^{-(1+2s)} * rho^2 * rho^{n-1}
            let radial = wr * rho.powf(2.0 * s - 1.0) * rho.powi(dim as i32 - 1) * vol;
            for flat in 0..others {
                let mut z = ORIGIN;
                let mut w = radial;
                let mut rem = flat;
                for k in 0..dim {
                    if k == kstar {
                        z[k] = a[k] * rho;
                    } else {
                        let i = rem % m;
                        rem /= m;
                        z[k] = a[k] * rho * ang.nodes[i];
                        w *= ang.weights[i];
                    }
                }
                out.push((z, w));
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn near_rule(
    d: &Displacement,
    h: &Point,
    dim: usize,
    s: f64,
    jac: &Rule1d,
    ang: &Rule1d,
    inner: &Rule1d,
    reg: &Rule1d,
) -> Vec<PairPoint> {
    // z-range per axis is [c - h, c + h] with c = -d h; the kink sits at c and 0 is one of c-h, c, c+h
    let mut axis_pieces = [[(0.0, 0.0); 2]; MAX_DIM];
    for k in 0..dim {
        let c = -(d[k] as f64) * h[k];
        axis_pieces[k] = [(c - h[k], c), (c, c + h[k])];
    }
    let mut out = Vec::new();
    for flat in 0..(1usize << dim) {
        let mut lo = ORIGIN;
        let mut hi = ORIGIN;
        for k in 0..dim {
            let (a, b) = axis_pieces[k][(flat >> k) & 1];
            lo[k] = a;
            hi[k] = b;
        }
        for (z, wz) in piece_nodes(&lo, &hi, dim, s, jac, ang, reg) {
            let mut xlo = ORIGIN;
            let mut xhi = ORIGIN;
            for k in 0..dim {
                let shift = d[k] as f64 * h[k] + z[k];
                xlo[k] = shift.max(0.0);
                xhi[k] = (shift + h[k]).min(h[k]);
            }
            if (0..dim).any(|k| xhi[k] <= xlo[k]) {
                continue;
            }
            for (x, wx) in tensor_box(inner, &xlo, &xhi, dim) {
                let mut y = x;
                for k in 0..dim {
                    y[k] = x[k] - z[k];
                }
                out.push(PairPoint { x, y, w: wz * wx });
            }
        }
    }
    out
}

/// Piecewise-linear tent `max(0, 1 - |t|)`.
#[inline]
pub fn tent(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

/// Hat of the node at local offset `m` (in cells, relative to the lower corner of `E`) at `x`.
#[inline]
pub fn local_hat(m: &Displacement, x: &Point, h: &Point, dim: usize) -> f64 {
    let mut v = 1.0;
    for k in 0..dim {
        v *= tent(x[k] / h[k] - m[k] as f64);
        if v == 0.0 {
            return 0.0;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoxRegion;

    fn grid(dim: usize) -> UniformGrid {
        let region = if dim == 1 { BoxRegion::interval(0.0, 1.0) } else { BoxRegion::square([0.0, 0.0], [1.0, 1.0]) };
        UniformGrid::new(region, 0.25).unwrap()
    }

    fn whole_square_integral(spacing: f64, p: f64, s: f64) -> f64 {
        let g = UniformGrid::new(BoxRegion::square([0.0, 0.0], [1.0, 1.0]), spacing).unwrap();
        let rules = PairRules::build(&g, s, &QuadratureSpec::default()).unwrap();
        let mut total = 0.0;
        for e in 0..g.element_count() {
            let em = g.element_multi(e);
            for f in 0..g.element_count() {
                let fm = g.element_multi(f);
                let d = [fm[0] as i64 - em[0] as i64, fm[1] as i64 - em[1] as i64, 0];
                total += rules
                    .get(&d)
                    .iter()
                    .map(|q| {
                        let r = ((q.x[0] - q.y[0]).powi(2) + (q.x[1] - q.y[1]).powi(2)).sqrt();
                        q.w * r.powf(p)
                    })
                    .sum::<f64>();
            }
        }
        total
    }

    #[test]
    fn weakly_singular_square_integral_is_grid_independent() {
        let s = 0.6;
        let p = -2.0 * s;
        let a = whole_square_integral(0.5, p, s);
        let b = whole_square_integral(0.25, p, s);
        assert!((a - b).abs() < 1e-4 * a.abs(), "{a} {b}");
    }

    #[test]
    fn weakly_singular_integral_on_same_interval() {
        // ∫_0^1∫_0^1 |x-y|^{2-1-2s} dx dy = 2 / ((2-2s)(3-2s))
        let s = 0.3;
        let g = UniformGrid::new(BoxRegion::interval(0.0, 2.0), 1.0).unwrap();
        let rules = PairRules::build(&g, s, &QuadratureSpec::default()).unwrap();
        let p = 1.0 - 2.0 * s;
        let got: f64 = rules.get(&[0, 0, 0]).iter().map(|q| q.w * (q.x[0] - q.y[0]).abs().powf(p)).sum();
        let exact = 2.0 / ((1.0 + p) * (2.0 + p));
        assert!((got - exact).abs() < 1e-8, "{got} {exact}");
        // adjacent interval: ∫_0^1∫_1^2 (y-x)^p = (2^{p+2} - 2) / ((p+1)(p+2))
        let got: f64 = rules.get(&[1, 0, 0]).iter().map(|q| q.w * (q.x[0] - q.y[0]).abs().powf(p)).sum();
        let exact = (2f64.powf(p + 2.0) - 2.0) / ((p + 1.0) * (p + 2.0));
        assert!((got - exact).abs() < 1e-8, "{got} {exact}");
    }

    #[test]
    fn near_rules_respect_element_boxes() {
        let g = grid(2);
        let rules = PairRules::build(&g, 0.5, &QuadratureSpec::default()).unwrap();
        let h = g.spacing;
        for d in rules.displacements().filter(|d| is_near(d, 2)) {
            for p in rules.get(&d) {
                for k in 0..2 {
                    assert!(p.x[k] >= -1e-14 && p.x[k] <= h[k] + 1e-14);
                    let f0 = d[k] as f64 * h[k];
                    assert!(p.y[k] >= f0 - 1e-14 && p.y[k] <= f0 + h[k] + 1e-14);
                }
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let quad = QuadratureSpec { budget: 10, ..QuadratureSpec::default() };
        let err = PairRules::build(&grid(2), 0.5, &quad).unwrap_err();
        assert!(err.to_string().contains("budget"), "{err}");
    }
}
