//! Spatial discretization: boxes, the domain/window geometry, uniform grids with
//! multilinear hat functions, and coefficient fields.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{FracError, Result};
use crate::point::{self, Point, MAX_DIM, ORIGIN};

/// Closed axis-aligned box in the first `dim` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
}

impl BoxRegion {
    pub fn new(dim: usize, lo: Point, hi: Point) -> Self {
        Self { dim, lo, hi }
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > MAX_DIM {
            return Err(FracError::Geometry(format!("box bounds of lengths {} and {}", lo.len(), hi.len())));
        }
        let b = Self::new(lo.len(), point::from_slice(lo), point::from_slice(hi));
        if (0..b.dim).any(|k| !(b.hi[k] > b.lo[k])) {
            return Err(FracError::Geometry(format!("degenerate box {lo:?} .. {hi:?}")));
        }
        Ok(b)
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Self::new(1, [a, 0.0, 0.0], [b, 0.0, 0.0])
    }

    pub fn square(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self::new(2, [lo[0], lo[1], 0.0], [hi[0], hi[1], 0.0])
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(dim, [1.0; MAX_DIM], [0.0; MAX_DIM])
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim).any(|k| self.hi[k] < self.lo[k])
    }

    #[inline]
    pub fn contains_closed(&self, x: &Point) -> bool {
        (0..self.dim).all(|k| x[k] >= self.lo[k] && x[k] <= self.hi[k])
    }

    pub fn width(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    pub fn volume(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.dim).map(|k| self.width(k)).product()
    }

    pub fn center(&self) -> Point {
        point::midpoint(&self.lo, &self.hi)
    }

    pub fn intersection(&self, other: &BoxRegion) -> BoxRegion {
        let mut lo = ORIGIN;
        let mut hi = ORIGIN;
        for k in 0..self.dim {
            lo[k] = self.lo[k].max(other.lo[k]);
            hi[k] = self.hi[k].min(other.hi[k]);
        }
        BoxRegion::new(self.dim, lo, hi)
    }

    /// Interiors overlap.
    pub fn overlaps_open(&self, other: &BoxRegion) -> bool {
        (0..self.dim).all(|k| self.lo[k] < other.hi[k] && other.lo[k] < self.hi[k])
    }

    pub fn is_subset_of(&self, other: &BoxRegion) -> bool {
        (0..self.dim).all(|k| self.lo[k] >= other.lo[k] && self.hi[k] <= other.hi[k])
    }

    /// Largest distance from the origin to a point of the box.
    pub fn max_norm(&self) -> f64 {
        (0..self.dim)
            .map(|k| self.lo[k].abs().max(self.hi[k].abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Distance from the origin to the box.
    pub fn distance_from_origin(&self) -> f64 {
        (0..self.dim)
            .map(|k| {
                if self.lo[k] > 0.0 {
                    self.lo[k]
                } else if self.hi[k] < 0.0 {
                    -self.hi[k]
                } else {
                    0.0
                }
            })
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
    }

    /// `{(x + y)/2 : x in self, y in other}`.
    pub fn midpoint_box(&self, other: &BoxRegion) -> BoxRegion {
        BoxRegion::new(self.dim, point::midpoint(&self.lo, &other.lo), point::midpoint(&self.hi, &other.hi))
    }

    /// Distance between two boxes.
    pub fn distance_to(&self, other: &BoxRegion) -> f64 {
        (0..self.dim)
            .map(|k| (self.lo[k] - other.hi[k]).max(other.lo[k] - self.hi[k]).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Domain `Ω ⊂ B_r(0)` and two exterior windows with `W_j ∩ B_{3r}(0) = ∅`.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub dim: usize,
    pub omega: BoxRegion,
    pub radius: f64,
    pub w1: BoxRegion,
    pub w2: BoxRegion,
    pub bounding_box: BoxRegion,
}

const GEOM_TOL: f64 = 1e-12;

impl Geometry {
    pub fn new(omega: BoxRegion, radius: f64, w1: BoxRegion, w2: BoxRegion) -> Result<Self> {
        let dim = omega.dim;
        if w1.dim != dim || w2.dim != dim {
            return Err(FracError::Geometry("windows and domain have different dimensions".into()));
        }
        for (name, b) in [("omega", &omega), ("W1", &w1), ("W2", &w2)] {
            if (0..dim).any(|k| !(b.hi[k] > b.lo[k])) {
                return Err(FracError::Geometry(format!("{name} is a degenerate box")));
            }
        }
        if !(radius > 0.0) {
            return Err(FracError::Geometry(format!("radius r = {radius} must be positive")));
        }
        if omega.max_norm() > radius * (1.0 + GEOM_TOL) {
            return Err(FracError::Geometry(format!(
                "Ω ⊂ B_r(0) violated: domain reaches |x| = {:.6} > r = {radius}",
                omega.max_norm()
            )));
        }
        for (name, w) in [("W1", &w1), ("W2", &w2)] {
            let d = w.distance_from_origin();
            if d < 3.0 * radius * (1.0 - GEOM_TOL) {
                return Err(FracError::Geometry(format!(
                    "{name} ∩ B_3r(0) = ∅ violated: window is at distance {d:.6} < 3r = {}",
                    3.0 * radius
                )));
            }
        }
        if w1.overlaps_open(&w2) {
            return Err(FracError::Geometry("W1 and W2 overlap".into()));
        }
        let mid = w1.midpoint_box(&w2);
        if mid.is_subset_of(&omega) {
            return Err(FracError::Geometry(format!(
                "W^(1,2) \\ Ω ≠ ∅ violated: midpoint set {:?}..{:?} lies inside the closed domain",
                &mid.lo[..dim],
                &mid.hi[..dim]
            )));
        }
        let mut lo = ORIGIN;
        let mut hi = ORIGIN;
        for k in 0..dim {
            lo[k] = omega.lo[k].min(w1.lo[k]).min(w2.lo[k]);
            hi[k] = omega.hi[k].max(w1.hi[k]).max(w2.hi[k]);
        }
        Ok(Self { dim, omega, radius, w1, w2, bounding_box: BoxRegion::new(dim, lo, hi) })
    }

    pub fn window(&self, which: Window) -> &BoxRegion {
        match which {
            Window::W1 => &self.w1,
            Window::W2 => &self.w2,
        }
    }

    /// Whether every W1-W2 midpoint avoids the closed domain, so the modulation
    /// is identically one on `W1 x W2`.
    pub fn window_midpoints_clear_of_domain(&self) -> bool {
        let mid = self.w1.midpoint_box(&self.w2);
        mid.intersection(&self.omega).is_empty()
    }
}

/// Exterior window selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    W1,
    W2,
}

impl Window {
    pub fn other(self) -> Window {
        match self {
            Window::W1 => Window::W2,
            Window::W2 => Window::W1,
        }
    }
}

/// Which node set a coefficient vector lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionTag {
    Omega,
    W1,
    W2,
}

impl RegionTag {
    pub fn name(self) -> &'static str {
        match self {
            RegionTag::Omega => "omega",
            RegionTag::W1 => "w1",
            RegionTag::W2 => "w2",
        }
    }
}

impl From<Window> for RegionTag {
    fn from(w: Window) -> Self {
        match w {
            Window::W1 => RegionTag::W1,
            Window::W2 => RegionTag::W2,
        }
    }
}

/// Uniform tensor grid on a box. Interior nodes carry hats that vanish on the boundary.
#[derive(Debug, Clone)]
pub struct UniformGrid {
    pub region: BoxRegion,
    pub cells: [usize; MAX_DIM],
    pub spacing: Point,
}

pub type MultiIndex = [usize; MAX_DIM];

impl UniformGrid {
    /// Cells per axis are `round(width / target_spacing)`, at least 2.
    pub fn new(region: BoxRegion, target_spacing: f64) -> Result<Self> {
        if !(target_spacing > 0.0) {
            return Err(FracError::InvalidParameter(format!("grid spacing {target_spacing} must be positive")));
        }
        let mut cells = [1usize; MAX_DIM];
        let mut spacing = [1.0; MAX_DIM];
        for k in 0..region.dim {
            let c = (region.width(k) / target_spacing).round().max(2.0) as usize;
            cells[k] = c;
            spacing[k] = region.width(k) / c as f64;
        }
        Ok(Self { region, cells, spacing })
    }

    pub fn dim(&self) -> usize {
        self.region.dim
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing[k]).product()
    }

    #[inline]
    pub fn node(&self, m: &MultiIndex) -> Point {
        let mut p = ORIGIN;
        for k in 0..self.dim() {
            p[k] = self.region.lo[k] + m[k] as f64 * self.spacing[k];
        }
        p
    }

    pub fn interior_count(&self) -> usize {
        (0..self.dim()).map(|k| self.cells[k] - 1).product()
    }

    pub fn full_count(&self) -> usize {
        (0..self.dim()).map(|k| self.cells[k] + 1).product()
    }

    pub fn element_count(&self) -> usize {
        (0..self.dim()).map(|k| self.cells[k]).product()
    }

    pub fn interior_multi(&self, mut idx: usize) -> MultiIndex {
        let mut m = [0usize; MAX_DIM];
        for k in 0..self.dim() {
            let c = self.cells[k] - 1;
            m[k] = idx % c + 1;
            idx /= c;
        }
        m
    }

    #[inline]
    pub fn interior_index(&self, m: &MultiIndex) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            if m[k] == 0 || m[k] >= self.cells[k] {
                return None;
            }
            idx += (m[k] - 1) * stride;
            stride *= self.cells[k] - 1;
        }
        Some(idx)
    }

    pub fn full_multi(&self, mut idx: usize) -> MultiIndex {
        let mut m = [0usize; MAX_DIM];
        for k in 0..self.dim() {
            let c = self.cells[k] + 1;
            m[k] = idx % c;
            idx /= c;
        }
        m
    }

    pub fn element_multi(&self, mut idx: usize) -> MultiIndex {
        let mut m = [0usize; MAX_DIM];
        for k in 0..self.dim() {
            m[k] = idx % self.cells[k];
            idx /= self.cells[k];
        }
        m
    }

    pub fn element_index(&self, m: &MultiIndex) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            idx += m[k] * stride;
            stride *= self.cells[k];
        }
        idx
    }

    pub fn element_box(&self, e: &MultiIndex) -> BoxRegion {
        let lo = self.node(e);
        let mut hi = lo;
        for k in 0..self.dim() {
            hi[k] += self.spacing[k];
        }
        BoxRegion::new(self.dim(), lo, hi)
    }

    /// Corner multi-indices of element `e`, bit `k` of the local number selects the upper node on axis `k`.
    pub fn element_corners(&self, e: &MultiIndex) -> Vec<MultiIndex> {
        (0..(1usize << self.dim()))
            .map(|c| {
                let mut m = *e;
                for k in 0..self.dim() {
                    m[k] += (c >> k) & 1;
                }
                m
            })
            .collect()
    }

    /// Interior index of each element corner (None on the boundary).
    pub fn element_interior_dofs(&self, e: &MultiIndex) -> Vec<Option<usize>> {
        self.element_corners(e).iter().map(|m| self.interior_index(m)).collect()
    }

    /// Value of the hat at node `m` evaluated at `x`.
    #[inline]
    pub fn hat(&self, m: &MultiIndex, x: &Point) -> f64 {
        let mut v = 1.0;
        for k in 0..self.dim() {
            let node = self.region.lo[k] + m[k] as f64 * self.spacing[k];
            let r = 1.0 - (x[k] - node).abs() / self.spacing[k];
            if r <= 0.0 {
                return 0.0;
            }
            v *= r;
        }
        v
    }

    /// Local shape values of the `2^dim` corners of the element with lower corner `lo` at `x`.
    #[inline]
    pub fn local_shapes(&self, lo: &Point, x: &Point, out: &mut [f64]) {
        let dim = self.dim();
        let mut xi = [0.0; MAX_DIM];
        for k in 0..dim {
            xi[k] = (x[k] - lo[k]) / self.spacing[k];
        }
        for (c, o) in out.iter_mut().enumerate().take(1usize << dim) {
            let mut v = 1.0;
            for k in 0..dim {
                v *= if (c >> k) & 1 == 1 { xi[k] } else { 1.0 - xi[k] };
            }
            *o = v;
        }
    }

    /// Interior nodes at distance `>= margin` cells from the boundary.
    pub fn interior_nodes_with_margin(&self, margin: usize) -> Vec<usize> {
        (0..self.interior_count())
            .filter(|&i| {
                let m = self.interior_multi(i);
                (0..self.dim()).all(|k| m[k] > margin && m[k] + margin < self.cells[k])
            })
            .collect()
    }
}

/// Quadrature settings for the assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Gauss-Jacobi points in the collapsed radial direction of near pairs.
    pub radial: usize,
    /// Gauss-Legendre points per angular direction of near pairs.
    pub angular: usize,
    /// Gauss points per axis for the inner overlap integral of near pairs.
    pub inner: usize,
    /// Gauss points per axis on regular pieces of near pairs.
    pub near_regular: usize,
    /// Gauss points per axis and element for well-separated element pairs.
    pub far: usize,
    /// Gauss points per axis for the complement (tail) term and mass-type integrals.
    pub volume: usize,
    /// Upper bound on quadrature point-pairs per near element pair.
    pub budget: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { radial: 6, angular: 8, inner: 3, near_regular: 5, far: 3, volume: 6, budget: 200_000 }
    }
}

/// Grids on the domain and on both windows.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub geometry: Geometry,
    pub omega: UniformGrid,
    pub w1: UniformGrid,
    pub w2: UniformGrid,
    pub quad: QuadratureSpec,
}

impl Discretization {
    pub fn new(geometry: Geometry, spacing: f64, quad: QuadratureSpec) -> Result<Self> {
        let omega = UniformGrid::new(geometry.omega.clone(), spacing)?;
        let w1 = UniformGrid::new(geometry.w1.clone(), spacing)?;
        let w2 = UniformGrid::new(geometry.w2.clone(), spacing)?;
        if omega.interior_count() == 0 {
            return Err(FracError::Geometry("grid has no interior nodes".into()));
        }
        Ok(Self { geometry, omega, w1, w2, quad })
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    pub fn grid(&self, region: RegionTag) -> &UniformGrid {
        match region {
            RegionTag::Omega => &self.omega,
            RegionTag::W1 => &self.w1,
            RegionTag::W2 => &self.w2,
        }
    }

    pub fn window_grid(&self, w: Window) -> &UniformGrid {
        self.grid(w.into())
    }

    /// Stable digest of the geometry and grid sizes.
    pub fn grid_hash(&self) -> String {
        let mut h = Sha256::new();
        for g in [&self.omega, &self.w1, &self.w2] {
            for k in 0..g.dim() {
                h.update(g.region.lo[k].to_le_bytes());
                h.update(g.region.hi[k].to_le_bytes());
                h.update((g.cells[k] as u64).to_le_bytes());
            }
        }
        h.update(self.geometry.radius.to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

/// Coefficients on the interior nodes of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub coeffs: DVector<f64>,
    pub region: RegionTag,
}

impl Field {
    pub fn new(coeffs: DVector<f64>, region: RegionTag) -> Self {
        Self { coeffs, region }
    }

    pub fn zeros(disc: &Discretization, region: RegionTag) -> Self {
        Self::new(DVector::zeros(disc.grid(region).interior_count()), region)
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    /// Evaluates the hat expansion at `x`.
    pub fn eval(&self, grid: &UniformGrid, x: &Point) -> f64 {
        (0..self.len())
            .map(|i| {
                let c = self.coeffs[i];
                if c == 0.0 {
                    0.0
                } else {
                    c * grid.hat(&grid.interior_multi(i), x)
                }
            })
            .sum()
    }
}

/// Nodal interpolation of `f` onto the interior hats of `region`.
pub fn project<F: Fn(&Point) -> f64>(disc: &Discretization, region: RegionTag, f: F) -> Field {
    let grid = disc.grid(region);
    let coeffs = DVector::from_iterator(grid.interior_count(), (0..grid.interior_count()).map(|i| f(&grid.node(&grid.interior_multi(i)))));
    Field::new(coeffs, region)
}

/// `(uᵀ M u + uᵀ S₀ u)^{1/2}` with the A-free stiffness `S₀`.
pub fn discrete_hs_norm(u: &DVector<f64>, mass: &DMatrix<f64>, stiffness0: &DMatrix<f64>) -> f64 {
    let v = (mass * u).dot(u) + (stiffness0 * u).dot(u);
    v.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_geometry(w2: (f64, f64)) -> Result<Geometry> {
        Geometry::new(
            BoxRegion::interval(-1.0, 1.0),
            1.0,
            BoxRegion::interval(4.0, 5.0),
            BoxRegion::interval(w2.0, w2.1),
        )
    }

    #[test]
    fn midpoints_inside_domain_rejected() {
        let err = line_geometry((-5.0, -4.0)).unwrap_err();
        assert!(err.to_string().contains("W^(1,2)"), "{err}");
        assert!(line_geometry((6.0, 7.0)).is_ok());
    }

    #[test]
    fn window_inside_three_r_rejected() {
        let err = Geometry::new(
            BoxRegion::interval(-1.0, 1.0),
            1.0,
            BoxRegion::interval(2.0, 3.0),
            BoxRegion::interval(6.0, 7.0),
        )
        .unwrap_err();
        assert!(err.to_string().contains("B_3r"), "{err}");
    }

    #[test]
    fn domain_outside_ball_rejected() {
        assert!(Geometry::new(
            BoxRegion::interval(-1.0, 1.2),
            1.0,
            BoxRegion::interval(4.0, 5.0),
            BoxRegion::interval(6.0, 7.0)
        )
        .is_err());
    }

    #[test]
    fn square_geometry_checks() {
        let omega = BoxRegion::square([-1.0, -1.0], [1.0, 1.0]);
        let r = 1.5;
        let ok = Geometry::new(
            omega.clone(),
            r,
            BoxRegion::square([5.0, -0.5], [6.0, 0.5]),
            BoxRegion::square([-0.5, 5.0], [0.5, 6.0]),
        );
        assert!(ok.is_ok());
        // opposite windows: midpoints straddle the origin inside the domain
        let bad = Geometry::new(
            omega.clone(),
            r,
            BoxRegion::square([5.0, -0.5], [6.0, 0.5]),
            BoxRegion::square([-6.0, -0.5], [-5.0, 0.5]),
        );
        assert!(bad.is_err());
        // r too small for the square
        assert!(Geometry::new(
            omega,
            1.2,
            BoxRegion::square([5.0, -0.5], [6.0, 0.5]),
            BoxRegion::square([-0.5, 5.0], [0.5, 6.0])
        )
        .is_err());
    }

    #[test]
    fn hats_form_partition_of_unity_away_from_boundary() {
        let g = UniformGrid::new(BoxRegion::square([-1.0, -1.0], [1.0, 1.0]), 0.25).unwrap();
        let x = [0.13, -0.41, 0.0];
        let sum: f64 = (0..g.interior_count()).map(|i| g.hat(&g.interior_multi(i), &x)).sum();
        assert!((sum - 1.0).abs() < 1e-14);
        for i in 0..g.interior_count() {
            let m = g.interior_multi(i);
            assert_eq!(g.interior_index(&m), Some(i));
        }
    }

    #[test]
    fn projection_of_hat_is_unit_vector() {
        let geom = line_geometry((6.0, 7.0)).unwrap();
        let disc = Discretization::new(geom, 0.125, QuadratureSpec::default()).unwrap();
        let m = disc.omega.interior_multi(5);
        let f = project(&disc, RegionTag::Omega, |x| disc.omega.hat(&m, x));
        for i in 0..f.len() {
            assert_eq!(f.coeffs[i], if i == 5 { 1.0 } else { 0.0 });
        }
        let z = project(&disc, RegionTag::Omega, |_| 0.0);
        assert!(z.coeffs.iter().all(|&v| v == 0.0));
    }
}
