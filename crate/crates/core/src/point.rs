//! Points are stored as fixed `[f64; 3]` arrays; unused trailing axes stay zero,
//! so distances and dot products need no dimension argument.

pub const MAX_DIM: usize = 3;

pub type Point = [f64; MAX_DIM];

pub const ORIGIN: Point = [0.0; MAX_DIM];

#[inline]
pub fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Point, b: &Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Point, c: f64) -> Point {
    [a[0] * c, a[1] * c, a[2] * c]
}

#[inline]
pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    norm(&sub(a, b))
}

#[inline]
pub fn midpoint(a: &Point, b: &Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
}

/// Builds a point from a slice of at most three coordinates.
pub fn from_slice(c: &[f64]) -> Point {
    let mut p = ORIGIN;
    for (k, v) in c.iter().take(MAX_DIM).enumerate() {
        p[k] = *v;
    }
    p
}
