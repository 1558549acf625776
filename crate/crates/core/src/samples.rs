//! Potentials given as samples on a tensor grid in space and a list of times.
//!
//! Space: multilinear interpolation, zero outside the sampled box.
//! Time: natural cubic spline per spatial node, so the field is C² in t.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{FracError, Result};
use crate::point::{Point, MAX_DIM};

#[derive(Debug, Clone)]
pub struct GriddedSamples {
    dim: usize,
    components: usize,
    lo: Point,
    spacing: Point,
    counts: [usize; MAX_DIM],
    times: Vec<f64>,
    // [time][node][component]
    values: Vec<f64>,
    // spline second derivatives, same layout
    second: Vec<f64>,
}

impl GriddedSamples {
    /// `values[it][node * components + c]`, nodes in lexicographic order with axis 0 fastest.
    pub fn new(
        dim: usize,
        components: usize,
        lo: Point,
        spacing: Point,
        counts: [usize; MAX_DIM],
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let nodes: usize = counts[..dim].iter().product();
        if times.len() < 2 {
            return Err(FracError::InvalidParameter("sampled potential needs at least two time samples".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FracError::InvalidParameter("sample times must be strictly increasing".into()));
        }
        if counts[..dim].iter().any(|&c| c < 2) || spacing[..dim].iter().any(|&h| !(h > 0.0)) {
            return Err(FracError::InvalidParameter("sample grid needs >= 2 nodes and positive spacing per axis".into()));
        }
        if values.len() != times.len() || values.iter().any(|v| v.len() != nodes * components) {
            return Err(FracError::InvalidParameter("sample array shape does not match grid".into()));
        }
        let stride = nodes * components;
        let flat: Vec<f64> = values.into_iter().flatten().collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(FracError::InvalidParameter("non-finite sample value".into()));
        }
        let second = natural_spline_second_derivatives(&times, &flat, stride);
        Ok(Self { dim, components, lo, spacing, counts, times, values: flat, second })
    }

    /// Parses CSV rows `t, x_1..x_dim, v_1..v_components` (header line optional).
    pub fn from_csv(text: &str, dim: usize, components: usize) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            match parsed {
                Ok(v) => {
                    if v.len() != 1 + dim + components {
                        return Err(FracError::Config(format!(
                            "sample line {}: expected {} columns, found {}",
                            lineno + 1,
                            1 + dim + components,
                            v.len()
                        )));
                    }
                    rows.push(v);
                }
                Err(_) if rows.is_empty() => continue, // header
                Err(e) => return Err(FracError::Config(format!("sample line {}: {e}", lineno + 1))),
            }
        }
        let key = |v: f64| (v * 1e9).round() as i64;
        let mut times = BTreeMap::new();
        let mut axes: Vec<BTreeMap<i64, f64>> = vec![BTreeMap::new(); dim];
        for r in &rows {
            times.insert(key(r[0]), r[0]);
            for k in 0..dim {
                axes[k].insert(key(r[1 + k]), r[1 + k]);
            }
        }
        let mut lo = [0.0; MAX_DIM];
        let mut spacing = [1.0; MAX_DIM];
        let mut counts = [1usize; MAX_DIM];
        for k in 0..dim {
            let coords: Vec<f64> = axes[k].values().copied().collect();
            if coords.len() < 2 {
                return Err(FracError::Config(format!("sample axis {k} has fewer than two coordinates")));
            }
            lo[k] = coords[0];
            counts[k] = coords.len();
            spacing[k] = (coords[coords.len() - 1] - coords[0]) / (coords.len() - 1) as f64;
            for (i, c) in coords.iter().enumerate() {
                if (c - (lo[k] + i as f64 * spacing[k])).abs() > 1e-6 * spacing[k] {
                    return Err(FracError::Config(format!("sample axis {k} is not uniformly spaced")));
                }
            }
        }
        let time_list: Vec<f64> = times.values().copied().collect();
        let nodes: usize = counts[..dim].iter().product();
        let mut values = vec![vec![f64::NAN; nodes * components]; time_list.len()];
        for r in &rows {
            let it = time_list.iter().position(|&t| key(t) == key(r[0])).unwrap();
            let mut flat = 0;
            let mut stride = 1;
            for k in 0..dim {
                let i = ((r[1 + k] - lo[k]) / spacing[k]).round() as usize;
                flat += i * stride;
                stride *= counts[k];
            }
            for c in 0..components {
                values[it][flat * components + c] = r[1 + dim + c];
            }
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(FracError::Config("sample grid is incomplete".into()));
        }
        Self::new(dim, components, lo, spacing, counts, time_list, values)
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Short content hash used in labels and manifests.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.times.iter().chain(&self.values).chain(&self.lo).chain(&self.spacing) {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    fn time_weights(&self, t: f64) -> (usize, f64, f64, f64, f64) {
        let n = self.times.len();
        let t = t.clamp(self.times[0], self.times[n - 1]);
        let mut i = match self.times.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= n - 1 {
            i = n - 2;
        }
        let h = self.times[i + 1] - self.times[i];
        let a = (self.times[i + 1] - t) / h;
        let b = 1.0 - a;
        let c = (a * a * a - a) * h * h / 6.0;
        let d = (b * b * b - b) * h * h / 6.0;
        (i, a, b, c, d)
    }

    /// Writes the interpolated components into `out[..components]`.
    pub fn eval_into(&self, x: &Point, t: f64, out: &mut Point) {
        *out = [0.0; MAX_DIM];
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..self.dim {
            let u = (x[k] - self.lo[k]) / self.spacing[k];
            let last = (self.counts[k] - 1) as f64;
            if u < -1e-12 || u > last + 1e-12 {
                return;
            }
            let u = u.clamp(0.0, last);
            let i = (u.floor() as usize).min(self.counts[k] - 2);
            base[k] = i;
            frac[k] = u - i as f64;
        }
        let (it, a, b, c, d) = self.time_weights(t);
        let nodes: usize = self.counts[..self.dim].iter().product();
        let stride_t = nodes * self.components;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut flat = 0;
            let mut stride = 1;
            for k in 0..self.dim {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat += (base[k] + bit) * stride;
                stride *= self.counts[k];
            }
            if w == 0.0 {
                continue;
            }
            for comp in 0..self.components {
                let i0 = it * stride_t + flat * self.components + comp;
                let i1 = i0 + stride_t;
                let v = a * self.values[i0] + b * self.values[i1] + c * self.second[i0] + d * self.second[i1];
                out[comp] += w * v;
            }
        }
    }
}

/// Second derivatives of natural cubic splines through `values[i*stride + j]` at `times[i]`,
/// one spline per column `j`.
fn natural_spline_second_derivatives(times: &[f64], values: &[f64], stride: usize) -> Vec<f64> {
    let n = times.len();
    let mut m = vec![0.0; values.len()];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior unknowns, shared matrix across columns.
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut upper = vec![0.0; k];
    let mut lower = vec![0.0; k];
    for i in 0..k {
        diag[i] = 2.0 * (h[i] + h[i + 1]);
        upper[i] = h[i + 1];
        lower[i] = h[i];
    }
    let mut cprime = vec![0.0; k];
    let mut denom = vec![0.0; k];
    denom[0] = diag[0];
    cprime[0] = upper[0] / denom[0];
    for i in 1..k {
        denom[i] = diag[i] - lower[i] * cprime[i - 1];
        cprime[i] = upper[i] / denom[i];
    }
    let mut d = vec![0.0; k];
    for j in 0..stride {
        let y = |i: usize| values[i * stride + j];
        for i in 0..k {
            let rhs = 6.0 * ((y(i + 2) - y(i + 1)) / h[i + 1] - (y(i + 1) - y(i)) / h[i]);
            d[i] = if i == 0 { rhs / denom[0] } else { (rhs - lower[i] * d[i - 1]) / denom[i] };
        }
        for i in (0..k).rev() {
            let next = if i + 1 < k { m[(i + 2) * stride + j] } else { 0.0 };
            m[(i + 1) * stride + j] = d[i] - cprime[i] * next;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_linear_in_space_and_cubic_free_in_time() {
        // v(x, t) = (1 + 2x) * (3 - t) sampled on x in {0, .5, 1}, t in {-1, 0, 1, 2}
        let times = vec![-1.0, 0.0, 1.0, 2.0];
        let xs = [0.0, 0.5, 1.0];
        let values: Vec<Vec<f64>> =
            times.iter().map(|t| xs.iter().map(|x| (1.0 + 2.0 * x) * (3.0 - t)).collect()).collect();
        let s = GriddedSamples::new(1, 1, [0.0; 3], [0.5, 1.0, 1.0], [3, 1, 1], times, values).unwrap();
        let mut out = [0.0; 3];
        s.eval_into(&[0.3, 0.0, 0.0], 0.7, &mut out);
        assert!((out[0] - 1.6 * 2.3).abs() < 1e-12, "{}", out[0]);
        s.eval_into(&[1.3, 0.0, 0.0], 0.7, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let mut text = String::from("t,x,v\n");
        for t in [-1.0, 0.0, 1.0] {
            for x in [-1.0, 0.0, 1.0] {
                text.push_str(&format!("{t},{x},{}\n", x + t));
            }
        }
        let s = GriddedSamples::from_csv(&text, 1, 1).unwrap();
        let mut out = [0.0; 3];
        s.eval_into(&[0.5, 0.0, 0.0], 0.5, &mut out);
        assert!((out[0] - 1.0).abs() < 1e-12);
    }
}
