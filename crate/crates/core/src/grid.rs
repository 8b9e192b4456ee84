//! Box domains and tensor-product grid densities.
//!
//! A [`GridDensity`] stores nonnegative node values over a uniform grid on a
//! box in `R^d` (`d <= 4`), row-major with the last axis varying fastest.
//! Its total mass under the built-in composite-Simpson quadrature is cached at
//! construction and kept consistent by every operation.
//!
//! Serialization (documented in `docs/formats.md`):
//! * binary — `u64` dim, then per axis `f64` lo, `f64` hi, `u64` res, then the
//!   row-major `f64` payload, all little-endian;
//! * JSON — for small grids, via serde.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard dimension cap for the whole toolkit.
pub const MAX_DIM: usize = 4;

/// Minimum nodes per axis; below this the quadrature rules degenerate.
pub const MIN_RES: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("dimension {0} exceeds the supported maximum {MAX_DIM}")]
    DimensionCap(usize),
    #[error("domain needs at least one axis")]
    EmptyDomain,
    #[error("axis {axis}: lower bound {lo} is not below upper bound {hi}")]
    BadBounds { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis}: resolution {res} is below the minimum {MIN_RES}")]
    BadResolution { axis: usize, res: usize },
    #[error("value count {got} does not match grid size {want}")]
    ValueCount { got: usize, want: usize },
    #[error("node value at flat index {index} is {value} (must be finite and >= 0)")]
    BadValue { index: usize, value: f64 },
    #[error("grids have incompatible geometry: {0}")]
    Incompatible(String),
    #[error("evaluation failed at node {point:?}: {source}")]
    Eval {
        point: Vec<f64>,
        source: crate::expr::EvalError,
    },
    #[error("malformed grid bytes: {0}")]
    Bytes(String),
}

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxDomainRepr", into = "BoxDomainRepr")]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Serialize, Deserialize, Clone)]
struct BoxDomainRepr {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<BoxDomainRepr> for BoxDomain {
    type Error = GridError;
    fn try_from(r: BoxDomainRepr) -> Result<Self, GridError> {
        BoxDomain::new(r.lo, r.hi)
    }
}

impl From<BoxDomain> for BoxDomainRepr {
    fn from(d: BoxDomain) -> Self {
        BoxDomainRepr { lo: d.lo, hi: d.hi }
    }
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GridError> {
        if lo.is_empty() {
            return Err(GridError::EmptyDomain);
        }
        if lo.len() != hi.len() {
            return Err(GridError::Incompatible(format!(
                "lo has {} axes, hi has {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.len() > MAX_DIM {
            return Err(GridError::DimensionCap(lo.len()));
        }
        for (axis, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(GridError::BadBounds { axis, lo: l, hi: h });
            }
        }
        Ok(BoxDomain { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.side(a)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| 0.5 * (l + h))
            .collect()
    }

    /// Cartesian product of two boxes; the combined dimension must stay
    /// within [`MAX_DIM`].
    pub fn product(&self, other: &BoxDomain) -> Result<BoxDomain, GridError> {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        lo.extend_from_slice(&other.lo);
        hi.extend_from_slice(&other.hi);
        BoxDomain::new(lo, hi)
    }
}

/// Composite Simpson weights for `n` uniformly spaced nodes with spacing `h`.
///
/// An odd interval count is handled by a 3/8 rule on the last three intervals,
/// preserving fourth-order accuracy.
pub(crate) fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 2);
    let m = n - 1; // intervals
    let mut w = vec![0.0; n];
    if m == 1 {
        return vec![0.5 * h, 0.5 * h];
    }
    let (simpson_end, three_eighths) = if m % 2 == 0 { (m, false) } else { (m - 3, true) };
    if simpson_end > 0 {
        w[0] += h / 3.0;
        w[simpson_end] += h / 3.0;
        for k in 1..simpson_end {
            w[k] += if k % 2 == 1 { 4.0 * h / 3.0 } else { 2.0 * h / 3.0 };
        }
    }
    if three_eighths {
        let s = m - 3;
        if simpson_end == 0 {
            // 3 intervals total: pure 3/8 rule.
        }
        w[s] += 3.0 * h / 8.0;
        w[s + 1] += 9.0 * h / 8.0;
        w[s + 2] += 9.0 * h / 8.0;
        w[s + 3] += 3.0 * h / 8.0;
    }
    w
}

/// Trapezoid weights for `n` uniformly spaced nodes with spacing `h`.
pub(crate) fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 2);
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Nonnegative density samples on a uniform grid, with cached Simpson mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridDensityRepr", into = "GridDensityRepr")]
pub struct GridDensity {
    dom: BoxDomain,
    res: Vec<usize>,
    values: Vec<f64>,
    mass: f64,
}

#[derive(Serialize, Deserialize, Clone)]
struct GridDensityRepr {
    domain: BoxDomain,
    resolution: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<GridDensityRepr> for GridDensity {
    type Error = GridError;
    fn try_from(r: GridDensityRepr) -> Result<Self, GridError> {
        GridDensity::from_values(r.domain, r.resolution, r.values)
    }
}

impl From<GridDensity> for GridDensityRepr {
    fn from(g: GridDensity) -> Self {
        GridDensityRepr {
            domain: g.dom,
            resolution: g.res,
            values: g.values,
        }
    }
}

impl GridDensity {
    pub fn from_values(
        dom: BoxDomain,
        res: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, GridError> {
        if res.len() != dom.dim() {
            return Err(GridError::Incompatible(format!(
                "domain has {} axes, resolution has {}",
                dom.dim(),
                res.len()
            )));
        }
        for (axis, &r) in res.iter().enumerate() {
            if r < MIN_RES {
                return Err(GridError::BadResolution { axis, res: r });
            }
        }
        let want: usize = res.iter().product();
        if values.len() != want {
            return Err(GridError::ValueCount {
                got: values.len(),
                want,
            });
        }
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(GridError::BadValue { index, value: v });
            }
        }
        let mut g = GridDensity {
            dom,
            res,
            values,
            mass: 0.0,
        };
        g.mass = g.integral();
        Ok(g)
    }

    /// Samples a closure at every node. The closure may fail (e.g. an
    /// expression domain error); the failing node is reported.
    pub fn from_fn<F>(dom: BoxDomain, res: Vec<usize>, mut f: F) -> Result<Self, GridError>
    where
        F: FnMut(&[f64]) -> Result<f64, crate::expr::EvalError>,
    {
        let geom = Geometry::new(&dom, &res)?;
        let mut values = vec![0.0; geom.len()];
        let mut point = vec![0.0; dom.dim()];
        for (flat, v) in values.iter_mut().enumerate() {
            geom.node_into(flat, &mut point);
            *v = f(&point).map_err(|source| GridError::Eval {
                point: point.clone(),
                source,
            })?;
        }
        GridDensity::from_values(dom, res, values)
    }

    pub fn from_expr(
        dom: BoxDomain,
        res: Vec<usize>,
        density: &crate::expr::Expr,
    ) -> Result<Self, GridError> {
        GridDensity::from_fn(dom, res, |p| density.eval(p))
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.dom
    }

    pub fn resolution(&self) -> &[usize] {
        &self.res
    }

    pub fn dim(&self) -> usize {
        self.dom.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    /// Cached total mass: identical to [`GridDensity::integral`].
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.dom.side(axis) / (self.res[axis] - 1) as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.spacing(a)).collect()
    }

    pub(crate) fn geometry(&self) -> Geometry {
        Geometry::new(&self.dom, &self.res).expect("validated at construction")
    }

    pub fn same_geometry(&self, other: &GridDensity) -> bool {
        self.dom == other.dom && self.res == other.res
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let geom = self.geometry();
        let mut p = vec![0.0; self.dim()];
        geom.node_into(flat, &mut p);
        p
    }

    /// Tensor-product composite-Simpson integral of the node values.
    pub fn integral(&self) -> f64 {
        let weights: Vec<Vec<f64>> = (0..self.dim())
            .map(|a| simpson_weights(self.res[a], self.spacing(a)))
            .collect();
        self.weighted_sum(&weights)
    }

    /// Deterministic weighted sum with per-axis weight vectors.
    pub(crate) fn weighted_sum(&self, axis_weights: &[Vec<f64>]) -> f64 {
        let geom = self.geometry();
        let mut idx = vec![0usize; self.dim()];
        let mut total = 0.0;
        for (flat, &v) in self.values.iter().enumerate() {
            geom.unflatten_into(flat, &mut idx);
            let mut w = v;
            for (a, &i) in idx.iter().enumerate() {
                w *= axis_weights[a][i];
            }
            total += w;
        }
        total
    }

    /// Multilinear interpolation; zero outside the box.
    pub fn interp_or_zero(&self, x: &[f64]) -> f64 {
        let geom = self.geometry();
        geom.interp_or_zero(&self.values, x)
    }

    /// Geometric-mean interpolation; zero outside the box or next to a zero
    /// node. See [`Geometry::interp_log_or_zero`].
    pub fn interp_log_or_zero(&self, x: &[f64]) -> f64 {
        let geom = self.geometry();
        geom.interp_log_or_zero(&self.values, x)
    }

    /// Largest node value on the boundary of the box, as a fraction of the
    /// overall maximum — a cheap indicator of how much mass the box truncates.
    pub fn boundary_sup_ratio(&self) -> f64 {
        let geom = self.geometry();
        let mut idx = vec![0usize; self.dim()];
        let mut edge_max = 0.0f64;
        let mut all_max = 0.0f64;
        for (flat, &v) in self.values.iter().enumerate() {
            geom.unflatten_into(flat, &mut idx);
            all_max = all_max.max(v);
            let on_edge = idx
                .iter()
                .zip(&self.res)
                .any(|(&i, &n)| i == 0 || i == n - 1);
            if on_edge {
                edge_max = edge_max.max(v);
            }
        }
        if all_max == 0.0 {
            0.0
        } else {
            edge_max / all_max
        }
    }

    /// Returns a copy scaled by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<GridDensity, GridError> {
        GridDensity::from_values(
            self.dom.clone(),
            self.res.clone(),
            self.values.iter().map(|&v| v * c).collect(),
        )
    }

    /// Returns a copy normalized to unit mass.
    pub fn normalized(&self) -> Result<GridDensity, GridError> {
        if self.mass <= 0.0 {
            return Err(GridError::Incompatible(
                "cannot normalize a grid with zero mass".into(),
            ));
        }
        self.scaled(1.0 / self.mass)
    }

    // -- serialization ------------------------------------------------------

    /// Flat binary layout, little-endian: `u64` dim; per axis `f64` lo,
    /// `f64` hi, `u64` res; then the row-major `f64` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(8 + d * 24 + self.values.len() * 8);
        out.extend_from_slice(&(d as u64).to_le_bytes());
        for a in 0..d {
            out.extend_from_slice(&self.dom.lo[a].to_le_bytes());
            out.extend_from_slice(&self.dom.hi[a].to_le_bytes());
            out.extend_from_slice(&(self.res[a] as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GridDensity, GridError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let d = cur.u64()? as usize;
        if d == 0 || d > MAX_DIM {
            return Err(GridError::Bytes(format!("dimension {d} out of range")));
        }
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        let mut res = Vec::with_capacity(d);
        for _ in 0..d {
            lo.push(cur.f64()?);
            hi.push(cur.f64()?);
            let r = cur.u64()? as usize;
            res.push(r);
        }
        let count: usize = res.iter().product();
        if count == 0 || count > (1 << 28) {
            return Err(GridError::Bytes(format!("payload of {count} values")));
        }
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(cur.f64()?);
        }
        if cur.pos != bytes.len() {
            return Err(GridError::Bytes(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        let dom = BoxDomain::new(lo, hi)?;
        GridDensity::from_values(dom, res, values)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], GridError> {
        if self.pos + n > self.bytes.len() {
            return Err(GridError::Bytes("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, GridError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, GridError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Index arithmetic for a uniform grid: row-major, last axis fastest.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    pub lo: Vec<f64>,
    pub step: Vec<f64>,
    pub res: Vec<usize>,
    pub stride: Vec<usize>,
}

impl Geometry {
    pub fn new(dom: &BoxDomain, res: &[usize]) -> Result<Geometry, GridError> {
        if res.len() != dom.dim() {
            return Err(GridError::Incompatible(
                "resolution/domain axis mismatch".into(),
            ));
        }
        for (axis, &r) in res.iter().enumerate() {
            if r < 2 {
                return Err(GridError::BadResolution { axis, res: r });
            }
        }
        let d = dom.dim();
        let step: Vec<f64> = (0..d).map(|a| dom.side(a) / (res[a] - 1) as f64).collect();
        let mut stride = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            stride[a] = stride[a + 1] * res[a + 1];
        }
        Ok(Geometry {
            lo: dom.lo().to_vec(),
            step,
            res: res.to_vec(),
            stride,
        })
    }

    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn len(&self) -> usize {
        self.res.iter().product()
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.stride).map(|(&i, &s)| i * s).sum()
    }

    pub fn unflatten_into(&self, flat: usize, idx: &mut [usize]) {
        let mut rest = flat;
        for a in 0..self.dim() {
            idx[a] = rest / self.stride[a];
            rest %= self.stride[a];
        }
    }

    pub fn node_into(&self, flat: usize, point: &mut [f64]) {
        let mut rest = flat;
        for a in 0..self.dim() {
            let i = rest / self.stride[a];
            rest %= self.stride[a];
            point[a] = self.lo[a] + i as f64 * self.step[a];
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + i as f64 * self.step[axis]
    }

    /// Nearest node to `x`, or `None` if any coordinate rounds outside.
    pub fn nearest_node(&self, x: &[f64]) -> Option<Vec<usize>> {
        let mut idx = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            let t = (x[a] - self.lo[a]) / self.step[a];
            let i = t.round();
            if i < 0.0 || i > (self.res[a] - 1) as f64 {
                return None;
            }
            idx.push(i as usize);
        }
        Some(idx)
    }

    pub fn interp_or_zero(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for a in 0..d {
            let t = (x[a] - self.lo[a]) / self.step[a];
            // Tolerate roundoff hair just outside the box.
            let eps = 1e-9;
            if t < -eps || t > (self.res[a] - 1) as f64 + eps {
                return 0.0;
            }
            let t = t.clamp(0.0, (self.res[a] - 1) as f64);
            let mut i = t.floor() as usize;
            if i >= self.res[a] - 1 {
                i = self.res[a] - 2;
            }
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..d {
                let up = (corner >> a) & 1 == 1;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
                flat += (base[a] + up as usize) * self.stride[a];
            }
            if w != 0.0 {
                acc += w * values[flat];
            }
        }
        acc
    }

    /// Multilinear interpolation of `log(values)` at `x` — the weighted
    /// geometric mean of the surrounding corners — zero outside the box or
    /// when any participating corner is zero.
    ///
    /// Where the log of the field is concave along grid lines, this sits at
    /// or below the field, while plain multilinear interpolation overshoots
    /// on convex stretches of the value surface (e.g. Gaussian tails).
    pub fn interp_log_or_zero(&self, values: &[f64], x: &[f64]) -> f64 {
        let d = self.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        for a in 0..d {
            let t = (x[a] - self.lo[a]) / self.step[a];
            let eps = 1e-9;
            if t < -eps || t > (self.res[a] - 1) as f64 + eps {
                return 0.0;
            }
            let t = t.clamp(0.0, (self.res[a] - 1) as f64);
            let mut i = t.floor() as usize;
            if i >= self.res[a] - 1 {
                i = self.res[a] - 2;
            }
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..d {
                let up = (corner >> a) & 1 == 1;
                w *= if up { frac[a] } else { 1.0 - frac[a] };
                flat += (base[a] + up as usize) * self.stride[a];
            }
            if w != 0.0 {
                let v = values[flat];
                if v <= 0.0 {
                    return 0.0;
                }
                acc += w * v.ln();
            }
        }
        acc.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use approx::assert_relative_eq;

    const SQRT_2PI: f64 = 2.5066282746310002;

    fn std_gauss_1d(n: usize) -> GridDensity {
        let dom = BoxDomain::new(vec![-8.0], vec![8.0]).unwrap();
        let e = Expr::parse("exp(0 - x1^2/2)", 1).unwrap();
        GridDensity::from_expr(dom, vec![n], &e).unwrap()
    }

    #[test]
    fn gaussian_integral_matches_sqrt_2pi() {
        // 512 nodes means an odd interval count; the hybrid Simpson/3-8 rule
        // must still deliver fourth-order accuracy.
        let g = std_gauss_1d(512);
        assert_relative_eq!(g.mass(), SQRT_2PI, epsilon = 1e-6);
        let g = std_gauss_1d(513);
        assert_relative_eq!(g.mass(), SQRT_2PI, epsilon = 1e-9);
    }

    #[test]
    fn gaussian_2d_integral() {
        let dom = BoxDomain::new(vec![-8.0, -8.0], vec![8.0, 8.0]).unwrap();
        let e = Expr::parse("exp(0 - normsq(x)/2)", 2).unwrap();
        let g = GridDensity::from_expr(dom, vec![161, 161], &e).unwrap();
        assert_relative_eq!(g.mass(), SQRT_2PI * SQRT_2PI, epsilon = 1e-6);
    }

    #[test]
    fn simpson_exact_on_cubics() {
        // Simpson integrates degree-3 polynomials exactly.
        let dom = BoxDomain::new(vec![0.0], vec![2.0]).unwrap();
        let e = Expr::parse("x1^3 + x1 + 1", 1).unwrap();
        for n in [9, 10, 33] {
            let g = GridDensity::from_expr(dom.clone(), vec![n], &e).unwrap();
            // integral of x^3 + x + 1 over [0,2] = 4 + 2 + 2 = 8
            assert_relative_eq!(g.mass(), 8.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn richardson_ratio_shows_fourth_order() {
        // Error(res) / Error(2*res) should be about 16 for a smooth density
        // that does not vanish at the boundary; require at least 3.
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let e = Expr::parse("exp(x1)", 1).unwrap();
        let truth = 1.0f64.exp() - 1.0;
        let err = |n: usize| {
            (GridDensity::from_expr(dom.clone(), vec![n], &e)
                .unwrap()
                .mass()
                - truth)
                .abs()
        };
        let ratio = err(17) / err(33);
        assert!(ratio >= 3.0, "ratio {ratio}");
    }

    #[test]
    fn mass_cache_matches_integral() {
        let g = std_gauss_1d(128);
        assert_relative_eq!(g.mass(), g.integral(), max_relative = 1e-12);
    }

    #[test]
    fn interpolation_is_exact_for_linear() {
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let e = Expr::parse("1 + 2*x1 + 3*x2", 2).unwrap();
        let g = GridDensity::from_expr(dom, vec![9, 9], &e).unwrap();
        assert_relative_eq!(g.interp_or_zero(&[0.33, 1.7]), 1.0 + 0.66 + 5.1, epsilon = 1e-12);
        assert_eq!(g.interp_or_zero(&[1.5, 1.0]), 0.0);
    }

    #[test]
    fn binary_round_trip() {
        let g = std_gauss_1d(64);
        let bytes = g.to_bytes();
        let h = GridDensity::from_bytes(&bytes).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn binary_rejects_truncation_and_trailing() {
        let g = std_gauss_1d(16);
        let bytes = g.to_bytes();
        assert!(GridDensity::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(GridDensity::from_bytes(&extra).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = std_gauss_1d(16);
        let text = serde_json::to_string(&g).unwrap();
        let h: GridDensity = serde_json::from_str(&text).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn json_rejects_negative_values() {
        let text = r#"{"domain":{"lo":[0.0],"hi":[1.0]},"resolution":[8],
                       "values":[1,1,1,-0.5,1,1,1,1]}"#;
        assert!(serde_json::from_str::<GridDensity>(text).is_err());
    }

    #[test]
    fn negative_and_nonfinite_values_rejected() {
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let mut vals = vec![1.0; 8];
        vals[3] = -1e-12;
        assert!(GridDensity::from_values(dom.clone(), vec![8], vals).is_err());
        let mut vals = vec![1.0; 8];
        vals[5] = f64::NAN;
        assert!(GridDensity::from_values(dom, vec![8], vals).is_err());
    }

    #[test]
    fn dimension_cap_enforced() {
        assert!(BoxDomain::new(vec![0.0; 5], vec![1.0; 5]).is_err());
        let a = BoxDomain::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let b = BoxDomain::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert!(a.product(&b).is_err());
    }

    #[test]
    fn resolution_floor_enforced() {
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        assert!(GridDensity::from_values(dom, vec![4], vec![1.0; 4]).is_err());
    }

    #[test]
    fn boundary_ratio_flags_truncation() {
        let wide = std_gauss_1d(65);
        assert!(wide.boundary_sup_ratio() < 1e-12);
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let e = Expr::parse("exp(0 - x1^2/2)", 1).unwrap();
        let tight = GridDensity::from_expr(dom, vec![65], &e).unwrap();
        assert!(tight.boundary_sup_ratio() > 0.5);
    }

    #[test]
    fn row_major_last_axis_fastest() {
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let e = Expr::parse("x1 + 10*x2", 2).unwrap();
        let g = GridDensity::from_expr(dom, vec![8, 8], &e).unwrap();
        // flat index 1 should advance x2, not x1
        let p = g.node(1);
        assert_relative_eq!(p[0], 0.0);
        assert_relative_eq!(p[1], 1.0 / 7.0);
        assert_relative_eq!(g.value(1), 10.0 / 7.0, epsilon = 1e-12);
    }
}
