//! Measure construction: reference measures, discretization, convex
//! reweighting, products, and linear pushforwards.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::Expr;
use crate::grid::{BoxDomain, Geometry, GridDensity, GridError, MAX_DIM};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("expression arity {expr} does not match domain dimension {dom}")]
    ArityMismatch { expr: usize, dom: usize },
    #[error("pushforward map must be {rows}x{cols} with full row rank")]
    RankDeficient { rows: usize, cols: usize },
    #[error("pushforward map has {rows} rows but output domain has {dim} axes")]
    ShapeMismatch { rows: usize, dim: usize },
    #[error("combined dimension {0} exceeds the maximum {MAX_DIM}")]
    DimensionCap(usize),
}

/// Reference measure a density is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    Lebesgue,
    /// Standard Gaussian `N(0, I_d)`; the reference weight
    /// `(2*pi)^(-d/2) exp(-|x|^2/2)` multiplies the density at each node.
    Gaussian,
}

/// Where a measure's density comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DensitySource {
    Expr(Expr),
    Grid(GridDensity),
}

/// Declarative description of a measure to be discretized.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSpec {
    pub label: String,
    pub reference: Reference,
    pub density: DensitySource,
    /// Claimed super-log-concavity constant, if any; verified elsewhere.
    pub alpha: Option<f64>,
}

impl MeasureSpec {
    pub fn expr(label: impl Into<String>, reference: Reference, density: Expr) -> Self {
        MeasureSpec {
            label: label.into(),
            reference,
            density: DensitySource::Expr(density),
            alpha: None,
        }
    }
}

/// Samples the measure's density (times the reference weight) on a grid.
///
/// Existing grid sources are resampled by multilinear interpolation. Use
/// [`GridDensity::boundary_sup_ratio`] on the result to gauge how much mass
/// the box truncates.
pub fn discretize(
    spec: &MeasureSpec,
    dom: &BoxDomain,
    res: &[usize],
) -> Result<GridDensity, MeasureError> {
    let d = dom.dim();
    if let DensitySource::Expr(e) = &spec.density {
        if e.dim() != d {
            return Err(MeasureError::ArityMismatch {
                expr: e.dim(),
                dom: d,
            });
        }
    }
    let gauss_norm = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0);
    let grid = GridDensity::from_fn(dom.clone(), res.to_vec(), |p| {
        let base = match &spec.density {
            DensitySource::Expr(e) => e.eval(p)?,
            DensitySource::Grid(g) => g.interp_or_zero(p),
        };
        Ok(match spec.reference {
            Reference::Lebesgue => base,
            Reference::Gaussian => {
                let q: f64 = p.iter().map(|v| v * v).sum();
                base * gauss_norm * (-0.5 * q).exp()
            }
        })
    })?;
    Ok(grid)
}

/// Multiplies a density by `exp(-F)` for a convex potential `F`.
///
/// Overflow of `exp(-F)` (an unboundedly negative `F`) surfaces as a
/// node-value error rather than an infinity in the grid.
pub fn weight_by_convex(rho: &GridDensity, f: &Expr) -> Result<GridDensity, MeasureError> {
    if f.dim() != rho.dim() {
        return Err(MeasureError::ArityMismatch {
            expr: f.dim(),
            dom: rho.dim(),
        });
    }
    let geom = rho.geometry();
    let mut point = vec![0.0; rho.dim()];
    let mut values = Vec::with_capacity(rho.len());
    for flat in 0..rho.len() {
        geom.node_into(flat, &mut point);
        let potential = f.eval(&point).map_err(|source| GridError::Eval {
            point: point.clone(),
            source,
        })?;
        values.push(rho.value(flat) * (-potential).exp());
    }
    Ok(GridDensity::from_values(
        rho.domain().clone(),
        rho.resolution().to_vec(),
        values,
    )?)
}

/// Tensor product of two grid densities; dimensions must sum to at most 4.
pub fn product_measure(
    a: &GridDensity,
    b: &GridDensity,
) -> Result<GridDensity, MeasureError> {
    let d = a.dim() + b.dim();
    if d > MAX_DIM {
        return Err(MeasureError::DimensionCap(d));
    }
    let dom = a.domain().product(b.domain())?;
    let mut res = a.resolution().to_vec();
    res.extend_from_slice(b.resolution());
    let mut values = Vec::with_capacity(a.len() * b.len());
    for &va in a.values() {
        for &vb in b.values() {
            values.push(va * vb);
        }
    }
    Ok(GridDensity::from_values(dom, res, values)?)
}

/// Result of a linear pushforward, with mass bookkeeping.
#[derive(Debug, Clone)]
pub struct Pushforward {
    pub grid: GridDensity,
    /// Mass deposited outside the output box, including tent shares falling
    /// beyond the boundary nodes.
    pub lost_mass: f64,
    /// Trapezoid mass of the source that the deposit step conserves.
    pub source_mass: f64,
}

impl Pushforward {
    /// Fraction of the source mass that fell outside the output box.
    pub fn lost_fraction(&self) -> f64 {
        if self.source_mass > 0.0 {
            self.lost_mass / self.source_mass
        } else {
            0.0
        }
    }
}

/// Midpoint subsamples per source cell per axis. Depositing from cell
/// midpoints integrates the multilinear interpolant exactly, and the finer
/// deposit pitch suppresses the moiré aliasing a node-by-node splat produces
/// under rotations.
const SPLAT_SUBSAMPLE: usize = 4;

/// Image of `rho` under a surjective linear map `F` (an `n x m` matrix of
/// full row rank, `n <= m`).
///
/// Each source cell is subdivided into midpoint samples of its multilinear
/// interpolant; each sample's mass is deposited at `F x` by multilinear
/// splatting onto the surrounding output nodes (first moments are
/// preserved), then converted back to a density. Deposited mass is conserved
/// exactly; anything mapped outside `out_dom` is reported in
/// [`Pushforward::lost_mass`].
pub fn linear_pushforward(
    rho: &GridDensity,
    f: &DMatrix<f64>,
    out_dom: &BoxDomain,
    out_res: &[usize],
) -> Result<Pushforward, MeasureError> {
    let (n, m) = f.shape();
    if m != rho.dim() || n > m {
        return Err(MeasureError::RankDeficient { rows: n, cols: m });
    }
    if n != out_dom.dim() {
        return Err(MeasureError::ShapeMismatch {
            rows: n,
            dim: out_dom.dim(),
        });
    }
    if f.rank(1e-10) < n {
        return Err(MeasureError::RankDeficient { rows: n, cols: m });
    }

    let src = rho.geometry();
    let out = Geometry::new(out_dom, out_res)?;
    let sub = SPLAT_SUBSAMPLE;
    let sample_vol: f64 = (0..m).map(|a| src.step[a] / sub as f64).product();

    // Deposit onto a one-node ghost fringe so boundary nodes get the same
    // two-sided tent coverage as interior ones. Without it the boundary
    // estimate is one-sided, which reads systematically high wherever the
    // density decays steeply across the edge of the box.
    let mut ghost_lo = Vec::with_capacity(n);
    let mut ghost_hi = Vec::with_capacity(n);
    let mut ghost_res = Vec::with_capacity(n);
    for a in 0..n {
        ghost_lo.push(out.lo[a] - out.step[a]);
        ghost_hi.push(out.lo[a] + out.step[a] * out.res[a] as f64);
        ghost_res.push(out.res[a] + 2);
    }
    let ghost = Geometry::new(&BoxDomain::new(ghost_lo, ghost_hi)?, &ghost_res)?;

    let mut node_mass = vec![0.0f64; ghost.len()];
    let mut source_mass = 0.0;

    let cells: Vec<usize> = (0..m).map(|a| src.res[a] - 1).collect();
    let mut cell = vec![0usize; m];
    let mut offs = vec![0usize; m];
    let mut x = vec![0.0f64; m];
    let mut y = vec![0.0f64; n];
    loop {
        let base: usize = (0..m).map(|a| cell[a] * src.stride[a]).sum();
        offs.iter_mut().for_each(|o| *o = 0);
        loop {
            // Interpolant of the cell corners at the subcell midpoint.
            let mut value = 0.0;
            for corner in 0..(1usize << m) {
                let mut w = 1.0;
                let mut flat = base;
                for a in 0..m {
                    let t = (offs[a] as f64 + 0.5) / sub as f64;
                    let up = (corner >> a) & 1 == 1;
                    w *= if up { t } else { 1.0 - t };
                    flat += ((corner >> a) & 1) * src.stride[a];
                }
                value += w * rho.value(flat);
            }
            if value != 0.0 {
                let w = value * sample_vol;
                source_mass += w;
                for a in 0..m {
                    let t = (offs[a] as f64 + 0.5) / sub as f64;
                    x[a] = src.coord(a, cell[a]) + t * src.step[a];
                }
                for i in 0..n {
                    y[i] = (0..m).map(|j| f[(i, j)] * x[j]).sum();
                }
                splat(&ghost, &y, w, &mut node_mass);
            }
            if !advance(&mut offs, sub) {
                break;
            }
        }
        if !advance_mixed(&mut cell, &cells) {
            break;
        }
    }

    // Each kept node's tent has full volume (the fringe supplies the outer
    // half at the boundary), so the density estimate divides by the whole
    // voxel everywhere; fringe masses count as lost. Rescale at the end so
    // the output's mass equals the deposited mass exactly.
    let voxel: f64 = (0..n).map(|a| out.step[a]).product();
    let mut values = vec![0.0f64; out.len()];
    let mut oidx = vec![0usize; n];
    let mut deposited = 0.0;
    for (flat, value) in values.iter_mut().enumerate() {
        out.unflatten_into(flat, &mut oidx);
        let gflat: usize = (0..n).map(|a| (oidx[a] + 1) * ghost.stride[a]).sum();
        deposited += node_mass[gflat];
        *value = node_mass[gflat] / voxel;
    }
    let lost = (source_mass - deposited).max(0.0);
    let grid = GridDensity::from_values(out_dom.clone(), out_res.to_vec(), values)?;
    let grid = if grid.mass() > 0.0 && deposited > 0.0 {
        grid.scaled(deposited / grid.mass())?
    } else {
        grid
    };
    Ok(Pushforward {
        grid,
        lost_mass: lost,
        source_mass,
    })
}

/// Odometer step with a uniform radix; returns false on wrap-around.
fn advance(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}

/// Odometer step with per-digit radices; returns false on wrap-around.
fn advance_mixed(digits: &mut [usize], radices: &[usize]) -> bool {
    for (d, &r) in digits.iter_mut().zip(radices).rev() {
        *d += 1;
        if *d < r {
            return true;
        }
        *d = 0;
    }
    false
}

/// Multilinear deposit of `w` at continuous position `y`; returns false if
/// the point is outside the grid.
fn splat(out: &Geometry, y: &[f64], w: f64, node_mass: &mut [f64]) -> bool {
    let d = out.dim();
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0f64; MAX_DIM];
    for a in 0..d {
        let t = (y[a] - out.lo[a]) / out.step[a];
        let eps = 1e-9;
        if t < -eps || t > (out.res[a] - 1) as f64 + eps {
            return false;
        }
        let t = t.clamp(0.0, (out.res[a] - 1) as f64);
        let mut i = t.floor() as usize;
        if i >= out.res[a] - 1 {
            i = out.res[a] - 2;
        }
        base[a] = i;
        frac[a] = t - i as f64;
    }
    for corner in 0..(1usize << d) {
        let mut cw = w;
        let mut flat = 0;
        for a in 0..d {
            let up = (corner >> a) & 1 == 1;
            cw *= if up { frac[a] } else { 1.0 - frac[a] };
            flat += (base[a] + up as usize) * out.stride[a];
        }
        node_mass[flat] += cw;
    }
    true
}
