//! Gaussian-space calculus: Gauss–Hermite expectations, shift maps
//! `U(x) = x + u(x)`, the Jacobian factor
//! `Lambda = det2(I + grad u) * exp(-div u - |u|^2/2)`, the
//! Ornstein–Uhlenbeck semigroup via the Mehler formula, and the checks built
//! on them (change of variables, 1-log-concavity and its preservation, the
//! Prékopa–Leindler inequality for the Gaussian measure, mixtures of
//! monotone shifts).
//!
//! All expectations are with respect to the standard Gaussian measure; the
//! divergence is the Gaussian one, `div u = <u, x> - tr(grad u)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::expr::{DiffConfig, EvalError, Expr};
use crate::grid::{BoxDomain, GridDensity, GridError, MAX_DIM};
use crate::report::{CheckReport, Verdict};
use crate::LOG_ZERO;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaussError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("evaluation failed at {point:?}: {source}")]
    Eval { point: Vec<f64>, source: EvalError },
    #[error("bad parameter: {0}")]
    Param(String),
    #[error("dimension mismatch: {0}")]
    Dim(String),
}

type Result<T> = std::result::Result<T, GaussError>;

const TWO_PI: f64 = std::f64::consts::TAU;

// ---------------------------------------------------------------------------
// Gauss–Hermite quadrature
// ---------------------------------------------------------------------------

/// Quadrature for expectations under the standard Gaussian, one axis at a
/// time and tensorized up to dimension [`MAX_DIM`].
///
/// Nodes and weights come from the symmetric eigenproblem of the Jacobi
/// matrix of the (probabilists') Hermite polynomials; an order-`n` rule is
/// exact for polynomials of degree `2n - 1`. The constructor cross-checks
/// the moments `E[1]`, `E[x^2]` and `E[x^4]`.
#[derive(Debug, Clone)]
pub struct GaussianSpace {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

pub const DEFAULT_GH_ORDER: usize = 64;

impl GaussianSpace {
    pub fn new(order: usize) -> Result<GaussianSpace> {
        if !(2..=512).contains(&order) {
            return Err(GaussError::Param(format!(
                "quadrature order {order} outside 2..=512"
            )));
        }
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let v = (k as f64).sqrt();
            jacobi[(k - 1, k)] = v;
            jacobi[(k, k - 1)] = v;
        }
        let mut nodes: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        nodes.sort_by(f64::total_cmp);
        // Weights via the Christoffel function, w = 1 / sum_j p_j(x)^2 over
        // the orthonormal Hermite polynomials. Unlike squared eigenvector
        // components this stays relatively accurate for the far-out nodes,
        // whose weights underflow toward 1e-48 at order 64; those weights are
        // meaningful when the integrand grows like exp(|x|^2/2).
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let mut prev = 0.0f64;
                let mut cur = 1.0f64;
                let mut sum = 1.0f64;
                for k in 0..order - 1 {
                    let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
                    prev = cur;
                    cur = next;
                    sum += cur * cur;
                    if sum > 1e300 {
                        // the weight is below the smallest positive double
                        return 0.0;
                    }
                }
                1.0 / sum
            })
            .collect();
        let space = GaussianSpace {
            order,
            nodes,
            weights,
        };
        for (moment, want) in [(0u32, 1.0), (2, 1.0), (4, 3.0)] {
            if order <= 2 && moment == 4 {
                continue; // order 2 is only exact through degree 3
            }
            let got: f64 = space
                .nodes
                .iter()
                .zip(&space.weights)
                .map(|(&x, &w)| w * x.powi(moment as i32))
                .sum();
            if (got - want).abs() > 1e-8 {
                return Err(GaussError::Param(format!(
                    "quadrature self-check failed: E[x^{moment}] = {got}, want {want}"
                )));
            }
        }
        Ok(space)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Largest node magnitude: beyond this radius the rule sees nothing.
    pub fn hull(&self) -> f64 {
        self.nodes
            .iter()
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
    }

    /// Tensor-product expectation `E[f(Z)]`, `Z` standard Gaussian in `R^dim`.
    pub fn expect<F>(&self, dim: usize, mut f: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        if dim == 0 || dim > MAX_DIM {
            return Err(GaussError::Dim(format!("expectation dimension {dim}")));
        }
        let mut idx = vec![0usize; dim];
        let mut z = vec![0.0f64; dim];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for a in 0..dim {
                z[a] = self.nodes[idx[a]];
                w *= self.weights[idx[a]];
            }
            total += w * f(&z)?;
            let mut a = dim;
            let mut done = true;
            while a > 0 {
                a -= 1;
                idx[a] += 1;
                if idx[a] < self.order {
                    done = false;
                    break;
                }
                idx[a] = 0;
            }
            if done {
                return Ok(total);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// functions on Gaussian space
// ---------------------------------------------------------------------------

/// A nonnegative test function on `R^d`, in one of three concrete forms.
#[derive(Debug, Clone)]
pub enum GaussFn {
    /// Closed-form expression, evaluable everywhere.
    Expr(Expr),
    /// Grid samples; zero outside the box (compact support).
    Grid(GridDensity),
    /// Indicator of a union of boxes. The boxes are assumed disjoint where
    /// an integral is split over them.
    Boxes { dim: usize, boxes: Vec<BoxDomain> },
}

impl GaussFn {
    pub fn dim(&self) -> usize {
        match self {
            GaussFn::Expr(e) => e.dim(),
            GaussFn::Grid(g) => g.dim(),
            GaussFn::Boxes { dim, .. } => *dim,
        }
    }

    pub fn boxes(dim: usize, boxes: Vec<BoxDomain>) -> Result<GaussFn> {
        if dim == 0 || dim > MAX_DIM {
            return Err(GaussError::Dim(format!("indicator dimension {dim}")));
        }
        for b in &boxes {
            if b.dim() != dim {
                return Err(GaussError::Dim(
                    "indicator box dimension mismatch".into(),
                ));
            }
        }
        Ok(GaussFn::Boxes { dim, boxes })
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            GaussFn::Expr(e) => e.eval(x).map_err(|source| GaussError::Eval {
                point: x.to_vec(),
                source,
            }),
            GaussFn::Grid(g) => Ok(g.interp_or_zero(x)),
            GaussFn::Boxes { boxes, .. } => {
                Ok(if boxes.iter().any(|b| b.contains(x)) {
                    1.0
                } else {
                    0.0
                })
            }
        }
    }

    /// Like [`GaussFn::eval`], but distinguishes "outside the data" from a
    /// genuine zero: grid-backed functions return `None` outside their box.
    fn eval_checked(&self, x: &[f64]) -> Result<Option<f64>> {
        if let GaussFn::Grid(g) = self {
            if !g.domain().contains(x) {
                return Ok(None);
            }
        }
        self.eval(x).map(Some)
    }
}

// ---------------------------------------------------------------------------
// shift maps and the Jacobian factor
// ---------------------------------------------------------------------------

/// A shift `u: R^d -> R^d` given componentwise by expressions; the induced
/// map is `U(x) = x + u(x)`. Derivatives are taken by finite differences
/// with the stored [`DiffConfig`].
#[derive(Debug, Clone)]
pub struct ShiftMap {
    components: Vec<Expr>,
    diff: DiffConfig,
}

impl ShiftMap {
    pub fn new(components: Vec<Expr>) -> Result<ShiftMap> {
        let d = components.len();
        if d == 0 || d > MAX_DIM {
            return Err(GaussError::Dim(format!("shift with {d} components")));
        }
        for c in &components {
            if c.dim() != d {
                return Err(GaussError::Dim(format!(
                    "component arity {} in a {d}-dimensional shift",
                    c.dim()
                )));
            }
        }
        Ok(ShiftMap {
            components,
            diff: DiffConfig::default(),
        })
    }

    pub fn with_diff(mut self, diff: DiffConfig) -> ShiftMap {
        self.diff = diff;
        self
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components
            .iter()
            .map(|c| {
                c.eval(x).map_err(|source| GaussError::Eval {
                    point: x.to_vec(),
                    source,
                })
            })
            .collect()
    }

    /// Image of `x` under the full map `U = I + u`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.eval(x)?;
        Ok(x.iter().zip(&u).map(|(&a, &b)| a + b).collect())
    }

    /// `grad u` with row `i` holding the gradient of component `i`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut j = DMatrix::zeros(d, d);
        for (i, c) in self.components.iter().enumerate() {
            let g = c.grad(x, &self.diff).map_err(|source| GaussError::Eval {
                point: x.to_vec(),
                source,
            })?;
            for a in 0..d {
                j[(i, a)] = g[a];
            }
        }
        Ok(j)
    }

    /// Full Jacobian-factor evaluation at `x`.
    pub fn lambda(&self, x: &[f64]) -> Result<JacobianEval> {
        let u = self.eval(x)?;
        let j = self.jacobian(x)?;
        let d2 = det2(&j);
        let inner: f64 = u.iter().zip(x).map(|(&a, &b)| a * b).sum();
        let divergence = inner - j.trace();
        let half_u_sq = 0.5 * u.iter().map(|&a| a * a).sum::<f64>();
        Ok(JacobianEval {
            point: x.to_vec(),
            det2: d2,
            divergence,
            half_u_sq,
            lambda: lambda_from_parts(d2, divergence, half_u_sq),
        })
    }
}

/// The pieces of `Lambda` at one point, kept separate so alternative
/// combinations (e.g. mixtures of shifts) can be rebuilt from parts.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEval {
    pub point: Vec<f64>,
    /// `det2(I + grad u) = det(I + grad u) exp(-tr grad u)`
    pub det2: f64,
    /// Gaussian divergence `<u, x> - tr grad u`
    pub divergence: f64,
    /// `|u|^2 / 2`
    pub half_u_sq: f64,
    /// `det2 * exp(-divergence - half_u_sq)`
    pub lambda: f64,
}

/// Modified (Carleman) determinant `det2(I + A) = det(I + A) exp(-tr A)`.
/// It is log-concave on symmetric matrices with eigenvalues above `-1`.
pub fn det2(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let m = DMatrix::identity(n, n) + a;
    m.determinant() * (-a.trace()).exp()
}

/// Reassembles `Lambda` from its logged parts.
pub fn lambda_from_parts(det2: f64, divergence: f64, half_u_sq: f64) -> f64 {
    det2 * (-divergence - half_u_sq).exp()
}

/// Monotonicity of the full map `U = I + u` along random chords:
/// `<h + u(w + h) - u(w), h> >= 0`, reported normalized by `|h|^2`.
/// Positive margin `m` means `<U(w+h) - U(w), h> >= m |h|^2` on the sample.
pub fn check_monotone(
    u: &ShiftMap,
    dom: &BoxDomain,
    samples: u64,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    if u.dim() != dom.dim() {
        return Err(GaussError::Dim(
            "shift and domain dimensions differ".into(),
        ));
    }
    let d = u.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut witness: Vec<Vec<f64>> = vec![];
    for _ in 0..samples {
        let w: Vec<f64> = (0..d)
            .map(|a| rng.random_range(dom.lo()[a]..dom.hi()[a]))
            .collect();
        // direction scaled to keep w + h inside the box
        let mut h: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let mut scale = f64::INFINITY;
        for a in 0..d {
            let room = if h[a] >= 0.0 {
                dom.hi()[a] - w[a]
            } else {
                w[a] - dom.lo()[a]
            };
            scale = scale.min(room / (h[a].abs() / norm).max(1e-12));
        }
        let radius = rng.random_range(0.0..1.0) * scale.min(dom.side(0));
        if radius < 1e-9 {
            continue;
        }
        for v in h.iter_mut() {
            *v *= radius / norm;
        }
        let wh: Vec<f64> = w.iter().zip(&h).map(|(&a, &b)| a + b).collect();
        let uw = u.eval(&w)?;
        let uwh = u.eval(&wh)?;
        let h_sq: f64 = h.iter().map(|v| v * v).sum();
        let inner: f64 = (0..d).map(|a| (h[a] + uwh[a] - uw[a]) * h[a]).sum();
        let value = inner / h_sq;
        if value < worst {
            worst = value;
            witness = vec![w, h];
        }
    }
    if witness.is_empty() {
        return Ok(CheckReport::inconclusive(
            "no usable chord samples",
            tol,
            0,
        ));
    }
    Ok(CheckReport::from_margin(worst, tol, witness, samples))
}

/// Change of variables under `U = I + u`: for nonnegative `f`,
/// `E[f(U) Lambda] <= E[f]`, with equality when `U` is (a.e.) a bijection of
/// `R^d`. The margin is `E[f] - E[f(U) Lambda]`.
pub fn verify_change_of_variables(
    u: &ShiftMap,
    f: &GaussFn,
    space: &GaussianSpace,
    tol: f64,
) -> Result<CheckReport> {
    let d = u.dim();
    if f.dim() != d {
        return Err(GaussError::Dim(
            "test function and shift dimensions differ".into(),
        ));
    }
    let plain = space.expect(d, |x| {
        let v = f.eval(x)?;
        if v < 0.0 {
            return Err(GaussError::Param(format!(
                "test function is negative at {x:?}"
            )));
        }
        Ok(v)
    })?;
    let mapped = space.expect(d, |x| {
        let y = u.apply(x)?;
        let fy = f.eval(&y)?;
        if fy < 0.0 {
            return Err(GaussError::Param(format!(
                "test function is negative at {y:?}"
            )));
        }
        let lam = u.lambda(x)?.lambda;
        if !lam.is_finite() {
            return Err(GaussError::Param(format!(
                "Jacobian factor is not finite at {x:?}"
            )));
        }
        Ok(fy * lam)
    })?;
    let margin = plain - mapped;
    let samples = (space.order() as u64).pow(d as u32);
    Ok(
        CheckReport::from_margin(margin, tol, vec![], samples).with_note(format!(
            "E[f]={plain:.9e} E[f(U)Lambda]={mapped:.9e}; equality iff U is a.e. bijective"
        )),
    )
}

// ---------------------------------------------------------------------------
// Ornstein–Uhlenbeck semigroup and conditional expectation
// ---------------------------------------------------------------------------

/// Raw Mehler average `P_tau f(x) = E[f(e^-tau x + sqrt(1-e^-2tau) Z)]`
/// sampled at the nodes of the given grid; values may be negative when `f`
/// is (used internally for shift components).
fn ou_values(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    dim: usize,
    tau: f64,
    dom: &BoxDomain,
    res: &[usize],
    space: &GaussianSpace,
) -> Result<Vec<f64>> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(GaussError::Param(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    if dom.dim() != dim {
        return Err(GaussError::Dim(
            "domain dimension does not match the function".into(),
        ));
    }
    let geom = crate::grid::Geometry::new(dom, res)?;
    let scale = (-tau).exp();
    let width = (1.0 - (-2.0 * tau).exp()).sqrt();
    let mut values = vec![0.0f64; geom.len()];
    let mut x = vec![0.0f64; dim];
    let mut arg = vec![0.0f64; dim];
    for (flat, slot) in values.iter_mut().enumerate() {
        geom.node_into(flat, &mut x);
        *slot = if tau == 0.0 {
            f(&x)?
        } else {
            space.expect(dim, |z| {
                for a in 0..dim {
                    arg[a] = scale * x[a] + width * z[a];
                }
                f(&arg)
            })?
        };
    }
    Ok(values)
}

/// Ornstein–Uhlenbeck semigroup applied to a nonnegative function,
/// discretized on the requested grid. `tau = 0` discretizes `f` itself.
pub fn ou_apply(
    f: &GaussFn,
    tau: f64,
    dom: &BoxDomain,
    res: &[usize],
    space: &GaussianSpace,
) -> Result<GridDensity> {
    let dim = f.dim();
    let mut values = ou_values(&|x| f.eval(x), dim, tau, dom, res, space)?;
    clamp_quadrature_negatives(&mut values)?;
    Ok(GridDensity::from_values(dom.clone(), res.to_vec(), values)?)
}

/// Quadrature of a nonnegative function can undershoot zero by roundoff;
/// clamp that hair, but refuse genuinely negative values.
fn clamp_quadrature_negatives(values: &mut [f64]) -> Result<()> {
    let sup = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let floor = -1e-9 * sup.max(1e-300);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < floor {
                return Err(GaussError::Param(format!(
                    "expected a nonnegative function, found value {v}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Conditional expectation onto the coordinates in `keep` (strictly
/// increasing): the dropped coordinates are integrated out against the
/// standard Gaussian, and the result is discretized on the given grid over
/// the kept coordinates.
pub fn conditional_expectation(
    f: &GaussFn,
    keep: &[usize],
    dom: &BoxDomain,
    res: &[usize],
    space: &GaussianSpace,
) -> Result<GridDensity> {
    let d = f.dim();
    if keep.is_empty() || keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= d {
        return Err(GaussError::Dim(format!(
            "keep set {keep:?} is not a strictly increasing subset of 0..{d}"
        )));
    }
    if dom.dim() != keep.len() {
        return Err(GaussError::Dim(
            "output domain must match the kept coordinates".into(),
        ));
    }
    let dropped: Vec<usize> = (0..d).filter(|a| !keep.contains(a)).collect();
    let geom = crate::grid::Geometry::new(dom, res)?;
    let mut values = vec![0.0f64; geom.len()];
    let mut xk = vec![0.0f64; keep.len()];
    let mut full = vec![0.0f64; d];
    for (flat, slot) in values.iter_mut().enumerate() {
        geom.node_into(flat, &mut xk);
        for (k, &a) in keep.iter().enumerate() {
            full[a] = xk[k];
        }
        *slot = if dropped.is_empty() {
            f.eval(&full)?
        } else {
            space.expect(dropped.len(), |z| {
                let mut point = full.clone();
                for (k, &a) in dropped.iter().enumerate() {
                    point[a] = z[k];
                }
                f.eval(&point)
            })?
        };
    }
    clamp_quadrature_negatives(&mut values)?;
    Ok(GridDensity::from_values(dom.clone(), res.to_vec(), values)?)
}

// ---------------------------------------------------------------------------
// 1-log-concavity
// ---------------------------------------------------------------------------

/// Symmetric lattice of chord vectors used by [`check_one_logconcave`]:
/// `points_per_axis` values per axis, evenly spaced on `[-radius, radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub radius: f64,
    pub points_per_axis: usize,
}

impl LatticeSpec {
    fn vectors(&self, dim: usize) -> Result<Vec<Vec<f64>>> {
        let p = self.points_per_axis;
        if p < 2 || !(self.radius > 0.0) {
            return Err(GaussError::Param(
                "lattice needs radius > 0 and at least 2 points per axis".into(),
            ));
        }
        let count = p.pow(dim as u32);
        if count > 10_000 {
            return Err(GaussError::Param(format!(
                "lattice of {count} chord vectors is too large"
            )));
        }
        let axis: Vec<f64> = (0..p)
            .map(|i| -self.radius + 2.0 * self.radius * i as f64 / (p - 1) as f64)
            .collect();
        let mut out = Vec::with_capacity(count);
        let mut idx = vec![0usize; dim];
        loop {
            out.push(idx.iter().map(|&i| axis[i]).collect());
            let mut a = dim;
            let mut done = true;
            while a > 0 {
                a -= 1;
                idx[a] += 1;
                if idx[a] < p {
                    done = false;
                    break;
                }
                idx[a] = 0;
            }
            if done {
                return Ok(out);
            }
        }
    }
}

/// Midpoint test of 1-log-concavity: for sampled base points `w` and all
/// chord pairs `(h, h')` from the lattice,
/// `f(w + (h+h')/2) e^{-|h+h'|^2/8} >= sqrt(f(w+h) e^{-|h|^2/2} f(w+h') e^{-|h'|^2/2})`,
/// compared in log scale. Base points are standard-normal samples. Grid
/// functions skip configurations leaving their box (counted in the notes).
pub fn check_one_logconcave(
    f: &GaussFn,
    samples: u64,
    lattice: &LatticeSpec,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    let d = f.dim();
    let vectors = lattice.vectors(d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut examined: u64 = 0;
    let mut out_of_box: u64 = 0;
    let mut vacuous: u64 = 0;
    let mut p0 = vec![0.0f64; d];
    let mut p1 = vec![0.0f64; d];
    let mut p2 = vec![0.0f64; d];
    for _ in 0..samples {
        let w: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for (i, h) in vectors.iter().enumerate() {
            for hp in &vectors[i..] {
                let mut h_sq = 0.0;
                let mut hp_sq = 0.0;
                let mut mid_sq = 0.0;
                for a in 0..d {
                    p1[a] = w[a] + h[a];
                    p2[a] = w[a] + hp[a];
                    let m = 0.5 * (h[a] + hp[a]);
                    p0[a] = w[a] + m;
                    h_sq += h[a] * h[a];
                    hp_sq += hp[a] * hp[a];
                    mid_sq += m * m;
                }
                let (f1, f2, f0) = match (
                    f.eval_checked(&p1)?,
                    f.eval_checked(&p2)?,
                    f.eval_checked(&p0)?,
                ) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => {
                        out_of_box += 1;
                        continue;
                    }
                };
                if f1 <= 0.0 || f2 <= 0.0 {
                    vacuous += 1;
                    continue;
                }
                examined += 1;
                let rhs = 0.5 * (f1.ln() - 0.5 * h_sq) + 0.5 * (f2.ln() - 0.5 * hp_sq);
                let lhs = if f0 > 0.0 {
                    f0.ln() - 0.5 * mid_sq
                } else {
                    LOG_ZERO
                };
                let margin = lhs - rhs;
                if worst.as_ref().map_or(true, |(m, _)| margin < *m) {
                    worst = Some((margin, vec![p1.clone(), p0.clone(), p2.clone()]));
                }
            }
        }
    }
    let note = format!(
        "chord pairs: {examined} examined, {vacuous} vacuous, {out_of_box} out of box"
    );
    Ok(match worst {
        None => CheckReport::inconclusive(
            "no testable chord configurations",
            tol,
            examined,
        )
        .with_note(note),
        Some((margin, witness)) => {
            CheckReport::from_margin(margin, tol, witness, examined).with_note(note)
        }
    })
}

/// Operations that preserve 1-log-concavity.
#[derive(Debug, Clone, PartialEq)]
pub enum Preservation {
    /// Ornstein–Uhlenbeck semigroup at time `tau`.
    Ou { tau: f64 },
    /// Conditional expectation onto the listed coordinates.
    Conditional { keep: Vec<usize> },
}

/// Sampling parameters shared by the input and output checks of
/// [`verify_preservation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreservationConfig {
    pub samples: u64,
    pub lattice: LatticeSpec,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct PreservationOutcome {
    pub input: CheckReport,
    pub output: CheckReport,
    /// Grid actually checked on the output side.
    pub result: GridDensity,
}

impl PreservationOutcome {
    /// Failed precondition (input not 1-log-concave) is inconclusive, not a
    /// refutation of the preservation statement.
    pub fn verdict(&self) -> Verdict {
        if !self.input.passed() {
            Verdict::Inconclusive
        } else {
            self.output.verdict
        }
    }
}

/// Applies the operation to a 1-log-concave input and re-checks the result.
pub fn verify_preservation(
    f: &GaussFn,
    op: &Preservation,
    dom: &BoxDomain,
    res: &[usize],
    space: &GaussianSpace,
    cfg: &PreservationConfig,
) -> Result<PreservationOutcome> {
    let input = check_one_logconcave(f, cfg.samples, &cfg.lattice, cfg.seed, cfg.tolerance)?;
    let result = match op {
        Preservation::Ou { tau } => ou_apply(f, *tau, dom, res, space)?,
        Preservation::Conditional { keep } => {
            conditional_expectation(f, keep, dom, res, space)?
        }
    };
    let wrapped = GaussFn::Grid(result.clone());
    let output = check_one_logconcave(
        &wrapped,
        cfg.samples,
        &cfg.lattice,
        cfg.seed.wrapping_add(1),
        cfg.tolerance,
    )?;
    Ok(PreservationOutcome {
        input,
        output,
        result,
    })
}

// ---------------------------------------------------------------------------
// Prékopa–Leindler for the Gaussian measure
// ---------------------------------------------------------------------------

/// Configuration for [`verify_gaussian_pl`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPlConfig {
    pub s: f64,
    pub tolerance: f64,
    /// Random point pairs spot-checking the hypothesis.
    pub hypothesis_pairs: u64,
    /// Half-width of the sampling box for hypothesis pairs.
    pub sample_radius: f64,
    pub seed: u64,
    /// Base points for the 1-log-concavity precheck of the weight `q`.
    pub precheck_samples: u64,
    pub precheck_lattice: LatticeSpec,
}

/// Prékopa–Leindler for the weighted Gaussian measure `d(nu) = q d(gamma)`:
/// if `q` is 1-log-concave and `a(sx + ty) >= b(x)^s c(y)^t`, then
/// `nu(a) >= nu(b)^s nu(c)^t`.
///
/// Failed preconditions (the 1-log-concavity of `q`, or the pointwise
/// hypothesis on a sampled pair) yield an inconclusive report carrying the
/// witness; only a sound instance can fail.
pub fn verify_gaussian_pl(
    q: &GaussFn,
    b: &GaussFn,
    c: &GaussFn,
    a: &GaussFn,
    cfg: &GaussianPlConfig,
    space: &GaussianSpace,
) -> Result<CheckReport> {
    let d = q.dim();
    for (name, f) in [("b", b), ("c", c), ("a", a)] {
        if f.dim() != d {
            return Err(GaussError::Dim(format!(
                "{name} has dimension {} but the weight has {d}",
                f.dim()
            )));
        }
    }
    if !(0.0..=1.0).contains(&cfg.s) {
        return Err(GaussError::Param(format!(
            "interpolation weight s={} outside [0, 1]",
            cfg.s
        )));
    }
    let t = 1.0 - cfg.s;

    let precheck = check_one_logconcave(
        q,
        cfg.precheck_samples,
        &cfg.precheck_lattice,
        cfg.seed.wrapping_add(99),
        cfg.tolerance,
    )?;
    if !precheck.passed() {
        let mut r = CheckReport::inconclusive(
            "precondition failed: the weight q is not 1-log-concave on the sample",
            cfg.tolerance,
            precheck.samples,
        );
        r.witness = precheck.witness;
        return Ok(r);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = cfg.sample_radius;
    if !(r > 0.0) {
        return Err(GaussError::Param("sample radius must be positive".into()));
    }
    let mut examined: u64 = 0;
    for _ in 0..cfg.hypothesis_pairs {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-r..r)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-r..r)).collect();
        let bx = b.eval(&x)?;
        let cy = c.eval(&y)?;
        if bx <= 0.0 || cy <= 0.0 {
            continue;
        }
        let z: Vec<f64> = (0..d).map(|i| cfg.s * x[i] + t * y[i]).collect();
        let az = a.eval(&z)?;
        examined += 1;
        let rhs = cfg.s * bx.ln() + t * cy.ln();
        let lhs = if az > 0.0 { az.ln() } else { LOG_ZERO };
        if lhs - rhs < -cfg.tolerance {
            let mut rep = CheckReport::inconclusive(
                format!(
                    "hypothesis violation: a(sx+ty) < b(x)^s c(y)^t by {:.3e} in log scale",
                    rhs - lhs
                ),
                cfg.tolerance,
                examined,
            );
            rep.witness = vec![x, z, y];
            return Ok(rep);
        }
    }

    let na = nu_integral(a, q, space)?;
    let nb = nu_integral(b, q, space)?;
    let nc = nu_integral(c, q, space)?;
    let rhs = nb.powf(cfg.s) * nc.powf(t);
    let margin = na - rhs;
    Ok(
        CheckReport::from_margin(margin, cfg.tolerance, vec![], examined).with_note(format!(
            "nu(a)={na:.9e} nu(b)={nb:.9e} nu(c)={nc:.9e} rhs={rhs:.9e} s={}",
            cfg.s
        )),
    )
}

/// `nu(f) = integral of f q d(gamma)`, dispatched on the concrete form of
/// `f`: quadrature for expressions, the grid's own lattice (trapezoid, with
/// the Gaussian density attached) for grids, and a dense per-box Simpson
/// rule for indicators, which keeps discontinuities out of the quadrature.
fn nu_integral(f: &GaussFn, q: &GaussFn, space: &GaussianSpace) -> Result<f64> {
    let d = f.dim();
    match f {
        GaussFn::Expr(_) => space.expect(d, |x| Ok(f.eval(x)? * q.eval(x)?)),
        GaussFn::Grid(g) => {
            let geom = g.geometry();
            let weights: Vec<Vec<f64>> =
                (0..d).map(|a| trapezoid(geom.res[a], geom.step[a])).collect();
            let mut idx = vec![0usize; d];
            let mut x = vec![0.0f64; d];
            let mut total = 0.0;
            for (flat, &v) in g.values().iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                geom.unflatten_into(flat, &mut idx);
                geom.node_into(flat, &mut x);
                let mut w = v * q.eval(&x)? * gauss_density(&x);
                for (a, &i) in idx.iter().enumerate() {
                    w *= weights[a][i];
                }
                total += w;
            }
            Ok(total)
        }
        GaussFn::Boxes { boxes, .. } => {
            const NODES: usize = 65;
            let mut total = 0.0;
            for bx in boxes {
                let res = vec![NODES; d];
                let geom = crate::grid::Geometry::new(bx, &res)?;
                let weights: Vec<Vec<f64>> = (0..d)
                    .map(|a| crate::grid::simpson_weights(NODES, geom.step[a]))
                    .collect();
                let mut idx = vec![0usize; d];
                let mut x = vec![0.0f64; d];
                for flat in 0..geom.len() {
                    geom.unflatten_into(flat, &mut idx);
                    geom.node_into(flat, &mut x);
                    let mut w = q.eval(&x)? * gauss_density(&x);
                    for (a, &i) in idx.iter().enumerate() {
                        w *= weights[a][i];
                    }
                    total += w;
                }
            }
            Ok(total)
        }
    }
}

fn trapezoid(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

fn gauss_density(x: &[f64]) -> f64 {
    let q: f64 = x.iter().map(|v| v * v).sum();
    (TWO_PI).powf(-0.5 * x.len() as f64) * (-0.5 * q).exp()
}

// ---------------------------------------------------------------------------
// mixtures and smoothing of shifts
// ---------------------------------------------------------------------------

/// Log-concavity of the Jacobian factor along mixtures of shifts:
/// `Lambda(a u1 + b u2) >= Lambda(u1)^a Lambda(u2)^b` pointwise, for
/// monotone shifts (symmetric Jacobians with eigenvalues above -1).
/// Points where any factor is nonpositive are skipped and counted.
pub fn mixture_lambda(
    u1: &ShiftMap,
    u2: &ShiftMap,
    weight: f64,
    dom: &BoxDomain,
    points: u64,
    seed: u64,
    tol: f64,
) -> Result<CheckReport> {
    if u1.dim() != u2.dim() || u1.dim() != dom.dim() {
        return Err(GaussError::Dim(
            "shifts and domain must share a dimension".into(),
        ));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(GaussError::Param(format!(
            "mixture weight {weight} outside [0, 1]"
        )));
    }
    let d = u1.dim();
    let b = 1.0 - weight;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<(f64, Vec<f64>)> = None;
    let mut skipped: u64 = 0;
    let mut examined: u64 = 0;
    for _ in 0..points {
        let x: Vec<f64> = (0..d)
            .map(|a| rng.random_range(dom.lo()[a]..dom.hi()[a]))
            .collect();
        let e1 = u1.lambda(&x)?;
        let e2 = u2.lambda(&x)?;
        // mixture parts are affine in (u, grad u)
        let jm = u1.jacobian(&x)? * weight + u2.jacobian(&x)? * b;
        let v1 = u1.eval(&x)?;
        let v2 = u2.eval(&x)?;
        let um: Vec<f64> = (0..d).map(|i| weight * v1[i] + b * v2[i]).collect();
        let inner: f64 = um.iter().zip(&x).map(|(&p, &q)| p * q).sum();
        let div = inner - jm.trace();
        let half_sq = 0.5 * um.iter().map(|&p| p * p).sum::<f64>();
        let lam_mix = lambda_from_parts(det2(&jm), div, half_sq);
        if e1.lambda <= 0.0 || e2.lambda <= 0.0 || lam_mix <= 0.0 {
            skipped += 1;
            continue;
        }
        examined += 1;
        let margin = lam_mix.ln() - weight * e1.lambda.ln() - b * e2.lambda.ln();
        if worst.as_ref().map_or(true, |(m, _)| margin < *m) {
            worst = Some((margin, x));
        }
    }
    let note = format!("{examined} points examined, {skipped} skipped (nonpositive factor)");
    Ok(match worst {
        None => CheckReport::inconclusive("all sampled points were skipped", tol, 0)
            .with_note(note),
        Some((margin, x)) => {
            CheckReport::from_margin(margin, tol, vec![x], examined).with_note(note)
        }
    })
}

/// Convergence diagnostics for the smoothed shifts `u_n = P_{1/n} u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingDiagnostics {
    pub ns: Vec<usize>,
    /// `sup |Lambda(u_n) - Lambda(u)|` over interior grid nodes, per `n`.
    pub sup_errors: Vec<f64>,
    /// Whether the error sequence is (weakly) decreasing in `n`.
    pub decreasing: bool,
}

/// Smooths each component of `u` with the Ornstein–Uhlenbeck semigroup at
/// `tau = 1/n`, rebuilds the Jacobian factor from grid differences, and
/// reports its sup-distance to the exact factor over interior nodes.
pub fn smoothing_sequence_lambda(
    u: &ShiftMap,
    dom: &BoxDomain,
    res: &[usize],
    ns: &[usize],
    space: &GaussianSpace,
) -> Result<SmoothingDiagnostics> {
    let d = u.dim();
    if dom.dim() != d {
        return Err(GaussError::Dim(
            "domain dimension does not match the shift".into(),
        ));
    }
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GaussError::Param(
            "smoothing levels must be strictly increasing".into(),
        ));
    }
    let geom = crate::grid::Geometry::new(dom, res)?;
    let mut sup_errors = Vec::with_capacity(ns.len());
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0f64; d];
    for &n in ns {
        if n == 0 {
            return Err(GaussError::Param("smoothing level n = 0".into()));
        }
        let tau = 1.0 / n as f64;
        let mut comps: Vec<Vec<f64>> = Vec::with_capacity(d);
        for c in u.components() {
            comps.push(ou_values(
                &|p| {
                    c.eval(p).map_err(|source| GaussError::Eval {
                        point: p.to_vec(),
                        source,
                    })
                },
                d,
                tau,
                dom,
                res,
                space,
            )?);
        }
        let mut sup = 0.0f64;
        for flat in 0..geom.len() {
            geom.unflatten_into(flat, &mut idx);
            if idx
                .iter()
                .zip(&geom.res)
                .any(|(&i, &r)| i == 0 || i + 1 == r)
            {
                continue; // central differences need both neighbours
            }
            geom.node_into(flat, &mut x);
            let mut j = DMatrix::zeros(d, d);
            for (i, comp) in comps.iter().enumerate() {
                for a in 0..d {
                    let up = comp[flat + geom.stride[a]];
                    let down = comp[flat - geom.stride[a]];
                    j[(i, a)] = (up - down) / (2.0 * geom.step[a]);
                }
            }
            let un: Vec<f64> = comps.iter().map(|c| c[flat]).collect();
            let inner: f64 = un.iter().zip(&x).map(|(&p, &q)| p * q).sum();
            let div = inner - j.trace();
            let half_sq = 0.5 * un.iter().map(|&p| p * p).sum::<f64>();
            let lam_n = lambda_from_parts(det2(&j), div, half_sq);
            let lam = u.lambda(&x)?.lambda;
            sup = sup.max((lam_n - lam).abs());
        }
        sup_errors.push(sup);
    }
    let decreasing = sup_errors
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    Ok(SmoothingDiagnostics {
        ns: ns.to_vec(),
        sup_errors,
        decreasing,
    })
}
