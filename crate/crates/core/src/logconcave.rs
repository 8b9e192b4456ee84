//! Log-concavity checks and the inequalities built on them.
//!
//! Conventions used throughout:
//! * `log 0 = -inf`: a midpoint inequality is **vacuous** when either
//!   endpoint value is zero, but a zero midpoint between two positive
//!   endpoints is a genuine violation (reported with the finite sentinel
//!   [`crate::LOG_ZERO`] so margins stay serializable);
//! * random node pairs snap their midpoint to the nearest node and receive a
//!   spacing-aware slack estimated from the local log-slope, so tight (exact
//!   equality) families do not fail spuriously;
//! * weights `s, t = 1 - s` always satisfy `s \in [0, 1]`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::expr::{DiffConfig, Expr};
use crate::grid::{BoxDomain, Geometry, GridDensity, GridError, MIN_RES};
use crate::report::CheckReport;
use crate::LOG_ZERO;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogConcaveError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("interpolation weight s={0} must lie in [0, 1]")]
    BadWeight(f64),
    #[error("incompatible inputs: {0}")]
    Geometry(String),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("evaluation failed at {point:?}: {source}")]
    Eval {
        point: Vec<f64>,
        source: crate::expr::EvalError,
    },
}

type Result<T> = std::result::Result<T, LogConcaveError>;

/// Sampling/tolerance bundle for midpoint-style checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidpointConfig {
    pub tolerance: f64,
    /// Seeded random node pairs tested in addition to all adjacent triples.
    pub pairs: u64,
    pub seed: u64,
}

impl MidpointConfig {
    pub fn new(tolerance: f64, pairs: u64, seed: u64) -> Self {
        MidpointConfig {
            tolerance,
            pairs,
            seed,
        }
    }
}

/// Natural logs of the grid values, with an explicit positivity mask.
struct LogField {
    logs: Vec<f64>,
    positive: Vec<bool>,
}

impl LogField {
    fn new(values: &[f64]) -> Self {
        let mut logs = Vec::with_capacity(values.len());
        let mut positive = Vec::with_capacity(values.len());
        for &v in values {
            if v > 0.0 {
                logs.push(v.ln());
                positive.push(true);
            } else {
                logs.push(LOG_ZERO);
                positive.push(false);
            }
        }
        LogField { logs, positive }
    }
}

/// Midpoint log-concavity test: all axis-adjacent node triples, plus seeded
/// random node pairs whose midpoint is snapped to the nearest node with a
/// spacing-aware slack. Degenerate (all-zero) grids are inconclusive.
pub fn check_logconcave(rho: &GridDensity, cfg: &MidpointConfig) -> CheckReport {
    let geom = rho.geometry();
    let field = LogField::new(rho.values());
    if !field.positive.iter().any(|&p| p) {
        return CheckReport::inconclusive("all node values are zero", cfg.tolerance, 0);
    }

    let mut worst: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut examined: u64 = 0;

    // adjacent triples along every axis
    let d = geom.dim();
    let mut idx = vec![0usize; d];
    for flat in 0..rho.len() {
        geom.unflatten_into(flat, &mut idx);
        for a in 0..d {
            if idx[a] == 0 || idx[a] + 1 == geom.res[a] {
                continue;
            }
            let left = flat - geom.stride[a];
            let right = flat + geom.stride[a];
            if !field.positive[left] || !field.positive[right] {
                continue; // vacuous: an endpoint vanishes
            }
            examined += 1;
            let margin =
                field.logs[flat] - 0.5 * (field.logs[left] + field.logs[right]);
            update_worst(&mut worst, margin, || {
                vec![rho.node(left), rho.node(flat), rho.node(right)]
            });
        }
    }

    // random pairs
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut point_x = vec![0.0; d];
    let mut point_y = vec![0.0; d];
    let mut mid = vec![0.0; d];
    for _ in 0..cfg.pairs {
        let i = rng.random_range(0..rho.len());
        let j = rng.random_range(0..rho.len());
        if !field.positive[i] || !field.positive[j] {
            continue;
        }
        geom.node_into(i, &mut point_x);
        geom.node_into(j, &mut point_y);
        for a in 0..d {
            mid[a] = 0.5 * (point_x[a] + point_y[a]);
        }
        let snapped = match geom.nearest_node(&mid) {
            Some(s) => s,
            None => continue,
        };
        let snap_flat = geom.flatten(&snapped);
        let rhs = 0.5 * (field.logs[i] + field.logs[j]);
        if !field.positive[snap_flat] {
            // zero midpoint between positive endpoints: genuine violation
            examined += 1;
            update_worst(&mut worst, LOG_ZERO - rhs, || {
                vec![point_x.clone(), mid.clone(), point_y.clone()]
            });
            continue;
        }
        match snap_slack(&geom, &field, &snapped, snap_flat, &mid) {
            Some(slack) => {
                examined += 1;
                let margin = field.logs[snap_flat] + slack - rhs;
                update_worst(&mut worst, margin, || {
                    vec![point_x.clone(), mid.clone(), point_y.clone()]
                });
            }
            None => continue, // local slope unbounded; proxy unreliable
        }
    }

    match worst {
        None => CheckReport::inconclusive(
            "no testable configurations (support too sparse)",
            cfg.tolerance,
            examined,
        ),
        Some((margin, witness)) => {
            CheckReport::from_margin(margin, cfg.tolerance, witness, examined)
        }
    }
}

/// Tracks the most negative margin, building the witness lazily.
fn update_worst<F>(worst: &mut Option<(f64, Vec<Vec<f64>>)>, margin: f64, witness: F)
where
    F: FnOnce() -> Vec<Vec<f64>>,
{
    if worst.as_ref().map_or(true, |(m, _)| margin < *m) {
        *worst = Some((margin, witness()));
    }
}

/// First-order slack for evaluating at the snapped node instead of the true
/// midpoint: sum over axes of |local log-slope| * |snap displacement|.
/// Returns `None` when a needed neighbour vanishes (slope unbounded).
fn snap_slack(
    geom: &Geometry,
    field: &LogField,
    snapped: &[usize],
    snap_flat: usize,
    mid: &[f64],
) -> Option<f64> {
    let mut slack = 0.0;
    for a in 0..geom.dim() {
        let offset = (mid[a] - geom.coord(a, snapped[a])).abs();
        if offset < 1e-12 * geom.step[a].max(1.0) {
            continue;
        }
        let here = field.logs[snap_flat];
        let mut slope: Option<f64> = None;
        if snapped[a] + 1 < geom.res[a] {
            let up = snap_flat + geom.stride[a];
            if field.positive[up] {
                let s = (field.logs[up] - here).abs() / geom.step[a];
                slope = Some(slope.map_or(s, |m: f64| m.max(s)));
            }
        }
        if snapped[a] > 0 {
            let down = snap_flat - geom.stride[a];
            if field.positive[down] {
                let s = (field.logs[down] - here).abs() / geom.step[a];
                slope = Some(slope.map_or(s, |m: f64| m.max(s)));
            }
        }
        match slope {
            Some(s) => slack += s * offset,
            None => return None,
        }
    }
    Some(slack)
}

/// How a super-log-concavity certificate was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlcMethod {
    /// `lambda_min(hess V) >= alpha` sampled over the domain.
    HessianSampling,
    /// Midpoint test on `exp(alpha |x|^2 / 2) * density`.
    WeightedMidpoint,
}

/// Certificate that a measure is `alpha`-super-log-concave.
#[derive(Debug, Clone, PartialEq)]
pub struct SlcCertificate {
    pub alpha: f64,
    pub method: SlcMethod,
    pub report: CheckReport,
}

impl SlcCertificate {
    pub fn valid(&self) -> bool {
        self.report.passed()
    }

    pub fn margin(&self) -> f64 {
        self.report.worst_margin
    }
}

/// Hessian-based certificate for a potential `V` (density `exp(-V)`):
/// `margin = min over sampled points of (lambda_min(hess V(p)) - alpha)`.
///
/// Samples the domain center plus `samples` seeded uniform points.
pub fn check_slc(
    v: &Expr,
    alpha: f64,
    dom: &BoxDomain,
    samples: u64,
    seed: u64,
    tol: f64,
    cfg: &DiffConfig,
) -> Result<SlcCertificate> {
    if v.dim() != dom.dim() {
        return Err(LogConcaveError::Geometry(format!(
            "potential arity {} vs domain dimension {}",
            v.dim(),
            dom.dim()
        )));
    }
    if !alpha.is_finite() {
        return Err(LogConcaveError::BadParameter("alpha must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![dom.center()];
    for _ in 0..samples {
        let p: Vec<f64> = (0..dom.dim())
            .map(|a| rng.random_range(dom.lo()[a]..dom.hi()[a]))
            .collect();
        points.push(p);
    }
    let mut worst = f64::INFINITY;
    let mut witness = points[0].clone();
    for p in &points {
        let h = v.hess(p, cfg).map_err(|source| LogConcaveError::Eval {
            point: p.clone(),
            source,
        })?;
        let eigs = h.symmetric_eigenvalues();
        let lam_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let margin = lam_min - alpha;
        if margin < worst {
            worst = margin;
            witness = p.clone();
        }
    }
    let report = CheckReport::from_margin(worst, tol, vec![witness], points.len() as u64);
    Ok(SlcCertificate {
        alpha,
        method: SlcMethod::HessianSampling,
        report,
    })
}

/// Grid fallback: midpoint test on `exp(alpha |x|^2 / 2) * density`.
///
/// Fails with an overflow diagnostic if the weight overflows on the box.
pub fn check_slc_grid(
    rho: &GridDensity,
    alpha: f64,
    cfg: &MidpointConfig,
) -> Result<SlcCertificate> {
    let geom = rho.geometry();
    let mut point = vec![0.0; rho.dim()];
    let mut values = Vec::with_capacity(rho.len());
    for flat in 0..rho.len() {
        geom.node_into(flat, &mut point);
        let q: f64 = point.iter().map(|x| x * x).sum();
        let w = (0.5 * alpha * q).exp();
        let v = rho.value(flat) * w;
        if !v.is_finite() {
            return Err(LogConcaveError::BadParameter(format!(
                "exp(alpha |x|^2 / 2) overflows at {point:?}"
            )));
        }
        values.push(v);
    }
    let weighted =
        GridDensity::from_values(rho.domain().clone(), rho.resolution().to_vec(), values)?;
    let report = check_logconcave(&weighted, cfg);
    Ok(SlcCertificate {
        alpha,
        method: SlcMethod::WeightedMidpoint,
        report,
    })
}

/// Largest `delta` for which smoothing an `alpha`-super-log-concave measure
/// with a Gaussian of variance `sigma` is guaranteed `delta`-super-log-
/// concave: `1/delta - 1/alpha > sigma`, i.e. `delta < alpha/(1+alpha*sigma)`.
/// The bound is open; certify only strictly below it.
pub fn slc_delta_bound(alpha: f64, sigma: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(LogConcaveError::BadParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(LogConcaveError::BadParameter(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    Ok(alpha / (1.0 + alpha * sigma))
}

/// Sup-convolution `k(x) = sup { f(u)^s g(v)^t : x = s u + t v }` over grid
/// decompositions: the `u` grid is searched exhaustively and `v` is
/// interpolated geometrically.
///
/// Geometric interpolation keeps each candidate at or below the true value
/// for log-concave `g`, so the construction can understate the sup but not
/// inflate it — the conservative direction when `k` feeds the left side of
/// an inequality — and it is exact wherever the optimizer sits on a node
/// (in particular `sup_convolution(g, g, s) = g` for strictly log-concave
/// `g`).
///
/// `s = 1` returns `f` exactly, `s = 0` returns `g`.
pub fn sup_convolution(f: &GridDensity, g: &GridDensity, s: f64) -> Result<GridDensity> {
    check_weight(s)?;
    if !f.same_geometry(g) {
        return Err(LogConcaveError::Geometry(
            "sup_convolution needs identical grids".into(),
        ));
    }
    if s == 1.0 {
        return Ok(f.clone());
    }
    if s == 0.0 {
        return Ok(g.clone());
    }
    let t = 1.0 - s;
    let geom = f.geometry();
    let d = f.dim();
    // cache u-node coordinates
    let mut u_coords = vec![0.0f64; f.len() * d];
    let mut point = vec![0.0; d];
    for flat in 0..f.len() {
        geom.node_into(flat, &mut point);
        u_coords[flat * d..(flat + 1) * d].copy_from_slice(&point);
    }
    let mut out = vec![0.0f64; f.len()];
    let mut x = vec![0.0; d];
    let mut v = vec![0.0; d];
    for (flat, slot) in out.iter_mut().enumerate() {
        geom.node_into(flat, &mut x);
        let mut best = 0.0f64;
        for (uflat, &fu) in f.values().iter().enumerate() {
            if fu == 0.0 {
                continue;
            }
            let u = &u_coords[uflat * d..(uflat + 1) * d];
            for a in 0..d {
                v[a] = (x[a] - s * u[a]) / t;
            }
            let gv = g.interp_log_or_zero(&v);
            if gv == 0.0 {
                continue;
            }
            let cand = fu.powf(s) * gv.powf(t);
            if cand > best {
                best = cand;
            }
        }
        *slot = best;
    }
    Ok(GridDensity::from_values(
        f.domain().clone(),
        f.resolution().to_vec(),
        out,
    )?)
}

fn check_weight(s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) || !s.is_finite() {
        return Err(LogConcaveError::BadWeight(s));
    }
    Ok(1.0 - s)
}

/// `integral of f d(rho)` for a grid test function on the same geometry.
pub fn integrate_against(rho: &GridDensity, f: &GridDensity) -> Result<f64> {
    if !rho.same_geometry(f) {
        return Err(LogConcaveError::Geometry(
            "integrand and measure must share a grid".into(),
        ));
    }
    let geom = rho.geometry();
    let weights: Vec<Vec<f64>> = (0..rho.dim())
        .map(|a| crate::grid::simpson_weights(geom.res[a], geom.step[a]))
        .collect();
    let mut idx = vec![0usize; rho.dim()];
    let mut total = 0.0;
    for flat in 0..rho.len() {
        geom.unflatten_into(flat, &mut idx);
        let mut w = rho.value(flat) * f.value(flat);
        for (a, &i) in idx.iter().enumerate() {
            w *= weights[a][i];
        }
        total += w;
    }
    Ok(total)
}

/// Configuration for [`verify_prekopa_leindler`].
#[derive(Debug, Clone, Copy)]
pub struct PlConfig {
    pub s: f64,
    pub tolerance: f64,
    /// Node pairs used to spot-check the hypothesis when `a` is supplied.
    pub hypothesis_pairs: u64,
    pub seed: u64,
}

/// Checks `rho(a) >= rho(b)^s rho(c)^t` for functions satisfying the
/// pointwise hypothesis `a(sx + ty) >= b(x)^s c(y)^t`.
///
/// When `a` is omitted it is constructed as the sup-convolution of `b` and
/// `c`, for which the hypothesis holds at grid nodes by construction. When
/// `a` is supplied, the hypothesis is spot-checked on seeded node pairs and a
/// violation yields an *inconclusive* report with the witness pair
/// (a precondition failure, distinct from a failure of the conclusion).
pub fn verify_prekopa_leindler(
    rho: &GridDensity,
    b: &GridDensity,
    c: &GridDensity,
    a: Option<&GridDensity>,
    cfg: &PlConfig,
) -> Result<CheckReport> {
    let t = check_weight(cfg.s)?;
    for (name, g) in [("b", b), ("c", c)] {
        if !rho.same_geometry(g) {
            return Err(LogConcaveError::Geometry(format!(
                "{name} is not on the measure's grid"
            )));
        }
    }
    if let Some(a) = a {
        if !rho.same_geometry(a) {
            return Err(LogConcaveError::Geometry("a is not on the measure's grid".into()));
        }
    }

    let mut hypothesis_examined: u64 = 0;
    let a_owned;
    let a_ref = match a {
        Some(a) => {
            if let Some(violation) =
                hypothesis_violation(a, b, c, cfg, &mut hypothesis_examined)
            {
                let mut r = CheckReport::inconclusive(
                    format!(
                        "hypothesis violation: a(sx+ty) < b(x)^s c(y)^t by {:.3e} in log scale",
                        -violation.0
                    ),
                    cfg.tolerance,
                    hypothesis_examined,
                );
                r.witness = violation.1;
                return Ok(r);
            }
            a
        }
        None => {
            a_owned = sup_convolution(b, c, cfg.s)?;
            &a_owned
        }
    };

    let ia = integrate_against(rho, a_ref)?;
    let ib = integrate_against(rho, b)?;
    let ic = integrate_against(rho, c)?;
    let rhs = ib.powf(cfg.s) * ic.powf(t);
    let margin = ia - rhs;
    let witness = vec![
        argmax_product(rho, b),
        argmax_product(rho, c),
        argmax_product(rho, a_ref),
    ];
    let report = CheckReport::from_margin(margin, cfg.tolerance, witness, hypothesis_examined)
        .with_note(format!(
            "rho(a)={ia:.9e} rho(b)={ib:.9e} rho(c)={ic:.9e} rhs={rhs:.9e} s={}",
            cfg.s
        ));
    Ok(report)
}

/// Node where `rho * f` peaks — the mass-carrying location of the integral.
fn argmax_product(rho: &GridDensity, f: &GridDensity) -> Vec<f64> {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for flat in 0..rho.len() {
        let v = rho.value(flat) * f.value(flat);
        if v > best_v {
            best_v = v;
            best = flat;
        }
    }
    rho.node(best)
}

/// Returns the worst hypothesis violation `(margin, [x, mid, y])`, if any.
fn hypothesis_violation(
    a: &GridDensity,
    b: &GridDensity,
    c: &GridDensity,
    cfg: &PlConfig,
    examined: &mut u64,
) -> Option<(f64, Vec<Vec<f64>>)> {
    let geom = a.geometry();
    let d = a.dim();
    let t = 1.0 - cfg.s;
    let la = LogField::new(a.values());
    let lb = LogField::new(b.values());
    let lc = LogField::new(c.values());
    // The inequality is vacuous unless b(x) and c(y) are both positive, so
    // sample straight from the supports; narrow indicators get the same
    // coverage as full-support densities.
    let b_support: Vec<usize> = (0..b.len()).filter(|&i| lb.positive[i]).collect();
    let c_support: Vec<usize> = (0..c.len()).filter(|&j| lc.positive[j]).collect();
    if b_support.is_empty() || c_support.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut worst: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..cfg.hypothesis_pairs {
        let i = b_support[rng.random_range(0..b_support.len())];
        let j = c_support[rng.random_range(0..c_support.len())];
        geom.node_into(i, &mut x);
        geom.node_into(j, &mut y);
        for k in 0..d {
            z[k] = cfg.s * x[k] + t * y[k];
        }
        let snapped = geom.nearest_node(&z)?;
        let snap_flat = geom.flatten(&snapped);
        let rhs = cfg.s * lb.logs[i] + t * lc.logs[j];
        let margin = if !la.positive[snap_flat] {
            LOG_ZERO - rhs
        } else {
            match snap_slack(&geom, &la, &snapped, snap_flat, &z) {
                Some(slack) => la.logs[snap_flat] + slack - rhs,
                None => continue,
            }
        };
        *examined += 1;
        if margin < -cfg.tolerance && worst.as_ref().map_or(true, |(m, _)| margin < *m) {
            worst = Some((margin, vec![x.clone(), z.clone(), y.clone()]));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// masks & Brunn–Minkowski
// ---------------------------------------------------------------------------

/// Node set sharing a grid's geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMask {
    dom: BoxDomain,
    res: Vec<usize>,
    bits: Vec<bool>,
}

impl GridMask {
    /// Marks nodes lying in any of the boxes (inclusive bounds).
    pub fn from_boxes(
        dom: &BoxDomain,
        res: &[usize],
        boxes: &[BoxDomain],
    ) -> Result<GridMask> {
        for b in boxes {
            if b.dim() != dom.dim() {
                return Err(LogConcaveError::Geometry(
                    "mask box dimension mismatch".into(),
                ));
            }
        }
        let geom = Geometry::new(dom, res)?;
        let mut bits = vec![false; geom.len()];
        let mut p = vec![0.0; dom.dim()];
        let eps: Vec<f64> = geom.step.iter().map(|h| h * 1e-9).collect();
        for (flat, bit) in bits.iter_mut().enumerate() {
            geom.node_into(flat, &mut p);
            *bit = boxes.iter().any(|b| {
                (0..dom.dim()).all(|a| {
                    p[a] >= b.lo()[a] - eps[a] && p[a] <= b.hi()[a] + eps[a]
                })
            });
        }
        Ok(GridMask {
            dom: dom.clone(),
            res: res.to_vec(),
            bits,
        })
    }

    /// Marks nodes where the predicate expression is positive.
    pub fn from_predicate(dom: &BoxDomain, res: &[usize], pred: &Expr) -> Result<GridMask> {
        if pred.dim() != dom.dim() {
            return Err(LogConcaveError::Geometry(
                "predicate arity does not match the domain".into(),
            ));
        }
        let geom = Geometry::new(dom, res)?;
        let mut bits = vec![false; geom.len()];
        let mut p = vec![0.0; dom.dim()];
        for (flat, bit) in bits.iter_mut().enumerate() {
            geom.node_into(flat, &mut p);
            let v = pred.eval(&p).map_err(|source| LogConcaveError::Eval {
                point: p.clone(),
                source,
            })?;
            *bit = v > 0.0;
        }
        Ok(GridMask {
            dom: dom.clone(),
            res: res.to_vec(),
            bits,
        })
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.dom
    }

    pub fn resolution(&self) -> &[usize] {
        &self.res
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.count() == 0
    }

    pub fn same_geometry_as(&self, g: &GridDensity) -> bool {
        self.dom == *g.domain() && self.res == g.resolution()
    }

    fn geometry(&self) -> Geometry {
        Geometry::new(&self.dom, &self.res).expect("validated at construction")
    }
}

/// Grid Minkowski combination `s A + t B`: for every marked pair `(u, v)` the
/// nodes within half a cell (per axis) of `s u + t v` are marked.
/// `s = 1` reproduces `A` exactly. Empty inputs yield an empty mask.
pub fn minkowski_combine(a: &GridMask, b: &GridMask, s: f64) -> Result<GridMask> {
    let t = check_weight(s)?;
    if a.dom != b.dom || a.res != b.res {
        return Err(LogConcaveError::Geometry(
            "masks must share a grid".into(),
        ));
    }
    let geom = a.geometry();
    let d = geom.dim();
    let marked_a: Vec<usize> = (0..a.bits.len()).filter(|&i| a.bits[i]).collect();
    let marked_b: Vec<usize> = (0..b.bits.len()).filter(|&i| b.bits[i]).collect();
    let mut bits = vec![false; a.bits.len()];
    let mut u = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut cands: Vec<Vec<usize>> = vec![Vec::with_capacity(2); d];
    for &ia in &marked_a {
        geom.node_into(ia, &mut u);
        for &ib in &marked_b {
            geom.node_into(ib, &mut v);
            let mut feasible = true;
            for ax in 0..d {
                cands[ax].clear();
                let z = s * u[ax] + t * v[ax];
                let ti = (z - geom.lo[ax]) / geom.step[ax];
                for cand in [ti.floor() as i64, ti.ceil() as i64] {
                    if cand < 0 || cand >= geom.res[ax] as i64 {
                        continue;
                    }
                    if (ti - cand as f64).abs() <= 0.5 + 1e-9 {
                        let c = cand as usize;
                        if !cands[ax].contains(&c) {
                            cands[ax].push(c);
                        }
                    }
                }
                if cands[ax].is_empty() {
                    feasible = false;
                    break;
                }
            }
            if !feasible {
                continue;
            }
            // mark the cartesian product of per-axis candidates
            let mut pick = vec![0usize; d];
            loop {
                let flat: usize = (0..d)
                    .map(|ax| cands[ax][pick[ax]] * geom.stride[ax])
                    .sum();
                bits[flat] = true;
                let mut ax = d;
                loop {
                    if ax == 0 {
                        break;
                    }
                    ax -= 1;
                    pick[ax] += 1;
                    if pick[ax] < cands[ax].len() {
                        break;
                    }
                    pick[ax] = 0;
                    if ax == 0 {
                        ax = usize::MAX;
                        break;
                    }
                }
                if ax == usize::MAX {
                    break;
                }
            }
        }
    }
    Ok(GridMask {
        dom: a.dom.clone(),
        res: a.res.clone(),
        bits,
    })
}

/// Measure of a masked region: cell-based trapezoid over cells whose corners
/// are all marked. Robust for indicator sets (no Simpson weight spill across
/// the set boundary); second-order accurate in the spacing.
pub fn mask_measure(rho: &GridDensity, mask: &GridMask) -> Result<f64> {
    if !mask.same_geometry_as(rho) {
        return Err(LogConcaveError::Geometry(
            "mask is not on the measure's grid".into(),
        ));
    }
    let geom = rho.geometry();
    let d = geom.dim();
    let cellvol: f64 = geom.step.iter().product();
    let corner_scale = 1.0 / (1u64 << d) as f64;
    let cells: Vec<usize> = (0..d).map(|a| geom.res[a] - 1).collect();
    let mut cell = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let base: usize = (0..d).map(|a| cell[a] * geom.stride[a]).sum();
        let mut sum = 0.0;
        let mut all = true;
        for corner in 0..(1usize << d) {
            let mut flat = base;
            for a in 0..d {
                flat += ((corner >> a) & 1) * geom.stride[a];
            }
            if !mask.bits[flat] {
                all = false;
                break;
            }
            sum += rho.value(flat);
        }
        if all {
            total += cellvol * corner_scale * sum;
        }
        // odometer
        let mut a = d;
        let mut done = true;
        while a > 0 {
            a -= 1;
            cell[a] += 1;
            if cell[a] < cells[a] {
                done = false;
                break;
            }
            cell[a] = 0;
        }
        if done {
            break;
        }
    }
    Ok(total)
}

/// Checks `rho(sA + tB) >= rho(A)^s rho(B)^t` on grid masks.
pub fn verify_brunn_minkowski(
    rho: &GridDensity,
    a: &GridMask,
    b: &GridMask,
    s: f64,
    tolerance: f64,
) -> Result<CheckReport> {
    let t = check_weight(s)?;
    let combined = minkowski_combine(a, b, s)?;
    let ma = mask_measure(rho, a)?;
    let mb = mask_measure(rho, b)?;
    let mc = mask_measure(rho, &combined)?;
    let rhs = ma.powf(s) * mb.powf(t);
    let margin = mc - rhs;
    let mut report = CheckReport::from_margin(
        margin,
        tolerance,
        vec![],
        (a.count() * b.count()) as u64,
    )
    .with_note(format!(
        "rho(sA+tB)={mc:.9e} rho(A)={ma:.9e} rho(B)={mb:.9e} rhs={rhs:.9e} s={s}"
    ));
    if a.is_empty_mask() || b.is_empty_mask() {
        report = report.with_note("warning: empty input mask".to_string());
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// closure operations
// ---------------------------------------------------------------------------

/// Scaled convolution `(f *_c g)(x) = integral f(c x - y) g(y) dy` by direct
/// quadrature on `g`'s nodes (trapezoid weights: immune to the Simpson
/// weight ripple on kinked integrands), with `f` interpolated.
///
/// The output grid lives on the algebraic support sum `(supp f + supp g)/c`,
/// intersected with `clip` when given (snapped to the natural lattice so
/// aligned inputs stay exact). Expect total mass `f.mass * g.mass / c^d`;
/// compare with [`GridDensity::mass`] to detect clipping leakage.
pub fn convolve(
    f: &GridDensity,
    g: &GridDensity,
    c: f64,
    clip: Option<&BoxDomain>,
) -> Result<GridDensity> {
    if !f.same_geometry(g) {
        return Err(LogConcaveError::Geometry(
            "convolve needs identical input grids".into(),
        ));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(LogConcaveError::BadParameter(format!(
            "scale c must be positive, got {c}"
        )));
    }
    let d = f.dim();
    let geom = f.geometry();
    // natural lattice of the output
    let nat_lo: Vec<f64> = (0..d).map(|a| 2.0 * geom.lo[a] / c).collect();
    let step_out: Vec<f64> = (0..d).map(|a| geom.step[a] / c).collect();
    let nat_n: Vec<usize> = (0..d).map(|a| 2 * geom.res[a] - 1).collect();

    // clip to requested box, staying on the lattice
    let mut lo_idx = vec![0i64; d];
    let mut n_out = vec![0usize; d];
    for a in 0..d {
        let (mut i0, mut i1) = (0i64, nat_n[a] as i64 - 1);
        if let Some(clip) = clip {
            if clip.dim() != d {
                return Err(LogConcaveError::Geometry("clip box dimension mismatch".into()));
            }
            let lo_t = (clip.lo()[a] - nat_lo[a]) / step_out[a];
            let hi_t = (clip.hi()[a] - nat_lo[a]) / step_out[a];
            i0 = i0.max(lo_t.ceil() as i64);
            i1 = i1.min(hi_t.floor() as i64);
        }
        if i1 - i0 + 1 < MIN_RES as i64 {
            return Err(LogConcaveError::BadParameter(
                "clipped output grid is too small".into(),
            ));
        }
        lo_idx[a] = i0;
        n_out[a] = (i1 - i0 + 1) as usize;
    }
    let out_lo: Vec<f64> = (0..d)
        .map(|a| nat_lo[a] + lo_idx[a] as f64 * step_out[a])
        .collect();
    let out_hi: Vec<f64> = (0..d)
        .map(|a| out_lo[a] + (n_out[a] - 1) as f64 * step_out[a])
        .collect();
    let out_dom = BoxDomain::new(out_lo, out_hi)?;
    let out_geom = Geometry::new(&out_dom, &n_out)?;

    let trap: Vec<Vec<f64>> = (0..d)
        .map(|a| crate::grid::trapezoid_weights(geom.res[a], geom.step[a]))
        .collect();
    let mut values = vec![0.0f64; out_geom.len()];
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut arg = vec![0.0; d];
    let mut yidx = vec![0usize; d];
    for (oflat, slot) in values.iter_mut().enumerate() {
        out_geom.node_into(oflat, &mut x);
        let mut acc = 0.0;
        for (gflat, &gv) in g.values().iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            geom.unflatten_into(gflat, &mut yidx);
            let mut w = gv;
            for a in 0..d {
                y[a] = geom.coord(a, yidx[a]);
                w *= trap[a][yidx[a]];
                arg[a] = c * x[a] - y[a];
            }
            let fv = f.interp_or_zero(&arg);
            if fv != 0.0 {
                acc += w * fv;
            }
        }
        *slot = acc;
    }
    Ok(GridDensity::from_values(out_dom, n_out, values)?)
}

/// Expected total mass of `f *_c g` when nothing is clipped.
pub fn expected_convolution_mass(f: &GridDensity, g: &GridDensity, c: f64) -> f64 {
    f.mass() * g.mass() / c.powi(f.dim() as i32)
}

/// Integrates out the axes *not* listed in `keep` (Simpson weights on the
/// dropped axes), producing a marginal on the kept axes in their given order.
/// `keep` must be strictly increasing and nonempty.
pub fn marginalize(f: &GridDensity, keep: &[usize]) -> Result<GridDensity> {
    let d = f.dim();
    if keep.is_empty()
        || keep.windows(2).any(|w| w[0] >= w[1])
        || *keep.last().unwrap() >= d
    {
        return Err(LogConcaveError::Geometry(format!(
            "keep set {keep:?} is not a strictly increasing subset of 0..{d}"
        )));
    }
    if keep.len() == d {
        return Ok(f.clone());
    }
    let dropped: Vec<usize> = (0..d).filter(|a| !keep.contains(a)).collect();
    let geom = f.geometry();
    let drop_weights: Vec<Vec<f64>> = dropped
        .iter()
        .map(|&a| crate::grid::simpson_weights(geom.res[a], geom.step[a]))
        .collect();

    let out_lo: Vec<f64> = keep.iter().map(|&a| f.domain().lo()[a]).collect();
    let out_hi: Vec<f64> = keep.iter().map(|&a| f.domain().hi()[a]).collect();
    let out_res: Vec<usize> = keep.iter().map(|&a| geom.res[a]).collect();
    let out_dom = BoxDomain::new(out_lo, out_hi)?;
    let out_geom = Geometry::new(&out_dom, &out_res)?;

    let mut values = vec![0.0f64; out_geom.len()];
    let mut idx = vec![0usize; d];
    for (flat, &v) in f.values().iter().enumerate() {
        geom.unflatten_into(flat, &mut idx);
        let mut w = v;
        for (k, &a) in dropped.iter().enumerate() {
            w *= drop_weights[k][idx[a]];
        }
        let oflat: usize = keep
            .iter()
            .enumerate()
            .map(|(k, &a)| idx[a] * out_geom.stride[k])
            .sum();
        values[oflat] += w;
    }
    Ok(GridDensity::from_values(out_dom, out_res, values)?)
}

/// Convolution with the normalized Gaussian kernel of variance `sigma`,
/// applied separably along each axis on the input grid (zero extension
/// outside the box). `sigma = 0` returns the input.
pub fn gaussian_smooth(rho: &GridDensity, sigma: f64) -> Result<GridDensity> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(LogConcaveError::BadParameter(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(rho.clone());
    }
    let geom = rho.geometry();
    let d = rho.dim();
    let mut values = rho.values().to_vec();
    for a in 0..d {
        let h = geom.step[a];
        let reach = (10.0 * sigma.sqrt() / h).ceil() as usize;
        let m = reach.min(geom.res[a] - 1).max(1);
        // discrete taps, normalized to unit DC gain
        let mut taps = Vec::with_capacity(2 * m + 1);
        let mut sum = 0.0;
        for k in -(m as i64)..=(m as i64) {
            let x = k as f64 * h;
            let t = (-x * x / (2.0 * sigma)).exp();
            taps.push(t);
            sum += t;
        }
        for t in &mut taps {
            *t /= sum;
        }
        let mut next = vec![0.0f64; values.len()];
        let stride = geom.stride[a];
        let n = geom.res[a];
        for (flat, slot) in next.iter_mut().enumerate() {
            let i = (flat / stride) % n;
            let mut acc = 0.0;
            let k_lo = -(i.min(m) as i64);
            let k_hi = (n - 1 - i).min(m) as i64;
            for k in k_lo..=k_hi {
                let j = (flat as i64 + k * stride as i64) as usize;
                acc += taps[(k + m as i64) as usize] * values[j];
            }
            *slot = acc;
        }
        values = next;
    }
    Ok(GridDensity::from_values(
        rho.domain().clone(),
        rho.resolution().to_vec(),
        values,
    )?)
}

/// Mean of an expression over the cube `z + eps * [-1/2, 1/2]^d`, by
/// tensor-product Simpson quadrature with 17 nodes per axis.
pub fn box_average_expr(f: &Expr, z: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(LogConcaveError::BadParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let d = f.dim();
    if z.len() != d {
        return Err(LogConcaveError::Geometry(
            "center point has wrong dimension".into(),
        ));
    }
    const NODES: usize = 17;
    let h = eps / (NODES - 1) as f64;
    let w1 = crate::grid::simpson_weights(NODES, h);
    let mut idx = vec![0usize; d];
    let mut p = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for a in 0..d {
            p[a] = z[a] - 0.5 * eps + idx[a] as f64 * h;
            w *= w1[idx[a]];
        }
        let v = f.eval(&p).map_err(|source| LogConcaveError::Eval {
            point: p.clone(),
            source,
        })?;
        total += w * v;
        let mut a = d;
        let mut done = true;
        while a > 0 {
            a -= 1;
            idx[a] += 1;
            if idx[a] < NODES {
                done = false;
                break;
            }
            idx[a] = 0;
        }
        if done {
            break;
        }
    }
    Ok(total / eps.powi(d as i32))
}

/// Mean of a grid density over the cube `z + eps * [-1/2, 1/2]^d`: the exact
/// integral of the multilinear interpolant (second-order accurate in the
/// grid spacing). Requires `eps` of at least two grid cells and the cube
/// inside the domain.
pub fn box_average_grid(g: &GridDensity, z: &[f64], eps: f64) -> Result<f64> {
    let d = g.dim();
    if z.len() != d {
        return Err(LogConcaveError::Geometry(
            "center point has wrong dimension".into(),
        ));
    }
    let geom = g.geometry();
    let max_h = geom.step.iter().cloned().fold(0.0f64, f64::max);
    if !(eps >= 2.0 * max_h) {
        return Err(LogConcaveError::BadParameter(format!(
            "eps={eps} is below two grid cells ({})",
            2.0 * max_h
        )));
    }
    for a in 0..d {
        if z[a] - 0.5 * eps < geom.lo[a] - 1e-12 * geom.step[a]
            || z[a] + 0.5 * eps > geom.coord(a, geom.res[a] - 1) + 1e-12 * geom.step[a]
        {
            return Err(LogConcaveError::BadParameter(
                "cube extends outside the grid".into(),
            ));
        }
    }
    // Per axis: overlapping cells and, per cell, the exact integrals of the
    // two linear hat weights over the overlap.
    struct AxisPiece {
        cell: usize,
        s0: f64,
        s1: f64,
    }
    let mut pieces: Vec<Vec<AxisPiece>> = Vec::with_capacity(d);
    for a in 0..d {
        let lo = (z[a] - 0.5 * eps).max(geom.lo[a]);
        let hi = (z[a] + 0.5 * eps).min(geom.coord(a, geom.res[a] - 1));
        let h = geom.step[a];
        let c0 = (((lo - geom.lo[a]) / h).floor() as usize).min(geom.res[a] - 2);
        let c1 = (((hi - geom.lo[a]) / h).ceil() as usize).min(geom.res[a] - 1);
        let mut v = Vec::new();
        for cell in c0..c1 {
            let xl = geom.coord(a, cell);
            let l = lo.max(xl);
            let r = hi.min(xl + h);
            if r <= l {
                continue;
            }
            let s1 = ((r - xl).powi(2) - (l - xl).powi(2)) / (2.0 * h);
            let s0 = (r - l) - s1;
            v.push(AxisPiece { cell, s0, s1 });
        }
        pieces.push(v);
    }
    let mut pick = vec![0usize; d];
    let mut total = 0.0;
    loop {
        // product over axes of per-cell hat integrals, times corner values
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..d {
                let piece = &pieces[a][pick[a]];
                let up = (corner >> a) & 1 == 1;
                w *= if up { piece.s1 } else { piece.s0 };
                flat += (piece.cell + up as usize) * geom.stride[a];
            }
            total += w * g.value(flat);
        }
        let mut a = d;
        let mut done = true;
        while a > 0 {
            a -= 1;
            pick[a] += 1;
            if pick[a] < pieces[a].len() {
                done = false;
                break;
            }
            pick[a] = 0;
        }
        if done {
            break;
        }
    }
    Ok(total / eps.powi(d as i32))
}
