//! Executes a loaded scenario and assembles the run report.
//!
//! Measures are discretized once up front; checks then run in parallel (the
//! report keeps declaration order regardless). A check that cannot even be
//! posed — a missing grid file, an expression that does not parse, mismatched
//! dimensions — aborts the run as an input error. Failed mathematical
//! *preconditions* (a non-log-concave weight, a support gap) do not: the
//! underlying verifiers report those as inconclusive, which is a verdict, not
//! a crash.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use prekopa_core::expr::DiffConfig;
use prekopa_core::gauss::{
    check_monotone, check_one_logconcave, mixture_lambda, smoothing_sequence_lambda,
    verify_change_of_variables, verify_gaussian_pl, verify_preservation, GaussFn,
    GaussianPlConfig, GaussianSpace, LatticeSpec, Preservation, PreservationConfig, ShiftMap,
};
use prekopa_core::logconcave::{
    check_logconcave, check_slc, check_slc_grid, convolve, expected_convolution_mass,
    gaussian_smooth, marginalize, slc_delta_bound, verify_brunn_minkowski,
    verify_prekopa_leindler, GridMask, MidpointConfig, PlConfig,
};
use prekopa_core::measure::{
    discretize, linear_pushforward, product_measure, weight_by_convex, DensitySource,
    MeasureSpec, Reference,
};
use prekopa_core::transport::{transport_jacobian_identity, verify_contraction, verify_lsi};
use prekopa_core::{BoxDomain, CheckReport, Expr, GridDensity, Verdict};

use crate::error::{CliError, Result};
use crate::scenario::{
    self, CheckDef, CheckKind, DomainDef, GaussFnDef, LatticeDef, LoadedScenario, MeasureDef,
    ReferenceDef, SetDef,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    /// Hex SHA-256 of the scenario file that produced this report.
    pub scenario_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub overall: Verdict,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub label: String,
    pub kind: String,
    pub verdict: Verdict,
    /// Worst margin seen; NaN (serialized as null) when inconclusive.
    #[serde(with = "nullable_margin")]
    pub margin: f64,
    pub tolerance: f64,
    pub witness: Vec<Vec<f64>>,
    pub samples: u64,
    pub notes: Vec<String>,
    /// Wall-clock milliseconds; the only nondeterministic field.
    pub millis: u64,
}

/// `margin` is NaN for inconclusive checks; JSON has no NaN literal, so it
/// crosses the wire as `null`.
mod nullable_margin {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl RunReport {
    /// 0 when everything passed, 1 otherwise. Input errors never reach a
    /// report and exit with 2.
    pub fn exit_code(&self) -> i32 {
        if self.overall == Verdict::Pass {
            0
        } else {
            1
        }
    }
}

fn overall(checks: &[CheckResult]) -> Verdict {
    if checks.iter().any(|c| c.verdict == Verdict::Fail) {
        Verdict::Fail
    } else if checks.iter().any(|c| c.verdict == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

/// A measure that has been discretized and is ready for checks.
pub struct ResolvedMeasure {
    pub grid: GridDensity,
    pub alpha: Option<f64>,
}

pub struct Resolved {
    pub measures: HashMap<String, ResolvedMeasure>,
}

fn box_domain(def: &DomainDef) -> Result<BoxDomain> {
    BoxDomain::new(def.lo.clone(), def.hi.clone())
        .map_err(|e| CliError::Invalid(format!("bad domain: {e}")))
}

fn parse_expr(text: &str, dim: usize, what: &str) -> Result<Expr> {
    Expr::parse(text, dim)
        .map_err(|e| CliError::Invalid(format!("{what} '{text}' does not parse: {e}")))
}

pub fn resolve_measures(loaded: &LoadedScenario) -> Result<Resolved> {
    let mut measures = HashMap::new();
    for def in &loaded.scenario.measures {
        let grid = resolve_one(def, loaded)?;
        measures.insert(
            def.label.clone(),
            ResolvedMeasure {
                grid,
                alpha: def.alpha,
            },
        );
    }
    Ok(Resolved { measures })
}

fn resolve_one(def: &MeasureDef, loaded: &LoadedScenario) -> Result<GridDensity> {
    let reference = match def.reference {
        ReferenceDef::Lebesgue => Reference::Lebesgue,
        ReferenceDef::Gaussian => Reference::Gaussian,
    };
    let source = if let Some(text) = &def.density {
        let dom = def.domain.as_ref().expect("validated");
        let expr = parse_expr(text, dom.lo.len(), "density")?;
        DensitySource::Expr(expr)
    } else if let Some(boxes) = &def.boxes {
        let dom = box_domain(def.domain.as_ref().expect("validated"))?;
        let res = def.resolution.clone().expect("validated");
        let boxes = boxes.iter().map(box_domain).collect::<Result<Vec<_>>>()?;
        let grid = GridDensity::from_fn(dom, res, |x| {
            Ok(if boxes.iter().any(|b| b.contains(x)) {
                1.0
            } else {
                0.0
            })
        })
        .map_err(|e| CliError::Invalid(format!("measure '{}': {e}", def.label)))?;
        DensitySource::Grid(grid)
    } else {
        let rel = def.grid_file.as_ref().expect("validated");
        let path = loaded.base_dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if let Some(want) = &def.sha256 {
            let got = scenario::sha256_hex(&bytes);
            if !want.eq_ignore_ascii_case(&got) {
                return Err(CliError::Invalid(format!(
                    "measure '{}': grid file digest {got} does not match pinned {want}",
                    def.label
                )));
            }
        }
        let grid = GridDensity::from_bytes(&bytes).map_err(|e| {
            CliError::Invalid(format!("measure '{}': bad grid file: {e}", def.label))
        })?;
        DensitySource::Grid(grid)
    };
    let spec = MeasureSpec {
        label: def.label.clone(),
        reference,
        density: source,
        alpha: def.alpha,
    };
    let (dom, res) = match (&def.domain, &def.resolution) {
        (Some(d), Some(r)) => (box_domain(d)?, r.clone()),
        _ => match &spec.density {
            DensitySource::Grid(g) => (g.domain().clone(), g.resolution().to_vec()),
            DensitySource::Expr(_) => unreachable!("validated"),
        },
    };
    discretize(&spec, &dom, &res)
        .map_err(|e| CliError::Invalid(format!("measure '{}': {e}", def.label)))
}

impl Resolved {
    fn grid(&self, label: &str) -> Result<&GridDensity> {
        self.measures
            .get(label)
            .map(|m| &m.grid)
            .ok_or_else(|| CliError::Invalid(format!("unknown measure '{label}'")))
    }

    fn alpha(&self, label: &str) -> Option<f64> {
        self.measures.get(label).and_then(|m| m.alpha)
    }
}

fn lattice(def: &LatticeDef) -> LatticeSpec {
    LatticeSpec {
        radius: def.radius,
        points_per_axis: def.points_per_axis,
    }
}

fn shift_map(components: &[String], what: &str) -> Result<ShiftMap> {
    let d = components.len();
    let exprs = components
        .iter()
        .map(|c| parse_expr(c, d, what))
        .collect::<Result<Vec<_>>>()?;
    ShiftMap::new(exprs).map_err(|e| CliError::Invalid(format!("{what}: {e}")))
}

fn gauss_fn(def: &GaussFnDef, resolved: &Resolved) -> Result<GaussFn> {
    Ok(match def {
        GaussFnDef::Expr { text, dim } => GaussFn::Expr(parse_expr(text, *dim, "function")?),
        GaussFnDef::Measure(label) => GaussFn::Grid(resolved.grid(label)?.clone()),
        GaussFnDef::Boxes { dim, boxes } => {
            let boxes = boxes.iter().map(box_domain).collect::<Result<Vec<_>>>()?;
            GaussFn::boxes(*dim, boxes)
                .map_err(|e| CliError::Invalid(format!("bad boxes: {e}")))?
        }
    })
}

fn space(order: usize) -> Result<GaussianSpace> {
    GaussianSpace::new(order).map_err(|e| CliError::Invalid(e.to_string()))
}

/// Runs every check; `jobs = 0` lets the thread pool pick its own width.
pub fn run(loaded: &LoadedScenario, jobs: usize, seed_override: Option<u64>) -> Result<RunReport> {
    let resolved = resolve_measures(loaded)?;
    let mut defs: Vec<CheckDef> = loaded.scenario.checks.clone();
    if let Some(seed) = seed_override {
        for def in &mut defs {
            def.kind.override_seed(seed);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Other(format!("thread pool: {e}")))?;
    let results: Result<Vec<CheckResult>> = pool.install(|| {
        defs.par_iter()
            .map(|def| run_check(def, &resolved))
            .collect()
    });
    let checks = results?;
    Ok(RunReport {
        tool: "prekopa".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        scenario_digest: loaded.digest.clone(),
        title: loaded.scenario.title.clone(),
        overall: overall(&checks),
        checks,
    })
}

/// Runs one check definition against already-resolved measures.
pub fn run_check(def: &CheckDef, resolved: &Resolved) -> Result<CheckResult> {
    let started = Instant::now();
    let report = execute(&def.kind, resolved).map_err(|e| match e {
        CliError::Invalid(message) => CliError::Check {
            label: def.label.clone(),
            message,
        },
        other => other,
    })?;
    Ok(CheckResult {
        label: def.label.clone(),
        kind: def.kind.name().into(),
        verdict: report.verdict,
        margin: report.worst_margin,
        tolerance: report.tolerance,
        witness: report.witness,
        samples: report.samples,
        notes: report.notes,
        millis: started.elapsed().as_millis() as u64,
    })
}

fn invalid<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Invalid(e.to_string())
}

fn execute(kind: &CheckKind, resolved: &Resolved) -> Result<CheckReport> {
    match kind {
        CheckKind::LogConcavity(p) => {
            let cfg = MidpointConfig {
                tolerance: p.tolerance,
                pairs: p.pairs,
                seed: p.seed,
            };
            Ok(check_logconcave(resolved.grid(&p.measure)?, &cfg))
        }
        CheckKind::SlcHessian(p) => {
            let dom = box_domain(&p.domain)?;
            let v = parse_expr(&p.potential, dom.dim(), "potential")?;
            let cert = check_slc(
                &v,
                p.alpha,
                &dom,
                p.samples,
                p.seed,
                p.tolerance,
                &DiffConfig::default(),
            )
            .map_err(invalid)?;
            Ok(cert.report)
        }
        CheckKind::SlcGrid(p) => {
            let cfg = MidpointConfig {
                tolerance: p.tolerance,
                pairs: p.pairs,
                seed: p.seed,
            };
            let cert = check_slc_grid(resolved.grid(&p.measure)?, p.alpha, &cfg).map_err(invalid)?;
            Ok(cert.report)
        }
        CheckKind::SmoothingBound(p) => {
            let grid = resolved.grid(&p.measure)?;
            let cfg = MidpointConfig {
                tolerance: p.tolerance,
                pairs: p.pairs,
                seed: p.seed,
            };
            let input = check_slc_grid(grid, p.alpha, &cfg).map_err(invalid)?;
            let bound = slc_delta_bound(p.alpha, p.sigma).map_err(invalid)?;
            if !input.report.passed() {
                return Ok(CheckReport::inconclusive(
                    format!(
                        "input is not {}-super-log-concave (margin {:.3e}), so the smoothing bound is not in play",
                        p.alpha, input.report.worst_margin
                    ),
                    p.tolerance,
                    input.report.samples,
                ));
            }
            let smoothed = gaussian_smooth(grid, p.sigma).map_err(invalid)?;
            let out = check_slc_grid(&smoothed, p.delta, &cfg).map_err(invalid)?;
            Ok(out.report.with_note(format!(
                "formula bound alpha/(1 + alpha sigma) = {bound:.9}; checked delta = {}",
                p.delta
            )))
        }
        CheckKind::PrekopaLeindler(p) => {
            let rho = resolved.grid(&p.measure)?;
            let b = resolved.grid(&p.b)?;
            let c = resolved.grid(&p.c)?;
            let a = match &p.a {
                Some(label) => Some(resolved.grid(label)?),
                None => None,
            };
            let cfg = PlConfig {
                s: p.s,
                tolerance: p.tolerance,
                hypothesis_pairs: p.hypothesis_pairs,
                seed: p.seed,
            };
            verify_prekopa_leindler(rho, b, c, a, &cfg).map_err(invalid)
        }
        CheckKind::BrunnMinkowski(p) => {
            let rho = resolved.grid(&p.measure)?;
            let a = grid_mask(rho, &p.a)?;
            let b = grid_mask(rho, &p.b)?;
            verify_brunn_minkowski(rho, &a, &b, p.s, p.tolerance).map_err(invalid)
        }
        CheckKind::Convolution(p) => {
            let f = resolved.grid(&p.f)?;
            let g = resolved.grid(&p.g)?;
            let clip = match &p.clip {
                Some(d) => Some(box_domain(d)?),
                None => None,
            };
            let conv = convolve(f, g, p.scale, clip.as_ref()).map_err(invalid)?;
            let cfg = MidpointConfig {
                tolerance: p.tolerance,
                pairs: p.pairs,
                seed: p.seed,
            };
            let expected = expected_convolution_mass(f, g, p.scale);
            let note = format!(
                "convolution mass {:.9e}, untruncated expectation {:.9e}",
                conv.mass(),
                expected
            );
            Ok(check_logconcave(&conv, &cfg).with_note(note))
        }
        CheckKind::Marginal(p) => {
            let rho = resolved.grid(&p.measure)?;
            let marginal = marginalize(rho, &p.keep).map_err(invalid)?;
            let cfg = MidpointConfig {
                tolerance: p.tolerance,
                pairs: p.pairs,
                seed: p.seed,
            };
            Ok(check_logconcave(&marginal, &cfg))
        }
        CheckKind::Product(p) => {
            let a = resolved.grid(&p.a)?;
            let b = resolved.grid(&p.b)?;
            let prod = product_measure(a, b).map_err(invalid)?;
            let cfg = MidpointConfig {
                tolerance: p.tolerance,
                pairs: p.pairs,
                seed: p.seed,
            };
            Ok(check_logconcave(&prod, &cfg))
        }
        CheckKind::ConvexWeight(p) => {
            let rho = resolved.grid(&p.measure)?;
            let potential = parse_expr(&p.potential, rho.dim(), "potential")?;
            let weighted = weight_by_convex(rho, &potential).map_err(invalid)?;
            let cfg = MidpointConfig {
                tolerance: p.tolerance,
                pairs: p.pairs,
                seed: p.seed,
            };
            Ok(check_logconcave(&weighted, &cfg))
        }
        CheckKind::Pushforward(p) => {
            let rho = resolved.grid(&p.measure)?;
            let rows = p.matrix.len();
            let cols = p.matrix.first().map(Vec::len).unwrap_or(0);
            if rows == 0 || p.matrix.iter().any(|r| r.len() != cols) {
                return Err(CliError::Invalid("matrix must be rectangular".into()));
            }
            let flat: Vec<f64> = p.matrix.iter().flatten().copied().collect();
            let f = DMatrix::from_row_slice(rows, cols, &flat);
            let dom = box_domain(&p.domain)?;
            let push = linear_pushforward(rho, &f, &dom, &p.resolution).map_err(invalid)?;
            let note = format!(
                "lost mass fraction {:.3e} (cap {:.3e})",
                push.lost_fraction(),
                p.max_lost_fraction
            );
            if push.lost_fraction() > p.max_lost_fraction {
                return Ok(CheckReport::inconclusive(
                    format!(
                        "{:.3}% of the source mass left the output box; enlarge it to test closure",
                        100.0 * push.lost_fraction()
                    ),
                    p.tolerance,
                    0,
                ));
            }
            let cfg = MidpointConfig {
                tolerance: p.tolerance,
                pairs: p.pairs,
                seed: p.seed,
            };
            Ok(check_logconcave(&push.grid, &cfg).with_note(note))
        }
        CheckKind::MonotoneShift(p) => {
            let u = shift_map(&p.components, "shift component")?;
            let dom = box_domain(&p.domain)?;
            check_monotone(&u, &dom, p.samples, p.seed, p.tolerance).map_err(invalid)
        }
        CheckKind::ChangeOfVariables(p) => {
            let u = shift_map(&p.components, "shift component")?;
            let f = GaussFn::Expr(parse_expr(
                &p.test_function,
                p.components.len(),
                "test function",
            )?);
            verify_change_of_variables(&u, &f, &space(p.order)?, p.tolerance).map_err(invalid)
        }
        CheckKind::MixtureJacobian(p) => {
            let u = shift_map(&p.u, "shift component")?;
            let v = shift_map(&p.v, "shift component")?;
            let dom = box_domain(&p.domain)?;
            mixture_lambda(&u, &v, p.weight, &dom, p.points, p.seed, p.tolerance)
                .map_err(invalid)
        }
        CheckKind::SmoothingSequence(p) => {
            let u = shift_map(&p.components, "shift component")?;
            let dom = box_domain(&p.domain)?;
            let diag =
                smoothing_sequence_lambda(&u, &dom, &p.resolution, &p.ns, &space(p.order)?)
                    .map_err(invalid)?;
            let last = *diag.sup_errors.last().expect("nonempty ns");
            let margin = p.threshold - last;
            let note = format!(
                "sup errors {:?} for n = {:?}",
                diag.sup_errors, diag.ns
            );
            let mut report =
                CheckReport::from_margin(margin, 0.0, Vec::new(), diag.ns.len() as u64)
                    .with_note(note);
            if !diag.decreasing {
                report.verdict = Verdict::Fail;
                report = report.with_note("sup errors are not decreasing");
            }
            Ok(report)
        }
        CheckKind::OneLogConcavity(p) => {
            let f = gauss_fn(&p.f, resolved)?;
            check_one_logconcave(&f, p.samples, &lattice(&p.lattice), p.seed, p.tolerance)
                .map_err(invalid)
        }
        CheckKind::OuPreservation(p) => {
            let f = gauss_fn(&p.f, resolved)?;
            let dom = box_domain(&p.domain)?;
            let cfg = PreservationConfig {
                samples: p.samples,
                lattice: lattice(&p.lattice),
                seed: p.seed,
                tolerance: p.tolerance,
            };
            let outcome = verify_preservation(
                &f,
                &Preservation::Ou { tau: p.tau },
                &dom,
                &p.resolution,
                &space(p.order)?,
                &cfg,
            )
            .map_err(invalid)?;
            Ok(preservation_report(outcome, p.tolerance))
        }
        CheckKind::ConditionalPreservation(p) => {
            let f = gauss_fn(&p.f, resolved)?;
            let dom = box_domain(&p.domain)?;
            let cfg = PreservationConfig {
                samples: p.samples,
                lattice: lattice(&p.lattice),
                seed: p.seed,
                tolerance: p.tolerance,
            };
            let outcome = verify_preservation(
                &f,
                &Preservation::Conditional {
                    keep: p.keep.clone(),
                },
                &dom,
                &p.resolution,
                &space(p.order)?,
                &cfg,
            )
            .map_err(invalid)?;
            Ok(preservation_report(outcome, p.tolerance))
        }
        CheckKind::GaussianPrekopaLeindler(p) => {
            let q = gauss_fn(&p.q, resolved)?;
            let b = gauss_fn(&p.b, resolved)?;
            let c = gauss_fn(&p.c, resolved)?;
            let a = gauss_fn(&p.a, resolved)?;
            let cfg = GaussianPlConfig {
                s: p.s,
                tolerance: p.tolerance,
                hypothesis_pairs: p.hypothesis_pairs,
                sample_radius: p.sample_radius,
                seed: p.seed,
                precheck_samples: p.precheck_samples,
                precheck_lattice: lattice(&p.precheck_lattice),
            };
            verify_gaussian_pl(&q, &b, &c, &a, &cfg, &space(p.order)?).map_err(invalid)
        }
        CheckKind::Contraction(p) => {
            let target = resolved.grid(&p.target)?;
            let bound = match p.bound.or_else(|| {
                resolved.alpha(&p.target).map(|alpha| 1.0 / alpha.sqrt())
            }) {
                Some(b) => b,
                None => {
                    return Err(CliError::Invalid(format!(
                        "contraction needs 'bound' or an 'alpha' on measure '{}'",
                        p.target
                    )))
                }
            };
            let source = standard_gaussian_like(target)?;
            verify_contraction(&source, target, bound, p.window, p.tolerance).map_err(invalid)
        }
        CheckKind::TransportIdentity(p) => {
            let source = resolved.grid(&p.source)?;
            let target = resolved.grid(&p.target)?;
            transport_jacobian_identity(source, target, p.quantile_clip, p.tolerance)
                .map_err(invalid)
        }
        CheckKind::LogSobolev(p) => {
            let rho = resolved.grid(&p.measure)?;
            let alpha = match p.alpha.or_else(|| resolved.alpha(&p.measure)) {
                Some(a) => a,
                None => {
                    return Err(CliError::Invalid(format!(
                        "log_sobolev needs 'alpha' or an 'alpha' on measure '{}'",
                        p.measure
                    )))
                }
            };
            let f = parse_expr(&p.f, rho.dim(), "test function")?;
            verify_lsi(rho, &f, alpha, p.tolerance, &DiffConfig::default()).map_err(invalid)
        }
    }
}

fn preservation_report(
    outcome: prekopa_core::gauss::PreservationOutcome,
    tolerance: f64,
) -> CheckReport {
    let verdict = outcome.verdict();
    match verdict {
        Verdict::Inconclusive => CheckReport::inconclusive(
            format!(
                "input is not 1-log-concave (margin {:.3e}); preservation is not in play",
                outcome.input.worst_margin
            ),
            tolerance,
            outcome.input.samples,
        ),
        _ => {
            let mut out = outcome.output;
            out.notes.push(format!(
                "input margin {:.3e} over {} samples",
                outcome.input.worst_margin, outcome.input.samples
            ));
            out
        }
    }
}

fn grid_mask(rho: &GridDensity, def: &SetDef) -> Result<GridMask> {
    match def {
        SetDef::Boxes(defs) => {
            let boxes = defs.iter().map(box_domain).collect::<Result<Vec<_>>>()?;
            GridMask::from_boxes(rho.domain(), rho.resolution(), &boxes).map_err(invalid)
        }
        SetDef::Predicate(text) => {
            let pred = parse_expr(text, rho.dim(), "predicate")?;
            GridMask::from_predicate(rho.domain(), rho.resolution(), &pred).map_err(invalid)
        }
    }
}

/// Density of the standard Gaussian sampled on another grid's lattice.
fn standard_gaussian_like(target: &GridDensity) -> Result<GridDensity> {
    GridDensity::from_fn(
        target.domain().clone(),
        target.resolution().to_vec(),
        |x| Ok((-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp()),
    )
    .map_err(invalid)
}
