//! Scenario files: a JSON description of measures and the checks to run
//! against them.
//!
//! A scenario has two sections. `measures` declares named densities — either
//! an expression discretized over a box, or a binary grid file — which checks
//! then reference by label. `checks` is an ordered list of labeled check
//! specifications; the report preserves this order.
//!
//! Parsing is strict: unknown fields, duplicate labels, and dangling measure
//! references are rejected up front with a JSON-pointer diagnostic. Every
//! randomized check carries an explicit `seed`, so a scenario pins its own
//! reproducibility.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Default Gauss–Hermite order for checks that integrate over Gaussian space.
fn default_order() -> usize {
    64
}

fn default_scale() -> f64 {
    1.0
}

fn default_window() -> usize {
    10
}

fn default_quantile_clip() -> f64 {
    0.01
}

fn default_sample_radius() -> f64 {
    2.5
}

fn default_precheck_samples() -> u64 {
    40
}

fn default_lattice() -> LatticeDef {
    LatticeDef {
        radius: 1.5,
        points_per_axis: 3,
    }
}

fn default_max_lost_fraction() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub measures: Vec<MeasureDef>,
    pub checks: Vec<CheckDef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceDef {
    Lebesgue,
    Gaussian,
}

impl Default for ReferenceDef {
    fn default() -> Self {
        ReferenceDef::Lebesgue
    }
}

/// Axis-aligned box, `lo[a] <= x[a] <= hi[a]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDef {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureDef {
    pub label: String,
    #[serde(default)]
    pub reference: ReferenceDef,
    /// Density expression in `x1..x4`; requires `domain` and `resolution`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
    /// Binary grid file, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_file: Option<PathBuf>,
    /// Indicator of a union of boxes; requires `domain` and `resolution`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<DomainDef>>,
    /// Hex SHA-256 the grid file must match, if given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Vec<usize>>,
    /// Claimed super-log-concavity constant; checks may default to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

/// Chord lattice for 1-log-concavity sampling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeDef {
    pub radius: f64,
    pub points_per_axis: usize,
}

/// A function on Gaussian space: an expression, a named measure's grid
/// (values used verbatim as function values on its box, zero outside), or an
/// indicator of a union of boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussFnDef {
    Expr { text: String, dim: usize },
    Measure(String),
    Boxes { dim: usize, boxes: Vec<DomainDef> },
}

/// A subset of the grid for Brunn–Minkowski: a union of boxes or the region
/// where an expression is positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetDef {
    Boxes(Vec<DomainDef>),
    Predicate(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckDef {
    pub label: String,
    pub kind: CheckKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Midpoint log-concavity of a measure's grid.
    LogConcavity(LogConcavityParams),
    /// Hessian sampling certificate `Hess V >= alpha I` for a potential.
    SlcHessian(SlcHessianParams),
    /// Weighted-midpoint super-log-concavity of a measure's grid.
    SlcGrid(SlcGridParams),
    /// Gaussian smoothing keeps `delta`-super-log-concavity.
    SmoothingBound(SmoothingBoundParams),
    /// Prékopa–Leindler on a common grid.
    PrekopaLeindler(PrekopaLeindlerParams),
    /// Brunn–Minkowski for two marked sets.
    BrunnMinkowski(BrunnMinkowskiParams),
    /// Convolution of two densities stays log-concave.
    Convolution(ConvolutionParams),
    /// Marginal onto the kept axes stays log-concave.
    Marginal(MarginalParams),
    /// Product measure stays log-concave.
    Product(ProductParams),
    /// Reweighting by `exp(-potential)` stays log-concave.
    ConvexWeight(ConvexWeightParams),
    /// Full-rank linear image stays log-concave.
    Pushforward(PushforwardParams),
    /// Monotonicity of a shift `x + u(x)`.
    MonotoneShift(MonotoneShiftParams),
    /// Gaussian change-of-variables inequality `E[f(U) Lambda] <= E[f]`.
    ChangeOfVariables(ChangeOfVariablesParams),
    /// Log-concavity of the Jacobian factor along mixtures of shifts.
    MixtureJacobian(MixtureJacobianParams),
    /// Ornstein–Uhlenbeck smoothings converge in the Jacobian factor.
    SmoothingSequence(SmoothingSequenceParams),
    /// 1-log-concavity of a function on Gaussian space.
    OneLogConcavity(OneLogConcavityParams),
    /// OU semigroup preserves 1-log-concavity.
    OuPreservation(OuPreservationParams),
    /// Conditional expectation preserves 1-log-concavity.
    ConditionalPreservation(ConditionalPreservationParams),
    /// Prékopa–Leindler for a 1-log-concave weight against the Gaussian.
    GaussianPrekopaLeindler(GaussianPlParams),
    /// Monotone transport from the standard Gaussian is a contraction.
    Contraction(ContractionParams),
    /// Monge–Ampère identity for the monotone transport map.
    TransportIdentity(TransportIdentityParams),
    /// Logarithmic Sobolev inequality for a measure.
    LogSobolev(LogSobolevParams),
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::LogConcavity(_) => "log_concavity",
            CheckKind::SlcHessian(_) => "slc_hessian",
            CheckKind::SlcGrid(_) => "slc_grid",
            CheckKind::SmoothingBound(_) => "smoothing_bound",
            CheckKind::PrekopaLeindler(_) => "prekopa_leindler",
            CheckKind::BrunnMinkowski(_) => "brunn_minkowski",
            CheckKind::Convolution(_) => "convolution",
            CheckKind::Marginal(_) => "marginal",
            CheckKind::Product(_) => "product",
            CheckKind::ConvexWeight(_) => "convex_weight",
            CheckKind::Pushforward(_) => "pushforward",
            CheckKind::MonotoneShift(_) => "monotone_shift",
            CheckKind::ChangeOfVariables(_) => "change_of_variables",
            CheckKind::MixtureJacobian(_) => "mixture_jacobian",
            CheckKind::SmoothingSequence(_) => "smoothing_sequence",
            CheckKind::OneLogConcavity(_) => "one_log_concavity",
            CheckKind::OuPreservation(_) => "ou_preservation",
            CheckKind::ConditionalPreservation(_) => "conditional_preservation",
            CheckKind::GaussianPrekopaLeindler(_) => "gaussian_prekopa_leindler",
            CheckKind::Contraction(_) => "contraction",
            CheckKind::TransportIdentity(_) => "transport_identity",
            CheckKind::LogSobolev(_) => "log_sobolev",
        }
    }

    /// Replaces every seed in the check, for `--seed-override`.
    pub fn override_seed(&mut self, seed: u64) {
        match self {
            CheckKind::LogConcavity(p) => p.seed = seed,
            CheckKind::SlcHessian(p) => p.seed = seed,
            CheckKind::SlcGrid(p) => p.seed = seed,
            CheckKind::SmoothingBound(p) => p.seed = seed,
            CheckKind::PrekopaLeindler(p) => p.seed = seed,
            CheckKind::BrunnMinkowski(_) => {}
            CheckKind::Convolution(p) => p.seed = seed,
            CheckKind::Marginal(p) => p.seed = seed,
            CheckKind::Product(p) => p.seed = seed,
            CheckKind::ConvexWeight(p) => p.seed = seed,
            CheckKind::Pushforward(p) => p.seed = seed,
            CheckKind::MonotoneShift(p) => p.seed = seed,
            CheckKind::ChangeOfVariables(_) => {}
            CheckKind::MixtureJacobian(p) => p.seed = seed,
            CheckKind::SmoothingSequence(_) => {}
            CheckKind::OneLogConcavity(p) => p.seed = seed,
            CheckKind::OuPreservation(p) => p.seed = seed,
            CheckKind::ConditionalPreservation(p) => p.seed = seed,
            CheckKind::GaussianPrekopaLeindler(p) => p.seed = seed,
            CheckKind::Contraction(_) => {}
            CheckKind::TransportIdentity(_) => {}
            CheckKind::LogSobolev(_) => {}
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogConcavityParams {
    pub measure: String,
    pub tolerance: f64,
    pub pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlcHessianParams {
    pub potential: String,
    pub alpha: f64,
    pub domain: DomainDef,
    pub samples: u64,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlcGridParams {
    pub measure: String,
    pub alpha: f64,
    pub tolerance: f64,
    pub pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingBoundParams {
    pub measure: String,
    /// Super-log-concavity constant of the input (prechecked).
    pub alpha: f64,
    /// Heat-kernel variance of the smoothing.
    pub sigma: f64,
    /// Constant the smoothed measure is checked against; the report notes the
    /// formula bound `alpha / (1 + alpha * sigma)`.
    pub delta: f64,
    pub tolerance: f64,
    pub pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrekopaLeindlerParams {
    /// Measure the integrals are taken against.
    pub measure: String,
    pub b: String,
    pub c: String,
    /// Omit to construct the tight sup-convolution majorant automatically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    pub s: f64,
    pub tolerance: f64,
    pub hypothesis_pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrunnMinkowskiParams {
    pub measure: String,
    pub a: SetDef,
    pub b: SetDef,
    pub s: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvolutionParams {
    pub f: String,
    pub g: String,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<DomainDef>,
    pub tolerance: f64,
    pub pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalParams {
    pub measure: String,
    pub keep: Vec<usize>,
    pub tolerance: f64,
    pub pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductParams {
    pub a: String,
    pub b: String,
    pub tolerance: f64,
    pub pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexWeightParams {
    pub measure: String,
    pub potential: String,
    pub tolerance: f64,
    pub pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushforwardParams {
    pub measure: String,
    /// Row-major `n x m` matrix, `n <= m`, full row rank.
    pub matrix: Vec<Vec<f64>>,
    pub domain: DomainDef,
    pub resolution: Vec<usize>,
    /// Beyond this lost-mass fraction the closure check is inconclusive.
    #[serde(default = "default_max_lost_fraction")]
    pub max_lost_fraction: f64,
    pub tolerance: f64,
    pub pairs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotoneShiftParams {
    pub components: Vec<String>,
    pub domain: DomainDef,
    pub samples: u64,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeOfVariablesParams {
    pub components: Vec<String>,
    /// Nonnegative test function of the same arity.
    pub test_function: String,
    #[serde(default = "default_order")]
    pub order: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureJacobianParams {
    pub u: Vec<String>,
    pub v: Vec<String>,
    /// Weight on `u`; the mixture is `weight * u + (1 - weight) * v`.
    pub weight: f64,
    pub domain: DomainDef,
    pub points: u64,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSequenceParams {
    pub components: Vec<String>,
    pub domain: DomainDef,
    pub resolution: Vec<usize>,
    /// Strictly increasing OU smoothing indices (`tau = 1/n`).
    pub ns: Vec<usize>,
    #[serde(default = "default_order")]
    pub order: usize,
    /// The final sup error must come in under this threshold.
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneLogConcavityParams {
    pub f: GaussFnDef,
    pub samples: u64,
    pub lattice: LatticeDef,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuPreservationParams {
    pub f: GaussFnDef,
    pub tau: f64,
    pub domain: DomainDef,
    pub resolution: Vec<usize>,
    #[serde(default = "default_order")]
    pub order: usize,
    pub samples: u64,
    pub lattice: LatticeDef,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionalPreservationParams {
    pub f: GaussFnDef,
    pub keep: Vec<usize>,
    /// Domain over the kept axes.
    pub domain: DomainDef,
    pub resolution: Vec<usize>,
    #[serde(default = "default_order")]
    pub order: usize,
    pub samples: u64,
    pub lattice: LatticeDef,
    pub seed: u64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPlParams {
    pub q: GaussFnDef,
    pub b: GaussFnDef,
    pub c: GaussFnDef,
    pub a: GaussFnDef,
    pub s: f64,
    pub tolerance: f64,
    pub hypothesis_pairs: u64,
    #[serde(default = "default_sample_radius")]
    pub sample_radius: f64,
    pub seed: u64,
    #[serde(default = "default_precheck_samples")]
    pub precheck_samples: u64,
    #[serde(default = "default_lattice")]
    pub precheck_lattice: LatticeDef,
    #[serde(default = "default_order")]
    pub order: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionParams {
    /// Target measure; the source is the standard Gaussian on its grid.
    pub target: String,
    /// Slope bound; defaults to `1/sqrt(alpha)` from the target measure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default = "default_window")]
    pub window: usize,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportIdentityParams {
    pub source: String,
    pub target: String,
    #[serde(default = "default_quantile_clip")]
    pub quantile_clip: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSobolevParams {
    pub measure: String,
    /// Test function expression.
    pub f: String,
    /// Defaults to the measure's declared alpha.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub tolerance: f64,
}

/// A scenario together with where it came from and its content digest.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    /// Directory grid-file paths are resolved against.
    pub base_dir: PathBuf,
    /// Hex SHA-256 of the scenario file bytes.
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let hash = Sha256::digest(bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load(path: &Path) -> Result<LoadedScenario> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scenario = parse(&bytes).map_err(|message| CliError::Parse {
        path: path.display().to_string(),
        message,
    })?;
    validate(&scenario)?;
    Ok(LoadedScenario {
        scenario,
        base_dir: path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
        digest: sha256_hex(&bytes),
    })
}

/// Strict parse with a JSON-pointer locating any schema violation.
pub fn parse(bytes: &[u8]) -> std::result::Result<Scenario, String> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de)
        .map_err(|e| format!("at {}: {}", e.path(), e.inner()))
}

pub fn validate(scenario: &Scenario) -> Result<()> {
    if scenario.checks.is_empty() {
        return Err(CliError::Invalid("scenario declares no checks".into()));
    }
    let mut labels = HashSet::new();
    for m in &scenario.measures {
        if !labels.insert(m.label.as_str()) {
            return Err(CliError::Invalid(format!(
                "duplicate measure label '{}'",
                m.label
            )));
        }
        let sources =
            m.density.is_some() as u8 + m.grid_file.is_some() as u8 + m.boxes.is_some() as u8;
        if sources != 1 {
            return Err(CliError::Invalid(format!(
                "measure '{}' must declare exactly one of 'density', 'grid_file', or 'boxes'",
                m.label
            )));
        }
        if m.grid_file.is_none() {
            if m.domain.is_none() || m.resolution.is_none() {
                return Err(CliError::Invalid(format!(
                    "measure '{}' is not a grid file and needs both 'domain' and 'resolution'",
                    m.label
                )));
            }
            if m.sha256.is_some() {
                return Err(CliError::Invalid(format!(
                    "measure '{}': 'sha256' only applies to 'grid_file'",
                    m.label
                )));
            }
        }
        if let (Some(dom), Some(res)) = (&m.domain, &m.resolution) {
            if dom.lo.len() != dom.hi.len() || dom.lo.len() != res.len() {
                return Err(CliError::Invalid(format!(
                    "measure '{}': domain and resolution dimensions disagree",
                    m.label
                )));
            }
        }
    }
    let mut check_labels = HashSet::new();
    for c in &scenario.checks {
        if !check_labels.insert(c.label.as_str()) {
            return Err(CliError::Invalid(format!(
                "duplicate check label '{}'",
                c.label
            )));
        }
    }
    let known: HashSet<&str> = labels;
    for c in &scenario.checks {
        for m in referenced_measures(&c.kind) {
            if !known.contains(m.as_str()) {
                return Err(CliError::Invalid(format!(
                    "check '{}' references unknown measure '{}'",
                    c.label, m
                )));
            }
        }
    }
    Ok(())
}

fn gaussfn_measures(f: &GaussFnDef, out: &mut Vec<String>) {
    if let GaussFnDef::Measure(m) = f {
        out.push(m.clone());
    }
}

/// Measure labels a check depends on.
pub fn referenced_measures(kind: &CheckKind) -> Vec<String> {
    let mut out = Vec::new();
    match kind {
        CheckKind::LogConcavity(p) => out.push(p.measure.clone()),
        CheckKind::SlcHessian(_) => {}
        CheckKind::SlcGrid(p) => out.push(p.measure.clone()),
        CheckKind::SmoothingBound(p) => out.push(p.measure.clone()),
        CheckKind::PrekopaLeindler(p) => {
            out.push(p.measure.clone());
            out.push(p.b.clone());
            out.push(p.c.clone());
            if let Some(a) = &p.a {
                out.push(a.clone());
            }
        }
        CheckKind::BrunnMinkowski(p) => out.push(p.measure.clone()),
        CheckKind::Convolution(p) => {
            out.push(p.f.clone());
            out.push(p.g.clone());
        }
        CheckKind::Marginal(p) => out.push(p.measure.clone()),
        CheckKind::Product(p) => {
            out.push(p.a.clone());
            out.push(p.b.clone());
        }
        CheckKind::ConvexWeight(p) => out.push(p.measure.clone()),
        CheckKind::Pushforward(p) => out.push(p.measure.clone()),
        CheckKind::MonotoneShift(_)
        | CheckKind::ChangeOfVariables(_)
        | CheckKind::MixtureJacobian(_)
        | CheckKind::SmoothingSequence(_) => {}
        CheckKind::OneLogConcavity(p) => gaussfn_measures(&p.f, &mut out),
        CheckKind::OuPreservation(p) => gaussfn_measures(&p.f, &mut out),
        CheckKind::ConditionalPreservation(p) => gaussfn_measures(&p.f, &mut out),
        CheckKind::GaussianPrekopaLeindler(p) => {
            gaussfn_measures(&p.q, &mut out);
            gaussfn_measures(&p.b, &mut out);
            gaussfn_measures(&p.c, &mut out);
            gaussfn_measures(&p.a, &mut out);
        }
        CheckKind::Contraction(p) => out.push(p.target.clone()),
        CheckKind::TransportIdentity(p) => {
            out.push(p.source.clone());
            out.push(p.target.clone());
        }
        CheckKind::LogSobolev(p) => out.push(p.measure.clone()),
    }
    out
}

/// Canonical pretty-printed form: parsed, validated, defaults materialized,
/// fields in schema order.
pub fn canonical_json(scenario: &Scenario) -> String {
    let mut s = serde_json::to_string_pretty(scenario).expect("scenario serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "measures": [{
                "label": "g",
                "density": "exp(-x1^2/2)",
                "domain": {"lo": [-4.0], "hi": [4.0]},
                "resolution": [65]
            }],
            "checks": [{
                "label": "lc",
                "kind": {"log_concavity": {"measure": "g", "tolerance": 1e-6, "pairs": 10, "seed": 1}}
            }]
        }"#
        .to_string()
    }

    fn parse_ok(text: &str) -> Scenario {
        let s = parse(text.as_bytes()).expect("parses");
        validate(&s).expect("validates");
        s
    }

    #[test]
    fn minimal_scenario_parses_and_validates() {
        let s = parse_ok(&minimal());
        assert_eq!(s.measures.len(), 1);
        assert_eq!(s.checks[0].kind.name(), "log_concavity");
    }

    #[test]
    fn unknown_field_is_located_by_pointer() {
        let bad = minimal().replace("\"label\": \"g\",", "\"label\": \"g\", \"extra\": 1,");
        let err = parse(bad.as_bytes()).unwrap_err();
        assert!(err.contains("measures[0]"), "diagnostic was: {err}");
        assert!(err.contains("extra"), "diagnostic was: {err}");
    }

    #[test]
    fn sampled_check_requires_seed() {
        let bad = minimal().replace(", \"seed\": 1", "");
        let err = parse(bad.as_bytes()).unwrap_err();
        assert!(err.contains("seed"), "diagnostic was: {err}");
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let mut s = parse_ok(&minimal());
        s.measures.push(s.measures[0].clone());
        assert!(validate(&s).unwrap_err().to_string().contains("duplicate"));

        let mut s = parse_ok(&minimal());
        s.checks.push(s.checks[0].clone());
        assert!(validate(&s).unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn dangling_measure_reference_is_named() {
        let bad = minimal().replace("\"measure\": \"g\"", "\"measure\": \"nope\"");
        let s = parse(bad.as_bytes()).unwrap();
        let err = validate(&s).unwrap_err().to_string();
        assert!(err.contains("nope"), "diagnostic was: {err}");
    }

    #[test]
    fn empty_check_list_is_rejected() {
        let mut s = parse_ok(&minimal());
        s.checks.clear();
        assert!(validate(&s).is_err());
    }

    #[test]
    fn measure_needs_exactly_one_source() {
        let mut s = parse_ok(&minimal());
        s.measures[0].boxes = Some(vec![DomainDef {
            lo: vec![0.0],
            hi: vec![1.0],
        }]);
        assert!(validate(&s).unwrap_err().to_string().contains("exactly one"));

        let mut s = parse_ok(&minimal());
        s.measures[0].density = None;
        assert!(validate(&s).unwrap_err().to_string().contains("exactly one"));
    }

    #[test]
    fn expression_measure_needs_domain_and_resolution() {
        let mut s = parse_ok(&minimal());
        s.measures[0].resolution = None;
        assert!(validate(&s).is_err());
    }

    #[test]
    fn sha256_applies_only_to_grid_files() {
        let mut s = parse_ok(&minimal());
        s.measures[0].sha256 = Some("00".repeat(32));
        assert!(validate(&s).unwrap_err().to_string().contains("sha256"));
    }

    #[test]
    fn mismatched_domain_and_resolution_dims_are_rejected() {
        let mut s = parse_ok(&minimal());
        s.measures[0].resolution = Some(vec![65, 65]);
        assert!(validate(&s).unwrap_err().to_string().contains("disagree"));
    }

    #[test]
    fn canonical_json_is_idempotent() {
        let s = parse_ok(&minimal());
        let once = canonical_json(&s);
        let again = canonical_json(&parse_ok(&once));
        assert_eq!(once, again);
    }

    #[test]
    fn digest_matches_known_sha256() {
        // sha256 of the empty string
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn override_seed_reaches_sampled_checks() {
        let mut s = parse_ok(&minimal());
        s.checks[0].kind.override_seed(99);
        match &s.checks[0].kind {
            CheckKind::LogConcavity(p) => assert_eq!(p.seed, 99),
            other => panic!("unexpected kind {other:?}"),
        }
    }

    #[test]
    fn referenced_measures_include_every_label() {
        let kind = CheckKind::PrekopaLeindler(PrekopaLeindlerParams {
            measure: "rho".into(),
            b: "b".into(),
            c: "c".into(),
            a: Some("a".into()),
            s: 0.5,
            tolerance: 1e-6,
            hypothesis_pairs: 10,
            seed: 1,
        });
        let refs = referenced_measures(&kind);
        for want in ["rho", "b", "c", "a"] {
            assert!(refs.iter().any(|r| r == want), "missing {want}");
        }
    }
}
