//! Acceptance suite: ten end-to-end criteria covering the verifier families
//! and the CLI contract. Each criterion prints exactly one `[PASS]`/`[FAIL]`
//! line (visible with `cargo test --test acceptance -- --nocapture`); the
//! test fails if any criterion does.
//!
//! Tolerances are pinned here on purpose — loosening one is a behavior
//! change, not a test fix.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prekopa_core::gauss::{
    check_one_logconcave, det2, mixture_lambda, ou_apply, verify_change_of_variables,
    verify_preservation, GaussFn, GaussianSpace, LatticeSpec, Preservation, PreservationConfig,
    ShiftMap,
};
use prekopa_core::logconcave::{
    check_logconcave, check_slc_grid, convolve, gaussian_smooth, marginalize, mask_measure,
    minkowski_combine, slc_delta_bound, sup_convolution, verify_brunn_minkowski,
    verify_prekopa_leindler, GridMask, MidpointConfig, PlConfig,
};
use prekopa_core::measure::{linear_pushforward, product_measure, weight_by_convex};
use prekopa_core::transport::{
    lsi_breakdown, monge_map, transport_jacobian_identity, verify_contraction, verify_lsi,
};
use prekopa_core::{BoxDomain, DiffConfig, Expr, GridDensity, Verdict};

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

const SQRT_2PI: f64 = 2.5066282746310002;

fn dom1(lo: f64, hi: f64) -> BoxDomain {
    BoxDomain::new(vec![lo], vec![hi]).unwrap()
}

fn dom2(lo: f64, hi: f64) -> BoxDomain {
    BoxDomain::new(vec![lo, lo], vec![hi, hi]).unwrap()
}

fn grid_fn(lo: f64, hi: f64, res: usize, f: impl Fn(f64) -> f64) -> GridDensity {
    GridDensity::from_fn(dom1(lo, hi), vec![res], |x| Ok(f(x[0]))).unwrap()
}

fn grid_expr(text: &str, lo: f64, hi: f64, res: usize) -> GridDensity {
    let e = Expr::parse(text, 1).unwrap();
    GridDensity::from_expr(dom1(lo, hi), vec![res], &e).unwrap()
}

fn grid_expr2(text: &str, lo: f64, hi: f64, res: usize) -> GridDensity {
    let e = Expr::parse(text, 2).unwrap();
    GridDensity::from_expr(dom2(lo, hi), vec![res, res], &e).unwrap()
}

fn expr1(text: &str) -> Expr {
    Expr::parse(text, 1).unwrap()
}

fn shift1(text: &str) -> ShiftMap {
    ShiftMap::new(vec![expr1(text)]).unwrap()
}

fn std_gaussian(res: usize) -> GridDensity {
    grid_fn(-8.0, 8.0, res, |x| (-x * x / 2.0).exp())
}

fn indicator(lo: f64, hi: f64, res: usize) -> GridDensity {
    grid_fn(-8.0, 8.0, res, |x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 })
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run_binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_prekopa"))
        .args(args)
        .output()
        .expect("binary runs")
}

// --- 1: the product-form integral inequality, green family and red witness --

fn criterion_1_prekopa_leindler() -> Check {
    let started = Instant::now();
    let res = 257;
    let lebesgue = grid_fn(-8.0, 8.0, res, |_| 1.0);
    let gauss = std_gaussian(res);
    let gauss_shift1 = grid_fn(-8.0, 8.0, res, |x| (-(x - 1.0) * (x - 1.0) / 2.0).exp());
    let gauss_left = grid_fn(-8.0, 8.0, res, |x| (-(x + 2.0) * (x + 2.0) / 2.0).exp());
    let gauss_right = grid_fn(-8.0, 8.0, res, |x| (-(x - 2.0) * (x - 2.0) / 2.0).exp());
    let gauss_wide = grid_fn(-8.0, 8.0, res, |x| (-x * x / 4.0).exp());
    let laplace = grid_fn(-8.0, 8.0, res, |x| (-x.abs()).exp());
    let quartic = grid_fn(-8.0, 8.0, res, |x| (-x * x / 2.0 - x.powi(4) / 4.0).exp());
    let tri = grid_fn(-8.0, 8.0, res, |x| (1.0 - x.abs() / 2.0).max(0.0));
    let tri_shift = grid_fn(-8.0, 8.0, res, |x| (1.0 - (x - 1.0).abs() / 2.0).max(0.0));
    let box_l = indicator(-1.0, 0.0, res);
    let box_r = indicator(0.0, 1.0, res);
    let box_wide = indicator(-2.0, 2.0, res);

    // (rho, b, c, s): rho log-concave, a built as the sup-convolution majorant
    let combos: Vec<(&GridDensity, &GridDensity, &GridDensity, f64)> = vec![
        (&lebesgue, &gauss, &gauss, 0.5),
        (&lebesgue, &gauss, &gauss_shift1, 0.5),
        (&gauss, &laplace, &laplace, 0.5),
        (&gauss, &box_l, &box_r, 0.5),
        (&laplace, &tri, &tri, 0.5),
        (&lebesgue, &quartic, &quartic, 0.3),
        (&gauss, &gauss, &gauss, 0.7),
        (&quartic, &box_wide, &box_wide, 0.5),
        (&lebesgue, &gauss_left, &gauss_right, 0.25),
        (&gauss, &tri, &tri_shift, 0.5),
        (&laplace, &gauss_wide, &gauss_wide, 0.5),
        (&gauss, &gauss_shift1, &laplace, 1.0),
    ];
    ensure!(combos.len() >= 10, "want at least 10 combinations");
    for (i, (rho, b, c, s)) in combos.iter().enumerate() {
        let cfg = PlConfig {
            s: *s,
            tolerance: 1e-6,
            hypothesis_pairs: 0,
            seed: 0,
        };
        let r = verify_prekopa_leindler(rho, b, c, None, &cfg)
            .map_err(|e| format!("combo {i}: {e}"))?;
        ensure!(
            r.worst_margin >= -1e-6,
            "combo {i}: margin {} below -1e-6",
            r.worst_margin
        );
    }

    // equality case: all three integrals match sqrt(2*pi)
    let a = sup_convolution(&gauss, &gauss, 0.5).map_err(|e| e.to_string())?;
    for (what, g) in [("b", &gauss), ("a", &a)] {
        ensure!(
            (g.integral() - SQRT_2PI).abs() <= 1e-4,
            "integral of {what} = {} is not sqrt(2 pi) within 1e-4",
            g.integral()
        );
    }

    // bimodal measure with the indicator triple: conclusion fails located
    let bimodal = grid_fn(-8.0, 8.0, res, |x| {
        0.5 * (-2.0 * (x + 3.0) * (x + 3.0)).exp() + 0.5 * (-2.0 * (x - 3.0) * (x - 3.0)).exp()
    });
    let b = indicator(-3.5, -2.5, res);
    let c = indicator(2.5, 3.5, res);
    let valley = indicator(-0.5, 0.5, res);
    let cfg = PlConfig {
        s: 0.5,
        tolerance: 1e-6,
        hypothesis_pairs: 400,
        seed: 11,
    };
    let r = verify_prekopa_leindler(&bimodal, &b, &c, Some(&valley), &cfg)
        .map_err(|e| e.to_string())?;
    ensure!(r.verdict == Verdict::Fail, "bimodal triple should fail, got {:?}", r.verdict);
    ensure!(r.worst_margin < -0.2, "bimodal margin {} not clearly negative", r.worst_margin);
    ensure!(
        (r.witness[0][0] + 3.0).abs() <= 1.0 && (r.witness[1][0] - 3.0).abs() <= 1.0,
        "witnesses {:?} do not straddle the modes",
        r.witness
    );
    ensure!(
        r.witness[2][0].abs() <= 1.0,
        "third witness {:?} is not in the valley",
        r.witness[2]
    );

    let elapsed = started.elapsed().as_secs_f64();
    ensure!(elapsed < 5.0, "family took {elapsed:.2}s, budget is 5s");
    Ok(())
}

// --- 2: set-combination inequality under Gaussian and flat measures --------

fn criterion_2_brunn_minkowski() -> Check {
    let res = 1025;
    let gauss_norm = grid_fn(-8.0, 8.0, res, |x| (-x * x / 2.0).exp() / SQRT_2PI);
    let dom = gauss_norm.domain().clone();
    let mask = |lo: f64, hi: f64| {
        GridMask::from_boxes(&dom, &[res], &[BoxDomain::new(vec![lo], vec![hi]).unwrap()])
            .map_err(|e| e.to_string())
    };

    let a = mask(-1.0, 0.0)?;
    let b = mask(0.0, 1.0)?;
    let r = verify_brunn_minkowski(&gauss_norm, &a, &b, 0.5, 1e-4).map_err(|e| e.to_string())?;
    ensure!(r.passed(), "gaussian instance failed: margin {}", r.worst_margin);
    let lhs = mask_measure(
        &gauss_norm,
        &minkowski_combine(&a, &b, 0.5).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let m_a = mask_measure(&gauss_norm, &a).map_err(|e| e.to_string())?;
    let m_b = mask_measure(&gauss_norm, &b).map_err(|e| e.to_string())?;
    let rhs = (m_a * m_b).sqrt();
    // standard normal masses of [-0.5, 0.5] and [0, 1]
    ensure!((lhs - 0.3829249).abs() <= 1e-4, "lhs {lhs} is off the oracle 0.38292");
    ensure!((rhs - 0.3413447).abs() <= 1e-4, "rhs {rhs} is off the oracle 0.34134");

    // flat measure: interval lengths combine to 2.5 >= sqrt(1 * 4) = 2
    let flat = grid_fn(-8.0, 8.0, res, |_| 1.0);
    let h = flat.spacing(0);
    let a = mask(0.0, 1.0)?;
    let b = mask(1.0, 5.0)?;
    let r = verify_brunn_minkowski(&flat, &a, &b, 0.5, 2.0 * h).map_err(|e| e.to_string())?;
    ensure!(r.passed(), "flat instance failed: margin {}", r.worst_margin);
    let lhs = mask_measure(
        &flat,
        &minkowski_combine(&a, &b, 0.5).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let rhs = (mask_measure(&flat, &a).map_err(|e| e.to_string())?
        * mask_measure(&flat, &b).map_err(|e| e.to_string())?)
    .sqrt();
    ensure!((lhs - 2.5).abs() <= 2.0 * h, "flat lhs {lhs} is not 2.5 at grid scale");
    ensure!((rhs - 2.0).abs() <= 2.0 * h, "flat rhs {rhs} is not 2.0 at grid scale");
    Ok(())
}

// --- 3: closure of log-concavity under the five constructions --------------

fn criterion_3_closure() -> Check {
    let res = 257;
    let mut failures = Vec::new();
    let mut check = |label: &str, g: &GridDensity, seed: u64| {
        let cfg = MidpointConfig::new(1e-6, 200, seed);
        let r = check_logconcave(g, &cfg);
        if !r.passed() {
            failures.push(format!(
                "{label}: margin {} at {:?}",
                r.worst_margin, r.witness
            ));
        }
    };

    // convolution pairs: gaussians, laplacians, node-aligned plateaus/tents
    let shapes: Vec<(String, GridDensity)> = vec![
        ("gauss".into(), std_gaussian(res)),
        ("gauss_shift".into(), grid_fn(-8.0, 8.0, res, |x| {
            (-(x - 0.5) * (x - 0.5) / 2.0).exp()
        })),
        ("gauss_wide".into(), grid_fn(-8.0, 8.0, res, |x| (-x * x / 4.0).exp())),
        ("laplace".into(), grid_fn(-8.0, 8.0, res, |x| (-x.abs()).exp())),
        ("laplace_shift".into(), grid_fn(-8.0, 8.0, res, |x| (-(x + 1.0).abs()).exp())),
        ("box".into(), indicator(0.0, 1.0, res)),
        ("box_wide".into(), indicator(-2.0, 0.5, res)),
        ("tent".into(), grid_fn(-8.0, 8.0, res, |x| (1.0 - x.abs()).max(0.0))),
        ("tent_wide".into(), grid_fn(-8.0, 8.0, res, |x| {
            (1.0 - (x - 1.0).abs() / 2.0).max(0.0)
        })),
    ];
    let pairs = [
        (0, 0), (0, 2), (1, 2), (3, 3), (0, 3), (5, 5), (5, 6), (5, 8), (0, 5), (4, 7),
    ];
    for (k, (i, j)) in pairs.iter().enumerate() {
        let conv = convolve(&shapes[*i].1, &shapes[*j].1, 1.0, None).map_err(|e| e.to_string())?;
        check(
            &format!("convolve {} * {}", shapes[*i].0, shapes[*j].0),
            &conv,
            100 + k as u64,
        );
    }

    // marginal of a correlated 2D Gaussian, with its closed form
    let joint = grid_expr2("exp(-(x1^2 + x1*x2 + x2^2))", -6.0, 6.0, 129);
    let marginal = marginalize(&joint, &[0]).map_err(|e| e.to_string())?;
    check("marginal", &marginal, 200);
    let pi = std::f64::consts::PI;
    for flat in 0..marginal.len() {
        let x = marginal.node(flat)[0];
        if x.abs() > 3.0 {
            continue;
        }
        let oracle = pi.sqrt() * (-0.75 * x * x).exp();
        let got = marginal.value(flat);
        ensure!(
            ((got - oracle) / oracle).abs() <= 1e-4,
            "marginal at {x}: {got} vs closed form {oracle}"
        );
    }

    // reweighting by exp(-convex)
    for (k, potential) in ["x1^4/4", "abs(x1)", "max(x1, -x1/2)"].iter().enumerate() {
        let w = weight_by_convex(&std_gaussian(res), &expr1(potential))
            .map_err(|e| e.to_string())?;
        check(&format!("weight exp(-({potential}))"), &w, 300 + k as u64);
    }

    // product measure
    let prod = product_measure(&std_gaussian(129), &grid_fn(-8.0, 8.0, 129, |x| (-x.abs()).exp()))
        .map_err(|e| e.to_string())?;
    check("product", &prod, 400);

    // full-rank linear image of the correlated Gaussian
    let push = linear_pushforward(
        &joint,
        &DMatrix::from_row_slice(1, 2, &[0.6, 0.8]),
        &dom1(-8.0, 8.0),
        &[257],
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        push.lost_fraction() <= 1e-3,
        "pushforward lost {:.3e} of the mass",
        push.lost_fraction()
    );
    check("pushforward", &push.grid, 500);

    ensure!(failures.is_empty(), "non-log-concave outputs: {}", failures.join("; "));
    Ok(())
}

// --- 4: heat smoothing degrades the convexity constant predictably ---------

fn criterion_4_smoothing_bound() -> Check {
    let gauss = grid_expr("exp(-x1^2/2)", -6.0, 6.0, 241);
    let smoothed = gaussian_smooth(&gauss, 1.0).map_err(|e| e.to_string())?;
    let cfg = MidpointConfig::new(1e-6, 400, 29);
    let below = check_slc_grid(&smoothed, 0.49, &cfg).map_err(|e| e.to_string())?;
    ensure!(below.valid(), "delta = 0.49 should certify, margin {}", below.margin());
    let above = check_slc_grid(&smoothed, 0.51, &cfg).map_err(|e| e.to_string())?;
    ensure!(!above.valid(), "delta = 0.51 should fail, margin {}", above.margin());

    // the closed-form bound inverts the admissibility condition exactly
    for alpha in [0.5, 1.0, 1.5, 2.0, 3.0] {
        for sigma in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let bound = slc_delta_bound(alpha, sigma).map_err(|e| e.to_string())?;
            ensure!(
                (1.0 / bound - 1.0 / alpha - sigma).abs() <= 1e-12,
                "bound {bound} breaks the defining identity at alpha={alpha}, sigma={sigma}"
            );
            let just_below = bound * (1.0 - 1e-9);
            let just_above = bound * (1.0 + 1e-9);
            ensure!(
                1.0 / just_below - 1.0 / alpha > sigma,
                "delta just below the bound must satisfy the strict condition"
            );
            ensure!(
                1.0 / just_above - 1.0 / alpha <= sigma,
                "delta just above the bound must violate the condition"
            );
        }
    }
    ensure!(
        slc_delta_bound(1.0, 1.0).map_err(|e| e.to_string())? == 0.5,
        "alpha = sigma = 1 should give exactly 1/2"
    );
    Ok(())
}

// --- 5: entropy-energy inequality, equality family and strict cases --------

fn criterion_5_log_sobolev() -> Check {
    let rho = grid_expr("exp(-x1^2/2)", -8.0, 8.0, 801);
    let diff = DiffConfig::default();
    for t in [0.4, 0.8, 1.2] {
        let f = Expr::parse(&format!("exp(({t}*x1 - {})/2)", t * t / 2.0), 1)
            .map_err(|e| e.to_string())?;
        let parts = lsi_breakdown(&rho, &f, &diff).map_err(|e| e.to_string())?;
        ensure!(
            (parts.norm - 1.0).abs() <= 1e-6,
            "t={t}: the family should be normalized, norm {}",
            parts.norm
        );
        let target = t * t / 2.0;
        ensure!(
            (parts.entropy - target).abs() <= 1e-4,
            "t={t}: entropy {} is not t^2/2",
            parts.entropy
        );
        ensure!(
            (2.0 * parts.energy - target).abs() <= 1e-4,
            "t={t}: doubled energy {} is not t^2/2",
            2.0 * parts.energy
        );
    }

    // five certified-convexity measures, ten test functions each
    let measures: Vec<(&str, f64)> = vec![
        ("exp(-x1^2/2)", 1.0),
        ("exp(-x1^2)", 2.0),
        ("exp(-x1^2/2 - x1^4/4)", 1.0),
        ("exp(-2*x1^2)", 4.0),
        ("exp(-x1^2/2 - abs(x1))", 1.0),
    ];
    let fs = [
        "1 + x1^2",
        "2 + x1",
        "exp(x1/2)",
        "1/(1 + x1^2)",
        "sqrt(4 + x1^2)",
        "exp(-x1^2/4)",
        "1 + abs(x1)",
        "max(1, x1)",
        "1 + (x1 - 1)^2",
        "2 - 1/(2 + x1^2)",
    ];
    for (density, alpha) in &measures {
        let rho = grid_expr(density, -8.0, 8.0, 801);
        for f in &fs {
            let r = verify_lsi(&rho, &expr1(f), *alpha, 1e-6, &diff).map_err(|e| e.to_string())?;
            ensure!(
                r.worst_margin >= -1e-6,
                "measure {density}, f {f}: margin {}",
                r.worst_margin
            );
        }
    }

    // product measure with different constants: the weaker one governs
    let rho2 = grid_expr2("exp(-x1^2/2 - x2^2)", -6.0, 6.0, 121);
    for f in ["1 + x1^2", "1 + x1^2 + x2^2", "exp((x1 + x2)/4)"] {
        let f = Expr::parse(f, 2).map_err(|e| e.to_string())?;
        let r = verify_lsi(&rho2, &f, 1.0, 1e-6, &diff).map_err(|e| e.to_string())?;
        ensure!(
            r.worst_margin >= -1e-6,
            "product case margin {} for {}",
            r.worst_margin,
            f
        );
    }
    Ok(())
}

// --- 6: monotone transport from the Gaussian is a contraction --------------

fn criterion_6_contraction() -> Check {
    let res = 1601;
    let source = std_gaussian(res);
    let targets = [
        "exp(-x1^2/2)",
        "exp(-x1^2/2 - x1^4/4)",
        "exp(-x1^2/2 - abs(x1))",
        "exp(-x1^2/2 - (x1 - 0.5)^2/2)",
        "exp(-x1^2/2 - x1^4/8)",
    ];
    for t in &targets {
        let target = grid_expr(t, -8.0, 8.0, res);
        let r = verify_contraction(&source, &target, 1.0, 10, 0.01).map_err(|e| e.to_string())?;
        ensure!(r.passed(), "target {t}: margin {}", r.worst_margin);
        ensure!(
            r.worst_margin >= -0.01,
            "target {t}: slope exceeds 1.01 (margin {})",
            r.worst_margin
        );
    }

    // linear oracle: variance 0.36 target pulls back through slope 0.6
    let narrow = grid_expr("exp(-x1^2/0.72)", -8.0, 8.0, res);
    let map = monge_map(&source, &narrow).map_err(|e| e.to_string())?;
    let slope = map.lipschitz_estimate(10).map_err(|e| e.to_string())?;
    ensure!(
        (slope - 0.6).abs() <= 0.01,
        "linear case slope {slope} is not 0.6 within 0.01"
    );
    Ok(())
}

// --- 7: the Jacobian factor and the change-of-variables inequality ---------

fn criterion_7_jacobian() -> Check {
    // regularized determinant oracles
    let cases = [
        (DMatrix::<f64>::zeros(1, 1), 1.0),
        (DMatrix::from_row_slice(1, 1, &[1.0]), 2.0 / std::f64::consts::E),
        (DMatrix::from_row_slice(1, 1, &[-1.0]), 0.0),
    ];
    for (m, want) in &cases {
        let got = det2(m);
        ensure!(
            (got - want).abs() <= 1e-12,
            "det2 oracle: got {got}, want {want}"
        );
    }

    let space = GaussianSpace::new(64).map_err(|e| e.to_string())?;
    let f = GaussFn::Expr(expr1("1 + x1^2"));

    // bijective shifts: equality within 1e-6
    for u in ["-x1/2", "x1", "0.7"] {
        let r = verify_change_of_variables(&shift1(u), &f, &space, 1e-6)
            .map_err(|e| e.to_string())?;
        ensure!(
            r.worst_margin.abs() <= 1e-6,
            "shift {u}: expected equality, margin {}",
            r.worst_margin
        );
    }

    // the Jacobian factor integrates to at most one for monotone shifts
    let one = GaussFn::Expr(expr1("1"));
    for u in ["-x1/2", "x1/2", "0.7", "x1^3/10", "sqrt(1 + x1^2)"] {
        let r = verify_change_of_variables(&shift1(u), &one, &space, 1e-8)
            .map_err(|e| e.to_string())?;
        ensure!(
            r.worst_margin >= -1e-8,
            "shift {u}: expectation of the Jacobian factor exceeds 1 by {}",
            -r.worst_margin
        );
    }

    // pinned transport identity for the quartic target on the central window
    let source = std_gaussian(1601);
    let quartic = grid_expr("exp(-x1^2/2 - x1^4/4)", -8.0, 8.0, 1601);
    let r = transport_jacobian_identity(&source, &quartic, 0.05, 1e-3)
        .map_err(|e| e.to_string())?;
    ensure!(r.passed(), "transport identity residual margin {}", r.worst_margin);
    Ok(())
}

// --- 8: mixtures of shifts and matrix midpoints -----------------------------

fn criterion_8_mixture() -> Check {
    let pairs: [(Vec<&str>, Vec<&str>, f64, BoxDomain); 3] = [
        (vec!["x1^3/10"], vec!["x1/2"], 0.3, dom1(-2.0, 2.0)),
        (
            vec!["x1/2", "x2/2"],
            vec!["x1*x2^2/4", "x1^2*x2/4"],
            0.5,
            dom2(-1.5, 1.5),
        ),
        (vec!["0.4"], vec!["-x1/2"], 0.6, dom1(-2.0, 2.0)),
    ];
    for (i, (u, v, w, dom)) in pairs.iter().enumerate() {
        let d = u.len();
        let u = ShiftMap::new(u.iter().map(|t| Expr::parse(t, d).unwrap()).collect())
            .map_err(|e| e.to_string())?;
        let v = ShiftMap::new(v.iter().map(|t| Expr::parse(t, d).unwrap()).collect())
            .map_err(|e| e.to_string())?;
        let r = mixture_lambda(&u, &v, *w, dom, 200, 67 + i as u64, 1e-8)
            .map_err(|e| e.to_string())?;
        ensure!(
            r.worst_margin >= -1e-8,
            "pair {i}: log-margin {}",
            r.worst_margin
        );
        ensure!(r.samples >= 200, "pair {i}: only {} points", r.samples);
    }

    // det2 midpoint log-concavity over random symmetric matrices above -I
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let symmetric = |rng: &mut ChaCha8Rng| {
        let mut m = DMatrix::<f64>::zeros(3, 3);
        for i in 0..3 {
            for j in i..3 {
                let v = rng.random_range(-0.5..0.5);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        let min_eig = m.symmetric_eigenvalues().min();
        if min_eig < -0.85 {
            m *= -0.85 / min_eig;
        }
        m
    };
    for k in 0..20 {
        let a = symmetric(&mut rng);
        let b = symmetric(&mut rng);
        let mid = (&a + &b) * 0.5;
        let (da, db, dm) = (det2(&a), det2(&b), det2(&mid));
        ensure!(
            dm.ln() >= 0.5 * (da.ln() + db.ln()) - 1e-9,
            "pair {k}: det2 midpoint {dm} below geometric mean of {da} and {db}"
        );
    }
    Ok(())
}

// --- 9: weighted concavity on Gaussian space and its two semigroups --------

fn criterion_9_preservation() -> Check {
    let lattice = LatticeSpec {
        radius: 1.5,
        points_per_axis: 3,
    };
    let space = GaussianSpace::new(64).map_err(|e| e.to_string())?;

    // the constant weight passes
    let one = GaussFn::Expr(expr1("1"));
    let r = check_one_logconcave(&one, 200, &lattice, 3, 1e-9).map_err(|e| e.to_string())?;
    ensure!(r.passed(), "constant weight margin {}", r.worst_margin);

    // a split support fails with the midpoint located in the gap
    let split = GaussFn::boxes(
        1,
        vec![
            BoxDomain::new(vec![-2.0], vec![-1.0]).unwrap(),
            BoxDomain::new(vec![1.0], vec![2.0]).unwrap(),
        ],
    )
    .map_err(|e| e.to_string())?;
    let r = check_one_logconcave(&split, 200, &lattice, 5, 1e-9).map_err(|e| e.to_string())?;
    ensure!(r.verdict == Verdict::Fail, "split support should fail");
    ensure!(!r.witness.is_empty(), "failure carries no witness");
    ensure!(
        r.witness[1][0].abs() < 1.0,
        "witness midpoint {:?} is not in the gap",
        r.witness[1]
    );

    // three passing inputs re-pass after each semigroup
    let cfg = PreservationConfig {
        samples: 40,
        lattice,
        seed: 59,
        tolerance: 1e-9,
    };
    let inputs: Vec<(&str, GaussFn)> = vec![
        (
            "box",
            GaussFn::boxes(2, vec![BoxDomain::new(vec![-1.0, -1.0], vec![2.0, 2.0]).unwrap()])
                .map_err(|e| e.to_string())?,
        ),
        ("bump", GaussFn::Expr(Expr::parse("exp(-(x1^2 + x2^2)/4)", 2).unwrap())),
        ("flat_quartic", GaussFn::Expr(Expr::parse("exp(x1^2/2 - x1^4/4)", 2).unwrap())),
    ];
    let dom = dom2(-5.0, 5.0);
    let res = [101, 101];
    for (name, f) in &inputs {
        for tau in [0.25, 0.5, 1.0] {
            let out = verify_preservation(f, &Preservation::Ou { tau }, &dom, &res, &space, &cfg)
                .map_err(|e| e.to_string())?;
            ensure!(
                out.verdict() == Verdict::Pass,
                "{name}, tau {tau}: output margin {}",
                out.output.worst_margin
            );
        }
        let out = verify_preservation(
            f,
            &Preservation::Conditional { keep: vec![0] },
            &dom1(-5.0, 5.0),
            &[201],
            &space,
            &cfg,
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            out.verdict() == Verdict::Pass,
            "{name}, conditional: output margin {}",
            out.output.worst_margin
        );
    }

    // semigroup oracles on polynomials
    let dom = dom1(-8.0, 8.0);
    let tau = 0.3;
    let shifted = ou_apply(&GaussFn::Expr(expr1("x1 + 9")), tau, &dom, &[321], &space)
        .map_err(|e| e.to_string())?;
    for (i, &v) in shifted.values().iter().enumerate() {
        let x = shifted.node(i)[0];
        let want = (-tau).exp() * x + 9.0;
        ensure!(
            (v - want).abs() <= 1e-6,
            "linear evolution at {x}: {v} vs {want}"
        );
    }
    let squared = ou_apply(&GaussFn::Expr(expr1("x1^2")), tau, &dom, &[321], &space)
        .map_err(|e| e.to_string())?;
    for (i, &v) in squared.values().iter().enumerate() {
        let x = squared.node(i)[0];
        let decay = (-2.0 * tau).exp();
        let want = decay * x * x + (1.0 - decay);
        ensure!(
            (v - want).abs() <= 1e-6,
            "quadratic evolution at {x}: {v} vs {want}"
        );
    }

    // composing two steps matches one long step; the intermediate grid is
    // wider than the comparison window because the second step reads it at
    // e^{-tau} x + (1 - e^{-2 tau})^{1/2} y for quadrature offsets y
    let res_fine = [8193];
    let wide = dom1(-16.0, 16.0);
    let first = ou_apply(&GaussFn::Expr(expr1("x1^2")), 0.3, &wide, &[16385], &space)
        .map_err(|e| e.to_string())?;
    let composed = ou_apply(&GaussFn::Grid(first), 0.2, &dom, &res_fine, &space)
        .map_err(|e| e.to_string())?;
    let direct = ou_apply(&GaussFn::Expr(expr1("x1^2")), 0.5, &dom, &res_fine, &space)
        .map_err(|e| e.to_string())?;
    let sup = composed
        .values()
        .iter()
        .zip(direct.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    ensure!(sup <= 1e-6, "semigroup composition sup error {sup}");
    Ok(())
}

// --- 10: determinism, exit codes, parser robustness -------------------------

fn criterion_10_infrastructure() -> Check {
    // bundled scenarios drive the exit-code contract
    let green = scenario_path("prekopa_gaussian.json");
    let out = run_binary(&["check", "--scenario", green.to_str().unwrap()]);
    ensure!(
        out.status.code() == Some(0),
        "green scenario exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );

    let red = scenario_path("bimodal_counterexample.json");
    let out_red = run_binary(&["check", "--scenario", red.to_str().unwrap()]);
    ensure!(
        out_red.status.code() == Some(1),
        "red scenario exited {:?}",
        out_red.status.code()
    );
    let report: serde_json::Value =
        serde_json::from_slice(&out_red.stdout).map_err(|e| e.to_string())?;
    let has_witness = report["checks"]
        .as_array()
        .ok_or("no checks in report")?
        .iter()
        .any(|c| {
            c["verdict"] == "fail" && !c["witness"].as_array().map_or(true, Vec::is_empty)
        });
    ensure!(has_witness, "red scenario has no located witness");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, b"{\"checks\": [").map_err(|e| e.to_string())?;
    let out = run_binary(&["check", "--scenario", bad.to_str().unwrap()]);
    ensure!(
        out.status.code() == Some(2),
        "malformed scenario exited {:?}",
        out.status.code()
    );
    ensure!(!out.stderr.is_empty(), "no diagnostic on standard error");

    // the same seeds give byte-identical reports once timing is zeroed
    let mut dumps = Vec::new();
    for _ in 0..2 {
        let out = run_binary(&["check", "--scenario", red.to_str().unwrap()]);
        let mut v: serde_json::Value =
            serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
        for c in v["checks"].as_array_mut().ok_or("no checks")? {
            c["millis"] = serde_json::Value::from(0u64);
        }
        dumps.push(serde_json::to_string(&v).map_err(|e| e.to_string())?);
    }
    ensure!(dumps[0] == dumps[1], "reports differ beyond timing");

    // the scenario parser survives ten thousand hostile inputs
    let template = std::fs::read(&green).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    for i in 0..10_000u32 {
        let bytes: Vec<u8> = if i % 5 < 3 {
            let len: usize = rng.random_range(0..=1000);
            (0..len).map(|_| rng.random_range(0..=255u8)).collect()
        } else {
            let mut b = template.clone();
            for _ in 0..rng.random_range(1..8) {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random_range(0..=255u8);
            }
            b
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            if let Ok(s) = prekopa_cli::scenario::parse(&bytes) {
                let _ = prekopa_cli::scenario::validate(&s);
                let _ = prekopa_cli::scenario::canonical_json(&s);
            }
        }));
        ensure!(outcome.is_ok(), "parser panicked on fuzz input {i}");
    }
    Ok(())
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("product-form integral inequality", criterion_1_prekopa_leindler),
        ("set-combination inequality", criterion_2_brunn_minkowski),
        ("closure constructions", criterion_3_closure),
        ("smoothing bound", criterion_4_smoothing_bound),
        ("entropy-energy inequality", criterion_5_log_sobolev),
        ("transport contraction", criterion_6_contraction),
        ("Jacobian calculus", criterion_7_jacobian),
        ("mixture inequality", criterion_8_mixture),
        ("weighted concavity preservation", criterion_9_preservation),
        ("infrastructure", criterion_10_infrastructure),
    ];
    let mut lines = Vec::new();
    let mut all_ok = true;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(())) => None,
            Ok(Err(msg)) => Some(msg),
            Err(panic) => Some(match panic.downcast_ref::<&str>() {
                Some(s) => format!("panic: {s}"),
                None => match panic.downcast_ref::<String>() {
                    Some(s) => format!("panic: {s}"),
                    None => "panic".into(),
                },
            }),
        };
        let secs = started.elapsed().as_secs_f64();
        let line = match outcome {
            None => format!("[PASS] {:2}. {name} ({secs:.2}s)", i + 1),
            Some(msg) => {
                all_ok = false;
                format!("[FAIL] {:2}. {name} ({secs:.2}s): {msg}", i + 1)
            }
        };
        println!("{line}");
        lines.push(line);
    }
    assert!(all_ok, "acceptance criteria failed:\n{}", lines.join("\n"));
}
