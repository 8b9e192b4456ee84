//! Parameterized families with closed forms: the closure operations are
//! compared against exact answers, not just re-checked for log-concavity.

use approx::assert_relative_eq;
use prekopa_core::logconcave::{
    check_logconcave, check_slc_grid, convolve, gaussian_smooth, marginalize, mask_measure,
    minkowski_combine, slc_delta_bound, sup_convolution, GridMask, MidpointConfig,
};
use prekopa_core::measure::{product_measure, weight_by_convex};
use prekopa_core::{BoxDomain, Expr, GridDensity};

fn dom1(r: f64) -> BoxDomain {
    BoxDomain::new(vec![-r], vec![r]).unwrap()
}

fn gaussian(mu: f64, var: f64, r: f64, res: usize) -> GridDensity {
    GridDensity::from_fn(dom1(r), vec![res], |x| {
        Ok((-(x[0] - mu) * (x[0] - mu) / (2.0 * var)).exp())
    })
    .unwrap()
}

#[test]
fn gaussian_convolutions_match_the_closed_form() {
    let r = 12.0;
    let res = 385; // spacing 1/16
    let tau = std::f64::consts::TAU;
    for (m1, v1, m2, v2) in [
        (0.0, 1.0, 0.0, 1.0),
        (1.0, 0.64, -2.0, 2.25),
        (0.5, 4.0, 0.5, 0.36),
    ] {
        let f = gaussian(m1, v1, r, res);
        let g = gaussian(m2, v2, r, res);
        let conv = convolve(&f, &g, 1.0, None).unwrap();
        let (ms, vs) = (m1 + m2, v1 + v2);
        let amp = (tau * v1 * v2 / vs).sqrt();
        let mut worst = 0.0f64;
        for flat in 0..conv.len() {
            let x = conv.node(flat)[0];
            if (x - ms).abs() > 3.0 * vs.sqrt() {
                continue;
            }
            let want = amp * (-(x - ms) * (x - ms) / (2.0 * vs)).exp();
            worst = worst.max(((conv.value(flat) - want) / want).abs());
        }
        assert!(
            worst <= 1e-4,
            "variances {v1}+{v2}: worst relative error {worst:.3e}"
        );
    }
}

#[test]
fn smoothing_a_gaussian_adds_the_variance() {
    let base = gaussian(0.0, 1.0, 10.0, 641);
    for var in [0.25, 1.0, 4.0] {
        let smoothed = gaussian_smooth(&base, var).unwrap();
        let scale = 1.0 / (1.0 + var).sqrt();
        let mut worst = 0.0f64;
        for flat in 0..smoothed.len() {
            let x = smoothed.node(flat)[0];
            if x.abs() > 3.0 * (1.0 + var).sqrt() {
                continue;
            }
            let want = scale * (-x * x / (2.0 * (1.0 + var))).exp();
            worst = worst.max(((smoothed.value(flat) - want) / want).abs());
        }
        assert!(worst <= 1e-4, "variance {var}: worst relative error {worst:.3e}");
    }
}

#[test]
fn sup_convolution_of_a_density_with_itself_is_itself() {
    let r = 8.0;
    let res = 257;
    let shapes: Vec<(&str, GridDensity)> = vec![
        ("gaussian", gaussian(0.0, 1.0, r, res)),
        (
            "laplace",
            GridDensity::from_fn(dom1(r), vec![res], |x| Ok((-x[0].abs()).exp())).unwrap(),
        ),
        (
            "quartic",
            GridDensity::from_fn(dom1(r), vec![res], |x| {
                Ok((-x[0] * x[0] / 2.0 - x[0].powi(4) / 4.0).exp())
            })
            .unwrap(),
        ),
    ];
    for s in [0.25, 0.5, 0.75] {
        for (name, g) in &shapes {
            let k = sup_convolution(g, g, s).unwrap();
            for flat in 0..k.len() {
                let (a, b) = (k.value(flat), g.value(flat));
                assert!(
                    (a - b).abs() <= 1e-12 * (1.0 + b),
                    "{name} at s={s}, node {flat}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn interval_combination_is_interval_arithmetic() {
    let res = 1025;
    let dom = dom1(8.0);
    let flat = GridDensity::from_fn(dom.clone(), vec![res], |_| Ok(1.0)).unwrap();
    let h = flat.spacing(0);
    let mask = |lo: f64, hi: f64| {
        GridMask::from_boxes(&dom, &[res], &[BoxDomain::new(vec![lo], vec![hi]).unwrap()])
            .unwrap()
    };
    for (a0, a1, b0, b1, s) in [
        (0.0, 2.0, 4.0, 6.0, 0.5),
        (-1.0, 0.0, 0.0, 4.0, 0.25),
        (-3.0, -1.0, 1.0, 2.0, 0.75),
    ] {
        let t = 1.0 - s;
        let combined = minkowski_combine(&mask(a0, a1), &mask(b0, b1), s).unwrap();
        let direct = mask(s * a0 + t * b0, s * a1 + t * b1);
        assert_eq!(combined.count(), direct.count(), "node counts at s={s}");
        let length = (s * a1 + t * b1) - (s * a0 + t * b0);
        let measured = mask_measure(&flat, &combined).unwrap();
        assert!(
            (measured - length).abs() <= 2.0 * h,
            "measure {measured} vs length {length}"
        );
    }
}

#[test]
fn marginal_of_a_product_recovers_the_factor() {
    let f = gaussian(0.5, 1.0, 6.0, 97);
    let g = GridDensity::from_fn(dom1(6.0), vec![65], |x| Ok((-x[0].abs()).exp())).unwrap();
    let p = product_measure(&f, &g).unwrap();
    let m = marginalize(&p, &[0]).unwrap();
    assert_eq!(m.resolution(), f.resolution());
    for flat in 0..m.len() {
        assert_relative_eq!(
            m.value(flat),
            f.value(flat) * g.mass(),
            max_relative = 1e-12
        );
    }
}

#[test]
fn weight_then_smooth_keeps_certified_convexity() {
    let base = gaussian(0.0, 1.0, 6.0, 241);
    let weighted = weight_by_convex(&base, &Expr::parse("x1^4/4", 1).unwrap()).unwrap();
    let var = 0.25;
    let smoothed = gaussian_smooth(&weighted, var).unwrap();
    let cfg = MidpointConfig::new(1e-6, 400, 17);
    assert!(check_logconcave(&smoothed, &cfg).passed());
    // the weighted measure keeps the base's convexity constant 1, so the
    // smoothed one certifies strictly below the degradation bound
    let delta = 0.98 * slc_delta_bound(1.0, var).unwrap();
    let cert = check_slc_grid(&smoothed, delta, &cfg).unwrap();
    assert!(cert.valid(), "margin {}", cert.margin());
}
