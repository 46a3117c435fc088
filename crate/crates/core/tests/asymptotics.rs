//! Asymptotic checks of the test-function margin, with the second-order cap
//! coefficient computed by an independent radial quadrature.

use std::f64::consts::PI;

use tmlab_core::*;

/// `int_{R^2} e^{8 pi w} (w + 1/(4 pi))^2` with `w = -log(1 + pi s^2)/(4 pi)`,
/// by composite Simpson in `u = log(1 + pi s^2)` truncated at `u = 60`.
fn cap_second_moment() -> f64 {
    // dx = pi d(s^2) = e^u du, e^{8 pi w} = e^{-2u}
    let f = |u: f64| (-u).exp() * ((1.0 - u) / (4.0 * PI)).powi(2);
    let n = 60_000;
    let h = 60.0 / n as f64;
    let mut s = f(0.0) + f(60.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn second_moment_oracle() {
    assert!((cap_second_moment() - 1.0 / (16.0 * PI * PI)).abs() < 1e-12);
}

#[test]
fn margin_follows_second_order_expansion() {
    let eps = 1e-30;
    let mut grading = Grading::new([0.0, 0.0], eps / 32.0);
    grading.growth = 0.05;
    let mesh = build_disc_mesh(1.0, 3).unwrap().refine_toward(&grading);
    let g = Geometry::planar(mesh);
    let forms = assemble(&g).unwrap();
    let green = solve_green_planar(&forms, [0.0, 0.0], 0.0, None, 0, &FitOptions::default()).unwrap();
    let tf = build_test_function(&green, eps).unwrap();
    let rep = lower_bound_report(&tf, &green, &forms).unwrap();
    assert!(rep.verdict);
    let expanded = 4.0 * PI * rep.green_l2_sq + 4.0 * PI * PI * (1.0 + 4.0 * PI * rep.a).exp() * cap_second_moment();
    assert!((expanded - rep.expanded_margin_c2).abs() < 1e-10);
    // the first-order term is only a lower bound
    assert!(rep.margin_c2 > rep.predicted_margin_c2);
    assert!(rep.leading_order_disagreement);
    assert!((rep.margin_c2 / expanded - 1.0).abs() < 0.05, "{rep:?}");
}
