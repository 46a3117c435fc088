use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use tmlab_core::functional::{quadrature_samples, Quadrature};
use tmlab_core::*;

struct Fixture {
    forms: Arc<QuadForm>,
    basis: EigenBasis,
}

fn disc() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let g = Geometry::planar(build_disc_mesh(1.0, 2).unwrap());
        let forms = Arc::new(assemble(&g).unwrap());
        let basis = eigenpairs_with(forms.clone(), 4, &EigenOptions::default()).unwrap();
        Fixture { forms, basis }
    })
}

fn square() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let g = Geometry::planar(build_polygon_mesh(&sq, 2).unwrap());
        let forms = Arc::new(assemble(&g).unwrap());
        let basis = eigenpairs_with(forms.clone(), 6, &EigenOptions::default()).unwrap();
        Fixture { forms, basis }
    })
}

fn torus() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let g = Geometry::Torus(TorusGrid::new(1.0, 8).unwrap());
        let forms = Arc::new(assemble(&g).unwrap());
        let basis = eigenpairs_with(forms.clone(), 8, &EigenOptions::default()).unwrap();
        Fixture { forms, basis }
    })
}

fn field_from(f: &Fixture, raw: &[f64]) -> Field {
    let n = f.forms.num_dofs();
    let d: Vec<f64> = (0..n).map(|i| raw[i % raw.len()] * (1.0 + (i / raw.len()) as f64).recip()).collect();
    f.forms.extend(&d)
}

fn raw_dofs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 8..40).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_is_homogeneous(raw in raw_dofs(), t in -20.0f64..20.0, frac in 0.0f64..0.99) {
        let f = disc();
        let alpha = frac * f.basis.eigenvalues()[0];
        let u = field_from(f, &raw);
        let n = norm_1alpha(&u, alpha, &f.forms).unwrap();
        let nt = norm_1alpha(&u.scaled(t), alpha, &f.forms).unwrap();
        prop_assert!((nt - t.abs() * n).abs() <= 1e-12 * (t.abs() * n).max(1e-300));
    }

    #[test]
    fn exp_functional_monotone_in_beta(raw in raw_dofs(), b1 in 0.0f64..30.0, db in 0.0f64..30.0) {
        let f = disc();
        let u = field_from(f, &raw);
        let vol = f.forms.geometry().volume();
        let lo = exp_functional(&u, b1).unwrap();
        let hi = exp_functional(&u, b1 + db).unwrap();
        prop_assert!(hi.log_value >= lo.log_value);
        prop_assert!(lo.value >= vol * (1.0 - 1e-14));
    }

    #[test]
    fn torus_exp_functional_at_least_area(raw in raw_dofs(), b in 0.0f64..50.0) {
        let f = torus();
        let u = field_from(f, &raw);
        prop_assert!(exp_functional(&u, b).unwrap().value >= 1.0 - 1e-14);
    }

    #[test]
    fn projector_idempotent_and_coercive(raw in raw_dofs(), ell in 0usize..3) {
        let f = square();
        let u = field_from(f, &raw);
        let p = project_perp(&u, &f.basis, ell).unwrap();
        let pp = project_perp(&p, &f.basis, ell).unwrap();
        let d = f.forms.restrict(&p).unwrap();
        let dd = f.forms.restrict(&pp).unwrap();
        let diff: Vec<f64> = d.iter().zip(&dd).map(|(a, b)| a - b).collect();
        prop_assert!(f.forms.l2_sq(&diff).sqrt() <= 1e-12 * f.forms.l2_sq(&d).sqrt().max(1e-300));
        let lam = f.basis.eigenvalues()[ell];
        let k = f.forms.energy(&d);
        let m = f.forms.l2_sq(&d);
        prop_assert!(k >= lam * m * (1.0 - 5.0 * f.basis.grouping_tol()));
        for c in f.basis.coefficients(&p, ell).unwrap() {
            prop_assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn torus_projection_stays_mean_free(raw in raw_dofs(), ell in 0usize..3) {
        let f = torus();
        let mut d = f.forms.restrict(&field_from(f, &raw)).unwrap();
        d[f.forms.constant_dof().unwrap()] = 0.0;
        let u = f.forms.extend(&d);
        let p = project_perp(&u, &f.basis, ell).unwrap();
        let mean = tmlab_core::functional::integrate_map(&p, |v| v);
        prop_assert!(mean.abs() < 1e-12);
    }

    // 1 + a <= 1/(1 - a) at every quadrature point
    #[test]
    fn adimurthi_druet_integrand_below_normalized(raw in raw_dofs(), grad in 0.05f64..1.0, frac in 0.0f64..0.95) {
        let f = disc();
        let alpha = frac * f.basis.eigenvalues()[0];
        let u0 = field_from(f, &raw);
        let g0 = f.forms.energy(&f.forms.restrict(&u0).unwrap()).sqrt();
        let u = u0.scaled(grad / g0);
        let d = f.forms.restrict(&u).unwrap();
        let l2 = f.forms.l2_sq(&d);
        let n2 = f.forms.energy(&d) - alpha * l2;
        prop_assume!(n2 > 0.0);
        let s = quadrature_samples(&u, Quadrature::Degree5);
        for v in &s.values {
            let ad = 4.0 * PI * v * v * (1.0 + alpha * l2);
            let normalized = 4.0 * PI * v * v / n2;
            prop_assert!(ad <= normalized * (1.0 + 1e-14));
        }
        let lhs = adimurthi_druet_functional(&u, alpha, &f.forms).unwrap();
        let rhs = exp_functional(&u.scaled(n2.sqrt().recip()), 4.0 * PI).unwrap();
        prop_assert!(lhs.value <= rhs.value * (1.0 + 1e-10));
    }

    #[test]
    fn certificate_shift_doubles_cap_term(a in -0.5f64..0.5, vol in 0.1f64..10.0) {
        let base = blowup::certificate(vol, a) - vol;
        let shifted = blowup::certificate(vol, a + 2f64.ln() / (4.0 * PI)) - vol;
        prop_assert!(rel(shifted, 2.0 * base) < 1e-13);
    }

    #[test]
    fn constants_linear_in_a(log_eps in -30.0f64..-3.5, a in -0.3f64..0.3) {
        let eps = log_eps.exp();
        let k0 = compute_constants(eps, 0.0, 0.0).unwrap();
        let k1 = compute_constants(eps, a, 0.0).unwrap();
        prop_assert!((k1.c2 - k0.c2 - a).abs() < 1e-12);
    }
}
