//! Moser-type test functions concentrating at a pole, and their lower bound
//! against the threshold `|Omega| + pi e^{1 + 4 pi A}`.
//!
//! With `R = -log eps` the function is
//!
//! * `c + (-(1/4 pi) log(1 + pi r^2/eps^2) + B)/c` for `r <= R eps`,
//! * `(G - eta psi)/c` for `R eps < r < 2 R eps`,
//! * `G/c` beyond,
//!
//! where `psi = G + (1/2 pi) log r - A` and `eta` is a quintic ramp from 1 to 0.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Geometry};
use crate::forms::QuadForm;
use crate::functional::{norm_1alpha_dofs, quadrature_samples, Quadrature};
use crate::green::GreenResult;
use crate::mesh::Point;
use crate::spectrum::EigenBasis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFnConstants {
    pub epsilon: f64,
    /// `R = -log eps`.
    pub big_r: f64,
    pub c2: f64,
    /// Leading-order `B = 1/(4 pi)`.
    pub b: f64,
    /// `B` that makes the cap and the outer branch agree at `r = R eps`.
    pub b_matched: f64,
    /// Jump (cap minus outer) at `r = R eps` when the leading-order `B` is
    /// used: `-(1/4 pi) log(1 + 1/(pi R^2)) / c`.
    pub continuity_defect: f64,
    pub a: f64,
    pub alpha: f64,
}

impl TestFnConstants {
    pub fn c(&self) -> f64 {
        self.c2.sqrt()
    }

    pub fn cap_radius(&self) -> f64 {
        self.big_r * self.epsilon
    }
}

/// Leading-order constants `c^2 = -log eps/(2 pi) + log pi/(4 pi) - 1/(4 pi) + A`
/// and `B = 1/(4 pi)`.
pub fn compute_constants(epsilon: f64, a: f64, alpha: f64) -> Result<TestFnConstants> {
    if !(epsilon > 0.0) || epsilon >= (-3.0f64).exp() {
        return Err(Error::NotAsymptotic(epsilon));
    }
    let big_r = -epsilon.ln();
    let c2 = -epsilon.ln() / (2.0 * PI) + PI.ln() / (4.0 * PI) - 1.0 / (4.0 * PI) + a;
    if !(c2 > 0.0) {
        return Err(Error::ScaleViolation(format!("c^2 = {c2} is not positive")));
    }
    let b = 1.0 / (4.0 * PI);
    let gap = (1.0 + 1.0 / (PI * big_r * big_r)).ln() / (4.0 * PI);
    Ok(TestFnConstants {
        epsilon,
        big_r,
        c2,
        b,
        b_matched: b + gap,
        continuity_defect: -gap / c2.sqrt(),
        a,
        alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Cap,
    Blend,
    Tail,
}

#[derive(Debug, Clone)]
pub struct TestFunction {
    pub field: Field,
    pub constants: TestFnConstants,
    pub pole: Point,
    /// Branch of every sampling node.
    pub branches: Vec<Branch>,
}

/// `1 - (10 s^3 - 15 s^4 + 6 s^5)` on `[0, 1]`: C^2 ramp from 1 down to 0.
pub fn cutoff(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Value of the test function at distance `r` from the pole given `G` there.
pub fn profile(k: &TestFnConstants, r: f64, g: f64) -> (f64, Branch) {
    let c = k.c();
    let re = k.cap_radius();
    if r <= re {
        let cap = -(1.0 + PI * (r / k.epsilon).powi(2)).ln() / (4.0 * PI) + k.b_matched;
        (c + cap / c, Branch::Cap)
    } else if r < 2.0 * re {
        let psi = g + r.ln() / (2.0 * PI) - k.a;
        ((g - cutoff((r - re) / re) * psi) / c, Branch::Blend)
    } else {
        (g / c, Branch::Tail)
    }
}

/// Samples the test function at the nodes of the Green function's geometry.
pub fn build_test_function(green: &GreenResult, epsilon: f64) -> Result<TestFunction> {
    let k = compute_constants(epsilon, green.regular_part, green.alpha)?;
    let geom = green.field.geometry();
    let x0 = green.pole;
    let re = k.cap_radius();
    let (limit, what) = match geom {
        Geometry::Planar(m) => (m.boundary_distance(x0) / 4.0, "dist(pole, boundary)/4"),
        Geometry::Torus(g) => (g.side() / 8.0, "L/8"),
    };
    if re >= limit {
        return Err(Error::ScaleViolation(format!("R eps = {re:e} must be below {what} = {limit:e}")));
    }
    let h = geom.local_h(x0);
    if re <= 4.0 * h {
        return Err(Error::ScaleViolation(format!(
            "R eps = {re:e} must exceed 4 h_loc = {:e}; refine near the pole",
            4.0 * h
        )));
    }
    let g_nodes = green.field.node_values();
    let mut branches = Vec::with_capacity(g_nodes.len());
    let mut values = Vec::with_capacity(g_nodes.len());
    for (i, &g) in g_nodes.iter().enumerate() {
        let p = green.field.node_point(i);
        let (v, b) = profile(&k, geom.distance(x0, p), g);
        values.push(v);
        branches.push(b);
    }
    let field = match geom {
        Geometry::Planar(m) => {
            for (v, &bd) in values.iter_mut().zip(m.boundary_flags()) {
                if bd {
                    *v = 0.0;
                }
            }
            Field::new(geom.clone(), values)?
        }
        Geometry::Torus(_) => {
            let grid = geom.torus().expect("torus");
            let mut c = grid.from_grid(&values);
            for (i, ci) in c.iter_mut().enumerate() {
                if grid.is_nyquist(i) {
                    *ci = 0.0;
                }
            }
            Field::new(geom.clone(), c)?
        }
    };
    Ok(TestFunction {
        field,
        constants: k,
        pole: x0,
        branches,
    })
}

#[derive(Debug, Clone)]
pub struct Projected {
    pub field: Field,
    /// `(phi, e_ij)_M` before projection, in group order.
    pub coefficients: Vec<f64>,
    /// Mean removed on the torus.
    pub mean: Option<f64>,
    /// `||phi||_{1,alpha}` after projection and before scaling.
    pub norm_before: f64,
    /// Energy seminorm of (result - input).
    pub h1_change: f64,
}

/// Removes the mean (torus) and the first `ell` eigenspace components, then
/// scales to `||.||_{1,alpha} = 1`.
pub fn project_and_renormalize(phi: &Field, basis: Option<&EigenBasis>, ell: usize, forms: &QuadForm, alpha: f64) -> Result<Projected> {
    let orig = forms.restrict(phi)?;
    let mut d = orig.clone();
    let mean = forms.constant_dof().map(|c| {
        let side = forms.geometry().torus().expect("torus").side();
        let m = d[c] / side;
        d[c] = 0.0;
        m
    });
    let coefficients = match (basis, ell) {
        (_, 0) => Vec::new(),
        (Some(b), _) => {
            let co = b.coefficients(&forms.extend(&d), ell)?;
            b.project_dofs(&mut d, ell);
            co
        }
        (None, _) => return Err(Error::InvalidInput("ell > 0 needs an eigenbasis".into())),
    };
    let n = norm_1alpha_dofs(&d, alpha, forms)?;
    if !(n > 0.0) {
        return Err(Error::InvalidInput("field has zero norm after projection".into()));
    }
    d.iter_mut().for_each(|x| *x /= n);
    let diff: Vec<f64> = d.iter().zip(&orig).map(|(a, b)| a - b).collect();
    Ok(Projected {
        field: forms.extend(&d),
        coefficients,
        mean,
        norm_before: n,
        h1_change: forms.energy(&diff).max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub epsilon: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub c2: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "A")]
    pub a: f64,
    pub cap_integral: f64,
    pub tail_integral: f64,
    pub total: f64,
    pub threshold: f64,
    pub margin: f64,
    pub verdict: bool,
    /// `||phi||_{1,alpha}` of the unnormalized test function.
    pub norm_unnormalized: f64,
    pub volume: f64,
    /// `int G^2`.
    pub green_l2_sq: f64,
    /// `margin * c^2`.
    pub margin_c2: f64,
    /// Leading-order prediction `4 pi int G^2` for `margin * c^2`.
    pub predicted_margin_c2: f64,
    /// True when `margin_c2` and its prediction differ by more than 20%.
    pub leading_order_disagreement: bool,
    /// `4 pi int G^2 + e^{1 + 4 pi A} / 4`: the prediction above plus the
    /// cap contribution of the `(w + B)^2 / c^2` term in `phi^2`, whose mean
    /// under the bubble density `e^{8 pi w}` is `1 / (16 pi^2)`.
    pub expanded_margin_c2: f64,
}

/// `|Omega| + pi e^{1 + 4 pi A}`.
pub fn threshold(volume: f64, a: f64) -> f64 {
    volume + PI * (1.0 + 4.0 * PI * a).exp()
}

/// Renormalizes the test function (after removing the mean on the torus) and
/// integrates `e^{4 pi phi^2}` over the cap `r <= R eps` and the rest.
pub fn lower_bound_report(tf: &TestFunction, green: &GreenResult, forms: &QuadForm) -> Result<LowerBoundReport> {
    let k = &tf.constants;
    let alpha = green.alpha;
    let raw = forms.restrict(&tf.field)?;
    let norm_unnormalized = norm_1alpha_dofs(&raw, alpha, forms)?;
    let phi = project_and_renormalize(&tf.field, None, 0, forms, alpha)?.field;
    let geom = phi.geometry();
    let s = quadrature_samples(&phi, Quadrature::Degree5);
    let re = k.cap_radius();
    let (mut cap, mut tail) = (0.0, 0.0);
    for ((p, w), v) in s.points.iter().zip(&s.weights).zip(&s.values) {
        let term = w * (4.0 * PI * v * v).exp();
        if geom.distance(tf.pole, *p) <= re {
            cap += term;
        } else {
            tail += term;
        }
    }
    let volume = geom.volume();
    let total = cap + tail;
    let thr = threshold(volume, k.a);
    let margin = total - thr;
    let predicted = 4.0 * PI * green.l2_norm_sq;
    let margin_c2 = margin * k.c2;
    Ok(LowerBoundReport {
        epsilon: k.epsilon,
        big_r: k.big_r,
        c2: k.c2,
        b: k.b_matched,
        a: k.a,
        cap_integral: cap,
        tail_integral: tail,
        total,
        threshold: thr,
        margin,
        verdict: margin > 0.0,
        norm_unnormalized,
        volume,
        green_l2_sq: green.l2_norm_sq,
        margin_c2,
        predicted_margin_c2: predicted,
        leading_order_disagreement: (margin_c2 - predicted).abs() > 0.2 * predicted.abs(),
        expanded_margin_c2: predicted + (1.0 + 4.0 * PI * k.a).exp() / 4.0,
    })
}
