//! The modified norm and the exponential functionals.
//!
//! On meshes the integrals apply a symmetric 7-point degree-5 rule to the P1
//! interpolant on every triangle; on the torus they apply the trapezoidal rule
//! on the collocation grid. Load vectors use the same quadrature, so the
//! discrete Euler-Lagrange system is exactly the critical-point condition of
//! the discrete functional.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Geometry};
use crate::forms::{QuadForm, CHUNK};
use crate::mesh::Point;

/// Exponents above this are summed in log domain.
pub const OVERFLOW_EXPONENT: f64 = 700.0;

/// Radon's 7-point rule: barycentric coordinates and weights (sum 1).
pub fn seven_point_rule() -> [([f64; 3], f64); 7] {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let w1 = (155.0 - s15) / 1200.0;
    let w2 = (155.0 + s15) / 1200.0;
    let third = 1.0 / 3.0;
    [
        ([third, third, third], 9.0 / 40.0),
        ([1.0 - 2.0 * a1, a1, a1], w1),
        ([a1, 1.0 - 2.0 * a1, a1], w1),
        ([a1, a1, 1.0 - 2.0 * a1], w1),
        ([1.0 - 2.0 * a2, a2, a2], w2),
        ([a2, 1.0 - 2.0 * a2, a2], w2),
        ([a2, a2, 1.0 - 2.0 * a2], w2),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// 7-point degree-5 rule on the P1 interpolant.
    #[default]
    Degree5,
    /// Vertex lumping; for cross-checks only, it underestimates sharp peaks.
    Lumped,
}

/// Value of an exponential integral, kept in log domain as well so that
/// overflowing integrands stay comparable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpIntegral {
    /// `exp(log_value)`; infinite only when the integral exceeds `f64::MAX`.
    pub value: f64,
    pub log_value: f64,
    pub overflow_regime: bool,
}

/// Quadrature points of a geometry with the field sampled there.
#[derive(Debug, Clone)]
pub struct QuadSamples {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub values: Vec<f64>,
}

/// Samples `u` at the quadrature points of its geometry.
pub fn quadrature_samples(u: &Field, mode: Quadrature) -> QuadSamples {
    match u.geometry() {
        Geometry::Planar(mesh) => {
            let c = u.coeffs();
            let rule = seven_point_rule();
            let mut s = QuadSamples {
                points: Vec::new(),
                weights: Vec::new(),
                values: Vec::new(),
            };
            for (t, tri) in mesh.triangles().iter().enumerate() {
                let p = mesh.triangle_points(t);
                let area = mesh.signed_area(t);
                match mode {
                    Quadrature::Degree5 => {
                        for (l, w) in rule {
                            s.points.push([
                                l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                                l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
                            ]);
                            s.weights.push(w * area);
                            s.values.push(l[0] * c[tri[0]] + l[1] * c[tri[1]] + l[2] * c[tri[2]]);
                        }
                    }
                    Quadrature::Lumped => {
                        for k in 0..3 {
                            s.points.push(p[k]);
                            s.weights.push(area / 3.0);
                            s.values.push(c[tri[k]]);
                        }
                    }
                }
            }
            s
        }
        Geometry::Torus(g) => {
            let values = g.to_grid(u.coeffs());
            let w = g.area() / g.num_modes() as f64;
            QuadSamples {
                points: (0..g.num_modes()).map(|i| g.grid_point(i)).collect(),
                weights: vec![w; g.num_modes()],
                values,
            }
        }
    }
}

/// `int f(u)` with the geometry's quadrature; sums are reduced in a fixed
/// chunk order.
pub fn integrate_map(u: &Field, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    integrate_map_with(u, Quadrature::Degree5, f)
}

pub fn integrate_map_with(u: &Field, mode: Quadrature, f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let s = quadrature_samples(u, mode);
    chunked_sum(&s.weights, &s.values, |w, v| w * f(v))
}

fn chunked_sum(weights: &[f64], values: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
    let partial: Vec<f64> = weights
        .par_chunks(CHUNK)
        .zip(values.par_chunks(CHUNK))
        .map(|(w, v)| w.iter().zip(v).map(|(&a, &b)| f(a, b)).sum::<f64>())
        .collect();
    partial.iter().sum()
}

/// `int e^{beta u^2}`.
pub fn exp_functional(u: &Field, beta: f64) -> Result<ExpIntegral> {
    exp_functional_with(u, beta, Quadrature::Degree5)
}

pub fn exp_functional_with(u: &Field, beta: f64, mode: Quadrature) -> Result<ExpIntegral> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidInput(format!("beta = {beta} must be nonnegative")));
    }
    let s = quadrature_samples(u, mode);
    let exponents: Vec<f64> = s.values.iter().map(|v| beta * v * v).collect();
    Ok(exp_sum(&s.weights, &exponents))
}

/// `sum_i w_i e^{t_i}`, in log domain when the exponents are large.
pub fn exp_sum(weights: &[f64], exponents: &[f64]) -> ExpIntegral {
    let t_max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if t_max > OVERFLOW_EXPONENT {
        let scaled = chunked_sum(weights, exponents, |w, t| w * (t - t_max).exp());
        let log_value = t_max + scaled.ln();
        ExpIntegral {
            value: log_value.exp(),
            log_value,
            overflow_regime: true,
        }
    } else {
        let value = chunked_sum(weights, exponents, |w, t| w * t.exp());
        ExpIntegral {
            value,
            log_value: value.ln(),
            overflow_regime: false,
        }
    }
}

/// `u^T K u - alpha u^T M u` on the dofs of `u`.
pub fn norm_1alpha_sq_dofs(dofs: &[f64], alpha: f64, forms: &QuadForm) -> f64 {
    forms.energy(dofs) - alpha * forms.l2_sq(dofs)
}

/// `||u||_{1,alpha} = sqrt(int |grad u|^2 - alpha int u^2)`.
pub fn norm_1alpha(u: &Field, alpha: f64, forms: &QuadForm) -> Result<f64> {
    let d = forms.restrict(u)?;
    norm_1alpha_dofs(&d, alpha, forms)
}

pub fn norm_1alpha_dofs(dofs: &[f64], alpha: f64, forms: &QuadForm) -> Result<f64> {
    let k = forms.energy(dofs);
    let q = k - alpha * forms.l2_sq(dofs);
    if q < -1e-12 * k {
        return Err(Error::AlphaAboveThreshold { value: q });
    }
    Ok(q.max(0.0).sqrt())
}

/// `int e^{4 pi u^2 (1 + alpha ||u||_2^2)}`.
pub fn adimurthi_druet_functional(u: &Field, alpha: f64, forms: &QuadForm) -> Result<ExpIntegral> {
    let d = forms.restrict(u)?;
    let l2 = forms.l2_sq(&d);
    exp_functional(u, 4.0 * std::f64::consts::PI * (1.0 + alpha * l2))
}

/// Load vector `b_i = int phi_i f(u)` on the dofs, using the same quadrature
/// as [`exp_functional`].
pub fn load_vector(u: &Field, forms: &QuadForm, f: impl Fn(f64) -> f64 + Sync) -> Result<Vec<f64>> {
    if !u.geometry().same_as(forms.geometry()) {
        return Err(Error::GeometryMismatch);
    }
    let full = match u.geometry() {
        Geometry::Planar(mesh) => {
            let c = u.coeffs();
            let rule = seven_point_rule();
            let mut out = vec![0.0; mesh.num_vertices()];
            for (t, tri) in mesh.triangles().iter().enumerate() {
                let area = mesh.signed_area(t);
                for (l, w) in rule {
                    let v = l[0] * c[tri[0]] + l[1] * c[tri[1]] + l[2] * c[tri[2]];
                    let fv = w * area * f(v);
                    for k in 0..3 {
                        out[tri[k]] += l[k] * fv;
                    }
                }
            }
            out
        }
        Geometry::Torus(g) => {
            let vals: Vec<f64> = g.to_grid(u.coeffs()).into_iter().map(&f).collect();
            g.load_from_grid(&vals)
        }
    };
    Ok(forms.restrict_load(&full))
}
