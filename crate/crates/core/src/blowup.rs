//! Concentration diagnostics for maximizer families: the bubble profile,
//! blow-up rescaling, the energy split around the peak, and the upper-bound
//! certificate `|Omega| + pi e^{1 + 4 pi A}`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Geometry};
use crate::forms::{element_matrices, QuadForm};
use crate::green::GreenResult;
use crate::maximizer::MaximizerResult;
use crate::mesh::Point;

/// `-(1/4 pi) log(1 + pi |x|^2)`.
pub fn bubble(x: Point) -> f64 {
    bubble_radial(x[0].hypot(x[1]))
}

pub fn bubble_radial(r: f64) -> f64 {
    -(PI * r * r).ln_1p() / (4.0 * PI)
}

/// `int_{|x| < R} e^{8 pi bubble} = 1 - 1/(1 + pi R^2)`.
pub fn bubble_mass(radius: f64) -> f64 {
    1.0 - 1.0 / (1.0 + PI * radius * radius)
}

/// `int_0^R 2 pi r e^{8 pi bubble(r)} dr` by composite 5-point Gauss-Legendre.
pub fn bubble_mass_radial(radius: f64, panels: usize) -> f64 {
    let nodes = [
        (0.0, 128.0 / 225.0),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let h = radius / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (x, w) in nodes {
            let r = mid + 0.5 * h * x;
            s += 0.5 * h * w * 2.0 * PI * r * (8.0 * PI * bubble_radial(r)).exp();
        }
    }
    s
}

/// `log r_eps = (1/2) log lambda - log c - (2 pi - eps/2) c^2`.
pub fn log_blowup_scale(lambda_eps: f64, c_eps: f64, epsilon: f64) -> f64 {
    0.5 * lambda_eps.ln() - c_eps.ln() - (2.0 * PI - 0.5 * epsilon) * c_eps * c_eps
}

/// Rescaled radii, in units of `r_eps`.
pub const PROFILE_RADII: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
pub const RAYS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    /// Radius in units of `r_eps`.
    pub s: f64,
    pub radius: f64,
    /// Ray average of `u(x_eps + r_eps s theta)`.
    pub u: f64,
    /// Ray average of `c (u - c)`.
    pub phi: f64,
    /// Angular standard deviation of `phi`.
    pub phi_spread: f64,
    /// Ray average of `u / c`.
    pub psi: f64,
    pub bubble: f64,
    pub deviation: f64,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupDiagnostics {
    pub c_eps: f64,
    pub x_eps: Point,
    pub lambda_eps: f64,
    pub log_r_eps: f64,
    pub r_eps: f64,
    pub profile: Vec<ProfileRow>,
    /// RMS of `phi - bubble` over resolved radii; `None` when none is.
    pub bubble_rms: Option<f64>,
    /// Largest `|psi - 1|` over resolved radii.
    pub psi_deviation: Option<f64>,
    pub unresolved_core: bool,
    /// `(delta, energy fraction inside B_delta(x_eps))`.
    pub energy_fractions: Vec<(f64, f64)>,
}

/// Samples `u` on [`RAYS`] rays from `x0` at radii `r s`, `s` in
/// [`PROFILE_RADII`], and compares the rescaled profile with the bubble.
/// Radii below `2 h` are marked unresolved.
pub fn compare_profile(u: impl Fn(Point) -> Option<f64>, c: f64, x0: Point, log_r: f64, h: f64) -> (Vec<ProfileRow>, Option<f64>, Option<f64>) {
    let r = log_r.exp();
    let mut rows = Vec::with_capacity(PROFILE_RADII.len());
    for &s in &PROFILE_RADII {
        let rad = r * s;
        let mut vals = Vec::with_capacity(RAYS);
        for k in 0..RAYS {
            let t = 2.0 * PI * k as f64 / RAYS as f64;
            if let Some(v) = u([x0[0] + rad * t.cos(), x0[1] + rad * t.sin()]) {
                vals.push(v);
            }
        }
        let resolved = rad >= 2.0 * h && vals.len() == RAYS;
        let n = vals.len().max(1) as f64;
        let um = vals.iter().sum::<f64>() / n;
        let phis: Vec<f64> = vals.iter().map(|v| c * (v - c)).collect();
        let pm = phis.iter().sum::<f64>() / n;
        let spread = (phis.iter().map(|p| (p - pm).powi(2)).sum::<f64>() / n).sqrt();
        let b = bubble_radial(s);
        rows.push(ProfileRow {
            s,
            radius: rad,
            u: um,
            phi: pm,
            phi_spread: spread,
            psi: um / c,
            bubble: b,
            deviation: pm - b,
            resolved,
        });
    }
    let ok: Vec<&ProfileRow> = rows.iter().filter(|r| r.resolved).collect();
    if ok.is_empty() {
        return (rows, None, None);
    }
    let rms = (ok.iter().map(|r| r.deviation.powi(2)).sum::<f64>() / ok.len() as f64).sqrt();
    let psi = ok.iter().map(|r| (r.psi - 1.0).abs()).fold(0.0, f64::max);
    (rows, Some(rms), Some(psi))
}

/// Blow-up diagnostics of a maximizer: scale `r_eps` (log domain), rescaled
/// profile against the bubble, and energy fractions around the peak.
pub fn rescale_and_compare(result: &MaximizerResult, deltas: &[f64]) -> BlowupDiagnostics {
    let u = &result.u;
    let c = result.c_eps;
    let x0 = result.x_eps;
    let log_r = log_blowup_scale(result.lambda_eps, c, result.config.epsilon);
    let h = u.geometry().local_h(x0);
    let (profile, rms, psi) = compare_profile(|p| u.evaluate(p), c, x0, log_r, h);
    let energy_fractions = deltas
        .iter()
        .map(|&d| {
            let (inside, total) = energy_split(u, x0, d);
            (d, if total > 0.0 { inside / total } else { 0.0 })
        })
        .collect();
    BlowupDiagnostics {
        c_eps: c,
        x_eps: x0,
        lambda_eps: result.lambda_eps,
        log_r_eps: log_r,
        r_eps: log_r.exp(),
        unresolved_core: rms.is_none(),
        bubble_rms: rms,
        psi_deviation: psi,
        profile,
        energy_fractions,
    }
}

impl BlowupDiagnostics {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// `radius,u,phi,bubble,deviation` per profile radius.
    pub fn write_profile_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "radius,u,phi,bubble,deviation")?;
        for r in &self.profile {
            writeln!(out, "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", r.radius, r.u, r.phi, r.bubble, r.deviation)?;
        }
        Ok(())
    }
}

/// Dirichlet energy of `u` inside `B_delta(center)` and in total. Planar
/// elements are assigned by centroid; on the torus grid points are.
pub fn energy_split(u: &Field, center: Point, delta: f64) -> (f64, f64) {
    let geom = u.geometry();
    let (mut inside, mut total) = (0.0, 0.0);
    match geom {
        Geometry::Planar(mesh) => {
            let c = u.coeffs();
            for (t, tri) in mesh.triangles().iter().enumerate() {
                let p = mesh.triangle_points(t);
                let (ke, _) = element_matrices(p);
                let mut e = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        e += c[tri[i]] * ke[i][j] * c[tri[j]];
                    }
                }
                let centroid = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
                total += e;
                if geom.distance(center, centroid) < delta {
                    inside += e;
                }
            }
        }
        Geometry::Torus(g) => {
            let (gx, gy) = g.gradient_on_grid(u.coeffs());
            let w = g.area() / g.num_modes() as f64;
            for (i, (a, b)) in gx.iter().zip(&gy).enumerate() {
                let e = w * (a * a + b * b);
                total += e;
                if geom.distance(center, g.grid_point(i)) < delta {
                    inside += e;
                }
            }
        }
    }
    (inside, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySplitReport {
    pub delta: f64,
    /// `int_{outside B_delta} |grad u|^2`.
    pub lhs: f64,
    /// `c^{-2} ((1/2 pi) log(1/delta) + A + alpha ||G||^2)`.
    pub rhs: f64,
    pub relative_gap: f64,
    /// `c^2 lhs` and `c^2 rhs`.
    pub lhs_c2: f64,
    pub rhs_c2: f64,
    /// `|int |grad u|^2 - 1 - alpha ||u||_2^2|`.
    pub total_identity_gap: f64,
}

/// Compares the Dirichlet energy outside `B_delta(x_eps)` with its
/// prediction from the Green function.
pub fn energy_split_check(result: &MaximizerResult, green: &GreenResult, delta: f64, forms: &QuadForm) -> Result<EnergySplitReport> {
    let u = &result.u;
    let geom = u.geometry();
    let x0 = result.x_eps;
    let lo = 4.0 * geom.local_h(x0);
    let hi = match geom {
        Geometry::Planar(m) => 0.5 * m.boundary_distance(x0),
        Geometry::Torus(g) => 0.25 * g.side(),
    };
    if !(delta > lo && delta < hi) {
        return Err(Error::DeltaOutOfRange { delta, lo, hi });
    }
    let (inside, total) = energy_split(u, x0, delta);
    let lhs = total - inside;
    let c2 = result.c_eps * result.c_eps;
    let rhs_c2 = (1.0 / delta).ln() / (2.0 * PI) + green.regular_part + green.alpha * green.l2_norm_sq;
    let d = forms.restrict(u)?;
    let alpha = result.config.alpha;
    Ok(EnergySplitReport {
        delta,
        lhs,
        rhs: rhs_c2 / c2,
        relative_gap: (lhs * c2 - rhs_c2).abs() / rhs_c2.abs(),
        lhs_c2: lhs * c2,
        rhs_c2,
        total_identity_gap: (forms.energy(&d) - 1.0 - alpha * forms.l2_sq(&d)).abs(),
    })
}

/// Angular spread of `u` about `center`: RMS deviation from the angular
/// mean over `RAYS` rays at radii `k reach / 10`, `k = 1..9`, relative to
/// the RMS of the angular means. Sample points outside the domain are
/// skipped; `None` if nothing is left.
pub fn radial_asymmetry(u: &Field, center: Point, reach: f64) -> Option<f64> {
    let (mut dev, mut base, mut count) = (0.0, 0.0, 0usize);
    for k in 1..10 {
        let r = reach * k as f64 / 10.0;
        let vals: Vec<f64> = (0..RAYS)
            .filter_map(|j| {
                let th = 2.0 * PI * j as f64 / RAYS as f64;
                u.evaluate([center[0] + r * th.cos(), center[1] + r * th.sin()])
            })
            .collect();
        if vals.is_empty() {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        dev += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        base += mean * mean * vals.len() as f64;
        count += vals.len();
    }
    (count > 0 && base > 0.0).then(|| (dev / base).sqrt())
}

/// `|Omega| + pi e^{1 + 4 pi A}`.
pub fn upper_bound_certificate(geometry: &Geometry, green: &GreenResult) -> f64 {
    certificate(geometry.volume(), green.regular_part)
}

pub fn certificate(volume: f64, a: f64) -> f64 {
    crate::testfn::threshold(volume, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::assemble;
    use crate::functional::integrate_map;
    use crate::mesh::{build_disc_mesh, Grading};

    #[test]
    fn bubble_values() {
        assert_eq!(bubble([0.0, 0.0]), 0.0);
        assert!((bubble([1.0, 0.0]) + 0.113_086).abs() < 1e-6);
        assert!((bubble_mass(10.0) - 0.996827).abs() < 1e-6);
        assert!((bubble_mass_radial(10.0, 400) - bubble_mass(10.0)).abs() < 1e-10);
        assert!((bubble_mass(1e9) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bubble_mass_on_mesh() {
        let mesh = build_disc_mesh(10.0, 3).unwrap().refine_toward(&Grading::new([0.0, 0.0], 0.02));
        let phi = Field::from_fn(Geometry::planar(mesh), bubble);
        let m = integrate_map(&phi, |v| (8.0 * PI * v).exp());
        assert!((m - bubble_mass(10.0)).abs() < 1e-3, "{m}");
    }

    #[test]
    fn synthetic_profile_round_trip() {
        let (c, r, x0) = (3.0, 1e-3, [0.1, -0.2]);
        let u = |p: Point| Some(c + bubble([(p[0] - x0[0]) / r, (p[1] - x0[1]) / r]) / c);
        let (rows, rms, psi) = compare_profile(u, c, x0, r.ln(), 0.0);
        assert!(rms.unwrap() < 1e-6);
        assert!(psi.unwrap() <= 1.0 / (c * c));
        let at_one = rows.iter().find(|row| row.s == 1.0).unwrap();
        assert!((at_one.psi - 1.0).abs() <= 1.0 / (c * c));
        let (_, none, _) = compare_profile(u, c, x0, r.ln(), 1.0);
        assert!(none.is_none());
    }

    #[test]
    fn blowup_scale_in_log_domain() {
        let l = log_blowup_scale(2.0, 6.0, 0.1);
        assert!(l.is_finite() && l < -200.0);
        assert!((l - (0.5 * 2f64.ln() - 6f64.ln() - (2.0 * PI - 0.05) * 36.0)).abs() < 1e-12);
    }

    #[test]
    fn energy_split_totals() {
        let g = Geometry::planar(build_disc_mesh(1.0, 2).unwrap());
        let f = assemble(&g).unwrap();
        let u = Field::from_fn(g, |p| 1.0 - p[0] * p[0] - p[1] * p[1]);
        let (inside, total) = energy_split(&u, [0.0, 0.0], 0.5);
        let d = f.restrict(&u).unwrap();
        assert!((total - f.energy(&d)).abs() < 1e-12 * total);
        // |grad u|^2 = 4 r^2: pi/8 inside r < 1/2 out of 2 pi
        assert!((inside / total - 1.0 / 16.0).abs() < 0.05);
    }

    #[test]
    fn asymmetry_of_tilted_profile() {
        let g = Geometry::planar(build_disc_mesh(1.0, 4).unwrap());
        let radial = Field::from_fn(g.clone(), |p| 1.0 - p[0] * p[0] - p[1] * p[1]);
        assert!(radial_asymmetry(&radial, [0.0, 0.0], 0.9).unwrap() < 2e-3);
        // angular means are 1 - r^2, deviations 0.1 r cos(theta)
        let tilted = Field::from_fn(g, |p| 1.0 - p[0] * p[0] - p[1] * p[1] + 0.1 * p[0]);
        let rs: Vec<f64> = (1..10).map(|k| 0.09 * k as f64).collect();
        let num: f64 = rs.iter().map(|r| 0.01 * r * r / 2.0).sum();
        let den: f64 = rs.iter().map(|r| (1.0 - r * r).powi(2)).sum();
        let expected = (num / den).sqrt();
        let got = radial_asymmetry(&tilted, [0.0, 0.0], 0.9).unwrap();
        assert!((got - expected).abs() < 0.02 * expected, "{got} {expected}");
    }

    #[test]
    fn certificate_shift() {
        let c0 = certificate(PI, 0.0);
        assert!((c0 - PI * (1.0 + 1f64.exp())).abs() < 1e-12);
        assert!((c0 - 11.6813).abs() < 1e-4);
        let c1 = certificate(PI, 2f64.ln() / (4.0 * PI));
        assert!(((c1 - PI) / (c0 - PI) - 2.0).abs() < 1e-12);
    }
}
