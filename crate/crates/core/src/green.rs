//! Green functions of `-Laplace - alpha` with a point source, and their
//! regular parts.
//!
//! Near the pole `G(x) = -(1/2 pi) log|x - x0| + A + psi(x)` with `psi`
//! vanishing at the pole. `A` is recovered by fitting `G + (1/2 pi) log r`
//! with an affine function on an annulus of sample points; the affine term
//! absorbs the gradient of `psi`.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Geometry};
use crate::forms::{QuadForm, ShiftedSolver};
use crate::mesh::{Point, TriMesh};
use crate::spectrum::{EigenBasis, DEFAULT_GUARD};
use crate::torus::TorusGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Inner annulus radius in units of the local mesh size.
    pub inner: f64,
    /// Outer annulus radius in units of the local mesh size.
    pub outer: f64,
    pub min_samples: usize,
    /// Fits with a larger RMS are flagged.
    pub rms_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            inner: 4.0,
            outer: 12.0,
            min_samples: 12,
            rms_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub h_local: f64,
    pub r_inner: f64,
    pub r_outer: f64,
    pub samples: usize,
    pub rms: f64,
    /// Fitted linear trend (gradient of the regular remainder at the pole).
    pub gradient: [f64; 2],
    pub within_threshold: bool,
}

#[derive(Debug, Clone)]
pub struct GreenResult {
    pub pole: Point,
    pub alpha: f64,
    pub ell: usize,
    pub field: Field,
    pub regular_part: f64,
    pub fit: FitDiagnostics,
    pub projected: bool,
    /// `int G^2`.
    pub l2_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenSummary {
    pub pole: Point,
    pub alpha: f64,
    pub ell: usize,
    pub regular_part: f64,
    pub l2_norm_sq: f64,
    pub projected: bool,
    pub fit: FitDiagnostics,
}

impl GreenResult {
    pub fn summary(&self) -> GreenSummary {
        GreenSummary {
            pole: self.pole,
            alpha: self.alpha,
            ell: self.ell,
            regular_part: self.regular_part,
            l2_norm_sq: self.l2_norm_sq,
            projected: self.projected,
            fit: self.fit,
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.summary())?;
        Ok(())
    }

    /// `G(x) + (1/2 pi) log|x - x0| - A`, the regular remainder, at `x`.
    pub fn remainder(&self, x: Point) -> Option<f64> {
        let r = self.field.geometry().distance(self.pole, x);
        Some(self.field.evaluate(x)? + r.ln() / (2.0 * PI) - self.regular_part)
    }
}

/// `-(1/2 pi) log r`.
pub fn fundamental(r: f64) -> f64 {
    -r.ln() / (2.0 * PI)
}

fn check_shift(alpha: f64, basis: Option<&EigenBasis>, ell: usize, guard: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha = {alpha} must be finite and nonnegative")));
    }
    let Some(b) = basis else {
        if ell > 0 {
            return Err(Error::InvalidInput("ell > 0 needs an eigenbasis".into()));
        }
        return Ok(());
    };
    for &lam in &b.eigenvalues()[..ell.min(b.num_groups())] {
        if (alpha - lam).abs() <= guard * lam {
            return Err(Error::SingularShift { alpha, eigenvalue: lam });
        }
    }
    crate::spectrum::check_admissible(b, ell, alpha, guard)
}

/// Green function on a planar mesh with homogeneous Dirichlet data.
///
/// The source is the P1 evaluation functional at `x0`. For `ell > 0` the
/// load and the solution are projected onto the complement of the first
/// `ell` eigenspaces of `basis`.
pub fn solve_green_planar(
    forms: &QuadForm,
    x0: Point,
    alpha: f64,
    basis: Option<&EigenBasis>,
    ell: usize,
    fit: &FitOptions,
) -> Result<GreenResult> {
    let Geometry::Planar(mesh) = forms.geometry() else {
        return Err(Error::InvalidInput("planar Green function needs a mesh".into()));
    };
    check_shift(alpha, basis, ell, DEFAULT_GUARD)?;
    let outside = Error::PoleOutside { x: x0[0], y: x0[1] };
    let (t, w) = mesh.locate(x0).ok_or(outside)?;
    if mesh.boundary_distance(x0) <= 2.0 * mesh.local_h(x0) {
        return Err(Error::PoleOutside { x: x0[0], y: x0[1] });
    }
    let mut full = vec![0.0; mesh.num_vertices()];
    for (k, &v) in mesh.triangles()[t].iter().enumerate() {
        full[v] += w[k];
    }
    let mut b = forms.restrict_load(&full);
    let projected = ell > 0;
    if let (true, Some(basis)) = (projected, basis) {
        basis.project_load(&mut b, ell);
    }
    let solver = forms.shifted_solver(alpha, &[])?;
    if let (ShiftedSolver::Sparse(s), false) = (&solver, projected) {
        // on the whole space the operator must be positive definite
        if !s.is_cholesky() {
            return Err(Error::AlphaAboveThreshold { value: alpha });
        }
    }
    let mut g = solver.solve(&b);
    if let (true, Some(basis)) = (projected, basis) {
        basis.project_dofs(&mut g, ell);
    }
    let l2 = forms.l2_sq(&g);
    let field = forms.extend(&g);
    let (a, diag) = extract_regular_part(&field, x0, fit)?;
    Ok(GreenResult {
        pole: x0,
        alpha,
        ell,
        field,
        regular_part: a,
        fit: diag,
        projected,
        l2_norm_sq: l2,
    })
}

/// Green function on the torus with source `delta_p - 1/|T|` and zero mean.
///
/// In mode space `g_m = phi_m(p) / (lambda_m - alpha)` over the modes
/// outside the constant mode and the first `ell` eigenspaces.
pub fn solve_green_torus(
    forms: &QuadForm,
    p: Point,
    alpha: f64,
    basis: Option<&EigenBasis>,
    ell: usize,
    fit: &FitOptions,
) -> Result<GreenResult> {
    let Geometry::Torus(grid) = forms.geometry() else {
        return Err(Error::InvalidInput("torus Green function needs a torus grid".into()));
    };
    check_shift(alpha, basis, ell, DEFAULT_GUARD)?;
    if basis.is_none() {
        let lam1 = (2.0 * PI / grid.side()).powi(2);
        if alpha > (1.0 - DEFAULT_GUARD) * lam1 {
            return Err(Error::AlphaInGuardBand { alpha, eigenvalue: lam1 });
        }
    }
    let excluded = excluded_dofs(forms, basis, ell);
    let solver = forms.shifted_solver(alpha, &excluded)?;
    let crate::forms::DofMap::Modes { mode_of_dof, .. } = forms.dofs() else {
        unreachable!("torus forms use mode dofs")
    };
    let b: Vec<f64> = mode_of_dof.iter().map(|&m| grid.mode_value(m, p)).collect();
    let g = solver.solve(&b);
    let l2 = forms.l2_sq(&g);
    let field = forms.extend(&g);
    let (a, diag) = extract_regular_part(&field, p, fit)?;
    Ok(GreenResult {
        pole: p,
        alpha,
        ell,
        field,
        regular_part: a,
        fit: diag,
        projected: ell > 0,
        l2_norm_sq: l2,
    })
}

/// Dofs spanning the first `ell` eigenspaces of a torus basis.
pub(crate) fn excluded_dofs(forms: &QuadForm, basis: Option<&EigenBasis>, ell: usize) -> Vec<usize> {
    let Some(b) = basis else { return Vec::new() };
    let mut out = Vec::new();
    for g in 0..ell.min(b.num_groups()) {
        for j in 0..b.multiplicities()[g] {
            if let Some(i) = b.vector(g, j).iter().position(|&v| v == 1.0) {
                out.push(i);
            }
        }
    }
    debug_assert!(out.iter().all(|&i| i < forms.num_dofs()));
    out
}

/// Fits `G + (1/2 pi) log r = A + b . (x - x0)` over the annulus
/// `inner h <= r <= outer h` around the pole, where `h` is the local
/// resolution, and returns `A` with the fit diagnostics.
pub fn extract_regular_part(g: &Field, x0: Point, opts: &FitOptions) -> Result<(f64, FitDiagnostics)> {
    let h = g.geometry().local_h(x0);
    let (r_in, r_out) = (opts.inner * h, opts.outer * h);
    let samples = match g.geometry() {
        Geometry::Planar(mesh) => planar_samples(mesh, g.coeffs(), x0, r_in, r_out),
        Geometry::Torus(grid) => torus_samples(grid, g.coeffs(), x0, r_in, r_out),
    };
    if samples.len() < opts.min_samples {
        return Err(Error::TooFewSamples {
            found: samples.len(),
            needed: opts.min_samples,
        });
    }
    // normal equations for [1, dx, dy], scaled by h for conditioning
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for &(d, v) in &samples {
        let row = [1.0, d[0] / h, d[1] / h];
        let y = v - fundamental(d[0].hypot(d[1]));
        for i in 0..3 {
            atb[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let coef = solve3(ata, atb).ok_or(Error::TooFewSamples {
        found: samples.len(),
        needed: opts.min_samples,
    })?;
    let mut ss = 0.0;
    for &(d, v) in &samples {
        let y = v - fundamental(d[0].hypot(d[1]));
        let r = y - coef[0] - coef[1] * d[0] / h - coef[2] * d[1] / h;
        ss += r * r;
    }
    let rms = (ss / samples.len() as f64).sqrt();
    Ok((
        coef[0],
        FitDiagnostics {
            h_local: h,
            r_inner: r_in,
            r_outer: r_out,
            samples: samples.len(),
            rms,
            gradient: [coef[1] / h, coef[2] / h],
            within_threshold: rms <= opts.rms_threshold,
        },
    ))
}

/// Vertices in the annulus: (offset from the pole, value).
fn planar_samples(mesh: &TriMesh, values: &[f64], x0: Point, r_in: f64, r_out: f64) -> Vec<([f64; 2], f64)> {
    mesh.vertices()
        .iter()
        .zip(values)
        .filter_map(|(p, &v)| {
            let d = [p[0] - x0[0], p[1] - x0[1]];
            let r = d[0].hypot(d[1]);
            (r >= r_in && r <= r_out).then_some((d, v))
        })
        .collect()
}

/// Points `x0 + h (i, j)` in the annulus, so the sample set moves with the
/// pole and the fit is translation invariant.
fn torus_samples(grid: &TorusGrid, coeffs: &[f64], x0: Point, r_in: f64, r_out: f64) -> Vec<([f64; 2], f64)> {
    let h = grid.spacing();
    let m = (r_out / h).ceil() as i64;
    let offsets: Vec<f64> = (-m..=m).map(|i| i as f64 * h).collect();
    let xs: Vec<f64> = offsets.iter().map(|o| x0[0] + o).collect();
    let ys: Vec<f64> = offsets.iter().map(|o| x0[1] + o).collect();
    let vals = grid.evaluate_with(&grid.axis_matrix(&xs), &grid.axis_matrix(&ys), coeffs);
    let k = offsets.len();
    let mut out = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let d = [offsets[i], offsets[j]];
            let r = d[0].hypot(d[1]);
            if r >= r_in && r <= r_out {
                out.push((d, vals[i * k + j]));
            }
        }
    }
    out
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut x = [0.0; 3];
    for (c, xc) in x.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *xc = det(m) / d;
    }
    Some(x)
}

/// Regular part of the torus Green function at `n` modes per axis; a
/// self-convergence reference for coarser runs.
pub fn torus_regular_part(side: f64, n: usize, alpha: f64) -> Result<f64> {
    let grid = TorusGrid::new(side, n)?;
    let forms = crate::forms::assemble(&Geometry::Torus(grid))?;
    let p = [0.5 * side, 0.5 * side];
    Ok(solve_green_torus(&forms, p, alpha, None, 0, &FitOptions::default())?.regular_part)
}
