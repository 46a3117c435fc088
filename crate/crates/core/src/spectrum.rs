//! Laplacian eigenpairs and projectors onto orthogonal complements of
//! eigenspaces.
//!
//! The operator is the positive semidefinite form `K` on every geometry, so
//! eigenvalues are nonnegative and `K v = lambda M v`. On the torus the
//! constant mode is excluded and every eigenfunction has zero mean.
//!
//! Planar eigenpairs come from shift-invert subspace iteration (shift 0, the
//! Dirichlet stiffness is positive definite) with a Rayleigh-Ritz step per
//! iteration. Eigenfunctions are M-orthonormal, which for eigenfunctions of
//! distinct eigenvalues also makes them K-orthogonal.

use std::io::Write;
use std::sync::Arc;

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Geometry};
use crate::forms::{assemble, QuadForm};
use crate::sparse::{dot, CscMatrix, SparseSolver};

/// Relative gap below which computed eigenvalues are merged into one group.
pub const DEFAULT_GROUPING_TOL: f64 = 1e-6;
/// Relative guard below an admissibility threshold.
pub const DEFAULT_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    pub grouping_tol: f64,
    /// Relative residual `|K x - l M x| / (l |M x|)` required of every
    /// returned pair.
    pub tol: f64,
    pub max_iter: usize,
    /// Extra block vectors beyond the requested count.
    pub oversample: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            grouping_tol: DEFAULT_GROUPING_TOL,
            tol: 1e-10,
            max_iter: 1000,
            oversample: 12,
            seed: 0x5eed,
        }
    }
}

/// Distinct eigenvalues with multiplicities and M-orthonormal eigenfunctions.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    forms: Arc<QuadForm>,
    values: Vec<f64>,
    multiplicities: Vec<usize>,
    /// Dof vectors per group.
    vectors: Vec<Vec<Vec<f64>>>,
    /// `M e` per eigenvector, for fast inner products.
    mass_images: Vec<Vec<Vec<f64>>>,
    raw_values: Vec<f64>,
    grouping_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub raw_eigenvalues: Vec<f64>,
    pub grouping_tol: f64,
    pub num_dofs: usize,
}

/// The `k` smallest eigenpairs of a geometry, with default options.
pub fn eigenpairs(geometry: &Geometry, k: usize) -> Result<EigenBasis> {
    let forms = Arc::new(assemble(geometry)?);
    eigenpairs_with(forms, k, &EigenOptions::default())
}

/// The `k` smallest eigenpairs of the forms, extended so that the last
/// eigenvalue group is complete.
pub fn eigenpairs_with(forms: Arc<QuadForm>, k: usize, opts: &EigenOptions) -> Result<EigenBasis> {
    let available = if forms.is_torus() {
        forms.num_dofs() - 1
    } else {
        forms.num_dofs()
    };
    if k == 0 || k > available {
        return Err(Error::InvalidInput(format!(
            "requested {k} eigenpairs, between 1 and {available} are available"
        )));
    }
    let (vals, vecs) = if forms.is_torus() {
        torus_pairs(&forms, k, opts.grouping_tol)
    } else if forms.num_dofs() <= 400 {
        dense_pairs(&forms, k, opts.grouping_tol)?
    } else {
        subspace_iteration(&forms, k, opts)?
    };
    Ok(group(forms, vals, vecs, opts.grouping_tol))
}

/// Number of leading entries of the sorted `vals` to keep so that the
/// `k`-th value's group is complete. `None` if the group may continue past
/// the end of `vals`.
fn complete_count(vals: &[f64], k: usize, tol: f64) -> Option<usize> {
    let mut m = k;
    while m < vals.len() && same_group(vals[m - 1], vals[m], tol) {
        m += 1;
    }
    (m < vals.len()).then_some(m)
}

fn same_group(a: f64, b: f64, tol: f64) -> bool {
    (b - a).abs() <= tol * a.abs().max(b.abs())
}

fn torus_pairs(forms: &QuadForm, k: usize, tol: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = forms.num_dofs();
    let c = forms.constant_dof().expect("torus forms have a constant mode");
    let k_mat = forms.stiffness();
    let mut order: Vec<(f64, usize)> = (0..n).filter(|&i| i != c).map(|i| (k_mat.get(i, i), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let all: Vec<f64> = order.iter().map(|o| o.0).collect();
    let m = complete_count(&all, k, tol).unwrap_or(all.len());
    let vecs = order[..m]
        .iter()
        .map(|&(_, i)| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    (all[..m].to_vec(), vecs)
}

fn to_dense(a: &CscMatrix) -> Mat<f64> {
    let mut d = Mat::zeros(a.n(), a.n());
    for (i, j, v) in a.entries() {
        d[(i, j)] += v;
    }
    d
}

/// Solves the small generalized problem `A z = l B z` with `B` SPD:
/// eigenvalues ascending and `B`-orthonormal eigenvectors as columns.
fn generalized_dense(a: &Mat<f64>, b: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let p = a.nrows();
    let eb = b
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let sb = eb.S().column_vector();
    let ub = eb.U();
    let smax = (0..p).map(|i| sb[i]).fold(0.0, f64::max);
    for i in 0..p {
        if !(sb[i] > 1e-14 * smax) {
            return Err(Error::Factorization("Ritz basis lost rank".into()));
        }
    }
    let w = Mat::from_fn(p, p, |i, j| ub[(i, j)] / sb[j].sqrt());
    let c = w.transpose() * a * &w;
    let c = Mat::from_fn(p, p, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let ec = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let s = ec.S().column_vector();
    let vals = (0..p).map(|i| s[i]).collect();
    Ok((vals, &w * ec.U()))
}

fn dense_pairs(forms: &QuadForm, k: usize, tol: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (vals, z) = generalized_dense(&to_dense(forms.stiffness()), &to_dense(forms.mass()))?;
    let m = complete_count(&vals, k, tol).unwrap_or(vals.len());
    let vecs = (0..m).map(|j| (0..z.nrows()).map(|i| z[(i, j)]).collect()).collect();
    Ok((vals[..m].to_vec(), vecs))
}

fn mul_cols(a: &CscMatrix, x: &Mat<f64>) -> Mat<f64> {
    let mut y = Mat::zeros(x.nrows(), x.ncols());
    for (i, j, v) in a.entries() {
        for c in 0..x.ncols() {
            y[(i, c)] += v * x[(j, c)];
        }
    }
    y
}

fn subspace_iteration(forms: &QuadForm, k: usize, opts: &EigenOptions) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = forms.num_dofs();
    let p = (k + opts.oversample).min(n);
    let kmat = forms.stiffness();
    let mmat = forms.mass();
    let solver = SparseSolver::new(kmat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = Mat::from_fn(n, p, |_, _| rng.random::<f64>() - 0.5);
    let mut worst = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut y = mul_cols(mmat, &x);
        solver.solve_in_place(&mut y);
        let ky = mul_cols(kmat, &y);
        let my = mul_cols(mmat, &y);
        let kr = y.transpose() * &ky;
        let mr = y.transpose() * &my;
        let (vals, z) = generalized_dense(&kr, &mr)?;
        x = &y * &z;
        let kx = &ky * &z;
        let mx = &my * &z;
        let Some(m) = complete_count(&vals, k, opts.grouping_tol) else {
            return Err(Error::InsufficientEigenvalues {
                needed: k,
                available: p,
            });
        };
        worst = 0.0;
        for j in 0..m {
            let mut r2 = 0.0;
            let mut m2 = 0.0;
            for i in 0..n {
                let r = kx[(i, j)] - vals[j] * mx[(i, j)];
                r2 += r * r;
                m2 += mx[(i, j)] * mx[(i, j)];
            }
            worst = worst.max(r2.sqrt() / (vals[j].abs() * m2.sqrt()));
        }
        if worst < opts.tol {
            let vecs = (0..m).map(|j| (0..n).map(|i| x[(i, j)]).collect()).collect();
            return Ok((vals[..m].to_vec(), vecs));
        }
    }
    Err(Error::EigenNoConvergence {
        iterations: opts.max_iter,
        residual: worst,
    })
}

fn group(forms: Arc<QuadForm>, vals: Vec<f64>, vecs: Vec<Vec<f64>>, tol: f64) -> EigenBasis {
    let mut values = Vec::new();
    let mut groups: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut start = 0;
    for i in 1..=vals.len() {
        if i == vals.len() || !same_group(vals[i - 1], vals[i], tol) {
            values.push(vals[start..i].iter().sum::<f64>() / (i - start) as f64);
            groups.push(vecs[start..i].to_vec());
            start = i;
        }
    }
    // Gram-Schmidt in the M inner product, twice for stability
    for g in &mut groups {
        for _ in 0..2 {
            for a in 0..g.len() {
                for b in 0..a {
                    let c = forms.mass_inner(&g[a], &g[b]);
                    let (head, tail) = g.split_at_mut(a);
                    for (x, y) in tail[0].iter_mut().zip(&head[b]) {
                        *x -= c * y;
                    }
                }
                let nrm = forms.l2_sq(&g[a]).sqrt();
                g[a].iter_mut().for_each(|x| *x /= nrm);
            }
        }
        // fixed sign: largest-magnitude entry positive
        for v in g.iter_mut() {
            let big = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    let mass_images = groups
        .iter()
        .map(|g| g.iter().map(|v| forms.mass().mul_vec(v)).collect())
        .collect();
    EigenBasis {
        multiplicities: groups.iter().map(Vec::len).collect(),
        forms,
        values,
        vectors: groups,
        mass_images,
        raw_values: vals,
        grouping_tol: tol,
    }
}

impl EigenBasis {
    pub fn forms(&self) -> &Arc<QuadForm> {
        &self.forms
    }

    pub fn geometry(&self) -> &Geometry {
        self.forms.geometry()
    }

    /// Distinct eigenvalues, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn num_groups(&self) -> usize {
        self.values.len()
    }

    /// Every computed eigenvalue, before grouping.
    pub fn raw_eigenvalues(&self) -> &[f64] {
        &self.raw_values
    }

    pub fn grouping_tol(&self) -> f64 {
        self.grouping_tol
    }

    /// Dof vector of `e_{ij}` (zero-based group and member).
    pub fn vector(&self, group: usize, member: usize) -> &[f64] {
        &self.vectors[group][member]
    }

    pub fn function(&self, group: usize, member: usize) -> Field {
        self.forms.extend(&self.vectors[group][member])
    }

    /// `(u, e_{ij})_M` for every eigenfunction of the first `ell` groups, in
    /// group order.
    pub fn coefficients(&self, u: &Field, ell: usize) -> Result<Vec<f64>> {
        let d = self.forms.restrict(u)?;
        self.check_ell(ell)?;
        Ok(self.mass_images[..ell].iter().flatten().map(|me| dot(me, &d)).collect())
    }

    fn check_ell(&self, ell: usize) -> Result<()> {
        if ell > self.num_groups() {
            return Err(Error::InsufficientEigenvalues {
                needed: ell,
                available: self.num_groups(),
            });
        }
        Ok(())
    }

    /// Removes the first `ell` eigenspace components from a dof vector.
    pub fn project_dofs(&self, d: &mut [f64], ell: usize) {
        for (vs, ms) in self.vectors[..ell].iter().zip(&self.mass_images[..ell]) {
            for (v, me) in vs.iter().zip(ms) {
                let c = dot(me, d);
                for (x, y) in d.iter_mut().zip(v) {
                    *x -= c * y;
                }
            }
        }
    }

    /// Removes the components along `M e_{ij}` for the first `ell` groups
    /// from a load vector, so it annihilates those eigenfunctions.
    pub fn project_load(&self, b: &mut [f64], ell: usize) {
        for (vs, ms) in self.vectors[..ell].iter().zip(&self.mass_images[..ell]) {
            for (v, me) in vs.iter().zip(ms) {
                let c = dot(v, b);
                for (x, y) in b.iter_mut().zip(me) {
                    *x -= c * y;
                }
            }
        }
    }

    pub fn summary(&self) -> EigenSummary {
        EigenSummary {
            eigenvalues: self.values.clone(),
            multiplicities: self.multiplicities.clone(),
            raw_eigenvalues: self.raw_values.clone(),
            grouping_tol: self.grouping_tol,
            num_dofs: self.forms.num_dofs(),
        }
    }

    /// JSON header: eigenvalues, multiplicities, tolerance.
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.summary())?;
        Ok(())
    }

    /// Coefficient block: one row per eigenfunction,
    /// `group,member,eigenvalue,c_0,c_1,...` with full field coefficients.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (g, vs) in self.vectors.iter().enumerate() {
            for (j, v) in vs.iter().enumerate() {
                write!(out, "{},{},{:e}", g + 1, j + 1, self.values[g])?;
                for c in self.forms.extend(v).coeffs() {
                    write!(out, ",{c:e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// `u - sum_{i <= ell} sum_j (u, e_{ij})_M e_{ij}`.
pub fn project_perp(u: &Field, basis: &EigenBasis, ell: usize) -> Result<Field> {
    basis.check_ell(ell)?;
    let forms = basis.forms();
    let mut d = forms.restrict(u)?;
    basis.project_dofs(&mut d, ell);
    if let Geometry::Planar(_) = u.geometry() {
        // boundary values are untouched
        let mut out = forms.extend(&d).into_coeffs();
        for (v, &b) in u.geometry().mesh().unwrap().boundary_flags().iter().enumerate() {
            if b {
                out[v] = u.coeffs()[v];
            }
        }
        return u.with_coeffs(out);
    }
    let mut out = u.coeffs().to_vec();
    let proj = forms.extend(&d);
    for (i, c) in proj.coeffs().iter().enumerate() {
        if !u.geometry().torus().unwrap().is_nyquist(i) {
            out[i] = *c;
        }
    }
    u.with_coeffs(out)
}

/// `lambda_{ell+1}`: the upper end of the admissible range of `alpha` on
/// the complement of the first `ell` eigenspaces.
pub fn admissible_alpha_max(basis: &EigenBasis, ell: usize) -> Result<f64> {
    basis.values.get(ell).copied().ok_or(Error::InsufficientEigenvalues {
        needed: ell + 1,
        available: basis.num_groups(),
    })
}

/// Rejects `alpha` outside `[0, (1 - guard) lambda_{ell+1})`.
pub fn check_admissible(basis: &EigenBasis, ell: usize, alpha: f64, guard: f64) -> Result<()> {
    let lam = admissible_alpha_max(basis, ell)?;
    if !(alpha >= 0.0) || alpha > (1.0 - guard) * lam {
        return Err(Error::AlphaInGuardBand { alpha, eigenvalue: lam });
    }
    Ok(())
}
