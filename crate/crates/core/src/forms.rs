//! Quadratic forms `int |grad u|^2` and `int u^2` on a geometry.
//!
//! Planar forms are P1 stiffness and consistent mass matrices with the
//! Dirichlet vertices eliminated, so they act on interior degrees of freedom
//! only. Torus forms are diagonal in mode space (stiffness = Fourier symbol,
//! mass = identity) over the modes without a Nyquist factor.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Field, Geometry};
use crate::mesh::TriMesh;
use crate::sparse::{CscMatrix, SparseSolver};

pub(crate) const CHUNK: usize = 2048;

#[derive(Debug, Clone)]
pub enum DofMap {
    /// Interior vertices of a mesh.
    Interior {
        dof_of_vertex: Vec<Option<usize>>,
        vertex_of_dof: Vec<usize>,
    },
    /// Active torus modes; `constant` is the dof of the constant mode.
    Modes {
        mode_of_dof: Vec<usize>,
        num_modes: usize,
        constant: usize,
    },
}

#[derive(Debug)]
pub struct QuadForm {
    geometry: Geometry,
    stiffness: CscMatrix,
    mass: CscMatrix,
    dofs: DofMap,
    stiffness_solver: OnceLock<Option<Arc<SparseSolver>>>,
}

/// P1 element matrices of a triangle: (stiffness, mass).
pub fn element_matrices(p: [[f64; 2]; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let area = crate::mesh::signed_area(p[0], p[1], p[2]);
    let mut b = [0.0; 3];
    let mut c = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = p[j][1] - p[k][1];
        c[i] = p[k][0] - p[j][0];
    }
    let mut ke = [[0.0; 3]; 3];
    let mut me = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ke[i][j] = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
            me[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    (ke, me)
}

fn check_triangles(mesh: &TriMesh) -> Result<()> {
    for t in 0..mesh.num_triangles() {
        let area = mesh.signed_area(t);
        let tol = mesh.area_tolerance(t);
        if !(area >= tol) {
            return Err(Error::DegenerateTriangle {
                index: t,
                area,
                tolerance: tol,
            });
        }
    }
    Ok(())
}

type Triplets = Vec<(usize, usize, f64)>;

fn element_triplets(mesh: &TriMesh, map: impl Fn(usize) -> Option<usize> + Sync) -> (Triplets, Triplets) {
    let tris = mesh.triangles();
    let chunks: Vec<(Triplets, Triplets)> = tris
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut k = Vec::with_capacity(chunk.len() * 9);
            let mut m = Vec::with_capacity(chunk.len() * 9);
            for (off, t) in chunk.iter().enumerate() {
                let (ke, me) = element_matrices(mesh.triangle_points(ci * CHUNK + off));
                for i in 0..3 {
                    let Some(di) = map(t[i]) else { continue };
                    for j in 0..3 {
                        let Some(dj) = map(t[j]) else { continue };
                        k.push((di, dj, ke[i][j]));
                        m.push((di, dj, me[i][j]));
                    }
                }
            }
            (k, m)
        })
        .collect();
    let mut k = Vec::new();
    let mut m = Vec::new();
    for (ck, cm) in chunks {
        k.extend(ck);
        m.extend(cm);
    }
    (k, m)
}

/// Stiffness and mass over all vertices, without Dirichlet elimination.
pub fn assemble_full(mesh: &TriMesh) -> Result<(CscMatrix, CscMatrix)> {
    check_triangles(mesh)?;
    let (k, m) = element_triplets(mesh, Some);
    let n = mesh.num_vertices();
    Ok((CscMatrix::from_triplets(n, &k)?, CscMatrix::from_triplets(n, &m)?))
}

/// Assembles the forms for a geometry.
pub fn assemble(geometry: &Geometry) -> Result<QuadForm> {
    match geometry {
        Geometry::Planar(mesh) => {
            check_triangles(mesh)?;
            let mut dof_of_vertex = vec![None; mesh.num_vertices()];
            let mut vertex_of_dof = Vec::new();
            for (v, &b) in mesh.boundary_flags().iter().enumerate() {
                if !b {
                    dof_of_vertex[v] = Some(vertex_of_dof.len());
                    vertex_of_dof.push(v);
                }
            }
            let (k, m) = element_triplets(mesh, |v| dof_of_vertex[v]);
            let n = vertex_of_dof.len();
            Ok(QuadForm {
                geometry: geometry.clone(),
                stiffness: CscMatrix::from_triplets(n, &k)?,
                mass: CscMatrix::from_triplets(n, &m)?,
                dofs: DofMap::Interior {
                    dof_of_vertex,
                    vertex_of_dof,
                },
                stiffness_solver: OnceLock::new(),
            })
        }
        Geometry::Torus(grid) => {
            let mode_of_dof: Vec<usize> = (0..grid.num_modes()).filter(|&i| !grid.is_nyquist(i)).collect();
            let symbols: Vec<f64> = mode_of_dof.iter().map(|&i| grid.symbol(i)).collect();
            let ones = vec![1.0; mode_of_dof.len()];
            Ok(QuadForm {
                geometry: geometry.clone(),
                stiffness: CscMatrix::diagonal_matrix(&symbols),
                mass: CscMatrix::diagonal_matrix(&ones),
                dofs: DofMap::Modes {
                    constant: 0,
                    num_modes: grid.num_modes(),
                    mode_of_dof,
                },
                stiffness_solver: OnceLock::new(),
            })
        }
    }
}

impl QuadForm {
    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn stiffness(&self) -> &CscMatrix {
        &self.stiffness
    }

    pub fn mass(&self) -> &CscMatrix {
        &self.mass
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn num_dofs(&self) -> usize {
        self.stiffness.n()
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.dofs, DofMap::Modes { .. })
    }

    /// Dof index of the constant mode on the torus.
    pub fn constant_dof(&self) -> Option<usize> {
        match self.dofs {
            DofMap::Modes { constant, .. } => Some(constant),
            DofMap::Interior { .. } => None,
        }
    }

    /// Coefficients of `u` on the degrees of freedom.
    pub fn restrict(&self, u: &Field) -> Result<Vec<f64>> {
        if !u.geometry().same_as(&self.geometry) {
            return Err(Error::GeometryMismatch);
        }
        let c = u.coeffs();
        Ok(match &self.dofs {
            DofMap::Interior { vertex_of_dof, .. } => vertex_of_dof.iter().map(|&v| c[v]).collect(),
            DofMap::Modes { mode_of_dof, .. } => mode_of_dof.iter().map(|&m| c[m]).collect(),
        })
    }

    /// Field with the given dof coefficients (zero on Dirichlet vertices and
    /// inactive modes).
    pub fn extend(&self, dofs: &[f64]) -> Field {
        assert_eq!(dofs.len(), self.num_dofs());
        let mut c = vec![0.0; self.geometry.coefficient_len()];
        match &self.dofs {
            DofMap::Interior { vertex_of_dof, .. } => {
                for (&v, &x) in vertex_of_dof.iter().zip(dofs) {
                    c[v] = x;
                }
            }
            DofMap::Modes { mode_of_dof, .. } => {
                for (&m, &x) in mode_of_dof.iter().zip(dofs) {
                    c[m] = x;
                }
            }
        }
        Field::new(self.geometry.clone(), c).expect("length matches geometry")
    }

    /// Maps a full-length load (one entry per vertex or per mode) onto dofs.
    pub fn restrict_load(&self, full: &[f64]) -> Vec<f64> {
        match &self.dofs {
            DofMap::Interior { vertex_of_dof, .. } => vertex_of_dof.iter().map(|&v| full[v]).collect(),
            DofMap::Modes { mode_of_dof, .. } => mode_of_dof.iter().map(|&m| full[m]).collect(),
        }
    }

    pub fn energy(&self, dofs: &[f64]) -> f64 {
        self.stiffness.quadratic(dofs)
    }

    pub fn l2_sq(&self, dofs: &[f64]) -> f64 {
        self.mass.quadratic(dofs)
    }

    pub fn mass_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mass.bilinear(a, b)
    }

    /// Cached factorization of the stiffness matrix (planar only).
    fn stiffness_solver(&self) -> Option<Arc<SparseSolver>> {
        self.stiffness_solver
            .get_or_init(|| {
                if self.is_torus() {
                    None
                } else {
                    SparseSolver::new(&self.stiffness).ok().map(Arc::new)
                }
            })
            .clone()
    }

    /// `sqrt(r^T K^{-1} r)`: the dual (H^{-1}) norm of a load vector. On the
    /// torus the constant mode is ignored.
    pub fn dual_norm(&self, r: &[f64]) -> f64 {
        match self.constant_dof() {
            Some(c) => {
                let mut s = 0.0;
                for (i, (ri, ki)) in r.iter().zip(self.diagonal(&self.stiffness)).enumerate() {
                    if i != c && ki > 0.0 {
                        s += ri * ri / ki;
                    }
                }
                s.sqrt()
            }
            None => {
                let solver = self.stiffness_solver().expect("stiffness is positive definite");
                let x = solver.solve(r);
                crate::sparse::dot(r, &x).max(0.0).sqrt()
            }
        }
    }

    fn diagonal<'a>(&self, m: &'a CscMatrix) -> impl Iterator<Item = f64> + 'a {
        (0..m.n()).map(move |i| m.get(i, i))
    }

    /// Factorization of `K - alpha M`. On the torus the constant mode and
    /// the dofs listed in `excluded` are removed from the operator (their
    /// solution components are set to zero).
    pub fn shifted_solver(&self, alpha: f64, excluded: &[usize]) -> Result<ShiftedSolver> {
        match self.constant_dof() {
            Some(c) => {
                let mut inv = Vec::with_capacity(self.num_dofs());
                for (i, k) in self.diagonal(&self.stiffness).enumerate() {
                    if i == c || excluded.contains(&i) {
                        inv.push(0.0);
                        continue;
                    }
                    let d = k - alpha;
                    if d.abs() <= 1e-12 * k.abs().max(1.0) {
                        return Err(Error::SingularShift {
                            alpha,
                            eigenvalue: k,
                        });
                    }
                    inv.push(1.0 / d);
                }
                Ok(ShiftedSolver::Diagonal(inv))
            }
            None => {
                let op = if alpha == 0.0 {
                    self.stiffness.clone()
                } else {
                    CscMatrix::combine(1.0, &self.stiffness, -alpha, &self.mass)?
                };
                let solver = SparseSolver::new(&op).map_err(|_| Error::SingularShift {
                    alpha,
                    eigenvalue: alpha,
                })?;
                Ok(ShiftedSolver::Sparse(solver))
            }
        }
    }

    /// `(K - alpha M) x`.
    pub fn apply_shifted(&self, alpha: f64, x: &[f64]) -> Vec<f64> {
        let kx = self.stiffness.mul_vec(x);
        let mx = self.mass.mul_vec(x);
        kx.iter().zip(&mx).map(|(k, m)| k - alpha * m).collect()
    }
}

#[derive(Debug)]
pub enum ShiftedSolver {
    Sparse(SparseSolver),
    Diagonal(Vec<f64>),
}

impl ShiftedSolver {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            ShiftedSolver::Sparse(s) => s.solve(rhs),
            ShiftedSolver::Diagonal(inv) => rhs.iter().zip(inv).map(|(r, d)| r * d).collect(),
        }
    }
}
