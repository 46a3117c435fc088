use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};
use crate::torus::TorusGrid;

/// A domain on which fields live: a triangulated planar domain with
/// homogeneous Dirichlet conditions, or the flat torus.
#[derive(Debug, Clone)]
pub enum Geometry {
    Planar(Arc<TriMesh>),
    Torus(TorusGrid),
}

impl Geometry {
    pub fn planar(mesh: TriMesh) -> Self {
        Geometry::Planar(Arc::new(mesh))
    }

    /// Number of coefficients a field on this geometry carries.
    pub fn coefficient_len(&self) -> usize {
        match self {
            Geometry::Planar(m) => m.num_vertices(),
            Geometry::Torus(g) => g.num_modes(),
        }
    }

    /// Area of the domain (the union of triangles for meshes).
    pub fn volume(&self) -> f64 {
        match self {
            Geometry::Planar(m) => m.area(),
            Geometry::Torus(g) => g.area(),
        }
    }

    pub fn mesh(&self) -> Option<&TriMesh> {
        match self {
            Geometry::Planar(m) => Some(m),
            Geometry::Torus(_) => None,
        }
    }

    pub fn torus(&self) -> Option<&TorusGrid> {
        match self {
            Geometry::Torus(g) => Some(g),
            Geometry::Planar(_) => None,
        }
    }

    pub fn same_as(&self, other: &Geometry) -> bool {
        match (self, other) {
            (Geometry::Planar(a), Geometry::Planar(b)) => {
                Arc::ptr_eq(a, b)
                    || (a.num_vertices() == b.num_vertices()
                        && a.num_triangles() == b.num_triangles()
                        && a.vertices() == b.vertices())
            }
            (Geometry::Torus(a), Geometry::Torus(b)) => a == b,
            _ => false,
        }
    }

    /// Distance between two points, periodic on the torus.
    pub fn distance(&self, a: Point, b: Point) -> f64 {
        match self {
            Geometry::Planar(_) => (a[0] - b[0]).hypot(a[1] - b[1]),
            Geometry::Torus(g) => g.distance(a, b),
        }
    }

    /// Geometry-level resolution: the longest mesh edge or the torus grid
    /// spacing.
    pub fn h(&self) -> f64 {
        match self {
            Geometry::Planar(m) => m.h_max(),
            Geometry::Torus(g) => g.spacing(),
        }
    }

    /// Resolution near `p`.
    pub fn local_h(&self, p: Point) -> f64 {
        match self {
            Geometry::Planar(m) => m.local_h(p),
            Geometry::Torus(g) => g.spacing(),
        }
    }
}

/// A function on a geometry: nodal values on a mesh (including boundary
/// vertices) or mode coefficients on the torus.
#[derive(Debug, Clone)]
pub struct Field {
    geometry: Geometry,
    coeffs: Vec<f64>,
}

impl Field {
    pub fn new(geometry: Geometry, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != geometry.coefficient_len() {
            return Err(Error::InvalidInput(format!(
                "field has {} coefficients, geometry expects {}",
                coeffs.len(),
                geometry.coefficient_len()
            )));
        }
        Ok(Self { geometry, coeffs })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let n = geometry.coefficient_len();
        Self {
            geometry,
            coeffs: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `f` on a mesh. On the torus the grid values are
    /// converted to mode coefficients and the Nyquist modes dropped.
    pub fn from_fn(geometry: Geometry, f: impl Fn(Point) -> f64) -> Self {
        let coeffs = match &geometry {
            Geometry::Planar(m) => m.vertices().iter().map(|&p| f(p)).collect(),
            Geometry::Torus(g) => {
                let vals: Vec<f64> = (0..g.num_modes()).map(|i| f(g.grid_point(i))).collect();
                let mut c = g.from_grid(&vals);
                // torus fields live in the band without Nyquist modes
                for (i, ci) in c.iter_mut().enumerate() {
                    if g.is_nyquist(i) {
                        *ci = 0.0;
                    }
                }
                c
            }
        };
        Self { geometry, coeffs }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Field> {
        Field::new(self.geometry.clone(), coeffs)
    }

    pub fn scaled(&self, t: f64) -> Field {
        Field {
            geometry: self.geometry.clone(),
            coeffs: self.coeffs.iter().map(|c| c * t).collect(),
        }
    }

    pub fn check_same(&self, other: &Field) -> Result<()> {
        if self.geometry.same_as(&other.geometry) {
            Ok(())
        } else {
            Err(Error::GeometryMismatch)
        }
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &Field) -> Result<Field> {
        self.check_same(other)?;
        Ok(Field {
            geometry: self.geometry.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + t * b)
                .collect(),
        })
    }

    /// Point value: P1 interpolation on meshes (None outside), mode sum on
    /// the torus.
    pub fn evaluate(&self, p: Point) -> Option<f64> {
        match &self.geometry {
            Geometry::Planar(m) => m.interpolate(&self.coeffs, p),
            Geometry::Torus(g) => Some(g.evaluate_at(&self.coeffs, p)),
        }
    }

    /// Values at the sampling nodes: mesh vertices or torus grid points.
    pub fn node_values(&self) -> Vec<f64> {
        match &self.geometry {
            Geometry::Planar(_) => self.coeffs.clone(),
            Geometry::Torus(g) => g.to_grid(&self.coeffs),
        }
    }

    /// Location of the sampling node with index `i`.
    pub fn node_point(&self, i: usize) -> Point {
        match &self.geometry {
            Geometry::Planar(m) => m.vertices()[i],
            Geometry::Torus(g) => g.grid_point(i),
        }
    }

    /// Node with the largest `|u|` (lowest index on ties) and its value.
    pub fn peak(&self) -> (usize, f64) {
        let vals = self.node_values();
        let mut best = (0usize, 0.0f64);
        for (i, &v) in vals.iter().enumerate() {
            if v.abs() > best.1.abs() {
                best = (i, v);
            }
        }
        best
    }
}
