//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use tmlab_core::{assemble, build_disc_mesh, eigenpairs_with, EigenBasis, EigenOptions, Geometry, QuadForm, TorusGrid};

pub fn disc(level: usize) -> Geometry {
    Geometry::planar(build_disc_mesh(1.0, level).expect("disc mesh"))
}

pub fn torus(n: usize) -> Geometry {
    Geometry::Torus(TorusGrid::new(1.0, n).expect("torus grid"))
}

pub fn forms(g: &Geometry) -> Arc<QuadForm> {
    Arc::new(assemble(g).expect("assembly"))
}

pub fn basis(forms: &Arc<QuadForm>, k: usize) -> EigenBasis {
    eigenpairs_with(forms.clone(), k, &EigenOptions::default()).expect("eigenpairs")
}
