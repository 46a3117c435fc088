//! Finite-element and spectral tools for Trudinger-Moser type extremal
//! problems in two dimensions: planar domains with Dirichlet conditions and
//! the flat square torus.
//!
//! The Laplacian is taken with the positive sign throughout (`K` is the
//! stiffness form of `-Laplace`), so eigenvalues are nonnegative on every
//! geometry.

pub mod blowup;
pub mod error;
pub mod field;
pub mod forms;
pub mod functional;
pub mod green;
pub mod maximizer;
pub mod mesh;
pub mod sparse;
pub mod spectrum;
pub mod testfn;
pub mod torus;

pub use blowup::{bubble, energy_split_check, radial_asymmetry, rescale_and_compare, upper_bound_certificate, BlowupDiagnostics};
pub use error::{Error, Result};
pub use field::{Field, Geometry};
pub use forms::{assemble, QuadForm};
pub use functional::{adimurthi_druet_functional, exp_functional, norm_1alpha, ExpIntegral};
pub use green::{extract_regular_part, solve_green_planar, solve_green_torus, FitOptions, GreenResult};
pub use maximizer::{demonstrate_unboundedness, el_residual, maximize_subcritical, MaximizerConfig, MaximizerResult};
pub use mesh::{build_disc_mesh, build_polygon_mesh, Grading, Point, TriMesh};
pub use spectrum::{admissible_alpha_max, eigenpairs, eigenpairs_with, project_perp, EigenBasis, EigenOptions};
pub use testfn::{build_test_function, compute_constants, lower_bound_report, project_and_renormalize, LowerBoundReport};
pub use torus::TorusGrid;
