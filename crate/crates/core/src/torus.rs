//! The flat square torus `[0, L)^2` and its real trigonometric mode basis.
//!
//! Per axis, the `n` basis functions are
//! `1, sqrt2 cos(2 pi j x/L), sqrt2 sin(2 pi j x/L)` for `1 <= j < n/2`, and
//! the Nyquist cosine `sqrt2 cos(pi n x/L)`. Two-dimensional modes are tensor
//! products scaled by `1/L`, so they are orthonormal in `L^2` of the torus and
//! every mode is an eigenfunction of the Laplacian. In mode coordinates the
//! mass matrix is the identity and the stiffness matrix is diagonal.

use std::f64::consts::{SQRT_2, TAU};

use faer::Mat;

use crate::error::{Error, Result};
use crate::mesh::Point;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    side: f64,
    n: usize,
}

/// Kind of a one-dimensional basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisMode {
    Constant,
    Cos(usize),
    Sin(usize),
    Nyquist,
}

impl AxisMode {
    pub fn frequency(self, n: usize) -> usize {
        match self {
            AxisMode::Constant => 0,
            AxisMode::Cos(j) | AxisMode::Sin(j) => j,
            AxisMode::Nyquist => n / 2,
        }
    }
}

impl TorusGrid {
    pub fn new(side: f64, n: usize) -> Result<Self> {
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::InvalidInput(format!("torus side {side} must be positive")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "torus modes per axis must be even and >= 4, got {n}"
            )));
        }
        Ok(Self { side, n })
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    pub fn num_modes(&self) -> usize {
        self.n * self.n
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn axis_mode(&self, a: usize) -> AxisMode {
        match a {
            0 => AxisMode::Constant,
            a if a == self.n - 1 => AxisMode::Nyquist,
            a if a % 2 == 1 => AxisMode::Cos(a.div_ceil(2)),
            a => AxisMode::Sin(a / 2),
        }
    }

    /// Mode index of the tensor product `(a, b)`; `a` runs along x.
    pub fn mode_index(&self, a: usize, b: usize) -> usize {
        a * self.n + b
    }

    pub fn mode_axes(&self, idx: usize) -> (usize, usize) {
        (idx / self.n, idx % self.n)
    }

    /// Integer frequencies `(j, l)` of a mode.
    pub fn frequencies(&self, idx: usize) -> (usize, usize) {
        let (a, b) = self.mode_axes(idx);
        (self.axis_mode(a).frequency(self.n), self.axis_mode(b).frequency(self.n))
    }

    /// Laplacian eigenvalue `(2 pi / L)^2 (j^2 + l^2)` of a mode.
    pub fn symbol(&self, idx: usize) -> f64 {
        let (j, l) = self.frequencies(idx);
        let k = TAU / self.side;
        k * k * (j * j + l * l) as f64
    }

    /// True for modes containing a Nyquist factor.
    pub fn is_nyquist(&self, idx: usize) -> bool {
        let (a, b) = self.mode_axes(idx);
        a == self.n - 1 || b == self.n - 1
    }

    /// One-dimensional basis function `a` at coordinate `x`, without the
    /// `1/L` factor.
    pub fn axis_value(&self, a: usize, x: f64) -> f64 {
        let w = TAU * x / self.side;
        match self.axis_mode(a) {
            AxisMode::Constant => 1.0,
            AxisMode::Cos(j) => SQRT_2 * (j as f64 * w).cos(),
            AxisMode::Sin(j) => SQRT_2 * (j as f64 * w).sin(),
            AxisMode::Nyquist => SQRT_2 * ((self.n / 2) as f64 * w).cos(),
        }
    }

    /// Derivative of [`axis_value`](TorusGrid::axis_value) in `x`.
    pub fn axis_derivative(&self, a: usize, x: f64) -> f64 {
        let k = TAU / self.side;
        let w = k * x;
        match self.axis_mode(a) {
            AxisMode::Constant => 0.0,
            AxisMode::Cos(j) => -SQRT_2 * j as f64 * k * (j as f64 * w).sin(),
            AxisMode::Sin(j) => SQRT_2 * j as f64 * k * (j as f64 * w).cos(),
            AxisMode::Nyquist => {
                let j = (self.n / 2) as f64;
                -SQRT_2 * j * k * (j * w).sin()
            }
        }
    }

    pub fn axis_derivative_matrix(&self, coords: &[f64]) -> Mat<f64> {
        Mat::from_fn(coords.len(), self.n, |i, a| self.axis_derivative(a, coords[i]))
    }

    /// Gradient components on the collocation grid.
    pub fn gradient_on_grid(&self, coeffs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = self.grid_coords();
        let t = self.axis_matrix(&c);
        let dt = self.axis_derivative_matrix(&c);
        (self.evaluate_with(&dt, &t, coeffs), self.evaluate_with(&t, &dt, coeffs))
    }

    pub fn mode_value(&self, idx: usize, p: Point) -> f64 {
        let (a, b) = self.mode_axes(idx);
        self.axis_value(a, p[0]) * self.axis_value(b, p[1]) / self.side
    }

    /// Matrix `T[i, a] = b_a(x_i)` for the given coordinates.
    pub fn axis_matrix(&self, coords: &[f64]) -> Mat<f64> {
        Mat::from_fn(coords.len(), self.n, |i, a| self.axis_value(a, coords[i]))
    }

    pub fn grid_coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.spacing()).collect()
    }

    /// Values on the collocation grid, `out[i * n + j] = u(x_i, y_j)`.
    pub fn to_grid(&self, coeffs: &[f64]) -> Vec<f64> {
        let t = self.axis_matrix(&self.grid_coords());
        self.evaluate_with(&t, &t, coeffs)
    }

    /// Evaluates the mode expansion on the tensor grid `xs x ys` given the
    /// axis matrices of those coordinates.
    pub fn evaluate_with(&self, tx: &Mat<f64>, ty: &Mat<f64>, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let c = Mat::from_fn(n, n, |a, b| coeffs[a * n + b]);
        let v = tx * &c * ty.transpose();
        let inv_l = 1.0 / self.side;
        let (r, s) = (v.nrows(), v.ncols());
        let mut out = Vec::with_capacity(r * s);
        for i in 0..r {
            for j in 0..s {
                out.push(v[(i, j)] * inv_l);
            }
        }
        out
    }

    pub fn evaluate_at(&self, coeffs: &[f64], p: Point) -> f64 {
        let tx = self.axis_matrix(&[p[0]]);
        let ty = self.axis_matrix(&[p[1]]);
        self.evaluate_with(&tx, &ty, coeffs)[0]
    }

    /// Mode coefficients interpolating grid values; inverse of [`to_grid`].
    ///
    /// [`to_grid`]: TorusGrid::to_grid
    pub fn from_grid(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n;
        let t = self.axis_matrix(&self.grid_coords());
        let u = Mat::from_fn(n, n, |i, j| values[i * n + j]);
        let c = t.transpose() * &u * &t;
        let scale = |a: usize| if a == n - 1 { 2.0 * n as f64 } else { n as f64 };
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] = c[(a, b)] * self.side / (scale(a) * scale(b));
            }
        }
        out
    }

    /// Load vector `int phi_mode f` under the trapezoidal rule, given grid
    /// values of `f`.
    pub fn load_from_grid(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n;
        let t = self.axis_matrix(&self.grid_coords());
        let f = Mat::from_fn(n, n, |i, j| values[i * n + j]);
        let c = t.transpose() * &f * &t;
        let w = self.area() / (n * n) as f64 / self.side;
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] = c[(a, b)] * w;
            }
        }
        out
    }

    /// Shortest periodic displacement from `a` to `b`.
    pub fn displacement(&self, a: Point, b: Point) -> [f64; 2] {
        let wrap = |d: f64| d - self.side * (d / self.side).round();
        [wrap(b[0] - a[0]), wrap(b[1] - a[1])]
    }

    pub fn distance(&self, a: Point, b: Point) -> f64 {
        let d = self.displacement(a, b);
        d[0].hypot(d[1])
    }

    pub fn grid_point(&self, idx: usize) -> Point {
        let h = self.spacing();
        [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h]
    }
}
