//! Subcritical maximizers of `int e^{(4 pi - eps) u^2}` on the unit sphere of
//! `||.||_{1,alpha}`, by damped fixed-point iteration on the Euler-Lagrange
//! system `(K - alpha M) u = load(u e^{beta u^2}) / lambda`.
//!
//! The load uses the same quadrature as the functional, so a fixed point is
//! exactly a critical point of the discrete problem and `lambda = u . load`.
//! On the torus the constant mode is removed from every solve (the Lagrange
//! multiplier `mu` of the mean-zero constraint).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, Geometry};
use crate::forms::{QuadForm, ShiftedSolver};
use crate::functional::{exp_functional, load_vector, norm_1alpha_sq_dofs, ExpIntegral};
use crate::mesh::Point;
use crate::sparse::dot;
use crate::spectrum::{check_admissible, EigenBasis, DEFAULT_GUARD};

pub const CRITICAL: f64 = 4.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaximizerConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub ell: usize,
    pub damping: f64,
    pub max_iter: usize,
    /// Stop when the energy seminorm of the iterate difference falls below.
    pub tol: f64,
    pub multistarts: usize,
    pub seed: u64,
}

impl Default for MaximizerConfig {
    fn default() -> Self {
        Self {
            epsilon: std::f64::consts::PI,
            alpha: 0.0,
            ell: 0,
            damping: 0.5,
            max_iter: 20_000,
            tol: 1e-12,
            multistarts: 3,
            seed: 7,
        }
    }
}

impl MaximizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < CRITICAL) {
            return Err(Error::InvalidInput(format!("epsilon = {} must lie in (0, 4 pi)", self.epsilon)));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput(format!("damping = {} must lie in (0, 1]", self.damping)));
        }
        if self.max_iter == 0 || !(self.tol > 0.0) || self.multistarts == 0 {
            return Err(Error::InvalidInput("max_iter, tol and multistarts must be positive".into()));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        CRITICAL - self.epsilon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Eigenfunction,
    MoserBump,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub index: usize,
    pub kind: StartKind,
    pub initial_value: f64,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MaximizerResult {
    pub config: MaximizerConfig,
    pub u: Field,
    pub value: ExpIntegral,
    /// `int u^2 e^{beta u^2}`.
    pub lambda_eps: f64,
    /// `(1/|T|) int u e^{beta u^2}` on the torus.
    pub mu_eps: Option<f64>,
    pub c_eps: f64,
    pub x_eps: Point,
    pub peak_node: usize,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// Planar `ell = 0` runs: whether every interior nodal value is positive.
    pub positive: Option<bool>,
    pub start: StartSummary,
    pub starts: Vec<StartSummary>,
}

/// Serializable digest of a [`MaximizerResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximizerSummary {
    pub config: MaximizerConfig,
    pub value: f64,
    pub log_value: f64,
    pub overflow_regime: bool,
    pub lambda_eps: f64,
    pub mu_eps: Option<f64>,
    pub c_eps: f64,
    pub x_eps: Point,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub norm_1alpha: f64,
    pub positive: Option<bool>,
    pub starts: Vec<StartSummary>,
}

impl MaximizerResult {
    pub fn summary(&self, forms: &QuadForm) -> MaximizerSummary {
        let d = forms.restrict(&self.u).expect("result lives on the forms' geometry");
        MaximizerSummary {
            config: self.config,
            value: self.value.value,
            log_value: self.value.log_value,
            overflow_regime: self.value.overflow_regime,
            lambda_eps: self.lambda_eps,
            mu_eps: self.mu_eps,
            c_eps: self.c_eps,
            x_eps: self.x_eps,
            iterations: self.iterations,
            converged: self.converged,
            residual: self.residual,
            norm_1alpha: norm_1alpha_sq_dofs(&d, self.config.alpha, forms).max(0.0).sqrt(),
            positive: self.positive,
            starts: self.starts.clone(),
        }
    }
}

/// Shared state of one maximization problem.
struct Problem<'a> {
    forms: &'a QuadForm,
    basis: Option<&'a EigenBasis>,
    cfg: MaximizerConfig,
    solver: ShiftedSolver,
}

impl Problem<'_> {
    fn norm_sq(&self, d: &[f64]) -> f64 {
        norm_1alpha_sq_dofs(d, self.cfg.alpha, self.forms)
    }

    /// Projects onto the admissible subspace and normalizes.
    fn admissible(&self, mut d: Vec<f64>) -> Option<Vec<f64>> {
        if let Some(c) = self.forms.constant_dof() {
            d[c] = 0.0;
        }
        if let (Some(b), true) = (self.basis, self.cfg.ell > 0) {
            b.project_dofs(&mut d, self.cfg.ell);
        }
        let n2 = self.norm_sq(&d);
        if !(n2 > 0.0) || !n2.is_finite() {
            return None;
        }
        let s = 1.0 / n2.sqrt();
        d.iter_mut().for_each(|x| *x *= s);
        Some(d)
    }

    /// Load of `u e^{beta u^2 - shift}`, with the shift keeping exponents
    /// representable; the shift cancels in every ratio used below.
    fn scaled_load(&self, d: &[f64]) -> Result<(Vec<f64>, f64)> {
        let u = self.forms.extend(d);
        let beta = self.cfg.beta();
        let peak = u.node_values().iter().fold(0.0f64, |m, v| m.max(v * v));
        let shift = if beta * peak > 600.0 { beta * peak } else { 0.0 };
        let b = load_vector(&u, self.forms, |v| v * (beta * v * v - shift).exp())?;
        Ok((b, shift))
    }

    /// The admissible part of a load: constant mode and the first `ell`
    /// eigenspaces removed.
    fn project_load(&self, b: &mut [f64]) {
        if let Some(c) = self.forms.constant_dof() {
            b[c] = 0.0;
        }
        if let (Some(basis), true) = (self.basis, self.cfg.ell > 0) {
            basis.project_load(b, self.cfg.ell);
        }
    }

    fn value(&self, d: &[f64]) -> Result<ExpIntegral> {
        exp_functional(&self.forms.extend(d), self.cfg.beta())
    }

    fn residual(&self, d: &[f64]) -> Result<f64> {
        let (mut b, _) = self.scaled_load(d)?;
        let lam = dot(d, &b);
        self.project_load(&mut b);
        let mut r = self.forms.apply_shifted(self.cfg.alpha, d);
        self.project_load(&mut r);
        for (x, y) in r.iter_mut().zip(&b) {
            *x -= y / lam;
        }
        Ok(self.forms.dual_norm(&r))
    }

    fn run(&self, start: Vec<f64>) -> Result<(Vec<f64>, usize, bool)> {
        let theta = self.cfg.damping;
        let mut u = start;
        for it in 1..=self.cfg.max_iter {
            let (mut b, _) = self.scaled_load(&u)?;
            self.project_load(&mut b);
            let v = self.solver.solve(&b);
            let Some(v) = self.admissible(v) else {
                return Err(Error::ConstraintDrift(format!("iterate {it} degenerated")));
            };
            let w: Vec<f64> = v.iter().zip(&u).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            let Some(next) = self.admissible(w) else {
                return Err(Error::ConstraintDrift(format!("damped iterate {it} degenerated")));
            };
            let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
            let step = self.forms.energy(&diff).max(0.0).sqrt();
            u = next;
            if !step.is_finite() {
                return Err(Error::ConstraintDrift(format!("non-finite step at iterate {it}")));
            }
            if step < self.cfg.tol {
                return Ok((u, it, true));
            }
        }
        Ok((u, self.cfg.max_iter, false))
    }
}

fn solver_for(forms: &QuadForm, basis: Option<&EigenBasis>, cfg: &MaximizerConfig) -> Result<ShiftedSolver> {
    match basis {
        Some(b) => check_admissible(b, cfg.ell, cfg.alpha, DEFAULT_GUARD)?,
        None if cfg.ell > 0 => return Err(Error::InvalidInput("ell > 0 needs an eigenbasis".into())),
        None => {}
    }
    let excluded = if forms.is_torus() {
        crate::green::excluded_dofs(forms, basis, cfg.ell)
    } else {
        Vec::new()
    };
    let solver = forms.shifted_solver(cfg.alpha, &excluded)?;
    if let (ShiftedSolver::Sparse(s), 0) = (&solver, cfg.ell) {
        if !s.is_cholesky() {
            return Err(Error::AlphaAboveThreshold { value: cfg.alpha });
        }
    }
    Ok(solver)
}

/// Center and radius of a bump that fits inside the geometry.
fn bump_site(geometry: &Geometry) -> (Point, f64) {
    match geometry {
        Geometry::Planar(mesh) => {
            let mut best = (0.0, [0.0, 0.0]);
            for &p in mesh.vertices() {
                let d = mesh.boundary_distance(p);
                if d > best.0 {
                    best = (d, p);
                }
            }
            (best.1, 0.9 * best.0)
        }
        Geometry::Torus(g) => ([0.5 * g.side(), 0.5 * g.side()], 0.25 * g.side()),
    }
}

fn initial_guesses(p: &Problem, count: usize) -> Vec<(StartKind, Option<Vec<f64>>)> {
    let forms = p.forms;
    let geom = forms.geometry();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let kind = match i {
            0 => StartKind::Eigenfunction,
            1 => StartKind::MoserBump,
            _ => StartKind::Random,
        };
        let guess = match kind {
            StartKind::Eigenfunction => p
                .basis
                .filter(|b| b.num_groups() > p.cfg.ell)
                .map(|b| b.vector(p.cfg.ell, 0).to_vec()),
            StartKind::MoserBump => {
                let (c, rho) = bump_site(geom);
                let bump = Field::from_fn(geom.clone(), |x| {
                    let r = geom.distance(c, x);
                    if r >= rho {
                        0.0
                    } else {
                        (rho / r.max(rho / std::f64::consts::E)).ln()
                    }
                });
                forms.restrict(&bump).ok()
            }
            StartKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(p.cfg.seed.wrapping_add(i as u64));
                let r: Vec<f64> = (0..forms.num_dofs()).map(|_| rng.random::<f64>() - 0.5).collect();
                // one smoothing solve turns white noise into an H^1 field
                let mr = forms.mass().mul_vec(&r);
                Some(p.solver.solve(&mr))
            }
        };
        out.push((kind, guess.and_then(|g| p.admissible(g))));
    }
    out
}

/// Maximizes `int e^{(4 pi - eps) u^2}` over `||u||_{1,alpha} = 1` (and the
/// complement of the first `ell` eigenspaces, and zero mean on the torus).
pub fn maximize_subcritical(forms: &QuadForm, basis: Option<&EigenBasis>, cfg: &MaximizerConfig) -> Result<MaximizerResult> {
    cfg.validate()?;
    let solver = solver_for(forms, basis, cfg)?;
    let p = Problem {
        forms,
        basis,
        cfg: *cfg,
        solver,
    };
    let guesses = initial_guesses(&p, cfg.multistarts);
    let runs: Vec<Option<Result<(Vec<f64>, StartSummary)>>> = guesses
        .into_par_iter()
        .enumerate()
        .map(|(index, (kind, guess))| {
            let g = guess?;
            Some((|| {
                let initial_value = p.value(&g)?.value;
                let (u, iterations, converged) = p.run(g)?;
                let value = p.value(&u)?.value;
                Ok((
                    u,
                    StartSummary {
                        index,
                        kind,
                        initial_value,
                        value,
                        iterations,
                        converged,
                    },
                ))
            })())
        })
        .collect();
    let mut best: Option<(Vec<f64>, StartSummary)> = None;
    let mut starts = Vec::new();
    let mut first_err = None;
    for run in runs.into_iter().flatten() {
        match run {
            Ok((u, s)) => {
                starts.push(s);
                let better = match &best {
                    None => true,
                    Some((_, b)) => s.value > b.value * (1.0 + 1e-12),
                };
                if better {
                    best = Some((u, s));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((mut d, start)) = best else {
        return Err(first_err.unwrap_or_else(|| Error::InvalidInput("no admissible starting field".into())));
    };
    let mut u = forms.extend(&d);
    let vals = u.node_values();
    let (hi, lo) = vals.iter().fold((f64::MIN, f64::MAX), |(h, l), &v| (h.max(v), l.min(v)));
    if hi < -lo {
        d.iter_mut().for_each(|x| *x = -*x);
        u = forms.extend(&d);
    }
    let (b, shift) = p.scaled_load(&d)?;
    let lambda_eps = dot(&d, &b) * shift.exp();
    let mu_eps = forms.constant_dof().map(|c| {
        let side = forms.geometry().torus().expect("torus").side();
        b[c] * shift.exp() / side
    });
    // signed argmax: odd-symmetric maximizers tie |max| and |min|
    let (peak_node, c_eps) = u
        .node_values()
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::MIN), |b, (i, v)| if v > b.1 { (i, v) } else { b });
    let positive = match (forms.geometry(), cfg.ell) {
        (Geometry::Planar(mesh), 0) => Some(
            mesh.boundary_flags()
                .iter()
                .zip(u.coeffs())
                .all(|(&bd, &v)| bd || v > 0.0),
        ),
        _ => None,
    };
    Ok(MaximizerResult {
        config: *cfg,
        value: p.value(&d)?,
        lambda_eps,
        mu_eps,
        c_eps,
        x_eps: u.node_point(peak_node),
        peak_node,
        iterations: start.iterations,
        converged: start.converged,
        residual: p.residual(&d)?,
        positive,
        start,
        starts,
        u,
    })
}

/// Dual norm of the Euler-Lagrange residual
/// `(K - alpha M) u - load(u e^{beta u^2}) / lambda (+ mu term)`, restricted
/// to the admissible subspace.
pub fn el_residual(u: &Field, forms: &QuadForm, basis: Option<&EigenBasis>, cfg: &MaximizerConfig) -> Result<f64> {
    let p = Problem {
        forms,
        basis,
        cfg: *cfg,
        solver: ShiftedSolver::Diagonal(Vec::new()),
    };
    p.residual(&forms.restrict(u)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnboundedRow {
    pub t: f64,
    /// `||t e||_{1,alpha}^2 = t^2 (lambda - alpha)`.
    pub norm_sq: f64,
    /// `log int e^{4 pi (t e)^2}`.
    pub log_value: f64,
    /// `4 pi t^2 max e^2`.
    pub peak_exponent: f64,
    pub overflow_regime: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnboundedTable {
    pub alpha: f64,
    pub eigenvalue: f64,
    /// Largest `t` with `||t e||_{1,alpha} <= 1`; `None` when the constraint
    /// never binds.
    pub t_max: Option<f64>,
    pub rows: Vec<UnboundedRow>,
}

/// Evaluates the critical functional along `t e`, with `e` the first
/// eigenfunction of group `ell`.
pub fn demonstrate_unboundedness(forms: &QuadForm, basis: &EigenBasis, alpha: f64, ell: usize, t_values: &[f64]) -> Result<UnboundedTable> {
    let lam = crate::spectrum::admissible_alpha_max(basis, ell)?;
    let e = basis.vector(ell, 0);
    let ef = forms.extend(e);
    let peak = ef.node_values().iter().fold(0.0f64, |m, v| m.max(v * v));
    let unit = norm_1alpha_sq_dofs(e, alpha, forms);
    let mut rows = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let v = exp_functional(&ef.scaled(t), CRITICAL)?;
        rows.push(UnboundedRow {
            t,
            norm_sq: t * t * unit,
            log_value: v.log_value,
            peak_exponent: CRITICAL * t * t * peak,
            overflow_regime: v.overflow_regime,
        });
    }
    Ok(UnboundedTable {
        alpha,
        eigenvalue: lam,
        t_max: (unit > 1e-12 * lam).then(|| 1.0 / unit.sqrt()),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::assemble;
    use crate::mesh::{build_disc_mesh, build_polygon_mesh};
    use crate::spectrum::eigenpairs_with;
    use crate::spectrum::EigenOptions;
    use crate::torus::TorusGrid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn setup(g: Geometry, k: usize) -> (Arc<QuadForm>, EigenBasis) {
        let forms = Arc::new(assemble(&g).unwrap());
        let b = eigenpairs_with(forms.clone(), k, &EigenOptions::default()).unwrap();
        (forms, b)
    }

    #[test]
    fn disc_maximizer_is_normalized_and_critical() {
        let (forms, basis) = setup(Geometry::planar(build_disc_mesh(1.0, 2).unwrap()), 2);
        let cfg = MaximizerConfig {
            epsilon: 2.0 * PI,
            ..MaximizerConfig::default()
        };
        let r = maximize_subcritical(&forms, Some(&basis), &cfg).unwrap();
        assert!(r.converged);
        assert!(r.residual < 1e-8, "{}", r.residual);
        let d = forms.restrict(&r.u).unwrap();
        assert!((norm_1alpha_sq_dofs(&d, 0.0, &forms) - 1.0).abs() < 1e-10);
        assert!(r.value.value > forms.geometry().volume());
        assert_eq!(r.positive, Some(true));
        assert!(r.start.value >= r.start.initial_value);
        // e^t <= 1 + t e^t at every point
        assert!(r.value.value - forms.geometry().volume() <= cfg.beta() * r.lambda_eps + 1e-8);
    }

    #[test]
    fn perturbation_raises_residual() {
        let (forms, basis) = setup(Geometry::planar(build_disc_mesh(1.0, 2).unwrap()), 3);
        let cfg = MaximizerConfig {
            epsilon: 2.0 * PI,
            ..MaximizerConfig::default()
        };
        let r = maximize_subcritical(&forms, Some(&basis), &cfg).unwrap();
        let base = el_residual(&r.u, &forms, Some(&basis), &cfg).unwrap();
        assert!((base - r.residual).abs() < 1e-14);
        let bumped = r.u.axpy(0.01, &basis.function(1, 0)).unwrap();
        assert!(el_residual(&bumped, &forms, Some(&basis), &cfg).unwrap() >= 10.0 * base.max(1e-12));
    }

    #[test]
    fn orthogonal_maximizer_on_square() {
        let g = Geometry::planar(build_polygon_mesh(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], 3).unwrap());
        let (forms, basis) = setup(g, 3);
        let cfg = MaximizerConfig {
            epsilon: 2.0 * PI,
            ell: 1,
            ..MaximizerConfig::default()
        };
        let r = maximize_subcritical(&forms, Some(&basis), &cfg).unwrap();
        assert!(basis.coefficients(&r.u, 1).unwrap()[0].abs() < 1e-10);
        assert!(r.residual < 1e-8);
        assert!(r.positive.is_none());
        let full = maximize_subcritical(&forms, Some(&basis), &MaximizerConfig { ell: 0, ..cfg }).unwrap();
        assert!(r.value.value <= full.value.value + 1e-10);
    }

    #[test]
    fn torus_maximizer_mean_zero() {
        let g = Geometry::Torus(TorusGrid::new(1.0, 16).unwrap());
        let (forms, basis) = setup(g, 4);
        let cfg = MaximizerConfig {
            epsilon: 2.0 * PI,
            ..MaximizerConfig::default()
        };
        let r = maximize_subcritical(&forms, Some(&basis), &cfg).unwrap();
        assert!(r.converged && r.residual < 1e-8, "{}", r.residual);
        let mean = crate::functional::integrate_map(&r.u, |v| v);
        assert!(mean.abs() < 1e-10);
        let beta = cfg.beta();
        let mu = crate::functional::integrate_map(&r.u, |v| v * (beta * v * v).exp());
        assert!((mu - r.mu_eps.unwrap()).abs() < 1e-10 * mu.abs().max(1.0));
    }

    #[test]
    fn unboundedness_table() {
        let (forms, basis) = setup(Geometry::planar(build_disc_mesh(1.0, 2).unwrap()), 1);
        let lam = basis.eigenvalues()[0];
        let tab = demonstrate_unboundedness(&forms, &basis, lam, 0, &[1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        assert!(tab.t_max.is_none());
        for w in tab.rows.windows(2) {
            assert!(w[0].norm_sq.abs() < 1e-10 * w[0].t * w[0].t * lam);
            assert!(w[1].log_value > w[0].log_value);
        }
        let below = demonstrate_unboundedness(&forms, &basis, 0.99 * lam, 0, &[1.0]).unwrap();
        let t_max = below.t_max.unwrap();
        assert!((t_max - 1.0 / (0.01 * lam).sqrt()).abs() < 1e-8 * t_max);
    }

    #[test]
    fn config_validation() {
        let bad = MaximizerConfig {
            epsilon: 0.0,
            ..MaximizerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MaximizerConfig {
            damping: 1.5,
            ..MaximizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
