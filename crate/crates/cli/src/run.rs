//! Experiment orchestration: eigen, Green, maximizer, test function and
//! blow-up stages over the (alpha, epsilon) grid.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use rayon::prelude::*;
use tmlab_core::blowup::certificate;
use tmlab_core::functional::{integrate_map, norm_1alpha_sq_dofs};
use tmlab_core::green::GreenSummary;
use tmlab_core::maximizer::MaximizerSummary;
use tmlab_core::spectrum::EigenSummary;
use tmlab_core::*;

use crate::config::{ExperimentConfig, GeometrySpec};
use crate::plots::emit_plots;
use crate::record::*;

/// Geometry, forms and eigenbasis shared by every grid point.
pub struct Prepared {
    pub geometry: Geometry,
    pub forms: Arc<QuadForm>,
    pub basis: EigenBasis,
}

impl Prepared {
    pub fn info(&self, cfg: &ExperimentConfig) -> GeometryInfo {
        GeometryInfo {
            kind: cfg.geometry.kind().to_string(),
            volume: self.geometry.volume(),
            dofs: self.forms.num_dofs(),
            h_max: self.geometry.h(),
        }
    }
}

pub fn build_geometry(cfg: &ExperimentConfig) -> Result<Geometry> {
    Ok(match &cfg.geometry {
        GeometrySpec::Disc { radius } => Geometry::planar(build_disc_mesh(*radius, cfg.refinement)?),
        GeometrySpec::Polygon { vertices } => Geometry::planar(build_polygon_mesh(vertices, cfg.refinement)?),
        GeometrySpec::Torus { side, n } => Geometry::Torus(TorusGrid::new(*side, *n)?),
    })
}

fn eigen_options(cfg: &ExperimentConfig) -> EigenOptions {
    EigenOptions {
        grouping_tol: cfg.grouping_tol,
        ..EigenOptions::default()
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let geometry = build_geometry(cfg)?;
    let forms = Arc::new(assemble(&geometry)?);
    let basis = eigenpairs_with(forms.clone(), cfg.eigen_count, &eigen_options(cfg)).context("eigenpairs")?;
    Ok(Prepared { geometry, forms, basis })
}

/// Green function on a pole-graded copy of the geometry, with the test
/// function built on the same discretization.
pub struct AlphaStage {
    pub alpha: f64,
    pub green: GreenResult,
    pub certificate: f64,
    pub testfn: std::result::Result<(LowerBoundReport, Option<ProjectionSummary>), String>,
}

impl AlphaStage {
    pub fn green_summary(&self) -> GreenSummary {
        self.green.summary()
    }
}

pub fn graded_forms(prep: &Prepared, cfg: &ExperimentConfig) -> Result<(Arc<QuadForm>, Option<EigenBasis>)> {
    match &prep.geometry {
        Geometry::Planar(mesh) => {
            let t = &cfg.testfn;
            let mut grading = Grading::new(cfg.pole(), t.epsilon / t.grading_ratio);
            grading.growth = t.grading_growth;
            let g = Geometry::planar(mesh.refine_toward(&grading));
            let forms = Arc::new(assemble(&g)?);
            // E_ell projections need eigenvectors on the graded mesh
            let basis = if cfg.ell > 0 {
                Some(eigenpairs_with(forms.clone(), cfg.eigen_count, &eigen_options(cfg)).context("graded eigenpairs")?)
            } else {
                None
            };
            Ok((forms, basis))
        }
        Geometry::Torus(_) => Ok((prep.forms.clone(), Some(prep.basis.clone()))),
    }
}

pub fn alpha_stage(forms: &QuadForm, basis: Option<&EigenBasis>, cfg: &ExperimentConfig, alpha: f64) -> Result<AlphaStage> {
    let pole = cfg.pole();
    let green = match forms.geometry() {
        Geometry::Planar(_) => solve_green_planar(forms, pole, alpha, basis, cfg.ell, &cfg.green)?,
        Geometry::Torus(_) => solve_green_torus(forms, pole, alpha, basis, cfg.ell, &cfg.green)?,
    };
    let cert = certificate(forms.geometry().volume(), green.regular_part);
    let testfn = (|| -> Result<_> {
        let tf = build_test_function(&green, cfg.testfn.epsilon)?;
        let report = lower_bound_report(&tf, &green, forms)?;
        let projection = if cfg.ell > 0 || forms.is_torus() {
            let p = project_and_renormalize(&tf.field, basis, cfg.ell, forms, alpha)?;
            Some(ProjectionSummary {
                coefficients: p.coefficients,
                mean: p.mean,
                norm_before: p.norm_before,
                h1_change: p.h1_change,
            })
        } else {
            None
        };
        Ok((report, projection))
    })()
    .map_err(|e| format!("{e:#}"));
    Ok(AlphaStage {
        alpha,
        green,
        certificate: cert,
        testfn,
    })
}

pub fn maximizer_config(cfg: &ExperimentConfig, alpha: f64, epsilon: f64) -> MaximizerConfig {
    let s = &cfg.solver;
    MaximizerConfig {
        epsilon,
        alpha,
        ell: cfg.ell,
        damping: s.damping,
        max_iter: s.max_iter,
        tol: s.tol,
        multistarts: s.multistarts,
        seed: s.seed,
    }
}

pub fn constraint_checks(r: &MaximizerResult, prep: &Prepared, cfg: &ExperimentConfig) -> Result<ConstraintChecks> {
    let forms = &prep.forms;
    let d = forms.restrict(&r.u)?;
    let torus = forms.is_torus();
    let beta = r.config.beta();
    let vol = prep.geometry.volume();
    let max_orthogonality = if cfg.ell > 0 {
        prep.basis.coefficients(&r.u, cfg.ell)?.into_iter().map(f64::abs).reduce(f64::max)
    } else {
        None
    };
    let radial_asymmetry = match &prep.geometry {
        Geometry::Planar(m) if cfg.ell == 0 => radial_asymmetry(&r.u, r.x_eps, m.boundary_distance(r.x_eps)),
        _ => None,
    };
    Ok(ConstraintChecks {
        norm_1alpha: norm_1alpha_sq_dofs(&d, r.config.alpha, forms).max(0.0).sqrt(),
        mean: torus.then(|| integrate_map(&r.u, |v| v)),
        mu_recomputed: torus.then(|| integrate_map(&r.u, |v| v * (beta * v * v).exp()) / vol),
        max_orthogonality,
        radial_asymmetry,
    })
}

/// Maximizer plus blow-up diagnostics for one grid point.
pub struct PointStage {
    pub result: MaximizerResult,
    pub summary: MaximizerSummary,
    pub constraints: ConstraintChecks,
    pub blowup: BlowupDiagnostics,
    pub energy_split: Vec<EnergySplitEntry>,
}

pub fn point_stage(prep: &Prepared, green: Option<&GreenResult>, cfg: &ExperimentConfig, alpha: f64, epsilon: f64) -> Result<PointStage> {
    let mcfg = maximizer_config(cfg, alpha, epsilon);
    let result = maximize_subcritical(&prep.forms, Some(&prep.basis), &mcfg)?;
    let summary = result.summary(&prep.forms);
    let constraints = constraint_checks(&result, prep, cfg)?;
    let blowup = rescale_and_compare(&result, &cfg.blowup.deltas);
    let energy_split = cfg
        .blowup
        .deltas
        .iter()
        .map(|&delta| match green {
            Some(g) => match energy_split_check(&result, g, delta, &prep.forms) {
                Ok(rep) => EnergySplitEntry {
                    delta,
                    report: Some(rep),
                    error: None,
                },
                Err(e) => EnergySplitEntry {
                    delta,
                    report: None,
                    error: Some(e.to_string()),
                },
            },
            None => EnergySplitEntry {
                delta,
                report: None,
                error: Some("no Green function for this alpha".into()),
            },
        })
        .collect();
    Ok(PointStage {
        result,
        summary,
        constraints,
        blowup,
        energy_split,
    })
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_string())
}

/// Runs `f`, turning errors and panics into a message.
fn isolated<T>(f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(format!("{e:#}")),
        Err(p) => Err(format!("panic: {}", panic_message(p))),
    }
}

/// All records of a sweep in grid order (alpha outer, epsilon inner).
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn summary_csv(&self) -> String {
        summary_csv(&self.records)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> SweepOutcome {
    let hash = cfg.hash();
    let grid: Vec<(usize, f64, f64)> = cfg
        .alphas
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| cfg.epsilons.iter().map(move |&e| (i, a, e)))
        .collect();
    let started = now_ms();
    let blank = |index: usize, alpha: f64, epsilon: f64| RunRecord {
        config_hash: hash.clone(),
        code_version: CODE_VERSION.to_string(),
        index,
        alpha,
        epsilon,
        ell: cfg.ell,
        status: Status::Failed,
        error: None,
        geometry: None,
        eigen: None,
        green: None,
        certificate: None,
        maximizer: None,
        constraints: None,
        testfn: None,
        testfn_projection: None,
        blowup: None,
        energy_split: Vec::new(),
        timestamps: Timestamps {
            started_unix_ms: started,
            finished_unix_ms: started,
        },
    };

    let prep = match isolated(|| prepare(cfg)) {
        Ok(p) => p,
        Err(e) => {
            let records = grid
                .iter()
                .enumerate()
                .map(|(k, &(_, a, eps))| {
                    let mut r = blank(k, a, eps);
                    r.error = Some(format!("setup: {e}"));
                    r
                })
                .collect();
            return SweepOutcome { records };
        }
    };
    let info = prep.info(cfg);
    let eigen: EigenSummary = prep.basis.summary();

    let graded = isolated(|| graded_forms(&prep, cfg));
    let stages: Vec<std::result::Result<AlphaStage, String>> = cfg
        .alphas
        .par_iter()
        .map(|&a| match &graded {
            Ok((forms, basis)) => isolated(|| alpha_stage(forms, basis.as_ref(), cfg, a)),
            Err(e) => Err(e.clone()),
        })
        .collect();

    let records = grid
        .par_iter()
        .enumerate()
        .map(|(k, &(ai, alpha, epsilon))| {
            let mut r = blank(k, alpha, epsilon);
            r.timestamps.started_unix_ms = now_ms();
            r.geometry = Some(info.clone());
            r.eigen = Some(eigen.clone());
            let stage = stages[ai].as_ref();
            let mut errors = Vec::new();
            match stage {
                Ok(s) => {
                    r.green = Some(s.green_summary());
                    r.certificate = Some(s.certificate);
                    match &s.testfn {
                        Ok((rep, proj)) => {
                            r.testfn = Some(*rep);
                            r.testfn_projection = proj.clone();
                        }
                        Err(e) => errors.push(format!("testfn: {e}")),
                    }
                }
                Err(e) => errors.push(format!("green: {e}")),
            }
            match isolated(|| point_stage(&prep, stage.ok().map(|s| &s.green), cfg, alpha, epsilon)) {
                Ok(p) => {
                    r.maximizer = Some(p.summary);
                    r.constraints = Some(p.constraints);
                    r.blowup = Some(p.blowup);
                    r.energy_split = p.energy_split;
                }
                Err(e) => errors.push(format!("maximizer: {e}")),
            }
            match r.non_finite_fields() {
                Ok(bad) if !bad.is_empty() => errors.push(format!("non-finite fields: {}", bad.join(", "))),
                Ok(_) => {}
                Err(e) => errors.push(format!("{e:#}")),
            }
            if errors.is_empty() {
                r.status = Status::Ok;
            } else {
                r.error = Some(errors.join("; "));
            }
            r.timestamps.finished_unix_ms = now_ms();
            r
        })
        .collect();
    SweepOutcome { records }
}

pub fn records_dir(out: &Path) -> PathBuf {
    out.join("records")
}

/// Writes `records/point-NNN.json`, `summary.csv`, the effective config and
/// the plots under `out`.
pub fn write_outputs(out: &Path, cfg: &ExperimentConfig, outcome: &SweepOutcome) -> Result<Vec<PathBuf>> {
    let rec = records_dir(out);
    std::fs::create_dir_all(&rec).with_context(|| format!("creating {}", rec.display()))?;
    let mut written = Vec::new();
    for r in &outcome.records {
        let p = rec.join(format!("point-{:03}.json", r.index));
        r.save(&p)?;
        written.push(p);
    }
    let summary = out.join("summary.csv");
    std::fs::write(&summary, outcome.summary_csv())?;
    written.push(summary);
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, toml::to_string(cfg)?)?;
    written.push(cfg_path);
    written.extend(emit_plots(&outcome.records, &out.join("plots"))?);
    Ok(written)
}

/// Records under `out/records`, sorted by grid index.
pub fn load_records(out: &Path) -> Result<Vec<RunRecord>> {
    let dir = records_dir(out);
    let mut records = Vec::new();
    for entry in std::fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "json") {
            records.push(RunRecord::load(&p)?);
        }
    }
    records.sort_by_key(|r| r.index);
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DISC: &str = r#"
    refinement = 2
    alphas = [0.0, 2.0]
    epsilons = [6.0, 3.0]
    [testfn]
    epsilon = 1e-3
    "#;

    const TORUS: &str = r#"
    ell = 1
    eigen_count = 6
    alphas = [0.0, 10.0]
    epsilons = [6.0]
    [geometry]
    kind = "torus"
    side = 1.0
    n = 64
    [testfn]
    epsilon = 0.03
    [blowup]
    deltas = [0.1, 0.2]
    "#;

    #[test]
    fn sweep_is_byte_reproducible() {
        let cfg = ExperimentConfig::from_toml_str(DISC).unwrap();
        let a = run_experiment(&cfg);
        let b = run_experiment(&cfg);
        assert_eq!(a.failures(), 0, "{:?}", a.records.iter().map(|r| &r.error).collect::<Vec<_>>());
        assert_eq!(a.summary_csv(), b.summary_csv());
        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &cfg, &a).unwrap();
        let back = load_records(dir.path()).unwrap();
        assert_eq!(back, a.records);
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(csv, b.summary_csv());
        for name in ["value_vs_epsilon.svg", "radial_profile.svg", "regular_part_vs_alpha.svg"] {
            assert!(dir.path().join("plots").join(name).exists());
        }
    }

    #[test]
    fn torus_records_carry_constraint_checks() {
        let cfg = ExperimentConfig::from_toml_str(TORUS).unwrap();
        let out = run_experiment(&cfg);
        for r in &out.records {
            assert_eq!(r.status, Status::Ok, "{:?}", r.error);
            let m = r.maximizer.as_ref().unwrap();
            let c = r.constraints.as_ref().unwrap();
            assert!(m.converged && m.c_eps > 0.0);
            assert!(c.mean.unwrap().abs() < 1e-10);
            let (mu, mu2) = (m.mu_eps.unwrap(), c.mu_recomputed.unwrap());
            assert!((mu - mu2).abs() < 1e-8 * m.lambda_eps.max(1.0));
            assert!(c.max_orthogonality.unwrap() < 1e-10);
            assert!((c.norm_1alpha - 1.0).abs() < 1e-10);
            let p = r.testfn_projection.as_ref().unwrap();
            assert!(p.mean.unwrap().is_finite() && p.coefficients.len() == 4);
        }
    }
}
