//! Per-point run records and the summary table.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use tmlab_core::blowup::EnergySplitReport;
use tmlab_core::green::GreenSummary;
use tmlab_core::maximizer::MaximizerSummary;
use tmlab_core::spectrum::EigenSummary;
use tmlab_core::{BlowupDiagnostics, LowerBoundReport};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryInfo {
    pub kind: String,
    pub volume: f64,
    pub dofs: usize,
    pub h_max: f64,
}

/// Side conditions of a maximizer, recomputed from the returned field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintChecks {
    pub norm_1alpha: f64,
    /// `int u` (torus).
    pub mean: Option<f64>,
    /// `(1/Vol) int u e^{beta u^2}` recomputed (torus).
    pub mu_recomputed: Option<f64>,
    /// Largest `|(u, e_ij)_M|` over the removed groups (`ell > 0`).
    pub max_orthogonality: Option<f64>,
    /// Angular RMS spread of `u` over the mean radial profile around the
    /// pole, relative to the profile RMS (planar, `ell = 0`).
    pub radial_asymmetry: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub coefficients: Vec<f64>,
    pub mean: Option<f64>,
    pub norm_before: f64,
    pub h1_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySplitEntry {
    pub delta: f64,
    pub report: Option<EnergySplitReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub code_version: String,
    pub index: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub ell: usize,
    pub status: Status,
    pub error: Option<String>,
    pub geometry: Option<GeometryInfo>,
    pub eigen: Option<EigenSummary>,
    pub green: Option<GreenSummary>,
    pub certificate: Option<f64>,
    pub maximizer: Option<MaximizerSummary>,
    pub constraints: Option<ConstraintChecks>,
    pub testfn: Option<LowerBoundReport>,
    pub testfn_projection: Option<ProjectionSummary>,
    pub blowup: Option<BlowupDiagnostics>,
    pub energy_split: Vec<EnergySplitEntry>,
    pub timestamps: Timestamps,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Dotted paths of every non-finite float in the record.
    pub fn non_finite_fields(&self) -> Result<Vec<String>> {
        // TOML keeps NaN and infinities distinct from missing values
        let v = toml::Value::try_from(self).context("record to toml")?;
        let mut out = Vec::new();
        walk(&v, String::new(), &mut out);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn walk(v: &toml::Value, path: String, out: &mut Vec<String>) {
    match v {
        toml::Value::Float(x) if !x.is_finite() => out.push(path),
        toml::Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                walk(x, format!("{path}[{i}]"), out);
            }
        }
        toml::Value::Table(t) => {
            for (k, x) in t {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                walk(x, p, out);
            }
        }
        _ => {}
    }
}

pub const SUMMARY_HEADER: &str = "index,alpha,epsilon,status,value,log_value,lambda_eps,mu_eps,c_eps,iterations,converged,residual,regular_part,certificate,testfn_total,testfn_margin,log_r_eps";

fn num(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.12e}")).unwrap_or_default()
}

/// Summary table in record order. Timestamps are excluded, so equal runs
/// give identical bytes.
pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in records {
        let m = r.maximizer.as_ref();
        let status = match r.status {
            Status::Ok => "ok",
            Status::Failed => "failed",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.index,
            num(Some(r.alpha)),
            num(Some(r.epsilon)),
            status,
            num(m.map(|m| m.value)),
            num(m.map(|m| m.log_value)),
            num(m.map(|m| m.lambda_eps)),
            num(m.and_then(|m| m.mu_eps)),
            num(m.map(|m| m.c_eps)),
            m.map(|m| m.iterations.to_string()).unwrap_or_default(),
            m.map(|m| m.converged.to_string()).unwrap_or_default(),
            num(m.map(|m| m.residual)),
            num(r.green.as_ref().map(|g| g.regular_part)),
            num(r.certificate),
            num(r.testfn.map(|t| t.total)),
            num(r.testfn.map(|t| t.margin)),
            num(r.blowup.as_ref().map(|b| b.log_r_eps)),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(index: usize) -> RunRecord {
        RunRecord {
            config_hash: "h".into(),
            code_version: CODE_VERSION.into(),
            index,
            alpha: 0.0,
            epsilon: 1.0,
            ell: 0,
            status: Status::Failed,
            error: Some("boom".into()),
            geometry: None,
            eigen: None,
            green: None,
            certificate: Some(11.5),
            maximizer: None,
            constraints: None,
            testfn: None,
            testfn_projection: None,
            blowup: None,
            energy_split: vec![],
            timestamps: Timestamps {
                started_unix_ms: 1,
                finished_unix_ms: 2,
            },
        }
    }

    #[test]
    fn finds_non_finite_fields() {
        let mut r = blank(0);
        assert!(r.non_finite_fields().unwrap().is_empty());
        r.certificate = Some(f64::INFINITY);
        r.energy_split.push(EnergySplitEntry {
            delta: f64::NAN,
            report: None,
            error: None,
        });
        assert_eq!(r.non_finite_fields().unwrap(), vec!["certificate".to_string(), "energy_split[0].delta".to_string()]);
    }

    #[test]
    fn csv_rows() {
        let csv = summary_csv(&[blank(0), blank(1)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], SUMMARY_HEADER);
        assert_eq!(lines[1].split(',').count(), SUMMARY_HEADER.split(',').count());
        assert!(lines[2].starts_with("1,0.000000000000e0,1.000000000000e0,failed,"));
        assert!(lines[1].contains(",1.150000000000e1,"));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let r = blank(3);
        r.save(&p).unwrap();
        assert_eq!(RunRecord::load(&p).unwrap(), r);
    }
}
