//! Experiment configuration: TOML on disk, `TMLAB_*` environment overrides.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tmlab_core::{FitOptions, Point};

/// Prefix for environment overrides. `TMLAB_SOLVER__DAMPING=0.3` sets
/// `solver.damping`; `__` separates nested keys.
pub const ENV_PREFIX: &str = "TMLAB_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    Disc { radius: f64 },
    Polygon { vertices: Vec<Point> },
    Torus { side: f64, n: usize },
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec::Disc { radius: 1.0 }
    }
}

impl GeometrySpec {
    pub fn kind(&self) -> &'static str {
        match self {
            GeometrySpec::Disc { .. } => "disc",
            GeometrySpec::Polygon { .. } => "polygon",
            GeometrySpec::Torus { .. } => "torus",
        }
    }

    /// Pole used when the config gives none: disc centre, vertex centroid
    /// of a polygon, the origin on the torus.
    pub fn default_pole(&self) -> Point {
        match self {
            GeometrySpec::Disc { .. } | GeometrySpec::Torus { .. } => [0.0, 0.0],
            GeometrySpec::Polygon { vertices } => {
                let n = vertices.len().max(1) as f64;
                let (sx, sy) = vertices.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
                [sx / n, sy / n]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub multistarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-12,
            max_iter: 20_000,
            multistarts: 3,
            seed: 7,
        }
    }
}

/// Test-function scale and the pole grading used for the Green solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestFnConfig {
    pub epsilon: f64,
    /// Mesh size at the pole is `epsilon / grading_ratio`.
    pub grading_ratio: f64,
    /// Mesh size growth per unit distance away from the pole.
    pub grading_growth: f64,
}

impl Default for TestFnConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            grading_ratio: 32.0,
            grading_growth: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupConfig {
    /// Radii for the energy fractions and the exterior energy check.
    pub deltas: Vec<f64>,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        Self {
            deltas: vec![0.1, 0.2, 0.4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometrySpec,
    /// Uniform refinement level of planar meshes (ignored on the torus).
    pub refinement: usize,
    pub pole: Option<Point>,
    pub alphas: Vec<f64>,
    /// Subcritical ladder, strictly decreasing in (0, 4 pi).
    pub epsilons: Vec<f64>,
    pub ell: usize,
    /// Number of eigenpairs requested; groups are completed.
    pub eigen_count: usize,
    /// Relative gap below which eigenvalues are grouped.
    pub grouping_tol: f64,
    pub solver: SolverConfig,
    pub green: FitOptions,
    pub testfn: TestFnConfig,
    pub blowup: BlowupConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: GeometrySpec::default(),
            refinement: 3,
            pole: None,
            alphas: vec![0.0],
            epsilons: vec![2.0 * PI, PI, PI / 2.0],
            ell: 0,
            eigen_count: 4,
            grouping_tol: tmlab_core::spectrum::DEFAULT_GROUPING_TOL,
            solver: SolverConfig::default(),
            green: FitOptions::default(),
            testfn: TestFnConfig::default(),
            blowup: BlowupConfig::default(),
            output: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with(text, std::iter::empty::<(&str, &str)>())
    }

    /// Parses `text` and applies `(KEY, value)` overrides; keys without the
    /// prefix are ignored.
    pub fn from_toml_with<I, K, V>(text: &str, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = toml::from_str(text).context("parsing config")?;
        apply_overrides(&mut table, overrides)?;
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().context("config schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from defaults) and applies the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, std::env::vars())
    }

    pub fn pole(&self) -> Point {
        self.pole.unwrap_or_else(|| self.geometry.default_pole())
    }

    pub fn validate(&self) -> Result<()> {
        match &self.geometry {
            GeometrySpec::Disc { radius } => ensure!(*radius > 0.0 && radius.is_finite(), "disc radius must be positive"),
            GeometrySpec::Polygon { vertices } => ensure!(vertices.len() >= 3, "polygon needs at least 3 vertices"),
            GeometrySpec::Torus { side, n } => {
                ensure!(*side > 0.0 && side.is_finite(), "torus side must be positive");
                ensure!(*n >= 4 && n % 2 == 0, "torus n must be even and at least 4");
            }
        }
        ensure!(self.refinement <= 8, "refinement {} above 8", self.refinement);
        ensure!(!self.alphas.is_empty(), "alphas is empty");
        ensure!(self.alphas.iter().all(|a| a.is_finite() && *a >= 0.0), "alphas must be finite and nonnegative");
        ensure!(!self.epsilons.is_empty(), "epsilons is empty");
        for e in &self.epsilons {
            ensure!(*e > 0.0 && *e < 4.0 * PI, "epsilon {e} outside (0, 4 pi)");
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            bail!("epsilon ladder must be strictly decreasing");
        }
        ensure!(self.eigen_count > self.ell, "eigen_count must exceed ell");
        ensure!(self.grouping_tol > 0.0 && self.grouping_tol < 0.1, "grouping_tol must lie in (0, 0.1)");
        let s = &self.solver;
        ensure!(s.damping > 0.0 && s.damping <= 1.0, "damping must lie in (0, 1]");
        ensure!(s.tol > 0.0, "tol must be positive");
        ensure!(s.max_iter >= 1 && s.multistarts >= 1, "max_iter and multistarts must be at least 1");
        let g = &self.green;
        ensure!(g.inner > 0.0 && g.outer > g.inner, "green annulus needs 0 < inner < outer");
        let t = &self.testfn;
        ensure!(t.epsilon > 0.0 && t.epsilon < (-3.0f64).exp(), "testfn epsilon must lie in (0, e^-3)");
        ensure!(t.grading_ratio >= 1.0, "grading_ratio must be at least 1");
        ensure!(t.grading_growth > 0.0 && t.grading_growth <= 1.0, "grading_growth must lie in (0, 1]");
        ensure!(self.blowup.deltas.iter().all(|d| *d > 0.0), "deltas must be positive");
        Ok(())
    }

    /// Canonical serialization the config hash is taken over. The output
    /// directory does not affect results and is left out.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut c = self.clone();
        c.output = PathBuf::new();
        serde_json::to_vec(&c).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_bytes`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn apply_overrides<I, K, V>(table: &mut toml::Table, overrides: I) -> Result<()>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut pairs: Vec<(String, String)> = overrides
        .into_iter()
        .filter_map(|(k, v)| {
            k.as_ref()
                .strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.to_ascii_lowercase(), v.as_ref().to_string()))
        })
        .collect();
    // env iteration order is unspecified
    pairs.sort();
    for (key, raw) in pairs {
        let path: Vec<&str> = key.split("__").collect();
        ensure!(path.iter().all(|p| !p.is_empty()), "malformed override key {ENV_PREFIX}{}", key.to_ascii_uppercase());
        let value = parse_value(&raw);
        let (last, parents) = path.split_last().expect("nonempty");
        let mut cur = &mut *table;
        for p in parents {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = match entry {
                toml::Value::Table(t) => t,
                _ => bail!("override {key}: `{p}` is not a table"),
            };
        }
        cur.insert(last.to_string(), value);
    }
    Ok(())
}

/// A TOML literal when it parses as one, else a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
refinement = 2
alphas = [0.0, 1.5]
epsilons = [6.0, 3.0]

[geometry]
kind = "polygon"
vertices = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]

[solver]
damping = 0.4

[green]
inner = 3.0
"#;

    #[test]
    fn parses_partial_tables() {
        let c = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(c.refinement, 2);
        assert_eq!(c.solver.damping, 0.4);
        assert_eq!(c.solver.multistarts, 3);
        assert_eq!(c.green.inner, 3.0);
        assert_eq!(c.green.outer, 12.0);
        assert_eq!(c.pole(), [0.5, 0.5]);
        assert_eq!(c.geometry.kind(), "polygon");
    }

    #[test]
    fn env_overrides() {
        let vars = [
            ("TMLAB_SOLVER__SEED", "99"),
            ("TMLAB_ALPHAS", "[0.25]"),
            ("TMLAB_GEOMETRY__KIND", "torus"),
            ("TMLAB_GEOMETRY__SIDE", "1.0"),
            ("TMLAB_GEOMETRY__N", "16"),
            ("TMLAB_GEOMETRY__VERTICES", "[]"),
            ("TMLAB_OUTPUT", "/tmp/x y"),
            ("PATH", "/usr/bin"),
        ];
        let err = ExperimentConfig::from_toml_with(SAMPLE, vars).unwrap_err();
        // vertices is not a torus field
        assert!(format!("{err:#}").contains("vertices"), "{err:#}");
        let c = ExperimentConfig::from_toml_with("", vars[..5].iter().copied().chain([("TMLAB_OUTPUT", "/tmp/x y")])).unwrap();
        assert_eq!(c.solver.seed, 99);
        assert_eq!(c.alphas, vec![0.25]);
        assert_eq!(c.geometry, GeometrySpec::Torus { side: 1.0, n: 16 });
        assert_eq!(c.output, PathBuf::from("/tmp/x y"));
    }

    #[test]
    fn rejects_bad_ladders_and_keys() {
        assert!(ExperimentConfig::from_toml_str("epsilons = [1.0, 2.0]").is_err());
        assert!(ExperimentConfig::from_toml_str("epsilons = [13.0]").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[solver]\ndamping = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_with("", [("TMLAB_SOLVER____X", "1")]).is_err());
        assert!(ExperimentConfig::from_toml_with("", [("TMLAB_REFINEMENT__X", "1")]).is_err());
    }

    #[test]
    fn hash_is_reproducible() {
        let a = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        let b = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let c = ExperimentConfig::from_toml_with(SAMPLE, [("TMLAB_SOLVER__SEED", "8")]).unwrap();
        assert_ne!(a.hash(), c.hash());
        let d = ExperimentConfig::from_toml_with(SAMPLE, [("TMLAB_OUTPUT", "elsewhere")]).unwrap();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn bundled_configs_parse() {
        let disc = ExperimentConfig::from_toml_str(include_str!("../configs/disc.toml")).unwrap();
        assert_eq!(disc.epsilons.len(), 4);
        let torus = ExperimentConfig::from_toml_str(include_str!("../configs/torus.toml")).unwrap();
        assert_eq!((torus.geometry.kind(), torus.ell), ("torus", 1));
    }
}
