//! JSON run configuration: problem definition, grid, solver settings and
//! output paths.

use crate::continuation::{ContinuationConfig, NewtonConfig};
use crate::error::{Error, Result};
use crate::grid::RadialGrid;
use crate::model::{BaseProfile, GrowthRate, KernelSpec, ProblemSpec, RadialProfile, WeightP};
use crate::Instance;
use nalgebra::DMatrix;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    pub gamma: f64,
    pub f: ProfileConfig,
    pub p: ProfileConfig,
    /// Local integrability exponent of f; must exceed dim/2.
    #[serde(default = "default_lq")]
    pub lq_exponent: f64,
    pub kernel: KernelConfig,
}

fn default_lq() -> f64 {
    2.0
}

/// A named radial profile `scale * base(r)^power`, or tabulated samples.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub base: String,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub power: f64,
    #[serde(default)]
    pub rs: Vec<f64>,
    #[serde(default)]
    pub values: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

impl ProfileConfig {
    pub fn build(&self) -> Result<RadialProfile> {
        let base = match self.base.as_str() {
            "inv_quad_sq" => BaseProfile::InvQuadSq,
            "inv_quad" => BaseProfile::InvQuad,
            "exp" => BaseProfile::Exp,
            "gauss" => BaseProfile::Gauss,
            "tabulated" => {
                if self.rs.len() != self.values.len() || self.rs.is_empty() {
                    return Err(Error::Config(
                        "tabulated profile needs matching nonempty rs/values".into(),
                    ));
                }
                BaseProfile::Tabulated {
                    rs: self.rs.clone(),
                    values: self.values.clone(),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown profile base {other:?}; expected inv_quad_sq, inv_quad, exp, gauss or tabulated"
                )))
            }
        };
        Ok(RadialProfile::with(base, self.scale, self.power))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Separable { q2: ProfileConfig },
    RadialConvolution { g: ProfileConfig },
    /// CSV matrix of the sphere-averaged kernel on the run grid.
    Tabulated { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub r_max: f64,
    pub m: usize,
    pub stretch: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            r_max: 200.0,
            m: 2000,
            stretch: 1.002,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub trivial_threshold: f64,
    pub ds: f64,
    pub identity_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eig_tol: 1e-11,
            eig_max_iter: 400,
            newton_tol: 1e-10,
            newton_max_iter: 80,
            trivial_threshold: 1e-8,
            ds: 0.05,
            identity_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn newton(&self) -> NewtonConfig {
        NewtonConfig {
            tol: self.newton_tol,
            max_iter: self.newton_max_iter,
            trivial_threshold: self.trivial_threshold,
        }
    }

    pub fn continuation(&self, lambda_max: f64, amp_max: f64, ds: Option<f64>) -> ContinuationConfig {
        ContinuationConfig {
            ds: ds.unwrap_or(self.ds),
            lambda_max,
            amp_max,
            identity_tol: self.identity_tol,
            newton: self.newton(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; overridable with the NONLOC_OUT_DIR environment
    /// variable. Defaults to the working directory.
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.solver.eig_tol <= 0.0 || cfg.solver.newton_tol <= 0.0 || cfg.solver.ds <= 0.0 {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn build_grid(&self) -> Result<Arc<RadialGrid>> {
        RadialGrid::build(
            self.problem.dim,
            self.grid.r_max,
            self.grid.m,
            self.grid.stretch,
        )
    }

    pub fn build_spec(&self) -> Result<ProblemSpec> {
        let f = GrowthRate::new(self.problem.f.build()?, self.problem.lq_exponent);
        let p = WeightP::new(self.problem.p.build()?);
        let kernel = match &self.problem.kernel {
            KernelConfig::Separable { q2 } => KernelSpec::Separable { q2: q2.build()? },
            KernelConfig::RadialConvolution { g } => KernelSpec::RadialConvolution { g: g.build()? },
            KernelConfig::Tabulated { path } => KernelSpec::Tabulated {
                table: load_matrix_csv(path)?,
            },
        };
        ProblemSpec::new(self.problem.dim, self.problem.gamma, f, p, kernel)
    }

    pub fn build_instance(&self) -> Result<Instance> {
        Instance::assemble(self.build_spec()?, self.build_grid()?)
    }

    /// Output directory with the environment override applied.
    pub fn output_dir(&self) -> PathBuf {
        if let Ok(dir) = std::env::var("NONLOC_OUT_DIR") {
            return PathBuf::from(dir);
        }
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

fn load_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row =
            row.map_err(|e| Error::Config(format!("kernel csv line {}: {e}", k + 1)))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Config(format!(
                    "kernel csv line {} has {} columns, expected {}",
                    k + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config("kernel csv is empty".into()));
    }
    let n = rows.len();
    let m = rows[0].len();
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_a_minimal_config() {
        let f = write_tmp(
            r#"{
              "problem": {
                "dim": 3, "gamma": 1.0,
                "f": {"base": "inv_quad_sq"},
                "p": {"base": "inv_quad_sq"},
                "kernel": {"type": "separable", "q2": {"base": "inv_quad_sq", "power": 0.5}}
              },
              "grid": {"r_max": 50.0, "m": 100, "stretch": 1.0}
            }"#,
        );
        let cfg = RunConfig::load(f.path()).unwrap();
        assert_eq!(cfg.problem.dim, 3);
        let inst = cfg.build_instance().unwrap();
        assert_eq!(inst.grid.len(), 101);
        assert!(inst.kernel.rank_one().is_some());
        assert_eq!(cfg.solver.eig_tol, 1e-11); // defaults fill in
    }

    #[test]
    fn rejects_unknown_fields_and_bad_bases() {
        let f = write_tmp(r#"{"problem": {"dim": 3}, "oops": 1}"#);
        assert!(matches!(RunConfig::load(f.path()), Err(Error::Config(_))));

        let f = write_tmp(
            r#"{
              "problem": {
                "dim": 3, "gamma": 1.0,
                "f": {"base": "nope"},
                "p": {"base": "inv_quad_sq"},
                "kernel": {"type": "separable", "q2": {"base": "inv_quad_sq"}}
              }
            }"#,
        );
        let cfg = RunConfig::load(f.path()).unwrap();
        assert!(matches!(cfg.build_spec(), Err(Error::Config(_))));
    }

    #[test]
    fn tabulated_profile_and_gamma_validation() {
        let f = write_tmp(
            r#"{
              "problem": {
                "dim": 3, "gamma": 2.5,
                "f": {"base": "inv_quad_sq"},
                "p": {"base": "inv_quad_sq"},
                "kernel": {"type": "separable", "q2": {"base": "inv_quad_sq"}}
              }
            }"#,
        );
        let cfg = RunConfig::load(f.path()).unwrap();
        assert!(matches!(
            cfg.build_spec(),
            Err(Error::InvalidInstance(_))
        ));
    }

    #[test]
    fn env_var_overrides_output_dir() {
        let f = write_tmp(
            r#"{
              "problem": {
                "dim": 3, "gamma": 1.0,
                "f": {"base": "inv_quad_sq"},
                "p": {"base": "inv_quad_sq"},
                "kernel": {"type": "separable", "q2": {"base": "inv_quad_sq", "power": 0.5}}
              },
              "output": {"dir": "from_config"}
            }"#,
        );
        let cfg = RunConfig::load(f.path()).unwrap();
        assert_eq!(cfg.output_dir(), PathBuf::from("from_config"));
        std::env::set_var("NONLOC_OUT_DIR", "from_env");
        assert_eq!(cfg.output_dir(), PathBuf::from("from_env"));
        std::env::remove_var("NONLOC_OUT_DIR");
    }
}
