use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use spincm::flows::Method;
use spincm::oracle::ContourSettings;
use spincm::verify::{SuiteConfig, Thresholds};
use spincm::Tolerances;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Integrator {
    pub dt: f64,
    pub method: Method,
    pub record_every: usize,
    pub max_steps: usize,
    /// Local error tolerance for RK45.
    pub tolerance: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            method: Method::Rk4,
            record_every: 1,
            max_steps: 10_000_000,
            tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Output {
    /// Relative output paths are resolved against this directory.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub tolerances: Tolerances,
    pub integrator: Integrator,
    pub contour: ContourSettings,
    pub thresholds: Thresholds,
    pub output: Output,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.integrator;
        for (name, v) in [
            ("tolerances.eps_coll", self.tolerances.eps_coll),
            ("tolerances.eps_constr", self.tolerances.eps_constr),
            ("integrator.dt", i.dt),
            ("integrator.tolerance", i.tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if i.record_every == 0 || i.max_steps == 0 {
            bail!("integrator.record_every and integrator.max_steps must be positive");
        }
        self.suite().validate()?;
        Ok(())
    }

    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            tolerances: self.tolerances,
            thresholds: self.thresholds,
            contour: self.contour,
            dt: self.integrator.dt,
            ..SuiteConfig::default()
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.output.dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c: Config = toml::from_str("[integrator]\ndt = 0.01\nmethod = \"rk45\"\n[thresholds]\nlax = 1e-6\n").unwrap();
        assert_eq!(c.integrator.dt, 0.01);
        assert_eq!(c.integrator.method, Method::Rk45);
        assert_eq!(c.thresholds.lax, 1e-6);
        assert_eq!(c.thresholds.r_identity, Thresholds::default().r_identity);
        assert_eq!(c.tolerances, Tolerances::default());
    }

    #[test]
    fn non_positive_tolerance_is_rejected() {
        let c: Config = toml::from_str("[tolerances]\neps_coll = 0.0\n").unwrap();
        assert!(c.validate().is_err());
        let c: Config = toml::from_str("[thresholds]\nlinear_problem = -1.0\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_dir_applies_to_relative_paths() {
        let c = Config {
            output: Output {
                dir: Some(PathBuf::from("/tmp/runs")),
            },
            ..Config::default()
        };
        assert_eq!(c.resolve(Path::new("a.json")), PathBuf::from("/tmp/runs/a.json"));
        assert_eq!(c.resolve(Path::new("/abs/a.json")), PathBuf::from("/abs/a.json"));
    }
}
