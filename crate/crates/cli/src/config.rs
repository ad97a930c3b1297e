//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use collab_core::{FixedPointOptions, Grid2D, IterateOptions, ModelParams, V0Convention};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub v0_convention: V0Convention,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelParams,
    pub grid: GridConfig,
    #[serde(default)]
    pub univariate: UnivariateConfig,
    #[serde(default)]
    pub iterate: IterateConfig,
    #[serde(default)]
    pub fixed_point: FixedPointOptions,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub step: f64,
    /// Upper end of both axes.
    pub extent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnivariateConfig {
    /// Upper end of the exported univariate and merger profiles; defaults to
    /// twice the grid extent.
    pub x_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterateConfig {
    pub n_max: usize,
    pub tol: f64,
    pub root_tol: f64,
    /// Restrict the vertex to the diagonal; unset decides from the model.
    pub diagonal: Option<bool>,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self { n_max: 20, tol: 0.0, root_tol: 1e-8, diagonal: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub paths: usize,
    /// States for Monte Carlo tables; empty lets commands pick their own.
    pub states: Vec<[f64; 2]>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { paths: 100_000, states: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Supersolution tolerance is `residual_factor · step · (1 + sup|V|) · δ`.
    pub residual_factor: f64,
    /// Relative tolerance of the growth bounds.
    pub envelope_tol: f64,
    /// Allowed decrease between consecutive iterates.
    pub monotone_tol: f64,
    pub symmetry_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { residual_factor: 5.0, envelope_tol: 1e-6, monotone_tol: 1e-8, symmetry_tol: 1e-9 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if let Err(e) = self.model.ensure_valid() {
            bail!("model: {e}");
        }
        self.grid()?;
        if self.iterate.n_max == 0 {
            bail!("iterate.n_max must be at least 1");
        }
        if !(self.iterate.root_tol > 0.0) {
            bail!("iterate.root_tol must be positive");
        }
        if !(self.fixed_point.tol_rel > 0.0) || self.fixed_point.max_sweeps == 0 {
            bail!("fixed_point.tol_rel and fixed_point.max_sweeps must be positive");
        }
        if self.simulate.paths < 2 {
            bail!("simulate.paths must be at least 2");
        }
        let g = self.grid()?;
        for s in &self.simulate.states {
            if !(s[0] >= 0.0 && s[1] >= 0.0 && g.contains(s[0], s[1])) {
                bail!("simulate.states: ({}, {}) outside the grid [0, {}]^2", s[0], s[1], self.grid.extent);
            }
        }
        if let Some(m) = self.univariate.x_max {
            if !(m > 0.0) {
                bail!("univariate.x_max must be positive");
            }
        }
        if !(self.verify.residual_factor > 0.0) {
            bail!("verify.residual_factor must be positive");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid2D> {
        let GridConfig { step, extent } = self.grid;
        if !(step > 0.0 && extent >= step) {
            bail!("grid: need 0 < step <= extent, got step {step}, extent {extent}");
        }
        let n = extent / step;
        if (n - n.round()).abs() > 1e-9 * n {
            bail!("grid: extent {extent} is not a multiple of step {step}");
        }
        Ok(Grid2D::square(step, extent)?)
    }

    pub fn iterate_options(&self) -> Result<IterateOptions> {
        let mut o = IterateOptions::new(self.grid()?);
        o.n_max = self.iterate.n_max;
        o.tol = self.iterate.tol;
        o.root_tol = self.iterate.root_tol;
        o.convention = self.v0_convention;
        o.diagonal = self.iterate.diagonal;
        o.residual_factor = self.verify.residual_factor;
        Ok(o)
    }

    pub fn profile_extent(&self) -> f64 {
        self.univariate.x_max.unwrap_or(2.0 * self.grid.extent)
    }

    /// SHA-256 of the canonical serialization, excluding the output directory.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        hex::encode(Sha256::digest(canon.to_toml().as_bytes()))
    }
}
