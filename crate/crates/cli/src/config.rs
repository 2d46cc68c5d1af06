//! TOML experiment configuration. One schema for every subcommand;
//! unknown keys are rejected before any computation starts.

use kfp_core::drift_fields::DriftField;
use kfp_core::error::{Error, Result};
use kfp_core::gaussian_kernel::CovarianceConvention;
use kfp_core::langevin_sim::{InitialLaw, SimConfig};
use kfp_core::parametrix::ParametrixConfig;
use kfp_core::verify::Scale;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum FieldKind {
    Zero,
    Constant,
    Oscillatory,
    Holder,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSection {
    pub kind: FieldKind,
    /// components of the constant field
    pub values: Vec<f64>,
    /// oscillatory amplitude / Hoelder strength
    pub c: f64,
    pub omega: f64,
    pub beta: f64,
    pub direction_seed: u64,
    pub dim: usize,
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            kind: FieldKind::Holder,
            values: vec![0.4],
            c: 0.8,
            omega: 1.0,
            beta: 0.5,
            direction_seed: 7,
            dim: 1,
        }
    }
}

impl FieldSection {
    pub fn build(&self) -> Result<DriftField> {
        match self.kind {
            FieldKind::Zero => Ok(DriftField::zero(self.dim)),
            FieldKind::Constant => Ok(DriftField::constant(self.values.clone())),
            FieldKind::Oscillatory => Ok(DriftField::oscillatory(self.dim, self.c, self.omega)),
            FieldKind::Holder => {
                DriftField::holder_growth(self.dim, self.c, self.beta, self.direction_seed)
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub sigma: f64,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub store_stride: usize,
    pub ladder: Vec<f64>,
    pub bump_smoothness: f64,
    pub initial_point: Vec<f64>,
    /// write the binary path dump
    pub dump_paths: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            sigma: 1.0,
            horizon: 1.0,
            dt: 1.0 / 1024.0,
            paths: 10_000,
            store_stride: 64,
            ladder: vec![4.0, 8.0, 16.0, 32.0],
            bump_smoothness: 1.0,
            initial_point: vec![0.0, 0.0],
            dump_paths: false,
        }
    }
}

impl SimSection {
    pub fn build(&self, seed: u64, dim: usize) -> Result<SimConfig> {
        if self.initial_point.len() != 2 * dim {
            return Err(Error::Config(format!(
                "initial_point must have 2 d = {} entries",
                2 * dim
            )));
        }
        Ok(SimConfig {
            sigma: self.sigma,
            horizon: self.horizon,
            dt: self.dt,
            paths: self.paths,
            seed,
            initial: InitialLaw::Point {
                x: self.initial_point[..dim].to_vec(),
                v: self.initial_point[dim..].to_vec(),
            },
            store_stride: self.store_stride,
            ladder: self.ladder.clone(),
            bump_smoothness: self.bump_smoothness,
        })
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub convention: Option<CovarianceConvention>,
    pub scale: Option<Scale>,
    pub field: FieldSection,
    pub parametrix: ParametrixConfig,
    pub sim: SimSection,
    /// tolerance overrides for the subcommand-level checks
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub normalization: f64,
    pub chapman_kolmogorov: f64,
    pub pde_residual: f64,
    pub parametrix_normalization: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            normalization: 1e-8,
            chapman_kolmogorov: 1e-12,
            pde_residual: 1e-4,
            parametrix_normalization: 1e-2,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<ExperimentConfig> {
        match path {
            None => Ok(ExperimentConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("config schema: {e}")))
            }
        }
    }
}
