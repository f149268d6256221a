//! JSON run configuration shared by all commands. Every section is optional;
//! each command fills in its own defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subflow_core::branching::CorankFunctionSpec;
use subflow_core::numerics::Method;
use subflow_core::structures::{StructureDescriptor, StructureKind};
use subflow_core::IntegratorSpec;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub structure: Option<StructureDescriptor>,
    pub integrator: Option<IntegratorConfig>,
    pub output_dir: Option<PathBuf>,
    pub initial: Option<InitialState>,
    pub duration: Option<f64>,
    pub sample_times: Option<Vec<f64>>,
    pub spray: Option<SprayConfig>,
    pub corank: Option<CorankConfig>,
    pub corank_function: Option<CorankFunctionSpec>,
    pub magnetic: Option<MagneticConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Option<Method>,
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

/// Spray family from `(0, -offset, 0)` with covectors `(0, 1, α)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SprayConfig {
    pub offset: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    /// Time integrated past the branch point.
    pub extent: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorankConfig {
    pub tolerance: Option<f64>,
    pub controls_per_unit: Option<usize>,
    pub resolution: Option<f64>,
    pub refine: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagneticConfig {
    /// Expression for `B(x, y)`; defaults to the structure's own field.
    pub field: Option<String>,
    pub charges: Option<Vec<f64>>,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub heading: Option<f64>,
    pub speed: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn structure_descriptor(&self) -> StructureDescriptor {
        self.structure.clone().unwrap_or_else(|| StructureDescriptor::simple(StructureKind::Glued))
    }
}

/// Integrator overrides taken from the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegratorOverride {
    pub method: Option<Method>,
    pub step: Option<f64>,
}

/// Command default, then the config file, then command-line flags.
pub fn resolve_integrator(
    default: IntegratorSpec,
    config: Option<&IntegratorConfig>,
    cli: IntegratorOverride,
) -> Result<IntegratorSpec, CliError> {
    let method = cli.method.or(config.and_then(|c| c.method)).unwrap_or(default.method);
    let step = cli.step.or(config.and_then(|c| c.step)).unwrap_or(default.step);
    IntegratorSpec::new(method, step).map_err(|e| CliError::Config(format!("integrator: {e}")))
}
