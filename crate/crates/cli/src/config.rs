//! Run configuration: a single TOML file describing one reproducible run.
//!
//! ```toml
//! [system]
//! name = "damped_oscillator"
//! [system.params]
//! nu = 0.5
//!
//! [ensemble]
//! n_paths = 100
//! t_final = 1.0
//! dt = 1e-3
//! master_seed = 42
//! scheme = "stratonovich_heun"   # or "ito_euler_corrected"
//! n_checkpoints = 21             # optional
//!
//! [initial]                      # optional, defaults to the catalog entry
//! state = [1.0, 0.0]
//!
//! [output]                       # optional
//! trajectories = true            # default true
//! max_trajectory_paths = 100     # default cap
//!
//! [[checks]]                     # zero or more
//! name = "strong_conservation"   # strong_conservation | weak_conservation
//!                                # | casimir_conservation | involution
//!                                # | symplectic_defect | dirichlet | exceedance
//! observable = "energy"          # energy | casimir | coord:<index>
//! tolerance = 5e-3
//!
//! [sweep]                        # optional
//! parameter = "dt"               # dt | n_paths | t_final | master_seed | <system param>
//! values = [1e-2, 5e-3, 2.5e-3]
//! ```
//!
//! Unknown keys anywhere in the file are rejected before any compute.

use std::collections::BTreeMap;

use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub ensemble: EnsembleSection,
    pub initial: Option<InitialSection>,
    pub output: Option<OutputSection>,
    #[serde(default)]
    pub checks: Vec<CheckSection>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_paths: usize,
    pub t_final: f64,
    pub dt: f64,
    pub master_seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_checkpoints")]
    pub n_checkpoints: usize,
}

fn default_scheme() -> String {
    "stratonovich_heun".into()
}

fn default_checkpoints() -> usize {
    21
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub trajectories: Option<bool>,
    pub max_trajectory_paths: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSection {
    pub name: String,
    pub observable: Option<String>,
    pub tolerance: Option<f64>,
    /// Exceedance level as a multiple of the observable's initial value.
    pub level_factor: Option<f64>,
    /// Evaluation point for the Dirichlet certificate (default: the first
    /// catalog equilibrium).
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: String,
    pub values: Vec<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    pub fn trajectories_enabled(&self) -> bool {
        self.output
            .as_ref()
            .and_then(|o| o.trajectories)
            .unwrap_or(true)
    }

    pub fn trajectory_cap(&self) -> usize {
        self.output
            .as_ref()
            .and_then(|o| o.max_trajectory_paths)
            .unwrap_or(100)
    }
}
