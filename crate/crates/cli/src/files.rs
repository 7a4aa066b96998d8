//! On-disk file formats shared by the subcommands.

use serde::{Deserialize, Serialize};

use mugrid_core::netmodel::{InterfaceParams, Network};
use mugrid_core::powerflow::Equilibrium;

use crate::CliError;

/// Network file: the network itself plus an optional `interface` section with
/// per-node inertia/damping/setpoint records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    #[serde(flatten)]
    pub network: Network,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interface: Option<InterfaceParams>,
}

impl NetworkFile {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(path, e))?;
        let file: NetworkFile =
            serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
        file.network.check_invariants()?;
        Ok(file)
    }
}

/// Equilibrium file: `delta` required, the rest optional so that hand-written
/// inputs stay short.
#[derive(Debug, Clone, Deserialize)]
pub struct EquilibriumFile {
    pub delta: Vec<f64>,
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
    #[serde(default)]
    pub residual: f64,
}

impl EquilibriumFile {
    pub fn load(path: &std::path::Path) -> Result<Equilibrium, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: EquilibriumFile =
            serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
        let n = file.delta.len();
        Ok(Equilibrium {
            omega: file.omega.unwrap_or_else(|| vec![0.0; n]),
            delta: file.delta,
            residual: file.residual,
        })
    }
}

/// Interface-parameter file: either a bare array of entries or a full network
/// file whose `interface` section is used.
pub fn load_params(path: &std::path::Path) -> Result<InterfaceParams, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if let Ok(params) = serde_json::from_str::<InterfaceParams>(&text) {
        if !params.entries.is_empty() {
            return Ok(params);
        }
    }
    let file: NetworkFile = serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
    file.interface.ok_or_else(|| CliError::Input {
        context: format!("{}: no interface parameters found", path.display()),
    })
}

/// Setpoint file: a bare JSON array of per-node active-power setpoints.
pub fn load_setpoints(path: &std::path::Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

/// Initial-state file for simulation.
#[derive(Debug, Clone, Deserialize)]
pub struct InitialStateFile {
    pub delta: Vec<f64>,
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
}

impl InitialStateFile {
    pub fn load(path: &std::path::Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: InitialStateFile =
            serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
        let n = file.delta.len();
        Ok((file.delta, file.omega.unwrap_or_else(|| vec![0.0; n])))
    }
}
