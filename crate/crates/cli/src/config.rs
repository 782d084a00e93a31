use std::path::{Path, PathBuf};

use iptm_core::battery::BatteryParams;
use iptm_core::btms::BtmsParams;
use iptm_core::mpc::{
    ControlLimits, HorizonGrid, MpcConfig, PenaltyOptions, SolverOptions, SpacingPolicy, Strategy, StrategyKind,
    Weights,
};
use iptm_core::plant::PlantParams;
use iptm_core::sim::{InitialConditions, Scenario};
use iptm_core::vehicle::VehicleParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Name of the bundled synthetic cycle; anything else is a CSV path.
pub const DESK_COMPOSITE: &str = "desk-composite";

/// Strategy kind plus optional weight overrides on top of its preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_t: Option<f64>,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self { kind: StrategyKind::Reference, q: None, r: None, lambda_p: None, lambda_q: None, r_t: None }
    }
}

impl StrategyConfig {
    pub fn resolve(&self) -> Strategy {
        let mut s = Strategy::preset(self.kind);
        let w = &mut s.weights;
        for (slot, v) in [
            (&mut w.q, self.q),
            (&mut w.r, self.r),
            (&mut w.lambda_p, self.lambda_p),
            (&mut w.lambda_q, self.lambda_q),
            (&mut w.r_t, self.r_t),
        ] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        s
    }

    /// Same kind, every weight spelled out.
    fn filled(&self) -> Self {
        let Weights { q, r, lambda_p, lambda_q, r_t } = self.resolve().weights;
        Self { kind: self.kind, q: Some(q), r: Some(r), lambda_p: Some(lambda_p), lambda_q: Some(lambda_q), r_t: Some(r_t) }
    }
}

/// Everything that defines a run. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `desk-composite` or a path to a cycle CSV.
    pub cycle: String,
    /// Seed of the synthetic composite.
    pub seed: u64,
    /// Truncate the cycle to this many seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    /// Output root; `IPTM_OUTPUT_ROOT` and `--output` take precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Run directory name, the strategy name by default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub strategy: StrategyConfig,
    pub grid: HorizonGrid,
    pub limits: ControlLimits,
    pub spacing: SpacingPolicy,
    pub solver: SolverOptions,
    pub penalty: PenaltyOptions,
    pub vehicle: VehicleParams,
    pub battery: BatteryParams,
    pub btms: BtmsParams,
    pub initial: InitialConditions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scen = Scenario::default();
        Self {
            cycle: DESK_COMPOSITE.into(),
            seed: iptm_core::sim::cycle::DESK_SEED,
            duration: None,
            output_dir: None,
            label: None,
            strategy: StrategyConfig::default(),
            grid: scen.mpc.grid,
            limits: scen.mpc.limits,
            spacing: scen.mpc.spacing,
            solver: scen.mpc.solver,
            penalty: scen.mpc.penalty,
            vehicle: scen.plant.vehicle,
            battery: scen.plant.battery,
            btms: scen.plant.btms,
            initial: scen.initial,
        }
    }
}

impl RunConfig {
    pub fn scenario(&self) -> Scenario {
        Scenario {
            plant: self.plant(),
            mpc: MpcConfig {
                strategy: self.strategy.resolve(),
                grid: self.grid.clone(),
                limits: self.limits.clone(),
                spacing: self.spacing.clone(),
                solver: self.solver.clone(),
                penalty: self.penalty.clone(),
            },
            initial: self.initial.clone(),
        }
    }

    pub fn plant(&self) -> PlantParams {
        PlantParams { vehicle: self.vehicle.clone(), battery: self.battery.clone(), btms: self.btms.clone() }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.strategy.kind.name().to_string())
    }

    /// The config as embedded in artifacts: weights spelled out, no output location.
    pub fn resolved(&self) -> Self {
        Self { output_dir: None, strategy: self.strategy.filled(), ..self.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.resolved()).expect("config serializes")
    }

    /// SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds a config from an optional file, then `key=value` overrides in order.
/// Values are TOML literals; bare words fall back to strings.
pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for (key, value) in overrides {
        set_path(&mut table, key, parse_value(value))?;
    }
    RunConfig::deserialize(toml::Value::Table(table))
        .map_err(|e| CliError::Config(format!("invalid config: {}", e.message())))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.trim().is_empty()) {
        return Err(CliError::Config(format!("bad key '{key}'")));
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key=value` for `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn overrides_reach_nested_structs() {
        let c = load(None, &set(&[("grid.n_long", "5"), ("strategy.kind", "aging"), ("battery.q_nom", "4.5")]))
            .unwrap();
        assert_eq!(c.grid.n_long, 5);
        assert_eq!(c.strategy.kind, StrategyKind::Aging);
        assert_eq!(c.battery.q_nom, 4.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = load(None, &set(&[("grid.n_lnog", "5")])).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
        assert!(load(None, &set(&[("colour", "\"red\"")])).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = load(None, &set(&[("strategy.kind", "aging"), ("strategy.lambda_q", "2.0"), ("duration", "30")]))
            .unwrap();
        let text = c.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.scenario(), c.scenario());
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.scenario().mpc.strategy.weights.lambda_q, 2.0);
    }

    #[test]
    fn preset_weights_follow_the_kind() {
        let mut c = RunConfig::default();
        c.strategy.kind = StrategyKind::Aging;
        assert_eq!(c.scenario().mpc.strategy, Strategy::preset(StrategyKind::Aging));
    }
}
