use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::rollout::Trajectory;

/// Objective compositions compared in the studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Speed and cell-temperature tracking only.
    Reference,
    RefEnergy,
    RefAging,
    RefEnergyAging,
    /// Energy plus degradation, no tracking.
    EnergyAging,
    /// Degradation only.
    Aging,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Reference,
        StrategyKind::RefEnergy,
        StrategyKind::RefAging,
        StrategyKind::RefEnergyAging,
        StrategyKind::EnergyAging,
        StrategyKind::Aging,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Reference => "reference",
            Self::RefEnergy => "ref_energy",
            Self::RefAging => "ref_aging",
            Self::RefEnergyAging => "ref_energy_aging",
            Self::EnergyAging => "energy_aging",
            Self::Aging => "aging",
        }
    }

    pub fn tracks(self) -> bool {
        matches!(self, Self::Reference | Self::RefEnergy | Self::RefAging | Self::RefEnergyAging)
    }

    pub fn uses_energy(self) -> bool {
        matches!(self, Self::RefEnergy | Self::RefEnergyAging | Self::EnergyAging)
    }

    pub fn uses_aging(self) -> bool {
        matches!(self, Self::RefAging | Self::RefEnergyAging | Self::EnergyAging | Self::Aging)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy '{s}'")))
    }
}

/// Objective weights. Only the terms enabled by the strategy kind are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    /// Speed tracking weight (s²/m² per s).
    pub q: f64,
    /// Cell temperature tracking weight (1/K² per s).
    pub r: f64,
    /// Battery energy weight (1/J).
    pub lambda_p: f64,
    /// Capacity-loss weight.
    pub lambda_q: f64,
    /// Cell temperature reference (°C).
    pub r_t: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self { q: 0.5, r: 0.1, lambda_p: 1e-4, lambda_q: 1e8, r_t: 26.0 }
    }
}

/// A strategy kind together with its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub weights: Weights,
}

impl Default for Strategy {
    fn default() -> Self {
        Self::preset(StrategyKind::Reference)
    }
}

impl Strategy {
    /// Tuned default weights of each strategy kind.
    pub fn preset(kind: StrategyKind) -> Self {
        let base = Weights::default();
        let weights = match kind {
            StrategyKind::Reference => base,
            StrategyKind::RefEnergy => Weights { lambda_p: 1e-4, ..base },
            StrategyKind::RefAging => Weights { lambda_q: 1e8, ..base },
            StrategyKind::RefEnergyAging => Weights { lambda_p: 1e-4, lambda_q: 1e8, ..base },
            StrategyKind::EnergyAging => Weights { lambda_p: 1e-4, lambda_q: 1e8, ..base },
            StrategyKind::Aging => Weights { lambda_q: 1.0, ..base },
        };
        Self { kind, weights }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [("q", w.q), ("r", w.r), ("lambda_p", w.lambda_p), ("lambda_q", w.lambda_q)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("weights.{name} must be finite and >= 0, got {v}")));
            }
        }
        if !w.r_t.is_finite() {
            return Err(Error::Parameter("weights.r_t must be finite".into()));
        }
        let active = (self.kind.tracks() && (w.q > 0.0 || w.r > 0.0))
            || (self.kind.uses_energy() && w.lambda_p > 0.0)
            || (self.kind.uses_aging() && w.lambda_q > 0.0);
        if !active {
            return Err(Error::Parameter(format!("strategy {} has no positively weighted term", self.kind)));
        }
        Ok(())
    }

    /// Objective contribution of prediction step `k` of `traj`.
    pub fn step_cost(&self, traj: &Trajectory, k: usize) -> f64 {
        let w = &self.weights;
        let s = &traj.steps[k];
        let mut j = 0.0;
        if self.kind.tracks() {
            let ev = s.end.kin.v - s.r_v;
            let e1 = s.end.pack.cell_first.t_bc - w.r_t;
            let en = s.end.pack.cell_last.t_bc - w.r_t;
            j += (w.q * ev * ev + w.r * (e1 * e1 + en * en)) * s.dt;
        }
        if self.kind.uses_energy() {
            j += w.lambda_p * s.battery_energy_j;
        }
        if self.kind.uses_aging() {
            j += w.lambda_q * (s.dq_first + s.dq_last);
        }
        j
    }
}

/// Total objective of a predicted trajectory.
pub fn objective_value(traj: &Trajectory, strategy: &Strategy) -> f64 {
    (0..traj.steps.len()).map(|k| strategy.step_cost(traj, k)).sum()
}
