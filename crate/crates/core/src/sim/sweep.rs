use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{HorizonGrid, StrategyKind};
use crate::sim::cycle::DrivingCycle;
use crate::sim::harness::{run_closed_loop, Metrics, Scenario};

/// Parameter varied by a sensitivity sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// The strategy's energy or aging weight; for strategies weighting both,
    /// the ratio λ_Q/λ_P with λ_P fixed.
    Weights,
    /// Single-rate horizon length in seconds.
    Horizon,
    /// Long-horizon step length (s).
    Dt2,
    /// Number of long-horizon steps.
    Np2,
    /// Number of short steps, keeping the total step count.
    Split,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Weights => "weights",
            Self::Horizon => "horizon",
            Self::Dt2 => "dt2",
            Self::Np2 => "np2",
            Self::Split => "split",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Weights, Self::Horizon, Self::Dt2, Self::Np2, Self::Split]
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown sweep axis '{s}' (weights|horizon|dt2|np2|split)")))
    }
}

fn count(value: f64, what: &str) -> Result<usize> {
    if value.is_finite() && value >= 0.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::InvalidInput(format!("{what} must be a non-negative integer, got {value}")))
    }
}

/// The base scenario with `axis` set to `value`.
pub fn apply_axis(base: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario> {
    let mut s = base.clone();
    let grid = &mut s.mpc.grid;
    match axis {
        SweepAxis::Weights => {
            let w = &mut s.mpc.strategy.weights;
            match s.mpc.strategy.kind {
                StrategyKind::RefEnergy => w.lambda_p = value,
                StrategyKind::RefAging => w.lambda_q = value,
                StrategyKind::RefEnergyAging | StrategyKind::EnergyAging => w.lambda_q = value * w.lambda_p,
                k => return Err(Error::InvalidInput(format!("strategy {k} has no tunable weight"))),
            }
        }
        SweepAxis::Horizon => {
            let n = value / grid.dt_short;
            *grid = HorizonGrid::single_rate(count(n.round(), "horizon steps")?, grid.dt_short);
            if (n - n.round()).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("horizon {value} s is not a multiple of dt1")));
            }
        }
        SweepAxis::Dt2 => grid.dt_long = value,
        SweepAxis::Np2 => grid.n_long = count(value, "np2")?,
        SweepAxis::Split => {
            let total = grid.n_steps();
            let n1 = count(value, "np1")?;
            if n1 > total {
                return Err(Error::InvalidInput(format!("np1 {n1} exceeds the {total} horizon steps")));
            }
            grid.n_short = n1;
            grid.n_long = total - n1;
        }
    }
    s.mpc.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

/// One closed-loop run per value. Failing runs are recorded and the sweep
/// continues; rows keep the order of `values`.
pub fn sweep(cycle: &DrivingCycle, base: &Scenario, axis: SweepAxis, values: &[f64], parallel: bool) -> Vec<SweepRow> {
    let one = |&value: &f64| {
        let res = apply_axis(base, axis, value).and_then(|s| run_closed_loop(cycle, &s));
        match res {
            Ok((_, m)) => SweepRow { axis, value, metrics: Some(m), error: None },
            Err(e) => SweepRow { axis, value, metrics: None, error: Some(e.to_string()) },
        }
    };
    if parallel { values.par_iter().map(one).collect() } else { values.iter().map(one).collect() }
}
