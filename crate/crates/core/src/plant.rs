//! Coupled vehicle, battery and coolant-loop plant.
//!
//! [`step`] is the single source of truth for the dynamics: the controller's
//! horizon rollout and the closed-loop harness both call it.

use serde::{Deserialize, Serialize};

use crate::battery::{self, BatteryParams, PackState};
use crate::btms::{self, BtmsParams};
use crate::error::Result;
use crate::vehicle::{self, Kinematics, VehicleParams};

/// Immutable parameter bundle of the whole plant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub vehicle: VehicleParams,
    pub battery: BatteryParams,
    pub btms: BtmsParams,
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.battery.validate()?;
        self.btms.validate()?;
        let c_f = self.btms.channel_capacity(&self.battery);
        if !(self.battery.convective_coefficient < c_f) {
            return Err(crate::Error::ModelValidity(format!(
                "coolant chain needs h < C_f ({} >= {c_f})",
                self.battery.convective_coefficient
            )));
        }
        Ok(())
    }
}

/// Host kinematics plus the two-cell pack and coolant temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub kin: Kinematics,
    pub pack: PackState,
}

impl PlantState {
    pub fn new(p: f64, v: f64, t_cell: f64, params: &PlantParams) -> Self {
        Self { kin: Kinematics { p, v, a: 0.0 }, pack: PackState::uniform(t_cell, &params.battery) }
    }
}

/// Control input held over one step: acceleration (m/s²) and compressor power (W).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub accel: f64,
    pub p_cp: f64,
}

/// Powers and increments produced by one plant step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutputs {
    pub p_tra: f64,
    pub p_b: f64,
    pub i_b: f64,
    pub q_co: f64,
    pub dq_first: f64,
    pub dq_last: f64,
}

/// Advances the plant by `dt` under a held control on a road of slope `theta`.
///
/// The traction chain is evaluated at the mean speed of the step with the
/// acceleration actually realised, so braking to rest does not keep
/// requesting the commanded deceleration after the stop.
pub fn step(state: &PlantState, u: Control, theta: f64, dt: f64, params: &PlantParams) -> Result<(PlantState, StepOutputs)> {
    let veh = &params.vehicle;
    let kin = vehicle::step_kinematics(state.kin, u.accel, dt)?;
    let a_eff = (kin.v - state.kin.v) / dt;
    let v_mid = 0.5 * (kin.v + state.kin.v);

    let force = vehicle::traction_force(v_mid, a_eff, theta, veh);
    let p_tra = vehicle::traction_power(v_mid, vehicle::motor_torque(force, veh), veh);
    let p_b = vehicle::battery_terminal_power(p_tra, u.p_cp, veh);
    let i_b = battery::pack_current_from_power(p_b, &state.pack, &params.battery)?;

    let pack = &state.pack;
    let q_co = btms::cooling_rate(u.p_cp, pack.t_c_out, params.btms.ambient_temp, v_mid, &params.btms)?;
    let t_c_in = pack.t_c_out - q_co / params.btms.loop_capacity_rate();
    let c_f = params.btms.channel_capacity(&params.battery);
    let next = battery::step_pack(pack, i_b, t_c_in, dt, &params.battery, c_f)?;

    Ok((
        PlantState { kin, pack: next.state },
        StepOutputs { p_tra, p_b, i_b, q_co, dq_first: next.dq_first, dq_last: next.dq_last },
    ))
}
