//! Longitudinal vehicle dynamics and the traction power chain.
//!
//! The chain runs kinematics -> traction force -> motor torque -> traction
//! power -> battery terminal power. Everything here is a pure function over
//! [`VehicleParams`].

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Body, powertrain and electrical-efficiency parameters of the host vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Mass (kg).
    pub mass: f64,
    /// Gravity (m/s²).
    pub gravity: f64,
    /// Rolling-resistance coefficient.
    pub rolling_resistance: f64,
    /// Aerodynamic drag coefficient.
    pub drag_coefficient: f64,
    /// Frontal area (m²).
    pub frontal_area: f64,
    /// Air density (kg/m³).
    pub air_density: f64,
    /// Rotational-inertia coefficient.
    pub rotational_inertia: f64,
    /// Tire radius (m).
    pub tire_radius: f64,
    /// Transmission ratio.
    pub transmission_ratio: f64,
    /// Final-drive ratio.
    pub final_drive_ratio: f64,
    /// Driveline efficiency.
    pub driveline_efficiency: f64,
    /// Empirical torque-loss coefficient, W/(Nm)².
    pub torque_loss_coefficient: f64,
    /// Battery efficiency.
    pub battery_efficiency: f64,
    /// Regenerative-braking efficiency.
    pub regen_efficiency: f64,
    /// Auxiliary (pump and fan) power (W).
    pub aux_power: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1432.0,
            gravity: 9.8,
            rolling_resistance: 0.015,
            drag_coefficient: 0.3,
            frontal_area: 2.22,
            air_density: 1.026,
            rotational_inertia: 1.022,
            tire_radius: 0.28,
            transmission_ratio: 2.80,
            final_drive_ratio: 3.789,
            driveline_efficiency: 0.9,
            torque_loss_coefficient: 0.873,
            battery_efficiency: 0.95,
            regen_efficiency: 0.3,
            aux_power: 200.0,
        }
    }
}

impl VehicleParams {
    /// Speed-to-motor-torque coupling `i_g * i_0 / r_w` (1/m).
    pub fn epsilon(&self) -> f64 {
        self.transmission_ratio * self.final_drive_ratio / self.tire_radius
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("rolling_resistance", self.rolling_resistance),
            ("drag_coefficient", self.drag_coefficient),
            ("frontal_area", self.frontal_area),
            ("air_density", self.air_density),
            ("rotational_inertia", self.rotational_inertia),
            ("tire_radius", self.tire_radius),
            ("transmission_ratio", self.transmission_ratio),
            ("final_drive_ratio", self.final_drive_ratio),
            ("driveline_efficiency", self.driveline_efficiency),
            ("torque_loss_coefficient", self.torque_loss_coefficient),
            ("battery_efficiency", self.battery_efficiency),
            ("aux_power", self.aux_power),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!("vehicle.{name} must be > 0, got {value}")));
            }
        }
        if self.driveline_efficiency > 1.0 || self.battery_efficiency > 1.0 {
            return Err(Error::Parameter("efficiencies must not exceed 1".into()));
        }
        if !(0.0..=1.0).contains(&self.regen_efficiency) {
            return Err(Error::Parameter(format!(
                "vehicle.regen_efficiency must lie in [0, 1], got {}",
                self.regen_efficiency
            )));
        }
        Ok(())
    }
}

/// Position (m), velocity (m/s) and acceleration (m/s²) of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Kinematics {
    pub p: f64,
    pub v: f64,
    pub a: f64,
}

/// Exact update under constant commanded acceleration, stopping at standstill.
pub fn step_kinematics(k: Kinematics, a_cmd: f64, dt: f64) -> Result<Kinematics> {
    ensure_finite("p", k.p)?;
    ensure_finite("v", k.v)?;
    ensure_finite("a_cmd", a_cmd)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let v_end = k.v + a_cmd * dt;
    if v_end >= 0.0 {
        Ok(Kinematics { p: k.p + k.v * dt + 0.5 * a_cmd * dt * dt, v: v_end, a: a_cmd })
    } else {
        // Stops inside the step: travel only until v reaches zero.
        let travel = if a_cmd < 0.0 { -k.v * k.v / (2.0 * a_cmd) } else { 0.0 };
        Ok(Kinematics { p: k.p + travel.max(0.0), v: 0.0, a: a_cmd })
    }
}

/// Road-load plus inertial force at the wheels (N).
pub fn traction_force(v: f64, a: f64, theta: f64, params: &VehicleParams) -> f64 {
    let m = params.mass;
    let g = params.gravity;
    m * g * theta.sin()
        + m * g * params.rolling_resistance * theta.cos()
        + 0.5 * params.drag_coefficient * params.frontal_area * params.air_density * v * v
        + m * params.rotational_inertia * a
}

/// Motor torque for a wheel force; driveline losses are charged against the
/// motor when driving and against the wheels when braking.
pub fn motor_torque(force: f64, params: &VehicleParams) -> f64 {
    let ratio = params.transmission_ratio * params.final_drive_ratio;
    let eta = if force >= 0.0 {
        params.driveline_efficiency
    } else {
        1.0 / params.driveline_efficiency
    };
    force * params.tire_radius / (ratio * eta)
}

/// Electrical traction power (W) from speed and motor torque.
pub fn traction_power(v: f64, torque: f64, params: &VehicleParams) -> f64 {
    params.epsilon() * v * torque + params.torque_loss_coefficient * torque * torque
}

/// Power drawn at the pack terminals (W) for a traction and compressor load.
pub fn battery_terminal_power(p_tra: f64, p_cp: f64, params: &VehicleParams) -> f64 {
    let eta_b = params.battery_efficiency;
    let accessories = (p_cp + params.aux_power) / eta_b;
    if p_tra >= 0.0 {
        p_tra / eta_b + accessories
    } else {
        eta_b * params.regen_efficiency * p_tra + accessories
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_velocity_and_standstill_clamp() {
        let k = step_kinematics(Kinematics { p: 0.0, v: 10.0, a: 0.0 }, 0.0, 1.0).unwrap();
        assert_eq!((k.p, k.v), (10.0, 10.0));
        let k = step_kinematics(Kinematics::default(), -1.0, 1.0).unwrap();
        assert_eq!((k.p, k.v), (0.0, 0.0));
    }

    #[test]
    fn accelerating_step_is_closed_form() {
        let k = step_kinematics(Kinematics { p: 0.0, v: 10.0, a: 0.0 }, 2.0, 1.0).unwrap();
        assert_relative_eq!(k.p, 11.0);
        assert_relative_eq!(k.v, 12.0);
        assert_eq!(k.a, 2.0);
    }

    #[test]
    fn braking_to_rest_stops_at_the_stopping_distance() {
        let k = step_kinematics(Kinematics { p: 0.0, v: 1.0, a: 0.0 }, -2.0, 1.0).unwrap();
        assert_eq!(k.v, 0.0);
        assert_relative_eq!(k.p, 0.25);
    }

    #[test]
    fn kinematics_rejects_bad_inputs() {
        assert!(step_kinematics(Kinematics::default(), f64::NAN, 1.0).is_err());
        assert!(step_kinematics(Kinematics::default(), 0.0, 0.0).is_err());
    }

    #[test]
    fn traction_force_table_values() {
        let p = VehicleParams::default();
        let no_roll = VehicleParams { rolling_resistance: 0.0, ..p.clone() };
        assert_eq!(traction_force(0.0, 0.0, 0.0, &no_roll), 0.0);
        // rolling 210.50 N + drag 136.67 N + inertia 731.75 N
        assert_relative_eq!(traction_force(20.0, 0.5, 0.0, &p), 1078.92, max_relative = 1e-4);
        assert_relative_eq!(traction_force(20.0, 0.0, 0.0, &p), 347.17, max_relative = 1e-4);
    }

    #[test]
    fn motor_torque_uses_efficiency_sign() {
        let p = VehicleParams::default();
        assert_eq!(motor_torque(0.0, &p), 0.0);
        assert_relative_eq!(motor_torque(1079.0, &p), 31.64, max_relative = 1e-3);
        assert_relative_eq!(motor_torque(-1079.0, &p), -25.63, max_relative = 1e-3);
    }

    #[test]
    fn traction_power_values() {
        let p = VehicleParams::default();
        assert_eq!(traction_power(20.0, 0.0, &p), 0.0);
        assert_relative_eq!(p.epsilon(), 37.89, max_relative = 1e-4);
        assert_relative_eq!(traction_power(20.0, 31.64, &p), 24851.0, max_relative = 1e-3);
    }

    #[test]
    fn terminal_power_branches() {
        let unit = VehicleParams { battery_efficiency: 1.0, ..Default::default() };
        assert_eq!(battery_terminal_power(0.0, 0.0, &unit), 200.0);
        let p = VehicleParams::default();
        assert_relative_eq!(battery_terminal_power(24851.0, 0.0, &p), 26369.5, max_relative = 1e-4);
        assert_relative_eq!(battery_terminal_power(-10000.0, 1000.0, &p), -1586.84, max_relative = 1e-4);
    }

    #[test]
    fn terminal_power_is_continuous_at_zero_traction() {
        let p = VehicleParams::default();
        let left = battery_terminal_power(-1e-9, 500.0, &p);
        let right = battery_terminal_power(1e-9, 500.0, &p);
        assert!((left - right).abs() < 1e-8);
    }

    #[test]
    fn defaults_validate() {
        VehicleParams::default().validate().unwrap();
        let bad = VehicleParams { regen_efficiency: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
