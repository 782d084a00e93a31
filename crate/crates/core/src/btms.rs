//! Battery thermal management: chiller cooling-rate surrogate, coolant-loop
//! bookkeeping and a least-squares fitter for the surrogate coefficients.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::battery::{coolant_chain, BatteryParams};
use crate::error::{Error, Result};

/// Default surrogate coefficients.
///
/// Synthetic chiller: effective COP falls linearly from 2.0 at zero compressor
/// power to 1.2 at 4.5 kW (`xi1`, `xi2`), plus a weak passive term from the
/// running pump and fan that grows with outlet temperature and shrinks with
/// hot condenser air (`xi3..xi6`). The passive term stays within 0..15 W over
/// the 20-40 °C coolant range at 35 °C ambient.
pub const DEFAULT_XI: [f64; 6] = [2.0, -0.8 / 4500.0, 0.5, -2.0, 1.0, -3.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BtmsParams {
    /// Surrogate coefficients `xi1..xi6`.
    pub xi: [f64; 6],
    /// Ambient temperature (°C).
    pub ambient_temp: f64,
    /// Total coolant mass flow (kg/s).
    pub coolant_mass_flow: f64,
    /// Coolant specific heat (J/(kg °C)).
    pub coolant_specific_heat: f64,
    /// Time base of the per-channel coolant capacity (s).
    pub coolant_time_base: f64,
    /// Admissible compressor power range (W).
    pub compressor_power_min: f64,
    pub compressor_power_max: f64,
}

impl Default for BtmsParams {
    fn default() -> Self {
        Self {
            xi: DEFAULT_XI,
            ambient_temp: 35.0,
            coolant_mass_flow: 0.144,
            coolant_specific_heat: 3330.0,
            coolant_time_base: 1.0,
            compressor_power_min: 0.0,
            compressor_power_max: 4500.0,
        }
    }
}

impl BtmsParams {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("coolant_mass_flow", self.coolant_mass_flow),
            ("coolant_specific_heat", self.coolant_specific_heat),
            ("coolant_time_base", self.coolant_time_base),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!("btms.{name} must be > 0, got {value}")));
            }
        }
        if self.xi.iter().any(|x| !x.is_finite()) || !self.ambient_temp.is_finite() {
            return Err(Error::Parameter("btms coefficients must be finite".into()));
        }
        if !(self.compressor_power_min >= 0.0 && self.compressor_power_min < self.compressor_power_max) {
            return Err(Error::Parameter("btms compressor power range is empty".into()));
        }
        Ok(())
    }

    /// Coolant heat capacity within one module channel (J/K).
    pub fn channel_capacity(&self, battery: &BatteryParams) -> f64 {
        self.coolant_specific_heat * self.coolant_mass_flow / f64::from(battery.n_modules) * self.coolant_time_base
    }

    /// Loop heat capacity rate `mdot_c * C_p` (W/K).
    pub fn loop_capacity_rate(&self) -> f64 {
        self.coolant_mass_flow * self.coolant_specific_heat
    }
}

/// Condenser air mass flow (kg/s) at vehicle speed `v`.
pub fn air_mass_flow(v: f64) -> f64 {
    0.07065 + 0.001683 * v
}

fn surrogate(xi: &[f64; 6], p_cp: f64, t_c_out: f64, t_a: f64, v: f64, mdot_c: f64) -> f64 {
    xi[0] * p_cp
        + xi[1] * p_cp * p_cp
        + xi[2] * t_c_out
        + xi[3] * t_a * air_mass_flow(v)
        + xi[4] * t_c_out * mdot_c
        + xi[5]
}

/// Heat removed by the chiller (W); never negative.
pub fn cooling_rate(p_cp: f64, t_c_out: f64, t_a: f64, v: f64, params: &BtmsParams) -> Result<f64> {
    if !(params.compressor_power_min..=params.compressor_power_max).contains(&p_cp) {
        return Err(Error::Constraint(format!(
            "compressor power {p_cp} W outside [{}, {}] W",
            params.compressor_power_min, params.compressor_power_max
        )));
    }
    Ok(surrogate(&params.xi, p_cp, t_c_out, t_a, v, params.coolant_mass_flow).max(0.0))
}

/// Coolant temperatures around the loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolantLoopState {
    pub t_c_in: f64,
    pub t_c_out: f64,
}

/// Outlet temperature of the current inlet after passing the modeled cells,
/// and the inlet temperature after the chiller removes `q_co`.
pub fn coolant_loop_update(
    cell_temps: (f64, f64),
    t_c_in_prev: f64,
    q_co: f64,
    battery: &BatteryParams,
    params: &BtmsParams,
) -> Result<CoolantLoopState> {
    let c_f = params.channel_capacity(battery);
    let h = battery.convective_coefficient;
    if !(h < c_f) {
        return Err(Error::ModelValidity(format!("coolant chain needs h < C_f ({h} >= {c_f})")));
    }
    let (_, t_c_out) = coolant_chain(t_c_in_prev, cell_temps.0, cell_temps.1, battery.n_channel_cells, h / c_f);
    Ok(CoolantLoopState { t_c_in: t_c_out - q_co / params.loop_capacity_rate(), t_c_out })
}

/// One measured operating point of the AC plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub p_cp_w: f64,
    pub t_c_out_c: f64,
    pub t_a_c: f64,
    pub v_mps: f64,
    pub mdot_c_kgps: f64,
    pub q_co_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiFit {
    pub xi: [f64; 6],
    pub rms_residual: f64,
    pub mean_q_co: f64,
}

impl XiFit {
    /// RMS residual relative to the mean sample cooling rate.
    pub fn relative_residual(&self) -> f64 {
        self.rms_residual / self.mean_q_co.abs()
    }
}

/// Least-squares surrogate coefficients for a table of samples.
pub fn fit_xi(samples: &[CalibrationSample]) -> Result<XiFit> {
    if samples.len() < 6 {
        return Err(Error::Calibration(format!("need at least 6 samples, got {}", samples.len())));
    }
    let n = samples.len();
    let mut design = DMatrix::<f64>::zeros(n, 6);
    let mut target = DVector::<f64>::zeros(n);
    for (row, s) in samples.iter().enumerate() {
        let cols = [
            s.p_cp_w,
            s.p_cp_w * s.p_cp_w,
            s.t_c_out_c,
            s.t_a_c * air_mass_flow(s.v_mps),
            s.t_c_out_c * s.mdot_c_kgps,
            1.0,
        ];
        for (c, value) in cols.into_iter().enumerate() {
            design[(row, c)] = value;
        }
        target[row] = s.q_co_w;
    }
    if design.iter().chain(target.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Calibration("samples contain non-finite values".into()));
    }

    // Column equilibration keeps P² and the constant column comparable.
    let scales: Vec<f64> = (0..6)
        .map(|c| {
            let norm = design.column(c).norm();
            if norm > 0.0 { norm } else { 1.0 }
        })
        .collect();
    for (c, s) in scales.iter().enumerate() {
        design.column_mut(c).unscale_mut(*s);
    }

    let svd = design.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > 1e-10 * s_max) {
        return Err(Error::Calibration(format!(
            "design matrix is rank deficient (condition {:.3e})",
            s_max / s_min
        )));
    }
    let solution = svd
        .solve(&target, 1e-14 * s_max)
        .map_err(|e| Error::Calibration(e.to_string()))?;

    let mut xi = [0.0; 6];
    for c in 0..6 {
        xi[c] = solution[c] / scales[c];
    }
    let residual = &design * &solution - &target;
    let rms_residual = (residual.norm_squared() / n as f64).sqrt();
    let mean_q_co = target.mean();
    Ok(XiFit { xi, rms_residual, mean_q_co })
}

/// Reads samples from CSV with header
/// `p_cp_w,t_c_out_c,t_a_c,v_mps,mdot_c_kgps,q_co_w`.
pub fn load_calibration_samples(path: impl AsRef<Path>) -> Result<Vec<CalibrationSample>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Calibration(format!("samples not found: {}", path.display())),
        _ => Error::Csv(e),
    })?;
    let mut samples = Vec::new();
    for row in reader.deserialize() {
        let sample: CalibrationSample = row.map_err(|e| Error::Calibration(format!("bad sample row: {e}")))?;
        samples.push(sample);
    }
    Ok(samples)
}
