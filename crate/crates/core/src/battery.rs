//! Reduced electro-thermal-aging battery pack model.
//!
//! Only the first and the last cell of a sequentially cooled channel are
//! carried as states. Cells in between are linearly interpolated whenever the
//! coolant chain needs their temperatures.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const KELVIN_OFFSET: f64 = 273.15;

/// Pack structure, cell, thermal and aging parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    /// Modules in the pack (each with its own parallel cooling channel).
    pub n_modules: u32,
    /// Series cells per module.
    pub n_series: u32,
    /// Parallel cells per module.
    pub n_parallel: u32,
    /// Cells passed by one cooling channel.
    pub n_channel_cells: u32,
    /// Nominal cell capacity (Ah).
    pub q_nom: f64,
    /// Initial fractional capacity loss of every cell.
    pub q_loss_ini: f64,
    /// Pack open-circuit voltage (V).
    pub ocv_pack: f64,
    /// Cell resistance at the nominal temperature, fresh cell (Ω).
    pub r_cell_nominal: f64,
    /// Cell thermal capacity (J/K).
    pub cell_heat_capacity: f64,
    /// Cell-to-coolant convective coefficient (W/K).
    pub convective_coefficient: f64,
    /// Cell entropic coefficient dV/dT (V/K).
    pub entropic_coefficient: f64,
    /// Relative resistance change per kelvin (1/K).
    pub kappa: f64,
    /// Resistance-degradation scale; cancels out after normalisation.
    pub mu: f64,
    /// Resistance-degradation exponent.
    pub lambda: f64,
    /// Nominal temperature of the resistance model (°C).
    pub t_nominal: f64,
    /// Activation energy (J/mol).
    pub activation_energy: f64,
    /// Pre-exponential factor.
    pub pre_exponential: f64,
    /// Throughput exponent.
    pub z: f64,
    /// C-rate compensation factor.
    pub compensation: f64,
    /// Gas constant (J/(mol K)).
    pub gas_constant: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            n_modules: 16,
            n_series: 6,
            n_parallel: 38,
            n_channel_cells: 228,
            q_nom: 5.019,
            q_loss_ini: 0.001,
            ocv_pack: 380.0,
            r_cell_nominal: 0.03,
            cell_heat_capacity: 45.0,
            convective_coefficient: 0.4901,
            entropic_coefficient: 0.0,
            kappa: -0.005,
            mu: 1.0,
            lambda: 1.0,
            t_nominal: 15.0,
            activation_energy: 15162.0,
            pre_exponential: 0.0032,
            z: 0.824,
            compensation: 1516.0,
            gas_constant: 8.314,
        }
    }
}

impl BatteryParams {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("n_modules", self.n_modules),
            ("n_series", self.n_series),
            ("n_parallel", self.n_parallel),
            ("n_channel_cells", self.n_channel_cells),
        ] {
            if n == 0 {
                return Err(Error::Parameter(format!("battery.{name} must be >= 1")));
            }
        }
        for (name, value) in [
            ("q_nom", self.q_nom),
            ("ocv_pack", self.ocv_pack),
            ("r_cell_nominal", self.r_cell_nominal),
            ("cell_heat_capacity", self.cell_heat_capacity),
            ("activation_energy", self.activation_energy),
            ("pre_exponential", self.pre_exponential),
            ("gas_constant", self.gas_constant),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!("battery.{name} must be > 0, got {value}")));
            }
        }
        if !(self.convective_coefficient.is_finite() && self.convective_coefficient >= 0.0) {
            return Err(Error::Parameter("battery.convective_coefficient must be >= 0".into()));
        }
        if !(MIN_Q_LOSS_SEED..1.0).contains(&self.q_loss_ini) {
            return Err(Error::Parameter(format!(
                "battery.q_loss_ini must lie in [{MIN_Q_LOSS_SEED}, 1), got {}",
                self.q_loss_ini
            )));
        }
        if !(self.z > 0.0 && self.z <= 1.0) {
            return Err(Error::Parameter(format!("battery.z must lie in (0, 1], got {}", self.z)));
        }
        if self.mu < 1.0 || self.lambda < 1.0 {
            return Err(Error::Parameter("battery.mu and battery.lambda must be >= 1".into()));
        }
        for (name, value) in [
            ("entropic_coefficient", self.entropic_coefficient),
            ("kappa", self.kappa),
            ("t_nominal", self.t_nominal),
            ("compensation", self.compensation),
        ] {
            ensure_finite(name, value).map_err(|_| Error::Parameter(format!("battery.{name} is not finite")))?;
        }
        Ok(())
    }

    /// Pack resistance per unit of cell resistance.
    pub fn pack_resistance_factor(&self) -> f64 {
        f64::from(self.n_modules * self.n_series) / f64::from(self.n_parallel)
    }

    /// Constant prefactor `z * A^(1/z)` of the discrete aging law.
    pub fn aging_prefactor(&self) -> f64 {
        self.z * self.pre_exponential.powf(1.0 / self.z)
    }

    /// Total number of cells in the pack.
    pub fn cell_count(&self) -> u32 {
        self.n_modules * self.n_series * self.n_parallel
    }
}

/// The `Q_loss` seed below which the aging law's `Q^(1-1/z)` factor is singular.
pub const MIN_Q_LOSS_SEED: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    /// Surface temperature (°C).
    pub t_bc: f64,
    /// Fractional capacity loss.
    pub q_loss: f64,
}

impl CellState {
    /// Remaining capacity (Ah).
    pub fn q_bc(&self, q_nom: f64) -> f64 {
        q_nom * (1.0 - self.q_loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackState {
    pub cell_first: CellState,
    pub cell_last: CellState,
    /// Coolant temperature at the channel inlet (°C).
    pub t_c_in: f64,
    /// Coolant temperature leaving the last cell (°C).
    pub t_c_out: f64,
}

impl PackState {
    /// Both cells at `t_cell` with the coolant equilibrated to them.
    pub fn uniform(t_cell: f64, params: &BatteryParams) -> Self {
        let cell = CellState { t_bc: t_cell, q_loss: params.q_loss_ini };
        Self { cell_first: cell, cell_last: cell, t_c_in: t_cell, t_c_out: t_cell }
    }

    /// Mean modeled cell temperature (°C).
    pub fn mean_temperature(&self) -> f64 {
        0.5 * (self.cell_first.t_bc + self.cell_last.t_bc)
    }
}

/// Cell terminal voltage from the equivalent circuit.
pub fn cell_voltage(ocv: f64, current: f64, resistance: f64) -> f64 {
    ocv - current * resistance
}

/// Cell resistance including temperature and degradation effects, each factor
/// normalised to one at the nominal temperature and a fresh cell.
pub fn effective_resistance(t_bc: f64, q_loss: f64, params: &BatteryParams) -> Result<f64> {
    if !(q_loss < 1.0) {
        return Err(Error::InvalidInput(format!("q_loss must be < 1, got {q_loss}")));
    }
    let thermal = 1.0 + params.kappa * (t_bc - params.t_nominal);
    let capacity_ratio = 1.0 / (1.0 - q_loss);
    let aging = if params.lambda == 1.0 {
        capacity_ratio
    } else {
        capacity_ratio.powf(params.lambda)
    };
    let r = params.r_cell_nominal * thermal * aging;
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::Parameter(format!(
            "non-physical cell resistance {r} Ω at {t_bc} °C, q_loss {q_loss}"
        )));
    }
    Ok(r)
}

/// Pack-equivalent resistance (Ω) from the two modeled cells.
pub fn pack_resistance(pack: &PackState, params: &BatteryParams) -> Result<f64> {
    let r1 = effective_resistance(pack.cell_first.t_bc, pack.cell_first.q_loss, params)?;
    let rn = effective_resistance(pack.cell_last.t_bc, pack.cell_last.q_loss, params)?;
    Ok(0.5 * (r1 + rn) * params.pack_resistance_factor())
}

/// Effective pack source voltage after the reversible-heat term.
fn effective_ocv(pack: &PackState, params: &BatteryParams) -> f64 {
    let t_pack_k = pack.mean_temperature() + KELVIN_OFFSET;
    let dvdt_pack = params.entropic_coefficient * f64::from(params.n_modules * params.n_series);
    params.ocv_pack - t_pack_k * dvdt_pack
}

/// Pack current (A, discharge positive) drawing terminal power `p_b`.
///
/// Returns the physical (smaller) root of the pack power balance.
pub fn pack_current_from_power(p_b: f64, pack: &PackState, params: &BatteryParams) -> Result<f64> {
    ensure_finite("p_b", p_b)?;
    let r_b = pack_resistance(pack, params)?;
    let e = effective_ocv(pack, params);
    let disc = e * e - 4.0 * r_b * p_b;
    if disc < 0.0 {
        return Err(Error::PowerInfeasible { power_w: p_b, max_w: e * e / (4.0 * r_b) });
    }
    // Cancellation-free form of (e - sqrt(disc)) / (2 r_b).
    Ok(2.0 * p_b / (e + disc.sqrt()))
}

/// Terminal power (W) delivered at pack current `i_b`.
pub fn pack_power_from_current(i_b: f64, pack: &PackState, params: &BatteryParams) -> Result<f64> {
    let r_b = pack_resistance(pack, params)?;
    Ok(effective_ocv(pack, params) * i_b - r_b * i_b * i_b)
}

/// Temperature of cell `j` (1-based) along the channel, interpolated between
/// the two modeled cells.
pub fn interpolated_cell_temp(j: u32, t_first: f64, t_last: f64, n_c: u32) -> f64 {
    if n_c <= 1 {
        return t_first;
    }
    let w = f64::from(j - 1) / f64::from(n_c - 1);
    t_first + (t_last - t_first) * w
}

fn check_chain_ratio(h: f64, c_f: f64) -> Result<f64> {
    if !(c_f > 0.0 && h < c_f) {
        return Err(Error::ModelValidity(format!(
            "coolant chain needs h < C_f (h = {h} W/K, C_f = {c_f} J/K)"
        )));
    }
    Ok(h / c_f)
}

/// Coolant temperature reaching cell `i` (1-based; `i = N_c + 1` is the
/// channel outlet). `cell_temps[j - 1]` holds cell `j`; only cells before `i`
/// are read.
pub fn coolant_temp_at_cell(i: usize, t_c_in: f64, cell_temps: &[f64], h: f64, c_f: f64) -> Result<f64> {
    let r = check_chain_ratio(h, c_f)?;
    if i == 0 || cell_temps.len() < i - 1 {
        return Err(Error::InvalidInput(format!(
            "cell index {i} needs {} upstream temperatures, got {}",
            i.saturating_sub(1),
            cell_temps.len()
        )));
    }
    let keep = 1.0 - r;
    let mut t = keep.powi(i as i32 - 1) * t_c_in;
    for j in 2..=i {
        t += r * keep.powi((i - j) as i32) * cell_temps[j - 2];
    }
    Ok(t)
}

/// Inlet coolant temperature at the last modeled cell and at the outlet.
/// Walks the channel recursively instead of re-evaluating the closed form.
pub(crate) fn coolant_chain(t_c_in: f64, t_first: f64, t_last: f64, n_c: u32, ratio: f64) -> (f64, f64) {
    let keep = 1.0 - ratio;
    let mut t = t_c_in;
    let mut at_last = t_c_in;
    for j in 1..=n_c {
        if j == n_c {
            at_last = t;
        }
        t = keep * t + ratio * interpolated_cell_temp(j, t_first, t_last, n_c);
    }
    (at_last, t)
}

/// Channel outlet temperature for the given inlet and modeled cell temperatures.
pub fn channel_outlet_temp(t_c_in: f64, t_first: f64, t_last: f64, params: &BatteryParams, c_f: f64) -> Result<f64> {
    let r = check_chain_ratio(params.convective_coefficient, c_f)?;
    Ok(coolant_chain(t_c_in, t_first, t_last, params.n_channel_cells, r).1)
}

/// Surface temperature rate (K/s) of a cell carrying `i_bc` next to coolant at `t_c_i`.
pub fn cell_temp_derivative(cell: &CellState, i_bc: f64, t_c_i: f64, params: &BatteryParams) -> Result<f64> {
    let r = effective_resistance(cell.t_bc, cell.q_loss, params)?;
    Ok(cell_heating(cell.t_bc, i_bc, r, t_c_i, params))
}

fn cell_heating(t_bc: f64, i_bc: f64, r: f64, t_c_i: f64, params: &BatteryParams) -> f64 {
    let joule = i_bc * i_bc * r;
    let reversible = i_bc * (t_bc + KELVIN_OFFSET) * params.entropic_coefficient;
    let convection = params.convective_coefficient * (t_c_i - t_bc);
    (joule + reversible + convection) / params.cell_heat_capacity
}

/// Capacity-loss increment of one cell over `dt` seconds at cell current
/// `i_bc` (A) and absolute temperature `t_bc_k` (K).
pub fn aging_increment(i_bc: f64, t_bc_k: f64, q_loss_prev: f64, dt: f64, params: &BatteryParams) -> Result<f64> {
    if !(q_loss_prev > 0.0) {
        return Err(Error::InvalidInput(format!("q_loss_prev must be > 0, got {q_loss_prev}")));
    }
    if !(t_bc_k > 0.0) {
        return Err(Error::InvalidInput(format!("absolute temperature must be > 0, got {t_bc_k}")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    Ok(aging_rate(i_bc, t_bc_k, q_loss_prev, params.aging_prefactor(), params) * dt)
}

/// Capacity-loss rate (1/s); `prefactor` is [`BatteryParams::aging_prefactor`].
#[inline]
fn aging_rate(i_bc: f64, t_bc_k: f64, q_loss_prev: f64, prefactor: f64, params: &BatteryParams) -> f64 {
    let current = i_bc.abs();
    if current == 0.0 {
        return 0.0;
    }
    let c_rate = current / params.q_nom;
    let z = params.z;
    let arrhenius = ((-params.activation_energy + params.compensation * c_rate) / (z * params.gas_constant * t_bc_k)).exp();
    current / 3600.0 * prefactor * arrhenius * q_loss_prev.powf(1.0 - 1.0 / z)
}

/// One explicit step of the two-cell pack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PackStep {
    pub state: PackState,
    pub dq_first: f64,
    pub dq_last: f64,
}

/// Advances both modeled cells over `dt` with pack current `i_b` and coolant
/// entering the channel at `t_c_in`.
///
/// The returned state records `t_c_in` as its inlet and the outlet temperature
/// seen by the updated cells. `c_f` is the coolant capacity of one channel.
pub fn step_pack(state: &PackState, i_b: f64, t_c_in: f64, dt: f64, params: &BatteryParams, c_f: f64) -> Result<PackStep> {
    ensure_finite("i_b", i_b)?;
    ensure_finite("t_c_in", t_c_in)?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    let ratio = check_chain_ratio(params.convective_coefficient, c_f)?;
    let n_c = params.n_channel_cells;
    let first = state.cell_first;
    let last = state.cell_last;
    let (t_c_last, _) = coolant_chain(t_c_in, first.t_bc, last.t_bc, n_c, ratio);

    let i_bc = i_b / f64::from(params.n_parallel);
    let prefactor = params.aging_prefactor();

    let r_first = effective_resistance(first.t_bc, first.q_loss, params)?;
    let r_last = effective_resistance(last.t_bc, last.q_loss, params)?;
    let dq_first = aging_rate(i_bc, first.t_bc + KELVIN_OFFSET, first.q_loss, prefactor, params) * dt;
    let dq_last = aging_rate(i_bc, last.t_bc + KELVIN_OFFSET, last.q_loss, prefactor, params) * dt;

    let t_first = first.t_bc + dt * cell_heating(first.t_bc, i_bc, r_first, t_c_in, params);
    let t_last = last.t_bc + dt * cell_heating(last.t_bc, i_bc, r_last, t_c_last, params);
    let (_, t_c_out) = coolant_chain(t_c_in, t_first, t_last, n_c, ratio);

    Ok(PackStep {
        state: PackState {
            cell_first: CellState { t_bc: t_first, q_loss: first.q_loss + dq_first },
            cell_last: CellState { t_bc: t_last, q_loss: last.q_loss + dq_last },
            t_c_in,
            t_c_out,
        },
        dq_first,
        dq_last,
    })
}
