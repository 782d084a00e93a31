use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mpc::{
    idm_min_spacing, solve_step, warm_start_shift, ControlSequence, MpcConfig, StepContext, StrategyKind,
};
use crate::plant::{self, Control, PlantParams, PlantState};
use crate::sim::cycle::DrivingCycle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    /// Both modeled cells and the coolant start here (°C).
    pub cell_temp: f64,
    /// Initial gap above the minimum safe gap (m).
    pub gap_offset: f64,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self { cell_temp: 30.0, gap_offset: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub plant: PlantParams,
    pub mpc: MpcConfig,
    pub initial: InitialConditions,
}

impl Scenario {
    pub fn with_strategy(kind: StrategyKind) -> Self {
        let mut s = Self::default();
        s.mpc.strategy = crate::mpc::Strategy::preset(kind);
        s
    }

    pub fn validate(&self, cycle: &DrivingCycle) -> Result<()> {
        self.plant.validate()?;
        self.mpc.validate()?;
        let l = &self.mpc.limits;
        let t0 = self.initial.cell_temp;
        if !(t0 >= l.temp_min && t0 <= l.temp_max) {
            return Err(Error::Parameter(format!(
                "initial temperature {t0} °C outside [{}, {}]",
                l.temp_min, l.temp_max
            )));
        }
        if !(self.initial.gap_offset >= 0.0) {
            return Err(Error::Parameter("initial gap offset must be >= 0".into()));
        }
        if (self.mpc.grid.dt_short - cycle.dt).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "short-horizon step {} s must equal the cycle sample time {} s",
                self.mpc.grid.dt_short, cycle.dt
            )));
        }
        Ok(())
    }
}

/// One plant step: states at the end of the step, control and powers applied during it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub t: f64,
    pub p: f64,
    pub v: f64,
    pub a: f64,
    pub spacing: f64,
    pub p_tra: f64,
    pub p_cp: f64,
    pub p_b: f64,
    pub i_b: f64,
    pub t_bc1: f64,
    pub t_bcnc: f64,
    pub t_c_in: f64,
    pub t_c_out: f64,
    pub dq1: f64,
    pub dqnc: f64,
    pub solve_ms: f64,
    pub converged: bool,
    /// The solver failed and the previous control was held.
    #[serde(skip)]
    pub flagged: bool,
    /// Gap minus the minimum safe gap (m).
    #[serde(skip)]
    pub spacing_margin: f64,
    #[serde(skip)]
    pub pv_vel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub strategy: StrategyKind,
    pub steps: usize,
    pub flagged_steps: usize,
    pub nonconverged_steps: usize,
    /// ∫(P_cp + P_aux) dt.
    pub cooling_energy_kj: f64,
    /// Net ∫P_tra dt (regeneration counts negative).
    pub traction_energy_kj: f64,
    /// ∫P_b dt.
    pub total_energy_kj: f64,
    pub cell_1_degradation: f64,
    pub cell_nc_degradation: f64,
    /// Downstream minus upstream capacity loss accumulated over the run.
    pub degradation_inconsistency: f64,
    pub min_spacing_margin_m: f64,
    pub spacing_violations: usize,
    /// Largest excursion of a cell or the coolant outlet outside the band (°C).
    pub max_temperature_excursion_c: f64,
    pub mean_solve_time_s: f64,
    pub total_solve_time_s: f64,
}

impl Metrics {
    pub fn flagged_fraction(&self) -> f64 {
        if self.steps == 0 { 0.0 } else { self.flagged_steps as f64 / self.steps as f64 }
    }
}

pub const RUNLOG_HEADER: [&str; 17] = [
    "t", "p", "v", "a", "spacing", "p_tra", "p_cp", "p_b", "i_b", "t_bc1", "t_bcnc", "t_c_in", "t_c_out", "dq1",
    "dqnc", "solve_ms", "converged",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub cycle: String,
    pub rows: Vec<RunRow>,
}

impl RunLog {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(RUNLOG_HEADER)?;
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// SHA-256 over every logged quantity except wall-clock solve time, so
    /// identical scenarios hash identically across machines and runs.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.cycle.as_bytes());
        for r in &self.rows {
            for x in [
                r.t, r.p, r.v, r.a, r.spacing, r.p_tra, r.p_cp, r.p_b, r.i_b, r.t_bc1, r.t_bcnc, r.t_c_in, r.t_c_out,
                r.dq1, r.dqnc,
            ] {
                h.update(x.to_bits().to_le_bytes());
            }
            h.update([r.converged as u8, r.flagged as u8]);
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs the controller against the plant along `cycle`, one step per sample.
///
/// Solver failures hold the previous control and flag the step; model and
/// configuration errors abort the run.
pub fn run_closed_loop(cycle: &DrivingCycle, scenario: &Scenario) -> Result<(RunLog, Metrics)> {
    scenario.validate(cycle)?;
    let params = &scenario.plant;
    let cfg = &scenario.mpc;
    let sp = &cfg.spacing;
    let dt = cycle.dt;

    let v0 = cycle.velocity(0.0);
    let gap0 = idm_min_spacing(v0, v0, &cfg.limits, sp.standstill_gap, sp.time_headway) + scenario.initial.gap_offset;
    let mut state = PlantState::new(cycle.position(0.0) - gap0, v0, scenario.initial.cell_temp, params);
    let q_ini = (state.pack.cell_first.q_loss, state.pack.cell_last.q_loss);

    let mut applied = Control::default();
    let mut warm: Option<ControlSequence> = None;
    let mut rows = Vec::with_capacity(cycle.len() - 1);
    let mut identity_sum = 0.0;
    let mut identity_scale = 0.0;

    for k in 0..cycle.len() - 1 {
        let t = k as f64 * dt;
        let preview = cycle.preview(t, &cfg.grid);
        let ctx = StepContext { state: &state, preview: &preview, applied };
        let (u, converged, flagged, solve_s) = match solve_step(&ctx, cfg, params, warm.as_ref()) {
            Ok(sol) => {
                let u = sol.controls.first();
                warm = Some(warm_start_shift(&sol.controls, &cfg.grid, &cfg.limits));
                (u, sol.converged, false, sol.solve_time_s)
            }
            Err(e @ (Error::InvalidInput(_) | Error::Parameter(_))) => return Err(e),
            Err(_) => {
                warm = None;
                (applied, false, true, 0.0)
            }
        };

        let theta = cycle.slope_at(t);
        let (next, out) = plant::step(&state, u, theta, dt, params)?;
        let t_end = t + dt;
        let v_pv = cycle.velocity(t_end);
        let gap = cycle.position(t_end) - next.kin.p;
        let s_min = idm_min_spacing(next.kin.v, v_pv, &cfg.limits, sp.standstill_gap, sp.time_headway);

        let recomposed = vehicle_branch(out.p_tra, params) + (u.p_cp + params.vehicle.aux_power) / params.vehicle.battery_efficiency;
        identity_sum += (out.p_b - recomposed).abs() * dt;
        identity_scale += out.p_b.abs() * dt;

        rows.push(RunRow {
            t: t_end,
            p: next.kin.p,
            v: next.kin.v,
            a: next.kin.a,
            spacing: gap,
            p_tra: out.p_tra,
            p_cp: u.p_cp,
            p_b: out.p_b,
            i_b: out.i_b,
            t_bc1: next.pack.cell_first.t_bc,
            t_bcnc: next.pack.cell_last.t_bc,
            t_c_in: next.pack.t_c_in,
            t_c_out: next.pack.t_c_out,
            dq1: out.dq_first,
            dqnc: out.dq_last,
            solve_ms: solve_s * 1e3,
            converged,
            flagged,
            spacing_margin: gap - s_min,
            pv_vel: v_pv,
        });
        state = next;
        applied = u;
    }

    if identity_sum > 1e-9 * identity_scale.max(1.0) {
        return Err(Error::ModelValidity(format!(
            "battery energy bookkeeping drifted by {identity_sum} J"
        )));
    }

    let log = RunLog { cycle: cycle.name.clone(), rows };
    let metrics = aggregate(&log, cfg, params, dt, q_ini, state);
    Ok((log, metrics))
}

/// Battery-side traction power of the regenerative/propulsive branch.
fn vehicle_branch(p_tra: f64, params: &PlantParams) -> f64 {
    let v = &params.vehicle;
    if p_tra >= 0.0 { p_tra / v.battery_efficiency } else { v.battery_efficiency * v.regen_efficiency * p_tra }
}

fn aggregate(log: &RunLog, cfg: &MpcConfig, params: &PlantParams, dt: f64, q_ini: (f64, f64), end: PlantState) -> Metrics {
    let rows = &log.rows;
    let n = rows.len();
    let sum = |f: &dyn Fn(&RunRow) -> f64| rows.iter().map(f).sum::<f64>();
    let l = &cfg.limits;
    let band = |t: f64| (l.temp_min - t).max(t - l.temp_max).max(0.0);
    let dq1 = end.pack.cell_first.q_loss - q_ini.0;
    let dqn = end.pack.cell_last.q_loss - q_ini.1;
    let total_solve = sum(&|r| r.solve_ms) * 1e-3;
    Metrics {
        strategy: cfg.strategy.kind,
        steps: n,
        flagged_steps: rows.iter().filter(|r| r.flagged).count(),
        nonconverged_steps: rows.iter().filter(|r| !r.converged).count(),
        cooling_energy_kj: sum(&|r| (r.p_cp + params.vehicle.aux_power) * dt) * 1e-3,
        traction_energy_kj: sum(&|r| r.p_tra * dt) * 1e-3,
        total_energy_kj: sum(&|r| r.p_b * dt) * 1e-3,
        cell_1_degradation: dq1,
        cell_nc_degradation: dqn,
        degradation_inconsistency: dqn - dq1,
        min_spacing_margin_m: rows.iter().map(|r| r.spacing_margin).fold(f64::INFINITY, f64::min),
        spacing_violations: rows.iter().filter(|r| r.spacing_margin < 0.0).count(),
        max_temperature_excursion_c: rows
            .iter()
            .map(|r| band(r.t_bc1).max(band(r.t_bcnc)).max(band(r.t_c_out)))
            .fold(0.0, f64::max),
        mean_solve_time_s: if n > 0 { total_solve / n as f64 } else { 0.0 },
        total_solve_time_s: total_solve,
    }
}
