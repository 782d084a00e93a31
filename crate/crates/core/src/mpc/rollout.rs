use crate::error::{Error, Result};
use crate::mpc::grid::HorizonGrid;
use crate::plant::{self, Control, PlantParams, PlantState, StepOutputs};

/// Exogenous information over one horizon: the preceding vehicle's
/// position and speed at every substep end, the road slope during every
/// substep and the speed reference at every step end.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HorizonPreview {
    pub pv_pos: Vec<f64>,
    pub pv_vel: Vec<f64>,
    pub slope: Vec<f64>,
    pub r_v: Vec<f64>,
}

impl HorizonPreview {
    /// Leader cruising at constant speed on a constant slope.
    pub fn constant_velocity(grid: &HorizonGrid, pv_pos0: f64, pv_vel: f64, slope: f64) -> Self {
        let times = grid.substep_times();
        Self {
            pv_pos: times.iter().map(|t| pv_pos0 + pv_vel * t).collect(),
            pv_vel: vec![pv_vel; times.len()],
            slope: vec![slope; times.len()],
            r_v: vec![pv_vel; grid.n_steps()],
        }
    }

    pub fn validate(&self, grid: &HorizonGrid) -> Result<()> {
        let n = grid.n_substeps();
        if self.pv_pos.len() != n || self.pv_vel.len() != n || self.slope.len() != n {
            return Err(Error::InvalidInput(format!(
                "preview has {}/{}/{} substep samples, grid needs {n}",
                self.pv_pos.len(),
                self.pv_vel.len(),
                self.slope.len()
            )));
        }
        if self.r_v.len() != grid.n_steps() {
            return Err(Error::InvalidInput(format!(
                "preview has {} speed references, grid needs {}",
                self.r_v.len(),
                grid.n_steps()
            )));
        }
        Ok(())
    }
}

/// Aggregates of one prediction step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedStep {
    pub dt: f64,
    pub end: PlantState,
    pub r_v: f64,
    /// ∫ P_b dt over the step (J).
    pub battery_energy_j: f64,
    pub traction_energy_j: f64,
    pub dq_first: f64,
    pub dq_last: f64,
}

/// State at the end of one integration substep, with the leader alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedSubstep {
    pub dt: f64,
    pub state: PlantState,
    pub out: StepOutputs,
    pub pv_pos: f64,
    pub pv_vel: f64,
    /// Speed the commanded acceleration would reach without the standstill
    /// clamp; it goes negative when braking is commanded at rest.
    pub v_unclamped: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<PredictedStep>,
    pub substeps: Vec<PredictedSubstep>,
}

impl Trajectory {
    /// State at the start of step `k`.
    pub fn state_before(&self, k: usize, x0: &PlantState) -> PlantState {
        if k == 0 { *x0 } else { self.steps[k - 1].end }
    }

    pub fn battery_energy_j(&self) -> f64 {
        self.steps.iter().map(|s| s.battery_energy_j).sum()
    }
}

/// Simulates the plant over the whole horizon under piecewise-constant controls.
pub fn rollout(
    x0: &PlantState,
    controls: &[Control],
    preview: &HorizonPreview,
    grid: &HorizonGrid,
    params: &PlantParams,
) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    rollout_from(0, x0, controls, preview, grid, params, &mut traj)?;
    Ok(traj)
}

/// Re-simulates steps `k0..` from `start` (the state at the start of step
/// `k0`), overwriting the tail of `traj`; earlier entries are kept.
pub fn rollout_from(
    k0: usize,
    start: &PlantState,
    controls: &[Control],
    preview: &HorizonPreview,
    grid: &HorizonGrid,
    params: &PlantParams,
    traj: &mut Trajectory,
) -> Result<()> {
    let n = grid.n_steps();
    if controls.len() != n {
        return Err(Error::InvalidInput(format!("{} controls for a {n}-step horizon", controls.len())));
    }
    traj.steps.truncate(k0);
    traj.substeps.truncate(grid.first_substep(k0));
    if traj.steps.len() != k0 {
        return Err(Error::InvalidInput(format!("trajectory prefix shorter than step {k0}")));
    }

    let mut x = *start;
    let mut idx = grid.first_substep(k0);
    for (k, &u) in controls.iter().enumerate().skip(k0) {
        let (m, dt) = grid.substeps_of(k);
        let mut agg = PredictedStep {
            dt: grid.step_duration(k),
            end: x,
            r_v: preview.r_v[k],
            battery_energy_j: 0.0,
            traction_energy_j: 0.0,
            dq_first: 0.0,
            dq_last: 0.0,
        };
        for _ in 0..m {
            let v_unclamped = x.kin.v + u.accel * dt;
            let (next, out) = plant::step(&x, u, preview.slope[idx], dt, params)?;
            agg.battery_energy_j += out.p_b * dt;
            agg.traction_energy_j += out.p_tra * dt;
            agg.dq_first += out.dq_first;
            agg.dq_last += out.dq_last;
            traj.substeps.push(PredictedSubstep {
                dt,
                state: next,
                out,
                pv_pos: preview.pv_pos[idx],
                pv_vel: preview.pv_vel[idx],
                v_unclamped,
            });
            x = next;
            idx += 1;
        }
        agg.end = x;
        traj.steps.push(agg);
    }
    Ok(())
}
