use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::grid::HorizonGrid;
use crate::mpc::limits::{idm_min_spacing, ControlLimits, SpacingPolicy};
use crate::mpc::rollout::{rollout_from, HorizonPreview, PredictedSubstep, Trajectory};
use crate::mpc::solver::{self, fd_gradient, BoxRateSet, GradientContext, Objective, SolverDiagnostics, SolverOptions};
use crate::mpc::strategy::{objective_value, Strategy};
use crate::plant::{Control, PlantParams, PlantState};

/// Exterior quadratic penalty on the state constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyOptions {
    pub weight: f64,
    /// Times the weight may be doubled when a solve still violates
    /// constraints by more than `tolerance`.
    pub max_doublings: usize,
    pub tolerance: f64,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        Self { weight: 1e4, max_doublings: 3, tolerance: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub strategy: Strategy,
    pub grid: HorizonGrid,
    pub limits: ControlLimits,
    pub spacing: SpacingPolicy,
    pub solver: SolverOptions,
    pub penalty: PenaltyOptions,
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.grid.validate()?;
        self.limits.validate()?;
        self.spacing.validate()?;
        if !(self.penalty.weight > 0.0 && self.penalty.tolerance >= 0.0) {
            return Err(Error::Parameter("penalty weight must be > 0 and tolerance >= 0".into()));
        }
        Ok(())
    }
}

/// One control per horizon step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlSequence(pub Vec<Control>);

impl ControlSequence {
    pub fn zeros(grid: &HorizonGrid) -> Self {
        Self(vec![Control::default(); grid.n_steps()])
    }

    pub fn first(&self) -> Control {
        self.0.first().copied().unwrap_or_default()
    }
}

/// Everything the controller needs at one sampling instant.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub state: &'a PlantState,
    pub preview: &'a HorizonPreview,
    /// Control applied during the previous step; anchors the rate limits.
    pub applied: Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub controls: ControlSequence,
    pub trajectory: Trajectory,
    /// Unnormalised objective of the returned trajectory.
    pub objective: f64,
    /// Largest predicted state-constraint violation (physical units).
    pub max_violation: f64,
    pub penalty_weight: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub solve_time_s: f64,
    pub diagnostics: SolverDiagnostics,
}

fn scales(limits: &ControlLimits) -> (f64, f64) {
    let a = limits.accel_min.abs().max(limits.accel_max.abs());
    let p = limits.p_cp_min.abs().max(limits.p_cp_max.abs());
    (a, if p > 0.0 { p } else { 1.0 })
}

/// Feasible set in normalised variables `[a_0/a_s, P_0/P_s, a_1/a_s, …]`.
pub fn constraint_set(grid: &HorizonGrid, limits: &ControlLimits, applied: Control) -> BoxRateSet {
    let n = grid.n_steps();
    let (sa, sp) = scales(limits);
    let mut set = BoxRateSet {
        lower: Vec::with_capacity(2 * n),
        upper: Vec::with_capacity(2 * n),
        max_delta: Vec::with_capacity(2 * n),
        stride: 2,
        anchor: vec![applied.accel / sa, applied.p_cp / sp],
    };
    for k in 0..n {
        let dt = grid.step_duration(k);
        set.lower.extend([limits.accel_min / sa, limits.p_cp_min / sp]);
        set.upper.extend([limits.accel_max / sa, limits.p_cp_max / sp]);
        set.max_delta.extend([limits.jerk_max * dt / sa, limits.p_cp_rate_max * dt / sp]);
    }
    set
}

fn encode(seq: &[Control], limits: &ControlLimits) -> Vec<f64> {
    let (sa, sp) = scales(limits);
    seq.iter().flat_map(|u| [u.accel / sa, u.p_cp / sp]).collect()
}

fn decode_into(z: &[f64], limits: &ControlLimits, out: &mut Vec<Control>) {
    let (sa, sp) = scales(limits);
    out.clear();
    out.extend(z.chunks_exact(2).map(|c| Control { accel: c[0] * sa, p_cp: c[1] * sp }));
}

/// Sum of squared and largest state-constraint violations at one substep.
/// The minimum gap includes the policy's safety margin. The lower speed
/// bound applies to the unclamped speed, so commanding deceleration at rest
/// is penalised instead of being a flat direction the solver cannot leave.
pub fn substep_violation(sub: &PredictedSubstep, limits: &ControlLimits, spacing: &SpacingPolicy) -> (f64, f64) {
    let s = &sub.state;
    let v = s.kin.v;
    let gap = sub.pv_pos - s.kin.p;
    let s_min = idm_min_spacing(v, sub.pv_vel, limits, spacing.standstill_gap, spacing.time_headway) + spacing.safety_margin;
    let band = |t: f64| (limits.temp_min - t).max(t - limits.temp_max).max(0.0);
    let terms = [
        (v - limits.v_max).max(0.0),
        (limits.v_min - sub.v_unclamped.min(v)).max(0.0),
        (s_min - gap).max(0.0),
        (gap - spacing.max_gap(v)).max(0.0),
        band(s.pack.cell_first.t_bc),
        band(s.pack.cell_last.t_bc),
        band(s.pack.t_c_out),
    ];
    (terms.iter().map(|t| t * t).sum(), terms.iter().fold(0.0, |m: f64, t| m.max(*t)))
}

/// Largest state-constraint violation along a predicted trajectory.
pub fn max_violation(traj: &Trajectory, limits: &ControlLimits, spacing: &SpacingPolicy) -> f64 {
    traj.substeps.iter().map(|s| substep_violation(s, limits, spacing).1).fold(0.0, f64::max)
}

/// Normalised penalised objective over one horizon, in the solver's
/// variables. Exposed so gradients can be checked independently.
pub struct HorizonProblem<'a> {
    x0: &'a PlantState,
    preview: &'a HorizonPreview,
    config: &'a MpcConfig,
    params: &'a PlantParams,
    pub j_ref: f64,
    pub weight: f64,
    controls: Vec<Control>,
    base: Trajectory,
    scratch: Trajectory,
    merits: Vec<f64>,
}

impl<'a> HorizonProblem<'a> {
    pub fn new(ctx: &StepContext<'a>, config: &'a MpcConfig, params: &'a PlantParams, j_ref: f64, weight: f64) -> Self {
        Self {
            x0: ctx.state,
            preview: ctx.preview,
            config,
            params,
            j_ref,
            weight,
            controls: Vec::new(),
            base: Trajectory::default(),
            scratch: Trajectory::default(),
            merits: Vec::new(),
        }
    }

    fn step_merit(&self, traj: &Trajectory, k: usize) -> f64 {
        let grid = &self.config.grid;
        let (a, b) = (grid.first_substep(k), grid.first_substep(k + 1));
        let pen: f64 = traj.substeps[a..b]
            .iter()
            .map(|s| substep_violation(s, &self.config.limits, &self.config.spacing).0)
            .sum();
        self.config.strategy.step_cost(traj, k) / self.j_ref + self.weight * pen
    }

    /// Simulates the horizon for `z` and returns the trajectory.
    pub fn trajectory(&mut self, z: &[f64]) -> Result<Trajectory> {
        self.value(z)?;
        Ok(self.base.clone())
    }
}

impl Objective for HorizonProblem<'_> {
    fn value(&mut self, z: &[f64]) -> Result<f64> {
        decode_into(z, &self.config.limits, &mut self.controls);
        let mut traj = std::mem::take(&mut self.base);
        let res = rollout_from(0, self.x0, &self.controls, self.preview, &self.config.grid, self.params, &mut traj);
        self.base = traj;
        res?;
        Ok((0..self.base.steps.len()).map(|k| self.step_merit(&self.base, k)).sum())
    }

    /// Finite differences that re-simulate only the part of the horizon a
    /// perturbed control can influence.
    fn gradient(&mut self, z: &[f64], fz: f64, ctx: &GradientContext<'_>, grad: &mut [f64]) -> Result<usize> {
        self.value(z)?;
        let n = self.base.steps.len();
        self.merits = (0..n).map(|k| self.step_merit(&self.base, k)).collect();
        let mut prefix = vec![0.0; n + 1];
        for k in 0..n {
            prefix[k + 1] = prefix[k] + self.merits[k];
        }
        self.scratch.clone_from(&self.base);
        let mut controls = std::mem::take(&mut self.controls);
        let mut scratch = std::mem::take(&mut self.scratch);
        let res = fd_gradient(
            |i, zp| {
                let k = i / 2;
                decode_into(zp, &self.config.limits, &mut controls);
                let start = self.base.state_before(k, self.x0);
                rollout_from(k, &start, &controls, self.preview, &self.config.grid, self.params, &mut scratch)?;
                Ok(prefix[k] + (k..n).map(|j| self.step_merit(&scratch, j)).sum::<f64>())
            },
            z,
            fz,
            ctx,
            grad,
        );
        self.controls = controls;
        self.scratch = scratch;
        res.map(|e| e + 1)
    }
}

/// Solves the horizon problem at one sampling instant.
///
/// `warm` seeds the solver (typically [`warm_start_shift`] of the previous
/// solution); without it the controller starts from zero acceleration and an
/// idle compressor. The initial guess is projected onto the input and rate
/// limits before iterating.
pub fn solve_step(
    ctx: &StepContext<'_>,
    config: &MpcConfig,
    params: &PlantParams,
    warm: Option<&ControlSequence>,
) -> Result<MpcSolution> {
    let started = Instant::now();
    let grid = &config.grid;
    ctx.preview.validate(grid)?;
    let guess = match warm {
        Some(w) if w.0.len() == grid.n_steps() => w.clone(),
        Some(w) => {
            return Err(Error::InvalidInput(format!(
                "warm start has {} controls, horizon {}",
                w.0.len(),
                grid.n_steps()
            )))
        }
        None => ControlSequence::zeros(grid),
    };

    let set = constraint_set(grid, &config.limits, ctx.applied);
    let mut z = encode(&guess.0, &config.limits);
    set.project(&mut z);

    // Scale the objective by its value at the initial guess so penalty
    // weights mean the same for every strategy and weight magnitude.
    let mut probe = HorizonProblem::new(ctx, config, params, 1.0, 0.0);
    let j0 = probe.value(&z)?;
    let j_ref = if j0.abs() > 1e-300 && j0.is_finite() { j0.abs() } else { 1.0 };

    let mut weight = config.penalty.weight;
    let mut iterations = 0;
    let mut evaluations = 1;
    let mut doublings = 0;
    let (z, diag, traj, viol) = loop {
        let mut problem = HorizonProblem::new(ctx, config, params, j_ref, weight);
        let (zs, diag) = solver::nlp_minimize(&mut problem, &z, &set, &config.solver)?;
        iterations += diag.iterations;
        evaluations += diag.evaluations;
        let traj = problem.trajectory(&zs)?;
        let viol = max_violation(&traj, &config.limits, &config.spacing);
        if viol <= config.penalty.tolerance || doublings >= config.penalty.max_doublings {
            break (zs, diag, traj, viol);
        }
        weight *= 2.0;
        doublings += 1;
        z = zs;
    };

    let mut controls = Vec::new();
    decode_into(&z, &config.limits, &mut controls);
    Ok(MpcSolution {
        controls: ControlSequence(controls),
        objective: objective_value(&traj, &config.strategy),
        trajectory: traj,
        max_violation: viol,
        penalty_weight: weight,
        iterations,
        evaluations,
        converged: diag.converged,
        solve_time_s: started.elapsed().as_secs_f64(),
        diagnostics: diag,
    })
}

/// Shifts a solved sequence forward by one short step: each new step takes
/// the previous control active at the same absolute time, the tail repeats
/// the last control, and the result is projected onto the limits anchored at
/// the control just applied.
pub fn warm_start_shift(prev: &ControlSequence, grid: &HorizonGrid, limits: &ControlLimits) -> ControlSequence {
    if prev.0.len() != grid.n_steps() || prev.0.is_empty() {
        return ControlSequence::zeros(grid);
    }
    let shifted: Vec<Control> = (0..grid.n_steps())
        .map(|k| {
            let t = grid.step_start(k) + grid.dt_short + 0.5 * grid.dt_short;
            prev.0[grid.step_at(t)]
        })
        .collect();
    let set = constraint_set(grid, limits, prev.first());
    let mut z = encode(&shifted, limits);
    set.project(&mut z);
    let mut out = Vec::new();
    decode_into(&z, limits, &mut out);
    ControlSequence(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_start_of_constant_sequence_is_unchanged() {
        let grid = HorizonGrid::multi_rate(3, 1.0, 5, 5.0);
        let limits = ControlLimits::default();
        let u = Control { accel: 0.25, p_cp: 800.0 };
        let prev = ControlSequence(vec![u; grid.n_steps()]);
        let next = warm_start_shift(&prev, &grid, &limits);
        for c in &next.0 {
            assert!((c.accel - u.accel).abs() < 1e-12 && (c.p_cp - u.p_cp).abs() < 1e-9);
        }
    }

    #[test]
    fn warm_start_shifts_single_rate_by_one() {
        let grid = HorizonGrid::single_rate(4, 1.0);
        let limits = ControlLimits::default();
        let prev = ControlSequence(
            [0.0, 0.3, 0.6, 0.9].iter().map(|&a| Control { accel: a, p_cp: 0.0 }).collect(),
        );
        let next = warm_start_shift(&prev, &grid, &limits);
        let a: Vec<f64> = next.0.iter().map(|c| c.accel).collect();
        // Rate limit of 0.5 m/s³ from the applied 0.0 caps the first entry.
        assert!((a[0] - 0.3).abs() < 1e-12 && (a[1] - 0.6).abs() < 1e-12);
        assert!((a[2] - 0.9).abs() < 1e-12 && (a[3] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn constraint_set_rates_follow_step_lengths() {
        let grid = HorizonGrid::multi_rate(2, 1.0, 1, 5.0);
        let set = constraint_set(&grid, &ControlLimits::default(), Control::default());
        assert_eq!(set.len(), 6);
        assert!((set.max_delta[0] - 0.25).abs() < 1e-12);
        assert!((set.max_delta[4] - 1.25).abs() < 1e-12);
        assert!((set.max_delta[5] - 1000.0 / 4500.0).abs() < 1e-12);
    }
}
