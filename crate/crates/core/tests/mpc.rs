use iptm_core::mpc::controller::{constraint_set, HorizonProblem};
use iptm_core::mpc::rollout::{rollout, PredictedStep};
use iptm_core::mpc::solver::{GradientContext, Objective};
use iptm_core::mpc::*;
use iptm_core::plant::{Control, PlantParams, PlantState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    state: PlantState,
    preview: HorizonPreview,
    config: MpcConfig,
    z: Vec<f64>,
}

fn random_instance(rng: &mut ChaCha8Rng, params: &PlantParams) -> Instance {
    let kind = StrategyKind::ALL[rng.random_range(0..StrategyKind::ALL.len())];
    let mut config = MpcConfig { strategy: Strategy::preset(kind), ..MpcConfig::default() };
    if rng.random_bool(0.5) {
        config.grid = HorizonGrid::multi_rate(3, 1.0, 5, 5.0);
    }
    let v = rng.random_range(6.0..25.0);
    let pv_v = v + rng.random_range(-3.0..3.0);
    let t_cell = rng.random_range(27.0..38.0);
    let state = PlantState::new(0.0, v, t_cell, params);
    let gap = idm_min_spacing(v, pv_v, &config.limits, 2.0, 1.5) + rng.random_range(0.0..20.0);
    let preview = HorizonPreview::constant_velocity(&config.grid, gap, pv_v, rng.random_range(-0.03..0.03));
    let z = (0..2 * config.grid.n_steps())
        .map(|i| if i % 2 == 0 { rng.random_range(-0.1..0.1) } else { rng.random_range(0.05..0.9) })
        .collect();
    Instance { state, preview, config, z }
}

fn central(problem: &mut HorizonProblem<'_>, z: &[f64], i: usize, h: f64) -> f64 {
    let mut zp = z.to_vec();
    zp[i] = z[i] + h;
    let fp = problem.value(&zp).unwrap();
    zp[i] = z[i] - h;
    let fm = problem.value(&zp).unwrap();
    (fp - fm) / (2.0 * h)
}

#[test]
fn gradient_matches_central_differences() {
    let params = PlantParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20 {
        let inst = random_instance(&mut rng, &params);
        let ctx = StepContext { state: &inst.state, preview: &inst.preview, applied: Control::default() };
        let set = constraint_set(&inst.config.grid, &inst.config.limits, Control::default());
        let mut problem = HorizonProblem::new(&ctx, &inst.config, &params, 1.0, 1e4);
        let fz = problem.value(&inst.z).unwrap();
        let gctx = GradientContext { lower: &set.lower, upper: &set.upper, step: 1e-5, central: true };
        let mut grad = vec![0.0; inst.z.len()];
        problem.gradient(&inst.z, fz, &gctx, &mut grad).unwrap();

        // Independent oracle: Richardson-extrapolated central differences of
        // full re-simulations. Steps stay small so the stencil does not
        // straddle the traction/regeneration kink.
        let mut oracle = HorizonProblem::new(&ctx, &inst.config, &params, 1.0, 1e4);
        let reference: Vec<f64> = (0..inst.z.len())
            .map(|i| {
                let h = 2e-4;
                (4.0 * central(&mut oracle, &inst.z, i, h / 2.0) - central(&mut oracle, &inst.z, i, h)) / 3.0
            })
            .collect();
        let scale = reference.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let err = grad.iter().zip(&reference).fold(0.0f64, |m, (g, r)| m.max((g - r).abs()));
        assert!(err < 1e-4 * scale, "case {case}: err {err}, scale {scale}");
    }
}

#[test]
fn zero_long_steps_equal_single_rate() {
    let params = PlantParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inst = random_instance(&mut rng, &params);
    let sh = MpcConfig { grid: HorizonGrid::single_rate(15, 1.0), ..inst.config.clone() };
    let mh = MpcConfig { grid: HorizonGrid::multi_rate(15, 1.0, 0, 5.0), ..inst.config.clone() };
    let preview = HorizonPreview::constant_velocity(&sh.grid, 40.0, 15.0, 0.01);
    let ctx = StepContext { state: &inst.state, preview: &preview, applied: Control::default() };
    let a = solve_step(&ctx, &sh, &params, None).unwrap();
    let b = solve_step(&ctx, &mh, &params, None).unwrap();
    assert_eq!(a.controls, b.controls);
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let params = PlantParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = random_instance(&mut rng, &params);
    let ctx = StepContext { state: &inst.state, preview: &inst.preview, applied: Control::default() };
    let warm = ControlSequence(vec![Control { accel: 0.2, p_cp: 800.0 }; inst.config.grid.n_steps()]);
    let a = solve_step(&ctx, &inst.config, &params, Some(&warm)).unwrap();
    let b = solve_step(&ctx, &inst.config, &params, Some(&warm)).unwrap();
    assert_eq!(a.controls, b.controls);
    assert_eq!(a.trajectory, b.trajectory);
}

#[test]
fn dropping_the_energy_weight_nests_strategies() {
    let params = PlantParams::default();
    let grid = HorizonGrid::multi_rate(3, 1.0, 5, 5.0);
    let x0 = PlantState::new(0.0, 12.0, 33.0, &params);
    let preview = HorizonPreview::constant_velocity(&grid, 40.0, 14.0, 0.02);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let u: Vec<Control> = (0..grid.n_steps())
            .map(|_| Control { accel: rng.random_range(-1.0..1.0), p_cp: rng.random_range(0.0..4500.0) })
            .collect();
        let traj = rollout(&x0, &u, &preview, &grid, &params).unwrap();
        let mut full = Strategy::preset(StrategyKind::RefEnergyAging);
        full.weights.lambda_p = 0.0;
        let aging = Strategy { kind: StrategyKind::RefAging, weights: full.weights.clone() };
        let (a, b) = (objective_value(&traj, &full), objective_value(&traj, &aging));
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));

        let mut energy = Strategy::preset(StrategyKind::RefEnergyAging);
        energy.weights.lambda_q = 0.0;
        let re = Strategy { kind: StrategyKind::RefEnergy, weights: energy.weights.clone() };
        let (c, d) = (objective_value(&traj, &energy), objective_value(&traj, &re));
        assert!((c - d).abs() <= 1e-12 * c.abs().max(1.0));
    }
}

#[test]
fn energy_term_of_a_constant_load() {
    let params = PlantParams::default();
    let end = PlantState::new(0.0, 0.0, 26.0, &params);
    let step = PredictedStep {
        dt: 1.0,
        end,
        r_v: 0.0,
        battery_energy_j: 10_000.0,
        traction_energy_j: 9_000.0,
        dq_first: 0.0,
        dq_last: 0.0,
    };
    let traj = Trajectory { steps: vec![step; 10], substeps: Vec::new() };
    let strategy = Strategy { kind: StrategyKind::EnergyAging, weights: Weights { lambda_p: 1e-4, ..Weights::default() } };
    assert!((objective_value(&traj, &strategy) - 10.0).abs() < 1e-12);
    // Tracking terms vanish when the references are met.
    assert_eq!(objective_value(&traj, &Strategy::preset(StrategyKind::Reference)), 0.0);
}

#[test]
fn hot_battery_forces_cooling() {
    let params = PlantParams::default();
    for kind in StrategyKind::ALL {
        let config = MpcConfig { strategy: Strategy::preset(kind), ..MpcConfig::default() };
        let x0 = PlantState::new(0.0, 15.0, 40.0, &params);
        let preview = HorizonPreview::constant_velocity(&config.grid, 60.0, 15.0, 0.0);
        let applied = Control { accel: 0.0, p_cp: 2000.0 };
        let ctx = StepContext { state: &x0, preview: &preview, applied };
        let sol = solve_step(&ctx, &config, &params, None).unwrap();
        assert!(sol.controls.first().p_cp > 0.0, "{kind}");
    }
}

#[test]
fn fast_far_leader_saturates_comfort() {
    let params = PlantParams::default();
    let config = MpcConfig::default();
    let x0 = PlantState::new(0.0, 8.0, 28.0, &params);
    let preview = HorizonPreview::constant_velocity(&config.grid, 150.0, 25.0, 0.0);
    let applied = Control { accel: 1.8, p_cp: 0.0 };
    let ctx = StepContext { state: &x0, preview: &preview, applied };
    let sol = solve_step(&ctx, &config, &params, None).unwrap();
    let a0 = sol.controls.first().accel;
    assert!(a0 > 0.9 * config.limits.accel_max, "{a0}");
}

#[test]
fn first_control_respects_box_and_rate_limits() {
    let params = PlantParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..5 {
        let inst = random_instance(&mut rng, &params);
        let applied = Control { accel: rng.random_range(-1.0..1.0), p_cp: rng.random_range(0.0..4500.0) };
        let ctx = StepContext { state: &inst.state, preview: &inst.preview, applied };
        let sol = solve_step(&ctx, &inst.config, &params, None).unwrap();
        let lim = &inst.config.limits;
        let dt = inst.config.grid.step_duration(0);
        let u = sol.controls.first();
        assert!(u.accel >= lim.accel_min && u.accel <= lim.accel_max);
        assert!(u.p_cp >= lim.p_cp_min && u.p_cp <= lim.p_cp_max);
        assert!((u.accel - applied.accel).abs() <= lim.jerk_max * dt * (1.0 + 1e-12));
        assert!((u.p_cp - applied.p_cp).abs() <= lim.p_cp_rate_max * dt * (1.0 + 1e-12));
    }
}

#[test]
fn cold_start_is_zero_sequence() {
    let grid = HorizonGrid::multi_rate(3, 1.0, 5, 5.0);
    let seq = ControlSequence::zeros(&grid);
    assert_eq!(seq.0.len(), 8);
    assert!(seq.0.iter().all(|u| *u == Control::default()));
    let shifted = warm_start_shift(&ControlSequence(Vec::new()), &grid, &ControlLimits::default());
    assert_eq!(shifted, seq);
}
