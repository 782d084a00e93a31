use iptm_core::battery::{self, BatteryParams, CellState, PackState};
use iptm_core::plant::{self, Control, PlantParams, PlantState};
use iptm_core::vehicle;
use proptest::prelude::*;

/// Weight of each input in `coolant_temp_at_cell`, found by unit impulses.
fn chain_weights(i: usize, h: f64, c_f: f64) -> Vec<f64> {
    let mut w = Vec::with_capacity(i);
    let zeros = vec![0.0; i.saturating_sub(1)];
    w.push(battery::coolant_temp_at_cell(i, 1.0, &zeros, h, c_f).unwrap());
    for j in 0..i.saturating_sub(1) {
        let mut cells = zeros.clone();
        cells[j] = 1.0;
        w.push(battery::coolant_temp_at_cell(i, 0.0, &cells, h, c_f).unwrap());
    }
    w
}

proptest! {
    #[test]
    fn coolant_weights_form_a_convex_combination(i in 1usize..=228, ratio in 0.001f64..0.999) {
        let c_f = 29.97;
        let w = chain_weights(i, ratio * c_f, c_f);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn current_power_round_trip(p_b in -60_000.0f64..120_000.0, t in 20.0f64..45.0, q in 0.001f64..0.2) {
        let params = BatteryParams::default();
        let cell = CellState { t_bc: t, q_loss: q };
        let pack = PackState { cell_first: cell, cell_last: CellState { t_bc: t + 1.0, q_loss: q }, t_c_in: t, t_c_out: t };
        let i_b = battery::pack_current_from_power(p_b, &pack, &params).unwrap();
        let back = battery::pack_power_from_current(i_b, &pack, &params).unwrap();
        prop_assert!((back - p_b).abs() <= 1e-9 * p_b.abs().max(1.0));
    }

    #[test]
    fn battery_energy_bookkeeping(
        v in 0.0f64..35.0,
        accel in -3.0f64..2.0,
        p_cp in 0.0f64..4500.0,
        theta in -0.05f64..0.05,
        t in 25.0f64..40.0,
    ) {
        let params = PlantParams::default();
        let s0 = PlantState::new(0.0, v, t, &params);
        let (_, out) = plant::step(&s0, Control { accel, p_cp }, theta, 1.0, &params).unwrap();
        let veh = &params.vehicle;
        let eta = veh.battery_efficiency;
        let acc = (p_cp + veh.aux_power) / eta;
        let expected = if out.p_tra >= 0.0 {
            out.p_tra / eta + acc
        } else {
            eta * veh.regen_efficiency * out.p_tra + acc
        };
        prop_assert!((out.p_b - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        let recovered = battery::pack_power_from_current(out.i_b, &s0.pack, &params.battery).unwrap();
        prop_assert!((recovered - out.p_b).abs() <= 1e-9 * out.p_b.abs().max(1.0));
    }

    #[test]
    fn downstream_cell_runs_hotter_under_cooling(v in 3.0f64..30.0, p_cp in 500.0f64..4500.0, accel in -0.5f64..0.5) {
        let params = PlantParams::default();
        let mut s = PlantState::new(0.0, v, 35.0, &params);
        let mut q_gap = 0.0;
        for _ in 0..120 {
            let a = if s.kin.v < 3.0 {
                accel.abs()
            } else if s.kin.v > 30.0 {
                -accel.abs()
            } else {
                accel
            };
            let (next, out) = plant::step(&s, Control { accel: a, p_cp }, 0.0, 1.0, &params).unwrap();
            q_gap += out.dq_last - out.dq_first;
            s = next;
        }
        prop_assert!(s.pack.cell_last.t_bc >= s.pack.cell_first.t_bc);
        prop_assert!(q_gap >= 0.0);
    }
}

#[test]
fn aging_is_monotone_in_current_and_temperature() {
    let params = BatteryParams::default();
    let currents: Vec<f64> = (0..=40).map(|k| params.q_nom * 9.99 * f64::from(k) / 40.0).collect();
    let temps: Vec<f64> = (0..=30).map(|k| 273.15 + 2.0 * f64::from(k)).collect();
    let dq = |i: f64, t: f64| battery::aging_increment(i, t, 0.001, 1.0, &params).unwrap();
    for &t in &temps {
        for w in currents.windows(2) {
            assert!(dq(w[1], t) > dq(w[0], t), "I {} -> {} at {t} K", w[0], w[1]);
            assert_eq!(dq(-w[1], t), dq(w[1], t));
        }
    }
    for &i in currents.iter().skip(1) {
        for w in temps.windows(2) {
            assert!(dq(i, w[1]) > dq(i, w[0]), "T {} -> {} at {i} A", w[0], w[1]);
        }
    }
}

#[test]
fn aging_grows_with_prior_loss_sublinearly() {
    let params = BatteryParams::default();
    let a = battery::aging_increment(10.0, 303.15, 0.001, 1.0, &params).unwrap();
    let b = battery::aging_increment(10.0, 303.15, 0.002, 1.0, &params).unwrap();
    // (1 - 1/z) < 0: a more degraded cell ages more slowly.
    assert!(b < a);
    assert!((b / a - 2f64.powf(1.0 - 1.0 / params.z)).abs() < 1e-12);
}

#[test]
fn refining_the_step_converges() {
    let params = PlantParams::default();
    let u = Control { accel: 0.4, p_cp: 1500.0 };
    let run = |n: usize| {
        let mut s = PlantState::new(0.0, 10.0, 33.0, &params);
        let dt = 10.0 / n as f64;
        for _ in 0..n {
            s = plant::step(&s, u, 0.02, dt, &params).unwrap().0;
        }
        s
    };
    let (c, m, f) = (run(10), run(20), run(40));
    let d1 = (c.pack.cell_first.t_bc - f.pack.cell_first.t_bc).abs();
    let d2 = (m.pack.cell_first.t_bc - f.pack.cell_first.t_bc).abs();
    assert!(d2 < 0.7 * d1, "{d1} {d2}");
    // Constant acceleration: kinematics are exact for any step.
    assert!((c.kin.p - f.kin.p).abs() < 1e-9);
    assert!((c.kin.v - 14.0).abs() < 1e-12);
}

#[test]
fn braking_never_reverses() {
    let params = PlantParams::default();
    let s0 = PlantState::new(5.0, 2.0, 30.0, &params);
    let (s1, out) = plant::step(&s0, Control { accel: -3.0, p_cp: 0.0 }, 0.0, 1.0, &params).unwrap();
    assert_eq!(s1.kin.v, 0.0);
    assert!((s1.kin.p - (5.0 + 4.0 / 6.0)).abs() < 1e-12);
    let veh = &params.vehicle;
    let a_eff = -2.0;
    let t = vehicle::motor_torque(vehicle::traction_force(1.0, a_eff, 0.0, veh), veh);
    assert!((out.p_tra - vehicle::traction_power(1.0, t, veh)).abs() < 1e-9);
}
