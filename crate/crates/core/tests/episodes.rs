use std::collections::BTreeMap;

use riso_core::agents::{
    BoltzmannOperator, NullOperator, OperatorConfig, ScriptEntry, ScriptOperator,
};
use riso_core::session::{replay, resimulate};
use riso_core::world::grasp_frame_pose;
use riso_core::{compute_metrics, run_episode, scenarios, EpisodeLog, Mode, Session, Status, Vec3};

fn boltzmann_log(mode: Mode, seed: u64) -> EpisodeLog {
    let sc = scenarios::canonical();
    let mut op = BoltzmannOperator::new(OperatorConfig::default(), &sc, seed);
    run_episode(&sc, &mut op, mode, seed, true)
        .unwrap()
        .log
        .unwrap()
}

#[test]
fn recorded_episodes_replay_exactly() {
    for mode in [Mode::Human, Mode::Shared] {
        for seed in [1, 2, 3] {
            let log = boltzmann_log(mode, seed);
            assert!(log.end.is_some());
            let (again, mismatch) = replay(&log).unwrap();
            assert_eq!(mismatch, None, "{mode} seed {seed}");
            assert_eq!(again, log);
            assert_eq!(resimulate(&log).unwrap(), None);
        }
    }
}

#[test]
fn ndjson_round_trip_is_lossless() {
    let log = boltzmann_log(Mode::Shared, 9);
    let text = log.to_ndjson().unwrap();
    let back = EpisodeLog::from_ndjson(&text).unwrap();
    assert_eq!(back, log);
    assert_eq!(back.to_ndjson().unwrap(), text);
}

#[test]
fn tampered_log_is_caught() {
    let mut log = boltzmann_log(Mode::Human, 4);
    let k = log.ticks.len() / 2;
    log.ticks[k].state.ee.x += 1e-12;
    let m = resimulate(&log).unwrap().expect("mismatch");
    assert_eq!(m.tick, log.ticks[k].tick);
}

#[test]
fn study_episodes_replay_exactly() {
    let sc = scenarios::study(5);
    let mut op = BoltzmannOperator::new(OperatorConfig::default(), &sc, 5);
    let log = run_episode(&sc, &mut op, Mode::Shared, 5, true)
        .unwrap()
        .log
        .unwrap();
    assert_eq!(replay(&log).unwrap().1, None);
}

fn wander() -> Vec<ScriptEntry> {
    let e = |t: f64, a: [f64; 3], dp: f64| ScriptEntry {
        t,
        a_h: a,
        df: 0.0,
        dp,
    };
    vec![
        e(0.0, [0.1, 0.1, -0.2], 0.0),
        e(0.7, [-0.25, 0.0, 0.0], -2.0),
        e(1.5, [0.0, -0.2, -0.1], 0.0),
        e(2.5, [0.0, 0.0, 0.0], 1.0),
    ]
}

#[test]
fn shared_at_full_operator_weight_equals_human() {
    let mut sc = scenarios::canonical();
    sc.assistance.alpha = 1.0;
    let dt = sc.physics.dt;
    let human = run_episode(
        &sc,
        &mut ScriptOperator::new(&wander(), dt).unwrap(),
        Mode::Human,
        0,
        true,
    )
    .unwrap()
    .log
    .unwrap();
    let shared = run_episode(
        &sc,
        &mut ScriptOperator::new(&wander(), dt).unwrap(),
        Mode::Shared,
        0,
        true,
    )
    .unwrap()
    .log
    .unwrap();
    assert_eq!(human.ticks.len(), shared.ticks.len());
    for (h, s) in human.ticks.iter().zip(&shared.ticks) {
        assert_eq!(h.state, s.state);
        assert_eq!(h.a, s.a);
        assert_eq!(s.a, s.a_h);
    }
}

#[test]
fn script_round_trips_through_the_log() {
    let sc = scenarios::canonical();
    let dt = sc.physics.dt;
    let log = run_episode(
        &sc,
        &mut ScriptOperator::new(&wander(), dt).unwrap(),
        Mode::Shared,
        3,
        true,
    )
    .unwrap()
    .log
    .unwrap();
    let mut op = ScriptOperator::new(&log.script(), dt)
        .unwrap()
        .with_end_tick(log.ticks.len() as u64);
    let again = run_episode(&sc, &mut op, Mode::Shared, 3, true)
        .unwrap()
        .log
        .unwrap();
    assert_eq!(again.ticks, log.ticks);
}

#[test]
fn metrics_match_a_hand_built_log() {
    let sc = scenarios::canonical();
    let mut s = Session::new(sc.clone(), Mode::Human, 0, true).unwrap();
    for _ in 0..3 {
        s.tick(riso_core::OperatorInput::zero()).unwrap();
    }
    let mut log = s.into_log().unwrap();
    let start = log.header.initial_state.ee;
    // Two moves over the table (a 3-4-5 step, then 0.02 m), one move that
    // starts outside the table region.
    let p1 = start + Vec3::new(0.03, 0.04, 0.0);
    let p2 = p1 + Vec3::new(0.0, 0.0, -0.02);
    let p3 = Vec3::new(0.6, 0.0, 0.3);
    log.ticks[0].state.ee = p1;
    log.ticks[1].state.ee = p2;
    log.ticks[2].state.ee = p3;
    log.ticks[0].active = true;
    log.ticks[1].active = false;
    log.ticks[2].active = true;
    let m = compute_metrics(&log).unwrap();
    let n = 3.0;
    let dt = 0.05;
    let dist_p2_p3 = (p3 - p2).norm();
    // p2 is still over the table, so its move counts.
    assert_eq!(m.grasp_time, 3.0 * dt / n);
    assert!((m.grasp_distance - (0.05 + 0.02 + dist_p2_p3) / n).abs() < 1e-15);
    assert_eq!(m.input_time, 2.0 * dt / n);
    assert_eq!(m.success_rate, 0.0);
    assert_eq!(m.ticks, 3);

    log.ticks.push(log.ticks[2].clone());
    log.ticks[3].tick = 4;
    log.ticks[3].state.ee = p3 + Vec3::new(0.01, 0.0, 0.0);
    let m2 = compute_metrics(&log).unwrap();
    assert_eq!(m2.grasp_time, m.grasp_time);
    assert_eq!(m2.grasp_distance, m.grasp_distance);
}

#[test]
fn empty_log_is_rejected() {
    let s = Session::new(scenarios::canonical(), Mode::Human, 0, true).unwrap();
    assert!(compute_metrics(s.log().unwrap()).is_err());
}

/// Ticks the blended assistance needs to bring a frame from distance `d0`
/// to `tol` with a null operator: constant saturated speed, then geometric
/// contraction.
fn closed_form_ticks(d0: f64, tol: f64, gain: f64, weight: f64, v_max: f64, dt: f64) -> f64 {
    let d_sw = v_max / gain;
    let (t_lin, d_start) = if d0 > d_sw {
        ((d0 - d_sw) / (weight * v_max * dt), d_sw)
    } else {
        (0.0, d0)
    };
    let rate = 1.0 - weight * gain * dt;
    t_lin + ((tol / d_start).ln() / rate.ln()).max(0.0)
}

#[test]
fn point_mass_belief_aligns_on_schedule() {
    for (obj, tag) in [
        ("syrup", "rigid"),
        ("wheel", "rigid"),
        ("candy", "soft_1"),
        ("wheel", "soft_2"),
    ] {
        let mut sc = scenarios::canonical();
        sc.gripper.initial_pressure = sc.adhesion.p_max;
        let key = format!("{obj}/{tag}");
        let prior: BTreeMap<String, f64> = riso_core::inference::labels(&sc)
            .into_iter()
            .map(|k| {
                let w = if k == key { 1.0 } else { 0.0 };
                (k, w)
            })
            .collect();
        sc.prior = Some(prior);
        let o = sc.object_index(obj).unwrap();
        let tag = tag.parse().unwrap();
        let mut s = Session::new(sc.clone(), Mode::Shared, 0, false).unwrap();
        let goal = s.state().object_target(o, &sc);
        let d0 = (goal - grasp_frame_pose(s.state(), tag, &sc).unwrap()).norm();
        let tol = 1e-3;
        let a = &sc.assistance;
        let bound = closed_form_ticks(
            d0,
            tol,
            a.k_r + a.k_hold,
            1.0 - a.alpha,
            sc.physics.v_max,
            sc.physics.dt,
        );
        let mut op = NullOperator::new(None);
        let mut reached = None;
        s.run_with(&mut op, |s, r| {
            if reached.is_none() {
                let d = (goal - grasp_frame_pose(s.state(), tag, &sc).unwrap()).norm();
                if d <= tol {
                    reached = Some(r.tick);
                }
            }
        })
        .unwrap_or(Status::BudgetExhausted);
        let reached = reached.expect("never aligned") as f64;
        assert!(reached <= bound.ceil() + 2.0, "{key}: {reached} > {bound}");
        assert!(reached >= bound.floor() - 2.0, "{key}: {reached} < {bound}");
    }
}
