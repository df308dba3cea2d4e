//! Recursive belief updates against a from-scratch product-form posterior.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riso_core::inference::{Belief, LikelihoodModel};
use riso_core::scenarios;
use riso_core::world::{GraspTag, GraspType, SceneObject};
use riso_core::{Scenario, SystemState, Vec3};

fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let mut sc = scenarios::canonical();
    let n = rng.random_range(2..=6);
    let template = sc.objects[1].clone();
    sc.objects = (0..n)
        .map(|i| SceneObject {
            id: format!("obj{i}"),
            pose: Vec3::new(
                rng.random_range(-0.35..0.35),
                rng.random_range(-0.25..0.25),
                0.0,
            ),
            height: rng.random_range(0.0..0.2),
            ..template.clone()
        })
        .collect();
    sc.gripper.grasp_types = [GraspTag::Rigid, GraspTag::Soft(1), GraspTag::Soft(2)]
        .into_iter()
        .map(|tag| GraspType {
            tag,
            offset: Vec3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.12..-0.05),
            ),
        })
        .collect();
    sc.assistance.epsilon = 0.0;
    sc.assistance.beta = rng.random_range(0.5..8.0);
    sc.assistance.length_scale = rng.random_range(0.03..0.3);
    sc.prior = Some(
        scenarios_labels(&sc)
            .into_iter()
            .map(|k| (k, rng.random_range(0.05..1.0)))
            .collect(),
    );
    sc.validate().unwrap();
    sc
}

fn scenarios_labels(sc: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    for o in &sc.objects {
        for g in &sc.gripper.grasp_types {
            out.push(format!("{}/{}", o.id, g.tag));
        }
    }
    out
}

fn clamp_box(p: Vec3, sc: &Scenario) -> Vec3 {
    let w = &sc.workspace;
    Vec3::new(
        p.x.clamp(w.min.x, w.max.x),
        p.y.clamp(w.min.y, w.max.y),
        p.z.clamp(w.min.z, w.max.z),
    )
}

fn lattice(v_max: f64) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros()];
    for dx in [-1.0, 0.0, 1.0] {
        for dy in [-1.0, 0.0, 1.0] {
            for dz in [-1.0, 0.0, 1.0] {
                let d = Vec3::new(dx, dy, dz);
                if d != Vec3::zeros() {
                    out.push(d / d.norm() * v_max);
                }
            }
        }
    }
    out
}

fn quad_logit(s: &Vec3, next: &Vec3, o: &Vec3, sc: &Scenario) -> f64 {
    let ell = sc.assistance.length_scale;
    sc.assistance.beta * ((o - s).norm_squared() - (o - next).norm_squared()) / (ell * ell)
}

/// Normalized log-likelihood of `a` for goal `o` with grasp offset `off`.
fn oracle_loglik(ee: &Vec3, a: &Vec3, o: &Vec3, off: &Vec3, sc: &Scenario) -> f64 {
    if *a == Vec3::zeros() {
        return 0.0;
    }
    let dt = sc.physics.dt;
    let s = ee + off;
    let l = quad_logit(&s, &(clamp_box(ee + a * dt, sc) + off), o, sc);
    let alts: Vec<f64> = lattice(sc.physics.v_max)
        .iter()
        .map(|d| quad_logit(&s, &(clamp_box(ee + d * dt, sc) + off), o, sc))
        .collect();
    let m = alts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    l - (m + alts.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
}

fn random_command(rng: &mut ChaCha8Rng, v_max: f64) -> Vec3 {
    if rng.random_bool(0.1) {
        return Vec3::zeros();
    }
    let v = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    v * (rng.random_range(0.0..v_max) / v.norm().max(1e-9))
}

fn random_ee(rng: &mut ChaCha8Rng, sc: &Scenario) -> Vec3 {
    let w = &sc.workspace;
    Vec3::new(
        rng.random_range(w.min.x..w.max.x),
        rng.random_range(w.min.y..w.max.y),
        rng.random_range(w.min.z..w.max.z),
    )
}

/// Max abs difference between the recursive posterior and the product form
/// over one random 200-step history.
fn oracle_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sc = random_scenario(&mut rng);
    let mut state = SystemState::initial(&sc);
    let mut belief = Belief::prior(&sc).unwrap();
    let prior = sc.prior.as_ref().unwrap();
    let total: f64 = prior.values().sum();
    let keys = scenarios_labels(&sc);
    let mut log_post: Vec<f64> = keys.iter().map(|k| (prior[k] / total).ln()).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        state.ee = random_ee(&mut rng, &sc);
        let a = random_command(&mut rng, sc.physics.v_max);
        belief = belief.update(&state, &a, sc.assistance.beta, &sc).unwrap();
        let mut i = 0;
        for o in &sc.objects {
            let top = o.pose + Vec3::new(0.0, 0.0, o.height);
            for g in &sc.gripper.grasp_types {
                log_post[i] += oracle_loglik(&state.ee, &a, &top, &g.offset, &sc);
                i += 1;
            }
        }
        let m = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = m + log_post.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (p, lp) in belief.probabilities().iter().zip(&log_post) {
            worst = worst.max((p - (lp - z).exp()).abs());
        }
    }
    worst
}

#[test]
fn recursive_update_matches_product_form() {
    for seed in 0..50 {
        let gap = oracle_gap(seed);
        assert!(gap <= 1e-9, "seed {seed}: {gap:e}");
    }
}

#[test]
fn two_objects_follow_the_logistic() {
    let mut sc = scenarios::canonical();
    sc.assistance.likelihood = LikelihoodModel::Unnormalized;
    sc.assistance.length_scale = 1.0;
    sc.assistance.epsilon = 0.0;
    sc.workspace.min = Vec3::new(-2.0, -2.0, -1.0);
    sc.workspace.max = Vec3::new(2.0, 2.0, 1.0);
    sc.objects.truncate(2);
    sc.objects[0].pose = Vec3::new(1.0, 0.0, 0.0);
    sc.objects[1].pose = Vec3::new(-1.0, 0.0, 0.0);
    for o in &mut sc.objects {
        o.height = 0.0;
        o.count = 1;
    }
    let g0 = sc.gripper.grasp_types[0].clone();
    sc.gripper.grasp_types = vec![
        GraspType {
            offset: Vec3::zeros(),
            ..g0
        },
        GraspType {
            tag: GraspTag::Soft(1),
            offset: Vec3::new(0.0, 0.0, -0.5),
        },
    ];
    sc.gripper.initial_ee = Vec3::zeros();
    sc.prior = Some(
        [("syrup/rigid", 1.0), ("wheel/rigid", 1.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    );
    let state = SystemState::initial(&sc);
    let b = Belief::prior(&sc).unwrap();
    let beta = 5.0;
    let post = b
        .update(&state, &Vec3::new(0.25, 0.0, 0.0), beta, &sc)
        .unwrap();
    let lp = beta * (1.0 - (1.0f64 - 0.0125).powi(2));
    let lm = beta * (1.0 - (1.0f64 + 0.0125).powi(2));
    let want = 1.0 / (1.0 + (lm - lp).exp());
    assert!((post.prob(0, 0) - want).abs() < 1e-12);
}

proptest! {
    #[test]
    fn constant_shift_leaves_posterior_unchanged(
        w in prop::collection::vec(0.01f64..1.0, 9),
        l in prop::collection::vec(-50.0f64..50.0, 9),
        c in -1e3f64..1e3,
    ) {
        let b = Belief::from_weights(&w, 3).unwrap();
        let shifted: Vec<f64> = l.iter().map(|v| v + c).collect();
        let p1 = b.apply_logits(&l, 0.0).unwrap().probabilities();
        let p2 = b.apply_logits(&shifted, 0.0).unwrap().probabilities();
        for (x, y) in p1.iter().zip(&p2) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn update_stays_normalized(
        seed in any::<u64>(),
        steps in 1usize..60,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sc = random_scenario(&mut rng);
        sc.assistance.epsilon = 1e-6;
        let mut state = SystemState::initial(&sc);
        let mut b = Belief::prior(&sc).unwrap();
        for _ in 0..steps {
            state.ee = random_ee(&mut rng, &sc);
            let a = random_command(&mut rng, sc.physics.v_max);
            b = b.update(&state, &a, sc.assistance.beta, &sc).unwrap();
            let p = b.probabilities();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
        }
    }
}
