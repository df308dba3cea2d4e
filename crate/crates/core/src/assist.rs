//! Autonomous assistance toward the belief-weighted goal and linear blending
//! with the operator command.

use crate::error::{Result, SimError};
use crate::inference::Belief;
use crate::world::{clamp_speed, Scenario, SystemState, Vec3};

/// Belief-weighted displacement from each grasp frame to each object, m.
pub fn raw_assistance(b: &Belief, state: &SystemState, scenario: &Scenario) -> Vec3 {
    let grasps = &scenario.gripper.grasp_types;
    let mut raw = Vec3::zeros();
    for o in 0..scenario.objects.len() {
        let target = state.object_target(o, scenario);
        for (gi, g) in grasps.iter().enumerate() {
            let p = b.prob(o, gi);
            if p > 0.0 {
                raw += (target - (state.ee + g.offset)) * p;
            }
        }
    }
    raw
}

/// Alignment-hold pull of the most likely grasp frame onto the most likely
/// object, engaged only once that pair is confident.
pub fn hold_term(b: &Belief, state: &SystemState, scenario: &Scenario) -> Vec3 {
    let params = &scenario.assistance;
    if !params.hold_enabled {
        return Vec3::zeros();
    }
    let (o, tag, p) = b.map_estimate(scenario);
    if p < params.hold_threshold {
        return Vec3::zeros();
    }
    let offset = match scenario.grasp(tag) {
        Ok(g) => g.offset,
        Err(_) => return Vec3::zeros(),
    };
    (state.object_target(o, scenario) - (state.ee + offset)) * params.k_hold
}

/// Robot velocity: gain times the raw assistance plus the hold term, capped
/// at the speed limit.
pub fn assistance_action(b: &Belief, state: &SystemState, scenario: &Scenario) -> Vec3 {
    let a = raw_assistance(b, state, scenario) * scenario.assistance.k_r
        + hold_term(b, state, scenario);
    clamp_speed(a, scenario.physics.v_max)
}

/// Convex combination `alpha * a_h + (1 - alpha) * a_r`, capped at `v_max`.
/// The endpoints return the corresponding input unchanged.
pub fn blend(a_h: &Vec3, a_r: &Vec3, alpha: f64, v_max: f64) -> Result<Vec3> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SimError::InvalidParameter(format!(
            "alpha = {alpha} outside [0, 1]"
        )));
    }
    let a = if alpha == 1.0 {
        *a_h
    } else if alpha == 0.0 {
        *a_r
    } else {
        a_h * alpha + a_r * (1.0 - alpha)
    };
    Ok(clamp_speed(a, v_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;
    use crate::world::{Body, GraspTag, GraspType};

    /// Two unit-height-free objects at (±1, 0, 0) and a single grasp frame at
    /// the end-effector placed at the origin.
    fn line_scene() -> (Scenario, SystemState) {
        let mut sc = scenarios::canonical();
        sc.objects.truncate(2);
        sc.objects[0].pose = Vec3::new(1.0, 0.0, 0.0);
        sc.objects[1].pose = Vec3::new(-1.0, 0.0, 0.0);
        for o in &mut sc.objects {
            o.height = 0.0;
            o.count = 1;
        }
        sc.workspace.min = Vec3::new(-2.0, -2.0, 0.0);
        sc.workspace.max = Vec3::new(2.0, 2.0, 2.0);
        sc.gripper.grasp_types = vec![GraspType {
            tag: GraspTag::Rigid,
            offset: Vec3::zeros(),
        }];
        sc.assistance.hold_enabled = false;
        let mut st = SystemState::initial(&sc);
        st.ee = Vec3::zeros();
        st.bodies = sc
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| Body {
                object: i,
                pose: o.pose,
                count: 1,
                vz: 0.0,
                hold: None,
            })
            .collect();
        (sc, st)
    }

    #[test]
    fn point_mass_gives_displacement() {
        let (sc, st) = line_scene();
        let b = Belief::from_weights(&[1.0, 0.0], 1).unwrap();
        assert_eq!(raw_assistance(&b, &st, &sc), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn symmetric_uniform_cancels() {
        let (sc, st) = line_scene();
        let b = Belief::uniform(2, 1);
        assert!(raw_assistance(&b, &st, &sc).norm() < 1e-12);
    }

    #[test]
    fn weighted_sum() {
        let (sc, st) = line_scene();
        let b = Belief::from_weights(&[0.75, 0.25], 1).unwrap();
        assert!((raw_assistance(&b, &st, &sc) - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn action_is_speed_limited() {
        let (sc, st) = line_scene();
        let b = Belief::from_weights(&[1.0, 0.0], 1).unwrap();
        let a = assistance_action(&b, &st, &sc);
        assert!((a.norm() - sc.physics.v_max).abs() < 1e-12);
        assert!(a.x > 0.0);
    }

    #[test]
    fn fixed_point_when_aligned() {
        let (sc, mut st) = line_scene();
        st.ee = Vec3::new(1.0, 0.0, 0.0);
        let b = Belief::from_weights(&[1.0, 0.0], 1).unwrap();
        assert_eq!(assistance_action(&b, &st, &sc), Vec3::zeros());
    }

    #[test]
    fn hold_term_needs_confidence() {
        let (mut sc, st) = line_scene();
        sc.assistance.hold_enabled = true;
        let weak = Belief::from_weights(&[0.7, 0.3], 1).unwrap();
        assert_eq!(hold_term(&weak, &st, &sc), Vec3::zeros());
        let strong = Belief::from_weights(&[0.9, 0.1], 1).unwrap();
        assert_eq!(
            hold_term(&strong, &st, &sc),
            Vec3::new(sc.assistance.k_hold, 0.0, 0.0)
        );
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let h = Vec3::new(0.2, 0.0, 0.0);
        let r = Vec3::new(0.0, 0.2, 0.0);
        assert_eq!(blend(&h, &r, 1.0, 0.25).unwrap(), h);
        assert_eq!(blend(&h, &r, 0.0, 0.25).unwrap(), r);
        let m = blend(&h, &r, 0.5, 0.25).unwrap();
        assert!((m - Vec3::new(0.1, 0.1, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn blend_rejects_bad_alpha() {
        let z = Vec3::zeros();
        assert!(blend(&z, &z, 1.5, 0.25).is_err());
        assert!(blend(&z, &z, -0.1, 0.25).is_err());
        assert!(blend(&z, &z, f64::NAN, 0.25).is_err());
    }
}
