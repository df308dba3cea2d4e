//! Built-in scenarios: a small canonical scene and a randomized fifteen-item
//! household clearing task.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adhesion::AdhesionParams;
use crate::world::{
    Aabb, AssistParams, GraspKind, GraspTag, GraspType, GripperParams, PhysicsParams, Scenario,
    SceneObject, Vec3,
};

/// Length unit the built-in scenarios use inside the operator model, m.
pub const MODEL_LENGTH_SCALE: f64 = 0.05;

/// Two soft pads on the finger tips, the pinch point between them and a bit
/// higher.
pub fn default_gripper() -> GripperParams {
    GripperParams {
        grasp_types: vec![
            GraspType {
                tag: GraspTag::Rigid,
                offset: Vec3::new(0.0, 0.0, -0.09),
            },
            GraspType {
                tag: GraspTag::Soft(1),
                offset: Vec3::new(0.0, 0.04, -0.105),
            },
            GraspType {
                tag: GraspTag::Soft(2),
                offset: Vec3::new(0.0, -0.04, -0.105),
            },
        ],
        pad_radius: 0.03,
        stroke: 0.08,
        f_max: 70.0,
        capture_radius: 0.02,
        contact_tolerance: 0.01,
        initial_ee: Vec3::new(0.0, 0.0, 0.45),
        initial_force: 0.0,
        initial_pressure: 0.0,
    }
}

pub fn default_table() -> Aabb {
    Aabb::new(Vec3::new(-0.4, -0.3, 0.0), Vec3::new(0.4, 0.3, 0.0))
}

pub fn default_bin() -> Aabb {
    Aabb::new(Vec3::new(0.5, -0.1, 0.0), Vec3::new(0.7, 0.1, 0.12))
}

pub fn default_workspace() -> Aabb {
    Aabb::new(Vec3::new(-0.45, -0.35, 0.105), Vec3::new(0.75, 0.35, 0.6))
}

#[allow(clippy::too_many_arguments)]
fn object(
    id: &str,
    height: f64,
    mass: f64,
    contact_radius: f64,
    width: f64,
    adhesion_energy: f64,
    friction_mu: f64,
    count: u32,
    grasp: GraspKind,
) -> SceneObject {
    SceneObject {
        id: id.to_string(),
        pose: Vec3::zeros(),
        height,
        mass,
        contact_radius,
        width,
        adhesion_energy,
        friction_mu,
        count,
        intended_grasp: Some(grasp),
    }
}

fn base(name: &str, seed: u64, objects: Vec<SceneObject>) -> Scenario {
    Scenario {
        name: name.to_string(),
        seed,
        objects,
        workspace: default_workspace(),
        bin: default_bin(),
        table: default_table(),
        gripper: default_gripper(),
        adhesion: AdhesionParams::default(),
        physics: PhysicsParams::default(),
        assistance: AssistParams {
            length_scale: MODEL_LENGTH_SCALE,
            ..AssistParams::default()
        },
        prior: None,
        budget_per_object: 120.0,
    }
}

/// Syrup bottle for the pinch, a toy wheel and a candy pile for the pads.
pub fn canonical() -> Scenario {
    use GraspKind::*;
    let mut objects = vec![
        object("syrup", 0.2, 0.5, 0.03, 0.06, 5.0, 0.6, 1, Rigid),
        object("wheel", 0.02, 0.05, 0.025, 0.05, 8.0, 0.5, 1, Soft),
        object("candy", 0.01, 0.225, 0.006, 0.012, 3.0, 0.4, 15, Soft),
    ];
    objects[0].pose = Vec3::new(-0.2, 0.15, 0.0);
    objects[1].pose = Vec3::new(0.1, -0.15, 0.0);
    objects[2].pose = Vec3::new(0.2, 0.15, 0.0);
    base("canonical", 0, objects)
}

/// The fifteen household items: three for the pinch, twelve for the pads,
/// three of which are piles. Unplaced.
pub fn household_items() -> Vec<SceneObject> {
    use GraspKind::*;
    vec![
        object("chocolate_syrup", 0.2, 0.5, 0.03, 0.06, 5.0, 0.6, 1, Rigid),
        object("glue_bottle", 0.15, 0.15, 0.018, 0.04, 4.0, 0.5, 1, Rigid),
        object("lego_tower", 0.12, 0.1, 0.016, 0.032, 0.5, 0.5, 1, Rigid),
        object("beans", 0.01, 0.016, 0.005, 0.01, 2.0, 0.4, 20, Soft),
        object("dice", 0.016, 0.004, 0.008, 0.016, 5.0, 0.4, 1, Soft),
        object("fidget_spinner", 0.012, 0.05, 0.02, 0.07, 5.0, 0.4, 1, Soft),
        object(
            "lego_block",
            0.011,
            0.0025,
            0.008,
            0.016,
            0.02,
            0.5,
            1,
            Soft,
        ),
        object("metal_nuts", 0.008, 0.036, 0.007, 0.014, 3.0, 0.3, 6, Soft),
        object("m_and_ms", 0.008, 0.015, 0.006, 0.012, 2.0, 0.4, 15, Soft),
        object("plastic_nuts", 0.008, 0.003, 0.01, 0.02, 1.0, 0.4, 1, Soft),
        object("toy_propeller", 0.01, 0.02, 0.025, 0.05, 1.0, 0.4, 1, Soft),
        object(
            "toy_wheel_big",
            0.025,
            0.09,
            0.034,
            0.068,
            0.4,
            0.5,
            1,
            Soft,
        ),
        object(
            "toy_wheel_small",
            0.015,
            0.02,
            0.02,
            0.04,
            2.0,
            0.5,
            1,
            Soft,
        ),
        object("washer", 0.003, 0.01, 0.015, 0.03, 0.3, 0.3, 1, Soft),
        object("wooden_block", 0.03, 0.03, 0.02, 0.04, 1.0, 0.5, 1, Soft),
    ]
}

/// Minimum center spacing between randomly placed items, m.
pub const STUDY_SPACING: f64 = 0.09;

/// Fifteen household items scattered over the table by `seed`. The prior
/// favors each item's instructed mechanism.
pub fn study(seed: u64) -> Scenario {
    let mut objects = household_items();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = default_table();
    let margin = 0.05;
    let mut placed: Vec<Vec3> = Vec::new();
    for o in &mut objects {
        let p = loop {
            let p = Vec3::new(
                rng.random_range(table.min.x + margin..table.max.x - margin),
                rng.random_range(table.min.y + margin..table.max.y - margin),
                0.0,
            );
            if placed.iter().all(|q| (p - q).norm() >= STUDY_SPACING) {
                break p;
            }
        };
        placed.push(p);
        o.pose = p;
    }
    let mut s = base("study", seed, objects);
    let mut prior = BTreeMap::new();
    for o in &s.objects {
        for g in &s.gripper.grasp_types {
            let matches = match o.intended_grasp {
                Some(GraspKind::Rigid) => g.tag == GraspTag::Rigid,
                Some(GraspKind::Soft) => g.tag.is_soft(),
                None => true,
            };
            prior.insert(
                format!("{}/{}", o.id, g.tag),
                if matches { 1.0 } else { 0.1 },
            );
        }
    }
    s.prior = Some(prior);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adhesion::force_capacity;

    #[test]
    fn built_ins_validate() {
        canonical().validate().unwrap();
        for seed in 0..50 {
            study(seed).validate().unwrap();
        }
    }

    #[test]
    fn study_composition() {
        let s = study(3);
        assert_eq!(s.objects.len(), 15);
        let rigid = s
            .objects
            .iter()
            .filter(|o| o.intended_grasp == Some(GraspKind::Rigid))
            .count();
        assert_eq!(rigid, 3);
        assert_eq!(s.objects.iter().filter(|o| o.count > 1).count(), 3);
    }

    #[test]
    fn study_layout_is_seeded() {
        assert_eq!(study(7), study(7));
        assert_ne!(study(7).objects[0].pose, study(8).objects[0].pose);
    }

    #[test]
    fn soft_items_are_liftable_when_aligned() {
        let s = study(0);
        for o in s
            .objects
            .iter()
            .filter(|o| o.intended_grasp == Some(GraspKind::Soft))
        {
            let cap = force_capacity(
                s.adhesion.p_min,
                o.contact_radius,
                o.adhesion_energy,
                s.gripper.pad_radius,
                &s.adhesion,
            )
            .unwrap();
            assert!(cap >= o.item_mass() * s.physics.gravity, "{}", o.id);
        }
    }

    #[test]
    fn rigid_items_fit_the_fingers() {
        let s = study(0);
        for o in s
            .objects
            .iter()
            .filter(|o| o.intended_grasp == Some(GraspKind::Rigid))
        {
            assert!(o.width <= s.gripper.stroke);
            assert!(2.0 * o.friction_mu * s.gripper.f_max >= o.mass * s.physics.gravity);
        }
    }
}
