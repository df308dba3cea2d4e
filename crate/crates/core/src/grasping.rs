//! Attach and release rules for the rigid pinch and the soft pads.
//!
//! Rigid: the rigid frame must sit over the object's top within the capture
//! radius, the item must fit in the stroke, and two Coulomb finger contacts
//! must carry the weight (`2 μ f >= m g`). Soft: a pad touching the top
//! surface adheres while the delayed chamber pressure is negative and the
//! per-item capacity carries the per-item weight. Ties hold in both rules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::adhesion::force_capacity;
use crate::error::Result;
use crate::world::{frame_at, GraspTag, Hold, Scenario, SystemState, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspEventKind {
    RigidAttach,
    RigidDetach,
    SoftAttach,
    SoftDetach,
    /// A released body came to rest.
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspEvent {
    pub kind: GraspEventKind,
    pub object: String,
    pub tag: Option<GraspTag>,
    pub items_k: u32,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct AttachPlan {
    body: usize,
    tag: GraspTag,
    items: u32,
    contact_radius: f64,
}

/// Area shared by two disks of radii `r1`, `r2` whose centers are `d` apart.
pub fn disk_overlap(r1: f64, r2: f64, d: f64) -> f64 {
    if d >= r1 + r2 {
        return 0.0;
    }
    if d <= (r1 - r2).abs() {
        let r = r1.min(r2);
        return PI * r * r;
    }
    let (r1s, r2s, ds) = (r1 * r1, r2 * r2, d * d);
    let a1 = r1s * ((ds + r1s - r2s) / (2.0 * d * r1)).clamp(-1.0, 1.0).acos();
    let a2 = r2s * ((ds + r2s - r1s) / (2.0 * d * r2)).clamp(-1.0, 1.0).acos();
    let k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
    a1 + a2 - 0.5 * k.max(0.0).sqrt()
}

/// Radius of the disk with the same area as the pad/object overlap. Equals
/// `min(pad, object)` exactly when one disk covers the other.
pub fn effective_contact_radius(pad_radius: f64, object_radius: f64, offset: f64) -> f64 {
    if offset <= (pad_radius - object_radius).abs() {
        return pad_radius.min(object_radius);
    }
    (disk_overlap(pad_radius, object_radius, offset) / PI).sqrt()
}

/// Greatest number of items of radius `item_radius` that pack under a pad.
pub fn max_items_under_pad(pad_radius: f64, item_radius: f64) -> u32 {
    let ratio = pad_radius / item_radius;
    (ratio * ratio + 1e-9).floor() as u32
}

fn xy_distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

fn object_held(state: &SystemState, object: usize) -> bool {
    state
        .bodies
        .iter()
        .any(|b| b.object == object && b.hold.is_some())
}

fn event(
    state: &SystemState,
    scenario: &Scenario,
    kind: GraspEventKind,
    body: usize,
    tag: Option<GraspTag>,
    items: u32,
) -> GraspEvent {
    GraspEvent {
        kind,
        object: scenario.objects[state.bodies[body].object].id.clone(),
        tag,
        items_k: items,
        time: state.time,
    }
}

pub(crate) fn landing_event(state: &SystemState, body: usize, scenario: &Scenario) -> GraspEvent {
    event(
        state,
        scenario,
        GraspEventKind::Drop,
        body,
        None,
        state.bodies[body].count,
    )
}

fn candidate(state: &SystemState, scenario: &Scenario, body: usize) -> bool {
    let b = &state.bodies[body];
    b.is_resting(scenario) && !scenario.bin.contains_xy(&b.pose) && !object_held(state, b.object)
}

fn plan_rigid_attach(state: &SystemState, scenario: &Scenario) -> Result<Option<AttachPlan>> {
    if state
        .bodies
        .iter()
        .any(|b| b.hold.as_ref().is_some_and(|h| h.tag == GraspTag::Rigid))
    {
        return Ok(None);
    }
    let g = &scenario.gripper;
    let frame = frame_at(&state.ee, GraspTag::Rigid, scenario)?;
    let grav = scenario.physics.gravity;
    let mut best: Option<(f64, usize)> = None;
    for i in 0..state.bodies.len() {
        if !candidate(state, scenario, i) {
            continue;
        }
        let body = &state.bodies[i];
        let obj = &scenario.objects[body.object];
        let top = body.top(scenario);
        let d = xy_distance(&frame, &top);
        if d > g.capture_radius || (frame.z - top.z).abs() > g.contact_tolerance {
            continue;
        }
        if obj.width > g.stroke {
            continue;
        }
        // One item between the fingers.
        if 2.0 * obj.friction_mu * state.force < obj.item_mass() * grav {
            continue;
        }
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    Ok(best.map(|(_, i)| AttachPlan {
        body: i,
        tag: GraspTag::Rigid,
        items: 1,
        contact_radius: scenario.objects[state.bodies[i].object].contact_radius,
    }))
}

fn plan_soft_attach(
    state: &SystemState,
    pad: GraspTag,
    scenario: &Scenario,
) -> Result<Option<AttachPlan>> {
    if !pad.is_soft()
        || state
            .bodies
            .iter()
            .any(|b| b.hold.as_ref().is_some_and(|h| h.tag == pad))
    {
        return Ok(None);
    }
    let params = &scenario.adhesion;
    let p_eff = state.effective_pressure(params);
    if p_eff >= 0.0 {
        return Ok(None);
    }
    let g = &scenario.gripper;
    let frame = frame_at(&state.ee, pad, scenario)?;
    let grav = scenario.physics.gravity;
    let mut best: Option<(f64, AttachPlan)> = None;
    for i in 0..state.bodies.len() {
        if !candidate(state, scenario, i) {
            continue;
        }
        let body = &state.bodies[i];
        let obj = &scenario.objects[body.object];
        let top = body.top(scenario);
        if (frame.z - top.z).abs() > g.contact_tolerance {
            continue;
        }
        let d = xy_distance(&frame, &top);
        let (items, radius) = if body.count == 1 {
            (
                1,
                effective_contact_radius(g.pad_radius, obj.contact_radius, d),
            )
        } else {
            let footprint = obj.footprint_radius(body.count);
            let area = disk_overlap(g.pad_radius, footprint, d);
            let item_area = PI * obj.contact_radius * obj.contact_radius;
            let geometric = (area / item_area + 1e-9).floor() as u32;
            let k = body
                .count
                .min(max_items_under_pad(g.pad_radius, obj.contact_radius))
                .min(geometric);
            (k, obj.contact_radius)
        };
        if items == 0 || radius <= 0.0 {
            continue;
        }
        let capacity = force_capacity(p_eff, radius, obj.adhesion_energy, g.pad_radius, params)?;
        if capacity < obj.item_mass() * grav {
            continue;
        }
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((
                d,
                AttachPlan {
                    body: i,
                    tag: pad,
                    items,
                    contact_radius: radius,
                },
            ));
        }
    }
    Ok(best.map(|(_, p)| p))
}

fn plan_detach(state: &SystemState, scenario: &Scenario) -> Result<Vec<usize>> {
    let params = &scenario.adhesion;
    let grav = scenario.physics.gravity;
    let p_eff = state.effective_pressure(params);
    let mut out = Vec::new();
    for (i, b) in state.bodies.iter().enumerate() {
        let Some(hold) = &b.hold else { continue };
        let obj = &scenario.objects[b.object];
        let weight = obj.item_mass() * grav;
        let holds = match hold.tag {
            GraspTag::Rigid => 2.0 * obj.friction_mu * state.force >= weight,
            GraspTag::Soft(_) => {
                force_capacity(
                    p_eff,
                    hold.contact_radius,
                    obj.adhesion_energy,
                    scenario.gripper.pad_radius,
                    params,
                )? >= weight
            }
        };
        if !holds {
            out.push(i);
        }
    }
    Ok(out)
}

fn attach_event(state: &SystemState, scenario: &Scenario, plan: &AttachPlan) -> GraspEvent {
    let kind = match plan.tag {
        GraspTag::Rigid => GraspEventKind::RigidAttach,
        GraspTag::Soft(_) => GraspEventKind::SoftAttach,
    };
    event(state, scenario, kind, plan.body, Some(plan.tag), plan.items)
}

fn detach_event(state: &SystemState, scenario: &Scenario, body: usize) -> GraspEvent {
    let tag = state.bodies[body].hold.as_ref().map(|h| h.tag);
    let kind = match tag {
        Some(GraspTag::Rigid) => GraspEventKind::RigidDetach,
        _ => GraspEventKind::SoftDetach,
    };
    event(state, scenario, kind, body, tag, state.bodies[body].count)
}

fn apply_attach(state: &mut SystemState, scenario: &Scenario, plan: &AttachPlan) -> Result<()> {
    let frame = frame_at(&state.ee, plan.tag, scenario)?;
    let src = &mut state.bodies[plan.body];
    let hold = Hold {
        tag: plan.tag,
        offset: src.pose - frame,
        contact_radius: plan.contact_radius,
    };
    if plan.items < src.count {
        src.count -= plan.items;
        let mut portion = src.clone();
        portion.count = plan.items;
        portion.hold = Some(hold);
        state.bodies.push(portion);
    } else {
        src.hold = Some(hold);
    }
    Ok(())
}

/// Rigid attach decision for the current state, if any object qualifies.
pub fn try_rigid_attach(state: &SystemState, scenario: &Scenario) -> Result<Option<GraspEvent>> {
    Ok(plan_rigid_attach(state, scenario)?.map(|p| attach_event(state, scenario, &p)))
}

/// Soft attach decision for pad `pad`.
pub fn try_soft_attach(
    state: &SystemState,
    pad: GraspTag,
    scenario: &Scenario,
) -> Result<Option<GraspEvent>> {
    Ok(plan_soft_attach(state, pad, scenario)?.map(|p| attach_event(state, scenario, &p)))
}

/// Releases implied by the current force and delayed pressure.
pub fn check_detach(state: &SystemState, scenario: &Scenario) -> Result<Vec<GraspEvent>> {
    Ok(plan_detach(state, scenario)?
        .into_iter()
        .map(|i| detach_event(state, scenario, i))
        .collect())
}

/// Applies releases, then the rigid attach, then soft attaches pad by pad.
pub fn resolve(state: &mut SystemState, scenario: &Scenario) -> Result<Vec<GraspEvent>> {
    let mut events = Vec::new();
    for i in plan_detach(state, scenario)? {
        events.push(detach_event(state, scenario, i));
        let b = &mut state.bodies[i];
        b.hold = None;
        b.vz = 0.0;
    }
    if let Some(plan) = plan_rigid_attach(state, scenario)? {
        events.push(attach_event(state, scenario, &plan));
        apply_attach(state, scenario, &plan)?;
    }
    let pads: Vec<GraspTag> = scenario
        .gripper
        .grasp_types
        .iter()
        .map(|g| g.tag)
        .filter(GraspTag::is_soft)
        .collect();
    for pad in pads {
        if let Some(plan) = plan_soft_attach(state, pad, scenario)? {
            events.push(attach_event(state, scenario, &plan));
            apply_attach(state, scenario, &plan)?;
        }
    }
    Ok(events)
}
