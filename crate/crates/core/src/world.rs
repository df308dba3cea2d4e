//! Scenario and state model plus the transition function.
//!
//! The end-effector moves with a commanded Cartesian velocity, the rigid
//! grip force and the shared pad pressure integrate operator increments
//! with saturation, held bodies ride rigidly on their grasp frame and free
//! bodies fall until they rest on the table or the bin floor.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adhesion::{AdhesionParams, PressureHistory};
use crate::error::{Result, SimError};
use crate::grasping::{self, GraspEvent};
use crate::inference::LikelihoodModel;

pub type Vec3 = Vector3<f64>;

/// Relative slack on the speed limit that absorbs rounding in a clamped
/// vector's norm.
const SPEED_SLACK: f64 = 1e-12;

/// Position in the workspace frame, meters. The table plane is `z = 0`.
pub type Pose = Vec3;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_xy(&self, p: &Vec3) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    fn is_valid(&self) -> bool {
        self.min
            .iter()
            .chain(self.max.iter())
            .all(|v| v.is_finite())
            && (0..3).all(|i| self.min[i] <= self.max[i])
    }
}

/// Grasp-type tag: the rigid pinch or one of the soft pads (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GraspTag {
    Rigid,
    Soft(u16),
}

impl GraspTag {
    pub fn is_soft(&self) -> bool {
        matches!(self, GraspTag::Soft(_))
    }
}

impl fmt::Display for GraspTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraspTag::Rigid => f.write_str("rigid"),
            GraspTag::Soft(n) => write!(f, "soft_{n}"),
        }
    }
}

impl FromStr for GraspTag {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "rigid" {
            return Ok(GraspTag::Rigid);
        }
        s.strip_prefix("soft_")
            .and_then(|n| n.parse::<u16>().ok())
            .filter(|n| *n >= 1)
            .map(GraspTag::Soft)
            .ok_or_else(|| SimError::UnknownGraspType(s.to_string()))
    }
}

impl TryFrom<String> for GraspTag {
    type Error = SimError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GraspTag> for String {
    fn from(t: GraspTag) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspType {
    pub tag: GraspTag,
    /// Fixed displacement of the grasp frame from the end-effector, m.
    pub offset: Vec3,
}

/// Which mechanism a synthetic operator should use for an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspKind {
    Rigid,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    /// Base center of the object (or pile), m.
    pub pose: Pose,
    /// Distance from the base to the contacting top surface, m.
    #[serde(default)]
    pub height: f64,
    /// Total mass in kg; items of a pile weigh `mass / count` each.
    pub mass: f64,
    /// Nominal radius of the contacting surface of one item, m.
    pub contact_radius: f64,
    /// Pinch span of one item, m.
    pub width: f64,
    /// Interface fracture energy against the pad, J/m².
    pub adhesion_energy: f64,
    pub friction_mu: f64,
    #[serde(default = "one")]
    pub count: u32,
    /// Grasp mechanism a scripted participant is told to use.
    #[serde(default)]
    pub intended_grasp: Option<GraspKind>,
}

fn one() -> u32 {
    1
}

impl SceneObject {
    pub fn item_mass(&self) -> f64 {
        self.mass / self.count as f64
    }

    /// Radius of the footprint a pile of `count` items covers.
    pub fn footprint_radius(&self, count: u32) -> f64 {
        self.contact_radius * (count.max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperParams {
    pub grasp_types: Vec<GraspType>,
    /// Radius of the active adhesive area, m.
    pub pad_radius: f64,
    /// Maximum finger opening, m.
    pub stroke: f64,
    /// Maximum continuous grip force, N.
    pub f_max: f64,
    /// xy distance within which the rigid frame captures an object, m.
    pub capture_radius: f64,
    /// z distance between a grasp frame and a top surface counted as contact, m.
    pub contact_tolerance: f64,
    pub initial_ee: Vec3,
    #[serde(default)]
    pub initial_force: f64,
    #[serde(default)]
    pub initial_pressure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    pub gravity: f64,
    pub dt: f64,
    pub v_max: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            dt: 0.05,
            v_max: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistParams {
    /// Blending weight on the operator command.
    pub alpha: f64,
    /// Rationality of the operator model.
    pub beta: f64,
    /// Gain turning the belief-weighted displacement into a velocity, 1/s.
    pub k_r: f64,
    /// Probability floor applied after each belief update (0 disables).
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Length unit of the distances inside the operator model, m.
    #[serde(default = "unit_length")]
    pub length_scale: f64,
    /// Whether the alignment-hold term engages on a confident intent.
    #[serde(default = "yes")]
    pub hold_enabled: bool,
    #[serde(default = "default_hold_threshold")]
    pub hold_threshold: f64,
    /// Gain of the alignment-hold term, 1/s.
    #[serde(default = "default_k_hold")]
    pub k_hold: f64,
    #[serde(default)]
    pub likelihood: LikelihoodModel,
}

fn default_epsilon() -> f64 {
    1e-6
}
fn unit_length() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_hold_threshold() -> f64 {
    0.8
}
fn default_k_hold() -> f64 {
    2.0
}

impl Default for AssistParams {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 5.0,
            k_r: 1.0,
            epsilon: default_epsilon(),
            length_scale: unit_length(),
            hold_enabled: true,
            hold_threshold: default_hold_threshold(),
            k_hold: default_k_hold(),
            likelihood: LikelihoodModel::default(),
        }
    }
}

fn default_budget() -> f64 {
    120.0
}

/// A complete tabletop task: objects, regions, gripper and controller
/// settings. Serialized field-for-field as the scenario JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    pub workspace: Aabb,
    pub bin: Aabb,
    /// Region counted as "over the table" for the study metrics (xy only).
    pub table: Aabb,
    pub gripper: GripperParams,
    pub adhesion: AdhesionParams,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub assistance: AssistParams,
    /// Initial belief weights keyed `"objectId/graspTag"`; missing keys get
    /// zero. Uniform when absent.
    #[serde(default)]
    pub prior: Option<BTreeMap<String, f64>>,
    /// Simulated seconds allowed per object before an episode is cut off.
    #[serde(default = "default_budget")]
    pub budget_per_object: f64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn dt(&self) -> f64 {
        self.physics.dt
    }

    pub fn grasp(&self, tag: GraspTag) -> Result<&GraspType> {
        self.gripper
            .grasp_types
            .iter()
            .find(|g| g.tag == tag)
            .ok_or_else(|| SimError::UnknownGraspType(tag.to_string()))
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn budget_ticks(&self) -> u64 {
        (self.budget_per_object * self.objects.len() as f64 / self.physics.dt).ceil() as u64
    }

    /// Resting height for a free body whose base is at `p`.
    pub fn support_height(&self, p: &Vec3) -> f64 {
        if self.bin.contains_xy(p) {
            self.bin.min.z
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !self.workspace.is_valid() || !self.bin.is_valid() || !self.table.is_valid() {
            return bad("workspace, bin and table boxes must be finite with min <= max".into());
        }
        let ph = &self.physics;
        if !(ph.dt.is_finite() && ph.dt > 0.0) {
            return bad("dt must be positive".into());
        }
        if !(ph.v_max.is_finite() && ph.v_max > 0.0)
            || !(ph.gravity.is_finite() && ph.gravity > 0.0)
        {
            return bad("v_max and gravity must be positive".into());
        }
        let a = &self.assistance;
        if !(0.0..=1.0).contains(&a.alpha) {
            return bad(format!("alpha {} outside [0, 1]", a.alpha));
        }
        if !(a.beta.is_finite() && a.beta >= 0.0) {
            return bad("beta must be finite and non-negative".into());
        }
        if !(a.k_r.is_finite() && a.k_r >= 0.0) || !(a.k_hold.is_finite() && a.k_hold >= 0.0) {
            return bad("assistance gains must be non-negative".into());
        }
        if !(a.length_scale.is_finite() && a.length_scale > 0.0) {
            return bad("length_scale must be positive".into());
        }
        if !(0.0..1.0).contains(&a.epsilon) {
            return bad("epsilon must lie in [0, 1)".into());
        }
        self.adhesion.validate()?;

        let g = &self.gripper;
        if g.grasp_types
            .iter()
            .filter(|t| t.tag == GraspTag::Rigid)
            .count()
            != 1
        {
            return bad("exactly one rigid grasp type is required".into());
        }
        if !g.grasp_types.iter().any(|t| t.tag.is_soft()) {
            return bad("at least one soft pad is required".into());
        }
        let mut tags: Vec<GraspTag> = g.grasp_types.iter().map(|t| t.tag).collect();
        tags.sort();
        tags.dedup();
        if tags.len() != g.grasp_types.len() {
            return bad("grasp type tags must be unique".into());
        }
        if g.grasp_types
            .iter()
            .any(|t| t.offset.iter().any(|v| !v.is_finite()))
        {
            return bad("grasp offsets must be finite".into());
        }
        for (name, v) in [
            ("pad_radius", g.pad_radius),
            ("stroke", g.stroke),
            ("f_max", g.f_max),
            ("capture_radius", g.capture_radius),
            ("contact_tolerance", g.contact_tolerance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("gripper {name} must be positive"));
            }
        }
        if !self.workspace.contains(&g.initial_ee) {
            return bad("initial end-effector pose outside workspace".into());
        }
        if !(0.0..=g.f_max).contains(&g.initial_force) {
            return bad("initial force outside [0, f_max]".into());
        }
        if !(self.adhesion.p_min..=self.adhesion.p_max).contains(&g.initial_pressure) {
            return bad("initial pressure outside pressure bounds".into());
        }

        if self.objects.is_empty() {
            return bad("scenario has no objects".into());
        }
        let mut ids: Vec<&str> = self.objects.iter().map(|o| o.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.objects.len() {
            return bad("object ids must be unique".into());
        }
        for o in &self.objects {
            if o.id.contains('/') {
                return bad(format!("object id `{}` must not contain '/'", o.id));
            }
            if o.pose.iter().any(|v| !v.is_finite()) || o.pose.z < 0.0 {
                return bad(format!("object `{}` has an invalid pose", o.id));
            }
            let positive = [
                o.mass,
                o.contact_radius,
                o.adhesion_energy,
                o.friction_mu,
                o.width,
            ];
            if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!(
                    "object `{}` needs positive mass, contact_radius, width, adhesion_energy, friction_mu",
                    o.id
                ));
            }
            if !(o.height.is_finite() && o.height >= 0.0) || o.count == 0 {
                return bad(format!(
                    "object `{}` needs height >= 0 and count >= 1",
                    o.id
                ));
            }
            if !self.workspace.contains_xy(&o.pose) {
                return bad(format!("object `{}` starts outside the workspace", o.id));
            }
            if self.bin.contains_xy(&o.pose) {
                return bad(format!("object `{}` starts inside the bin", o.id));
            }
        }
        if let Some(prior) = &self.prior {
            let mut total = 0.0;
            for (key, w) in prior {
                let (oid, tag) = key
                    .split_once('/')
                    .ok_or_else(|| SimError::InvalidScenario(format!("bad prior key `{key}`")))?;
                if self.object_index(oid).is_none() {
                    return bad(format!("prior references unknown object `{oid}`"));
                }
                self.grasp(tag.parse()?)?;
                if !(w.is_finite() && *w >= 0.0) {
                    return bad(format!("prior weight for `{key}` must be non-negative"));
                }
                total += w;
            }
            if total <= 0.0 {
                return bad("prior has no mass".into());
            }
        }
        if !(self.budget_per_object.is_finite() && self.budget_per_object > 0.0) {
            return bad("budget_per_object must be positive".into());
        }
        Ok(())
    }
}

/// A body held by a grasp frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hold {
    pub tag: GraspTag,
    /// Body pose minus grasp-frame pose, fixed at attach time.
    pub offset: Vec3,
    /// Contact radius per item used for the adhesion hold check.
    pub contact_radius: f64,
}

/// A physical instance of an object, or a portion of a pile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    /// Index into `Scenario::objects`.
    pub object: usize,
    pub pose: Pose,
    pub count: u32,
    /// Vertical velocity while falling, m/s.
    pub vz: f64,
    pub hold: Option<Hold>,
}

impl Body {
    pub fn is_held(&self) -> bool {
        self.hold.is_some()
    }

    pub fn is_resting(&self, scenario: &Scenario) -> bool {
        self.hold.is_none() && self.vz == 0.0 && self.pose.z <= scenario.support_height(&self.pose)
    }

    pub fn in_bin(&self, scenario: &Scenario) -> bool {
        self.is_resting(scenario) && scenario.bin.contains_xy(&self.pose)
    }

    pub fn top(&self, scenario: &Scenario) -> Vec3 {
        self.pose + Vec3::new(0.0, 0.0, scenario.objects[self.object].height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub tick: u64,
    pub time: f64,
    /// End-effector position.
    pub ee: Pose,
    /// Rigid grip force, N.
    pub force: f64,
    /// Chamber pressure shared by all pads, psi.
    pub pressure: f64,
    pub pressure_history: PressureHistory,
    pub bodies: Vec<Body>,
}

impl SystemState {
    pub fn initial(scenario: &Scenario) -> Self {
        let g = &scenario.gripper;
        let bodies = scenario
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| Body {
                object: i,
                pose: o.pose,
                count: o.count,
                vz: 0.0,
                hold: None,
            })
            .collect();
        Self {
            tick: 0,
            time: 0.0,
            ee: g.initial_ee,
            force: g.initial_force,
            pressure: g.initial_pressure,
            pressure_history: PressureHistory::new(g.initial_pressure),
            bodies,
        }
    }

    /// Pressure felt by the pads right now.
    pub fn effective_pressure(&self, params: &AdhesionParams) -> f64 {
        self.pressure_history.delayed(self.time, params.tau_sw)
    }

    /// Current (object index, grasp tag) attachment pairs.
    pub fn attachments(&self) -> Vec<(usize, GraspTag)> {
        self.bodies
            .iter()
            .filter_map(|b| b.hold.as_ref().map(|h| (b.object, h.tag)))
            .collect()
    }

    pub fn any_held(&self) -> bool {
        self.bodies.iter().any(Body::is_held)
    }

    /// The body that stands for `object` on the table: the largest free
    /// resting portion outside the bin, if any.
    pub fn table_body(&self, object: usize, scenario: &Scenario) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, b) in self.bodies.iter().enumerate() {
            if b.object != object || !b.is_resting(scenario) || scenario.bin.contains_xy(&b.pose) {
                continue;
            }
            if best.is_none_or(|j| b.count > self.bodies[j].count) {
                best = Some(i);
            }
        }
        best
    }

    pub fn object_available(&self, object: usize, scenario: &Scenario) -> bool {
        self.table_body(object, scenario).is_some()
    }

    /// Point a grasp frame should reach to take `object`: the top center of
    /// its table portion, or of its first body when nothing remains on the
    /// table.
    pub fn object_target(&self, object: usize, scenario: &Scenario) -> Vec3 {
        let idx = self
            .table_body(object, scenario)
            .or_else(|| self.bodies.iter().position(|b| b.object == object))
            .expect("every object keeps at least one body");
        self.bodies[idx].top(scenario)
    }

    /// Items of `object` resting inside the bin.
    pub fn items_in_bin(&self, object: usize, scenario: &Scenario) -> u32 {
        self.bodies
            .iter()
            .filter(|b| b.object == object && b.in_bin(scenario))
            .map(|b| b.count)
            .sum()
    }

    pub fn all_binned(&self, scenario: &Scenario) -> bool {
        (0..scenario.objects.len())
            .all(|i| self.items_in_bin(i, scenario) == scenario.objects[i].count)
    }

    /// Whether some portion of `object` lies outside the bin footprint.
    pub fn object_remaining(&self, object: usize, scenario: &Scenario) -> bool {
        self.bodies
            .iter()
            .any(|b| b.object == object && !scenario.bin.contains_xy(&b.pose))
    }

    pub fn anything_falling(&self, scenario: &Scenario) -> bool {
        self.bodies
            .iter()
            .any(|b| b.hold.is_none() && !b.is_resting(scenario))
    }
}

/// One tick of operator commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorInput {
    /// Commanded end-effector velocity, m/s.
    #[serde(rename = "aH")]
    pub a_h: Vec3,
    /// Grip force increment, N.
    pub df: f64,
    /// Pressure increment, psi.
    #[serde(rename = "dP")]
    pub dp: f64,
    /// Whether the operator touched any control this tick.
    pub active: bool,
}

impl OperatorInput {
    pub fn zero() -> Self {
        Self {
            a_h: Vec3::zeros(),
            df: 0.0,
            dp: 0.0,
            active: false,
        }
    }

    /// Input whose `active` flag is set iff any field is nonzero.
    pub fn new(a_h: Vec3, df: f64, dp: f64) -> Self {
        let active = a_h != Vec3::zeros() || df != 0.0 || dp != 0.0;
        Self {
            a_h,
            df,
            dp,
            active,
        }
    }

    /// Rejects non-finite fields and clamps the arm command to `v_max`.
    pub fn ingest(self, v_max: f64) -> Result<Self> {
        check_finite(&self.a_h, "operator velocity")?;
        if !(self.df.is_finite() && self.dp.is_finite()) {
            return Err(SimError::NonFinite("operator increments"));
        }
        Ok(Self {
            a_h: clamp_speed(self.a_h, v_max),
            ..self
        })
    }
}

impl Default for OperatorInput {
    fn default() -> Self {
        Self::zero()
    }
}

/// Saturating update of the rigid force and chamber pressure channels.
pub fn integrate_gripper_channels(
    state: &SystemState,
    df: f64,
    dp: f64,
    scenario: &Scenario,
) -> SystemState {
    let mut next = state.clone();
    next.force = (state.force + df).clamp(0.0, scenario.gripper.f_max);
    next.pressure = (state.pressure + dp).clamp(scenario.adhesion.p_min, scenario.adhesion.p_max);
    next
}

/// Pose of grasp frame `tag` for an end-effector at `ee`.
pub fn frame_at(ee: &Vec3, tag: GraspTag, scenario: &Scenario) -> Result<Vec3> {
    Ok(ee + scenario.grasp(tag)?.offset)
}

pub fn grasp_frame_pose(state: &SystemState, tag: GraspTag, scenario: &Scenario) -> Result<Pose> {
    frame_at(&state.ee, tag, scenario)
}

/// Clamps a velocity to the speed limit, preserving direction. Vectors
/// within rounding of the limit pass unchanged, so clamping is idempotent.
pub fn clamp_speed(v: Vec3, v_max: f64) -> Vec3 {
    let n = v.norm();
    if n > v_max * (1.0 + SPEED_SLACK) {
        v * (v_max / n)
    } else {
        v
    }
}

/// End-effector position after one step with velocity `a`, before any
/// channel or body update.
pub fn predict_ee(ee: &Vec3, a: &Vec3, scenario: &Scenario) -> Vec3 {
    scenario.workspace.clamp(&(ee + a * scenario.physics.dt))
}

fn check_finite(v: &Vec3, what: &'static str) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(SimError::NonFinite(what))
    }
}

/// One kinematic step: move the end-effector, integrate the channels, carry
/// held bodies and let free bodies fall. Returns indices of bodies that
/// landed during this step.
fn advance(
    state: &SystemState,
    a: &Vec3,
    df: f64,
    dp: f64,
    scenario: &Scenario,
) -> Result<(SystemState, Vec<usize>)> {
    check_finite(a, "velocity command")?;
    if !(df.is_finite() && dp.is_finite()) {
        return Err(SimError::NonFinite("gripper increments"));
    }
    let dt = scenario.physics.dt;
    let a = clamp_speed(*a, scenario.physics.v_max);

    let mut next = integrate_gripper_channels(state, df, dp, scenario);
    next.ee = predict_ee(&state.ee, &a, scenario);
    next.tick = state.tick + 1;
    next.time = next.tick as f64 * dt;
    next.pressure_history
        .record(next.time, next.pressure, scenario.adhesion.tau_sw);

    let mut landed = Vec::new();
    let g = scenario.physics.gravity;
    for (i, body) in next.bodies.iter_mut().enumerate() {
        if let Some(hold) = &body.hold {
            body.pose = frame_at(&next.ee, hold.tag, scenario)? + hold.offset;
            continue;
        }
        let floor = scenario.support_height(&body.pose);
        if body.pose.z > floor || body.vz != 0.0 {
            body.vz -= g * dt;
            body.pose.z += body.vz * dt;
            if body.pose.z <= floor {
                body.pose.z = floor;
                body.vz = 0.0;
                landed.push(i);
            }
        }
    }
    Ok((next, landed))
}

/// Kinematic transition: pure and deterministic.
pub fn step(
    state: &SystemState,
    a: &Vec3,
    df: f64,
    dp: f64,
    scenario: &Scenario,
) -> Result<SystemState> {
    advance(state, a, df, dp, scenario).map(|(s, _)| s)
}

/// Full transition: kinematic step followed by landing, release and
/// attach resolution. Events are ordered landings, detaches, attaches.
pub fn transition(
    state: &SystemState,
    a: &Vec3,
    df: f64,
    dp: f64,
    scenario: &Scenario,
) -> Result<(SystemState, Vec<GraspEvent>)> {
    let (mut next, landed) = advance(state, a, df, dp, scenario)?;
    let mut events: Vec<GraspEvent> = landed
        .into_iter()
        .map(|i| grasping::landing_event(&next, i, scenario))
        .collect();
    events.extend(grasping::resolve(&mut next, scenario)?);
    Ok((next, events))
}
