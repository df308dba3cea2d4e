//! Synthetic operators: a noisily-optimal participant that clears the table,
//! a deterministic grasp routine, and a script player.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
pub use crate::inference::directions;
use crate::inference::{likelihood_logit, Belief};
use crate::world::{
    clamp_speed, frame_at, predict_ee, GraspKind, GraspTag, OperatorInput, Scenario, SystemState,
    Vec3,
};

/// What an operator perceives before acting on a tick.
pub struct Observation<'a> {
    pub scenario: &'a Scenario,
    pub state: &'a SystemState,
    /// The robot's belief, shown only while assistance is running.
    pub belief: Option<&'a Belief>,
    /// Whether the executed arm motion blends in robot assistance.
    pub assist_active: bool,
    /// Arm velocity executed on the previous tick.
    pub last_action: Vec3,
}

pub trait Operator: Send {
    fn act(&mut self, obs: &Observation<'_>) -> Result<OperatorInput>;

    /// True once the operator has nothing left to do.
    fn finished(&self) -> bool;
}

/// Samples an arm command that moves point `point` (rigidly attached to the
/// end-effector) toward `goal` from the softmax over the direction set.
/// An infinite `beta` picks the first best direction.
pub fn boltzmann_action<R: Rng>(
    point: &Vec3,
    ee: &Vec3,
    goal: &Vec3,
    beta: f64,
    scenario: &Scenario,
    rng: &mut R,
) -> Vec3 {
    let dirs = directions(scenario.physics.v_max);
    let offset = point - ee;
    let ell = scenario.assistance.length_scale;
    let mut logits = [0.0; 27];
    for (l, d) in logits.iter_mut().zip(&dirs) {
        let next = predict_ee(ee, d, scenario) + offset;
        *l = if beta.is_infinite() {
            likelihood_logit(point, &next, goal, 1.0, ell)
        } else {
            likelihood_logit(point, &next, goal, beta, ell)
        };
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if beta.is_infinite() {
        let i = logits.iter().position(|l| *l == m).unwrap_or(0);
        return dirs[i];
    }
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return dirs[i];
        }
        u -= wi;
    }
    dirs[26]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    /// Rationality of the arm commands.
    pub beta: f64,
    /// Grasp-frame distance to the target top counted as aligned, m.
    pub align_tol: f64,
    /// Pressure change per tick while ramping, psi.
    pub dp_rate: f64,
    /// Force change per tick while squeezing, N.
    pub df_rate: f64,
    pub grip_force: f64,
    /// Height of a carried body's base above the bin rim, m.
    pub clearance: f64,
    /// Inset of the bin outline a carried body must reach before release, m.
    pub bin_margin: f64,
    /// Seconds spent on one attempt before giving up on it.
    pub patience: f64,
    pub max_attempts: u32,
    /// Confidence at which the operator lets the assistance steer.
    pub trust_threshold: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            beta: 3.0,
            align_tol: 0.005,
            dp_rate: 1.0,
            df_rate: 5.0,
            grip_force: 20.0,
            clearance: 0.03,
            bin_margin: 0.03,
            patience: 60.0,
            max_attempts: 3,
            trust_threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Choose,
    Acquire,
    Grip { settled: u64 },
    Carry,
    Release,
    Done,
}

/// Noisily-optimal participant. Picks the nearest remaining object, steers
/// the chosen grasp frame onto it with Boltzmann-sampled lattice moves,
/// ramps the pad pressure or grip force, carries the load over the bin and
/// lets go. While assistance runs and the robot is confident in the same
/// target and making progress, it keeps its hands off the arm.
pub struct BoltzmannOperator {
    cfg: OperatorConfig,
    rng: ChaCha8Rng,
    phase: Phase,
    target: Option<(usize, GraspTag)>,
    only: Option<(usize, GraspTag)>,
    attempts: Vec<u32>,
    done: Vec<bool>,
    attempt_start: u64,
}

impl BoltzmannOperator {
    /// Operator that clears every object of `scenario`.
    pub fn new(cfg: OperatorConfig, scenario: &Scenario, seed: u64) -> Self {
        let n = scenario.objects.len();
        Self {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: Phase::Choose,
            target: None,
            only: None,
            attempts: vec![0; n],
            done: vec![false; n],
            attempt_start: 0,
        }
    }

    /// Operator that moves one object with one grasp type.
    pub fn single(
        object: usize,
        tag: GraspTag,
        cfg: OperatorConfig,
        scenario: &Scenario,
        seed: u64,
    ) -> Self {
        let mut op = Self::new(cfg, scenario, seed);
        op.only = Some((object, tag));
        op
    }

    pub fn target(&self) -> Option<(usize, GraspTag)> {
        self.target
    }

    fn choose(&mut self, obs: &Observation<'_>) -> Option<(usize, GraspTag)> {
        let (sc, st) = (obs.scenario, obs.state);
        if let Some(t) = self.only {
            return (!self.done[t.0] && st.object_available(t.0, sc)).then_some(t);
        }
        let mut best: Option<(f64, usize)> = None;
        for o in 0..sc.objects.len() {
            if self.done[o] || !st.object_available(o, sc) {
                continue;
            }
            let p = st.object_target(o, sc);
            let d = (p.xy() - st.ee.xy()).norm();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, o));
            }
        }
        let (_, o) = best?;
        let obj = &sc.objects[o];
        let kind = obj
            .intended_grasp
            .unwrap_or(if obj.width <= sc.gripper.stroke {
                GraspKind::Rigid
            } else {
                GraspKind::Soft
            });
        let tag = match kind {
            GraspKind::Rigid => GraspTag::Rigid,
            GraspKind::Soft => {
                let pads: Vec<GraspTag> = sc
                    .gripper
                    .grasp_types
                    .iter()
                    .map(|g| g.tag)
                    .filter(GraspTag::is_soft)
                    .collect();
                pads[self.rng.random_range(0..pads.len())]
            }
        };
        Some((o, tag))
    }

    fn end_attempt(&mut self, obs: &Observation<'_>) {
        if let Some((o, _)) = self.target {
            self.attempts[o] += 1;
            if self.attempts[o] >= self.cfg.max_attempts
                || !obs.state.object_available(o, obs.scenario)
            {
                self.done[o] = true;
            }
        }
        self.phase = Phase::Choose;
        self.target = None;
    }

    /// Hands off the arm when the robot already steers to our target.
    fn yields(&self, obs: &Observation<'_>, frame: &Vec3, goal: &Vec3, aligned: bool) -> bool {
        let (Some(b), Some((o, tag))) = (obs.belief, self.target) else {
            return false;
        };
        if !obs.assist_active {
            return false;
        }
        let (mo, mt, p) = b.map_estimate(obs.scenario);
        if (mo, mt) != (o, tag) || p < self.cfg.trust_threshold {
            return false;
        }
        aligned || obs.last_action.dot(&(goal - frame)) > 0.0
    }

    fn steer(&mut self, obs: &Observation<'_>, point: &Vec3, goal: &Vec3) -> Vec3 {
        boltzmann_action(
            point,
            &obs.state.ee,
            goal,
            self.cfg.beta,
            obs.scenario,
            &mut self.rng,
        )
    }

    fn release_command(&self, st: &SystemState, sc: &Scenario) -> (f64, f64) {
        let mut df = 0.0;
        let mut dp = 0.0;
        for (_, tag) in st.attachments() {
            if tag == GraspTag::Rigid {
                df = -st.force;
            } else {
                dp = self.cfg.dp_rate.min(sc.adhesion.p_max - st.pressure);
            }
        }
        (df, dp)
    }
}

impl Operator for BoltzmannOperator {
    fn act(&mut self, obs: &Observation<'_>) -> Result<OperatorInput> {
        let (sc, st) = (obs.scenario, obs.state);
        let dt = sc.physics.dt;
        loop {
            match self.phase {
                Phase::Done => return Ok(OperatorInput::zero()),
                Phase::Choose => match self.choose(obs) {
                    None => {
                        self.phase = Phase::Done;
                        return Ok(OperatorInput::zero());
                    }
                    Some(t) => {
                        self.target = Some(t);
                        self.attempt_start = st.tick;
                        self.phase = Phase::Acquire;
                    }
                },
                Phase::Acquire => {
                    let (o, tag) = self.target.expect("target set while acquiring");
                    if st.any_held() {
                        self.phase = Phase::Carry;
                        continue;
                    }
                    let elapsed = (st.tick - self.attempt_start) as f64 * dt;
                    if !st.object_available(o, sc) || elapsed > self.cfg.patience {
                        self.end_attempt(obs);
                        continue;
                    }
                    let frame = frame_at(&st.ee, tag, sc)?;
                    let goal = st.object_target(o, sc);
                    let aligned = (goal - frame).norm() <= self.cfg.align_tol;
                    // Open the grasp left over from a previous try first.
                    let (mut df, mut dp) = (0.0, 0.0);
                    if st.pressure < 0.0 {
                        dp = self.cfg.dp_rate.min(-st.pressure);
                    }
                    if st.force > 0.0 {
                        df = -st.force;
                    }
                    if aligned && df == 0.0 && dp == 0.0 {
                        self.phase = Phase::Grip { settled: 0 };
                        continue;
                    }
                    let a = if self.yields(obs, &frame, &goal, aligned) {
                        Vec3::zeros()
                    } else {
                        self.steer(obs, &frame, &goal)
                    };
                    return Ok(OperatorInput::new(a, df, dp));
                }
                Phase::Grip { settled } => {
                    let (o, tag) = self.target.expect("target set while gripping");
                    let settle_ticks = (sc.adhesion.tau_sw / dt).ceil() as u64 + 1;
                    let (mut df, mut dp) = (0.0, 0.0);
                    let saturated = if tag.is_soft() {
                        st.pressure <= sc.adhesion.p_min
                    } else {
                        st.force >= self.cfg.grip_force.min(sc.gripper.f_max)
                    };
                    if !saturated {
                        if tag.is_soft() {
                            dp = -self.cfg.dp_rate;
                        } else {
                            df = self.cfg.df_rate.min(self.cfg.grip_force - st.force);
                        }
                    } else if settled >= settle_ticks {
                        if st.any_held() {
                            self.phase = Phase::Carry;
                        } else {
                            self.end_attempt(obs);
                        }
                        continue;
                    } else {
                        self.phase = Phase::Grip {
                            settled: settled + 1,
                        };
                    }
                    let a = if st.any_held() || !st.object_available(o, sc) {
                        Vec3::zeros()
                    } else {
                        let frame = frame_at(&st.ee, tag, sc)?;
                        let goal = st.object_target(o, sc);
                        let aligned = (goal - frame).norm() <= self.cfg.align_tol;
                        if self.yields(obs, &frame, &goal, aligned) {
                            Vec3::zeros()
                        } else {
                            self.steer(obs, &frame, &goal)
                        }
                    };
                    return Ok(OperatorInput::new(a, df, dp));
                }
                Phase::Carry => {
                    let Some(body) = st.bodies.iter().find(|b| b.is_held()) else {
                        self.end_attempt(obs);
                        continue;
                    };
                    let bin = &sc.bin;
                    let inner_min = bin.min.xy().add_scalar(self.cfg.bin_margin);
                    let inner_max = bin.max.xy().add_scalar(-self.cfg.bin_margin);
                    let over_bin = st.bodies.iter().filter(|b| b.is_held()).all(|b| {
                        let p = b.pose.xy();
                        (0..2).all(|i| p[i] >= inner_min[i] && p[i] <= inner_max[i])
                            && b.pose.z >= bin.max.z
                    });
                    if over_bin {
                        self.phase = Phase::Release;
                        continue;
                    }
                    let c = bin.center();
                    let goal = Vec3::new(c.x, c.y, bin.max.z + self.cfg.clearance);
                    let point = body.pose;
                    let a = self.steer(obs, &point, &goal);
                    return Ok(OperatorInput::new(a, 0.0, 0.0));
                }
                Phase::Release => {
                    if !st.any_held() && !st.anything_falling(sc) {
                        self.end_attempt(obs);
                        continue;
                    }
                    let (df, dp) = self.release_command(st, sc);
                    return Ok(OperatorInput::new(Vec3::zeros(), df, dp));
                }
            }
        }
    }

    fn finished(&self) -> bool {
        self.phase == Phase::Done
    }
}

/// Operator that never touches the controls. With a tick limit it reports
/// finished once that many ticks have been played.
#[derive(Debug, Clone, Default)]
pub struct NullOperator {
    pub limit: Option<u64>,
    played: u64,
}

impl NullOperator {
    pub fn new(limit: Option<u64>) -> Self {
        Self { limit, played: 0 }
    }
}

impl Operator for NullOperator {
    fn act(&mut self, _obs: &Observation<'_>) -> Result<OperatorInput> {
        self.played += 1;
        Ok(OperatorInput::zero())
    }

    fn finished(&self) -> bool {
        self.limit.is_some_and(|l| self.played >= l)
    }
}

/// One timed script record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub t: f64,
    #[serde(rename = "aH", alias = "a_H")]
    pub a_h: [f64; 3],
    #[serde(default)]
    pub df: f64,
    #[serde(rename = "dP", alias = "dp", default)]
    pub dp: f64,
}

/// Plays a script: the entry whose time rounds to the current tick is
/// applied on that tick (the last one wins when several do), zero input
/// otherwise.
#[derive(Debug, Clone)]
pub struct ScriptOperator {
    inputs: BTreeMap<u64, OperatorInput>,
    end_tick: u64,
    next_tick: u64,
}

impl ScriptOperator {
    pub fn new(entries: &[ScriptEntry], dt: f64) -> Result<Self> {
        let mut inputs = BTreeMap::new();
        let mut last_t = f64::NEG_INFINITY;
        for (i, e) in entries.iter().enumerate() {
            let finite = e.t.is_finite()
                && e.df.is_finite()
                && e.dp.is_finite()
                && e.a_h.iter().all(|v| v.is_finite());
            if !finite {
                return Err(SimError::MalformedScript(format!(
                    "entry {i} has non-finite fields"
                )));
            }
            if e.t < 0.0 {
                return Err(SimError::MalformedScript(format!(
                    "entry {i} has negative time"
                )));
            }
            if e.t < last_t {
                return Err(SimError::MalformedScript(format!(
                    "entry {i} at t = {} precedes t = {last_t}",
                    e.t
                )));
            }
            last_t = e.t;
            let tick = (e.t / dt).round() as u64;
            inputs.insert(tick, OperatorInput::new(Vec3::from(e.a_h), e.df, e.dp));
        }
        let end_tick = inputs.keys().next_back().map_or(0, |k| k + 1);
        Ok(Self {
            inputs,
            end_tick,
            next_tick: 0,
        })
    }

    pub fn from_json(text: &str, dt: f64) -> Result<Self> {
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(text).map_err(|e| SimError::MalformedScript(e.to_string()))?;
        Self::new(&entries, dt)
    }

    /// Plays until tick `end_tick` even when the last entry comes earlier.
    pub fn with_end_tick(mut self, end_tick: u64) -> Self {
        self.end_tick = end_tick;
        self
    }
}

impl Operator for ScriptOperator {
    fn act(&mut self, obs: &Observation<'_>) -> Result<OperatorInput> {
        self.next_tick = obs.state.tick + 1;
        Ok(self
            .inputs
            .get(&obs.state.tick)
            .copied()
            .unwrap_or_default())
    }

    fn finished(&self) -> bool {
        self.next_tick >= self.end_tick
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Align,
    Descend,
    Grip(u64),
    Lift,
    Transport,
    Release,
    Done,
}

/// Deterministic pick-and-place of one object with one grasp type: align
/// over the top, descend onto it, close the grasp, wait out the switching
/// delay, lift, carry over the bin and let go.
#[derive(Debug, Clone)]
pub struct GraspRoutine {
    object: usize,
    tag: GraspTag,
    step: Step,
    /// Approach height of the grasp frame above the top surface, m.
    pub hover: f64,
    pub clearance: f64,
    succeeded: bool,
}

impl GraspRoutine {
    pub fn new(object: usize, tag: GraspTag) -> Self {
        Self {
            object,
            tag,
            step: Step::Align,
            hover: 0.05,
            clearance: 0.03,
            succeeded: false,
        }
    }

    /// True if the routine got something off the table.
    pub fn lifted(&self) -> bool {
        self.succeeded
    }

    fn servo(frame: &Vec3, goal: &Vec3, sc: &Scenario) -> Vec3 {
        clamp_speed((goal - frame) / sc.physics.dt, sc.physics.v_max)
    }
}

const REACHED: f64 = 1e-9;

impl Operator for GraspRoutine {
    fn act(&mut self, obs: &Observation<'_>) -> Result<OperatorInput> {
        let (sc, st) = (obs.scenario, obs.state);
        let frame = frame_at(&st.ee, self.tag, sc)?;
        loop {
            match self.step {
                Step::Done => return Ok(OperatorInput::zero()),
                Step::Align => {
                    let top = st.object_target(self.object, sc);
                    let z = frame.z.max(top.z + self.hover);
                    let goal = Vec3::new(top.x, top.y, z);
                    if (goal - frame).norm() <= REACHED {
                        self.step = Step::Descend;
                        continue;
                    }
                    return Ok(OperatorInput::new(Self::servo(&frame, &goal, sc), 0.0, 0.0));
                }
                Step::Descend => {
                    let top = st.object_target(self.object, sc);
                    let next = predict_ee(&st.ee, &Self::servo(&frame, &top, sc), sc);
                    if (top - frame).norm() <= REACHED || next == st.ee {
                        self.step = Step::Grip(0);
                        continue;
                    }
                    return Ok(OperatorInput::new(Self::servo(&frame, &top, sc), 0.0, 0.0));
                }
                Step::Grip(n) => {
                    let wait = (sc.adhesion.tau_sw / sc.physics.dt).ceil() as u64 + 1;
                    if n > wait {
                        self.succeeded = st.any_held();
                        self.step = if self.succeeded {
                            Step::Lift
                        } else {
                            Step::Done
                        };
                        continue;
                    }
                    self.step = Step::Grip(n + 1);
                    let (df, dp) = if n > 0 {
                        (0.0, 0.0)
                    } else if self.tag.is_soft() {
                        (0.0, sc.adhesion.p_min - st.pressure)
                    } else {
                        (sc.gripper.f_max - st.force, 0.0)
                    };
                    return Ok(OperatorInput::new(Vec3::zeros(), df, dp));
                }
                Step::Lift | Step::Transport => {
                    let Some(body) = st.bodies.iter().find(|b| b.is_held()) else {
                        self.step = Step::Done;
                        continue;
                    };
                    let offset = body.pose - frame;
                    let z = sc.bin.max.z + self.clearance - offset.z;
                    let goal = if self.step == Step::Lift {
                        Vec3::new(frame.x, frame.y, z)
                    } else {
                        let c = sc.bin.center();
                        Vec3::new(c.x - offset.x, c.y - offset.y, z)
                    };
                    let a = Self::servo(&frame, &goal, sc);
                    let next = predict_ee(&st.ee, &a, sc);
                    if (goal - frame).norm() <= REACHED || next == st.ee {
                        self.step = if self.step == Step::Lift {
                            Step::Transport
                        } else {
                            Step::Release
                        };
                        continue;
                    }
                    return Ok(OperatorInput::new(a, 0.0, 0.0));
                }
                Step::Release => {
                    if !st.any_held() {
                        if !st.anything_falling(sc) {
                            self.step = Step::Done;
                            continue;
                        }
                        return Ok(OperatorInput::zero());
                    }
                    let (df, dp) = if self.tag.is_soft() {
                        (0.0, sc.adhesion.p_max - st.pressure)
                    } else {
                        (-st.force, 0.0)
                    };
                    return Ok(OperatorInput::new(Vec3::zeros(), df, dp));
                }
            }
        }
    }

    fn finished(&self) -> bool {
        self.step == Step::Done
    }
}
