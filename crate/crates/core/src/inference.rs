//! Joint belief over (object, grasp type) and its Bayesian update from arm
//! commands under a noisily-optimal operator model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::world::{predict_ee, GraspTag, Scenario, SystemState, Vec3};

/// Noisily-optimal logit of a command that moves grasp frame `s_g` to
/// `s_next` for goal `o`: `β (|o - s_g|² - |o - s_next|²) / ℓ²`.
pub fn likelihood_logit(s_g: &Vec3, s_next: &Vec3, o: &Vec3, beta: f64, length_scale: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    beta * ((o - s_g).norm_squared() - (o - s_next).norm_squared()) / (length_scale * length_scale)
}

/// The null command followed by the 26 lattice directions, each at `v_max`.
/// Serves as the discrete action space of the operator model.
pub fn directions(v_max: f64) -> [Vec3; 27] {
    let mut out = [Vec3::zeros(); 27];
    let mut i = 1;
    for dx in -1..=1 {
        for dy in -1..=1 {
            for dz in -1..=1 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                out[i] = Vec3::new(dx as f64, dy as f64, dz as f64).normalize() * v_max;
                i += 1;
            }
        }
    }
    out
}

/// How command logits become per-step likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodModel {
    /// Divide by the sum over the direction set, so each hypothesis assigns
    /// a proper distribution over commands.
    #[default]
    Normalized,
    /// Use the raw logits, treating the normalizer as hypothesis-independent.
    Unnormalized,
}

/// Log of the normalizer of the command distribution for goal `o` and a
/// grasp frame at `ee + offset`, summed over the direction set.
pub fn log_partition(ee: &Vec3, offset: &Vec3, o: &Vec3, beta: f64, scenario: &Scenario) -> f64 {
    let ell = scenario.assistance.length_scale;
    let s = ee + offset;
    let mut l = [0.0; 27];
    for (li, d) in l.iter_mut().zip(directions(scenario.physics.v_max).iter()) {
        let next = predict_ee(ee, d, scenario) + offset;
        *li = likelihood_logit(&s, &next, o, beta, ell);
    }
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Per-step log-likelihoods of `a_h` for every (object, grasp) pair,
/// object-major in scenario order. A null command carries no evidence.
pub fn command_logits(state: &SystemState, a_h: &Vec3, beta: f64, scenario: &Scenario) -> Vec<f64> {
    let grasps = &scenario.gripper.grasp_types;
    let n = scenario.objects.len() * grasps.len();
    if *a_h == Vec3::zeros() || beta == 0.0 {
        return vec![0.0; n];
    }
    let ell = scenario.assistance.length_scale;
    let normalized = scenario.assistance.likelihood == LikelihoodModel::Normalized;
    let next_ee = predict_ee(&state.ee, a_h, scenario);
    let mut out = Vec::with_capacity(n);
    for o in 0..scenario.objects.len() {
        let target = state.object_target(o, scenario);
        for g in grasps {
            let s = state.ee + g.offset;
            let s_next = next_ee + g.offset;
            let mut l = likelihood_logit(&s, &s_next, &target, beta, ell);
            if normalized {
                l -= log_partition(&state.ee, &g.offset, &target, beta, scenario);
            }
            out.push(l);
        }
    }
    out
}

/// Probability table over O × G stored as natural logs. Entries are laid out
/// object-major with grasp types in scenario order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    log_p: Vec<f64>,
    n_grasps: usize,
}

impl Belief {
    pub fn uniform(n_objects: usize, n_grasps: usize) -> Self {
        let n = n_objects * n_grasps;
        Self {
            log_p: vec![-(n as f64).ln(); n],
            n_grasps,
        }
    }

    /// Builds a belief from nonnegative weights, normalizing them.
    pub fn from_weights(weights: &[f64], n_grasps: usize) -> Result<Self> {
        if n_grasps == 0 || weights.is_empty() || !weights.len().is_multiple_of(n_grasps) {
            return Err(SimError::InvalidParameter(
                "belief table must cover objects × grasp types".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SimError::InvalidParameter(
                "belief weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(SimError::BeliefUnderflow);
        }
        Ok(Self {
            log_p: weights.iter().map(|w| (w / total).ln()).collect(),
            n_grasps,
        })
    }

    /// The scenario prior, uniform when none is given.
    pub fn prior(scenario: &Scenario) -> Result<Self> {
        Self::from_weights(&prior_weights(scenario), scenario.gripper.grasp_types.len())
    }

    /// The prior with mass only on objects that still have a portion outside
    /// the bin. Falls back to the full prior when nothing remains.
    pub fn restricted_prior(scenario: &Scenario, state: &SystemState) -> Result<Self> {
        let ng = scenario.gripper.grasp_types.len();
        let mut w = prior_weights(scenario);
        for (o, chunk) in w.chunks_mut(ng).enumerate() {
            if !state.object_remaining(o, scenario) {
                chunk.fill(0.0);
            }
        }
        if w.iter().sum::<f64>() > 0.0 {
            Self::from_weights(&w, ng)
        } else {
            Self::prior(scenario)
        }
    }

    pub fn len(&self) -> usize {
        self.log_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_p.is_empty()
    }

    pub fn n_grasps(&self) -> usize {
        self.n_grasps
    }

    pub fn n_objects(&self) -> usize {
        self.log_p.len() / self.n_grasps
    }

    pub fn log_probabilities(&self) -> &[f64] {
        &self.log_p
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_p.iter().map(|l| l.exp()).collect()
    }

    pub fn prob(&self, object: usize, grasp: usize) -> f64 {
        self.log_p[object * self.n_grasps + grasp].exp()
    }

    /// Total mass on `object` over all grasp types.
    pub fn object_marginal(&self, object: usize) -> f64 {
        let ng = self.n_grasps;
        self.log_p[object * ng..(object + 1) * ng]
            .iter()
            .map(|l| l.exp())
            .sum()
    }

    /// Multiplies in `exp(logits)` and renormalizes in log space. A positive
    /// `epsilon` floors every entry that still has support.
    pub fn apply_logits(&self, logits: &[f64], epsilon: f64) -> Result<Self> {
        assert_eq!(logits.len(), self.log_p.len(), "logit table size");
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(SimError::NonFinite("belief logits"));
        }
        if logits.iter().all(|l| *l == 0.0) {
            return Ok(self.clone());
        }
        let mut lp: Vec<f64> = self.log_p.iter().zip(logits).map(|(a, b)| a + b).collect();
        let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(SimError::BeliefUnderflow);
        }
        let z: f64 = lp.iter().map(|l| (l - m).exp()).sum();
        let log_z = m + z.ln();
        for l in &mut lp {
            *l -= log_z;
        }
        let mut b = Self {
            log_p: lp,
            n_grasps: self.n_grasps,
        };
        if epsilon > 0.0 {
            b.apply_floor(epsilon);
        }
        Ok(b)
    }

    fn apply_floor(&mut self, epsilon: f64) {
        let log_eps = epsilon.ln();
        if !self.log_p.iter().any(|l| l.is_finite() && *l < log_eps) {
            return;
        }
        let mut p: Vec<f64> = self
            .log_p
            .iter()
            .map(|l| {
                if l.is_finite() {
                    l.exp().max(epsilon)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = p.iter().sum();
        for (l, v) in self.log_p.iter_mut().zip(p.iter_mut()) {
            *l = if *v > 0.0 {
                (*v / total).ln()
            } else {
                f64::NEG_INFINITY
            };
        }
    }

    /// One Bayesian step on the operator command `a_h`.
    pub fn update(
        &self,
        state: &SystemState,
        a_h: &Vec3,
        beta: f64,
        scenario: &Scenario,
    ) -> Result<Self> {
        if beta.is_nan() || beta < 0.0 {
            return Err(SimError::InvalidParameter(format!("beta = {beta}")));
        }
        let logits = command_logits(state, a_h, beta, scenario);
        self.apply_logits(&logits, scenario.assistance.epsilon)
    }

    /// Index of the most likely entry; ties go to the lexicographically
    /// smallest (object id, grasp tag).
    pub fn map_index(&self, scenario: &Scenario) -> usize {
        let key = |i: usize| {
            let o = &scenario.objects[i / self.n_grasps].id;
            let g = scenario.gripper.grasp_types[i % self.n_grasps]
                .tag
                .to_string();
            (o.clone(), g)
        };
        let mut best = 0;
        for i in 1..self.log_p.len() {
            let (a, b) = (self.log_p[i], self.log_p[best]);
            if a > b || (a == b && key(i) < key(best)) {
                best = i;
            }
        }
        best
    }

    /// Most likely (object index, grasp tag) with its probability.
    pub fn map_estimate(&self, scenario: &Scenario) -> (usize, GraspTag, f64) {
        let i = self.map_index(scenario);
        (
            i / self.n_grasps,
            scenario.gripper.grasp_types[i % self.n_grasps].tag,
            self.log_p[i].exp(),
        )
    }

    /// Flat `"objectId/graspTag"` → probability map.
    pub fn snapshot(&self, scenario: &Scenario) -> BTreeMap<String, f64> {
        labels(scenario)
            .into_iter()
            .zip(self.probabilities())
            .collect()
    }
}

/// `"objectId/graspTag"` labels in belief order.
pub fn labels(scenario: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    for o in &scenario.objects {
        for g in &scenario.gripper.grasp_types {
            out.push(format!("{}/{}", o.id, g.tag));
        }
    }
    out
}

fn prior_weights(scenario: &Scenario) -> Vec<f64> {
    match &scenario.prior {
        None => vec![1.0; scenario.objects.len() * scenario.gripper.grasp_types.len()],
        Some(table) => labels(scenario)
            .iter()
            .map(|k| table.get(k).copied().unwrap_or(0.0))
            .collect(),
    }
}
