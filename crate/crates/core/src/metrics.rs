//! Per-episode task metrics: success, and grasp time, grasp distance and
//! input time counted only while the end-effector is over the table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::session::EpisodeLog;
use crate::world::{Scenario, SystemState, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean share of each object's items resting in the bin, percent.
    pub success_rate: f64,
    /// Seconds over the table per object.
    pub grasp_time: f64,
    /// End-effector path length over the table per object, m.
    pub grasp_distance: f64,
    /// Seconds of operator input over the table per object.
    pub input_time: f64,
    /// Percent of each object's items in the bin, keyed by object id.
    pub per_object: BTreeMap<String, f64>,
    pub ticks: u64,
}

/// Running sums over ticks; shared by the live session and the offline
/// log computation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsAccumulator {
    over_table_ticks: u64,
    input_ticks: u64,
    distance: f64,
    ticks: u64,
}

impl MetricsAccumulator {
    /// Adds one tick that moved the end-effector from `before` to `after`.
    pub fn observe(&mut self, before: &Vec3, after: &Vec3, active: bool, scenario: &Scenario) {
        self.ticks += 1;
        if !scenario.table.contains_xy(before) {
            return;
        }
        self.over_table_ticks += 1;
        self.distance += (after - before).norm();
        if active {
            self.input_ticks += 1;
        }
    }

    pub fn report(&self, final_state: &SystemState, scenario: &Scenario) -> MetricsReport {
        let n = scenario.objects.len() as f64;
        let dt = scenario.physics.dt;
        let per_object: BTreeMap<String, f64> = scenario
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let share = final_state.items_in_bin(i, scenario) as f64 / o.count as f64;
                (o.id.clone(), 100.0 * share)
            })
            .collect();
        let success_rate = per_object.values().sum::<f64>() / n;
        MetricsReport {
            success_rate,
            grasp_time: self.over_table_ticks as f64 * dt / n,
            grasp_distance: self.distance / n,
            input_time: self.input_ticks as f64 * dt / n,
            per_object,
            ticks: self.ticks,
        }
    }
}

/// Metrics of a recorded episode, computed from the logged states alone.
pub fn compute_metrics(log: &EpisodeLog) -> Result<MetricsReport> {
    if log.ticks.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let scenario = &log.header.scenario;
    let mut acc = MetricsAccumulator::default();
    let mut before = log.header.initial_state.ee;
    for t in &log.ticks {
        acc.observe(&before, &t.state.ee, t.active, scenario);
        before = t.state.ee;
    }
    let last = &log.ticks.last().expect("nonempty").state;
    Ok(acc.report(last, scenario))
}
