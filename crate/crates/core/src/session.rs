//! Episode loop: operator input, belief update, assistance, blending, world
//! transition and grasp resolution, recorded as a replayable log.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::agents::{Observation, Operator, ScriptEntry, ScriptOperator};
use crate::assist::{assistance_action, blend};
use crate::error::{Result, SimError};
use crate::grasping::{GraspEvent, GraspEventKind};
use crate::inference::{labels, Belief};
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::world::{transition, OperatorInput, Scenario, SystemState, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Direct teleoperation: the arm follows the operator exactly.
    Human,
    /// Operator command blended with belief-driven assistance.
    Shared,
}

impl std::str::FromStr for Mode {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(Mode::Human),
            "shared" => Ok(Mode::Shared),
            other => Err(SimError::InvalidParameter(format!(
                "unknown mode `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Human => "human",
            Mode::Shared => "shared",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Every item rests in the bin.
    Completed,
    /// The time budget ran out.
    BudgetExhausted,
    /// The operator stopped and nothing is still falling.
    OperatorFinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub scenario_hash: String,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub mode: Mode,
    pub assist_enabled: bool,
    pub dt: f64,
    /// `"objectId/graspTag"` names of the logged belief entries.
    pub belief_labels: Vec<String>,
    pub scenario: Scenario,
    pub initial_state: SystemState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    /// State after the tick.
    pub state: SystemState,
    #[serde(rename = "aH")]
    pub a_h: Vec3,
    pub df: f64,
    #[serde(rename = "dP")]
    pub dp: f64,
    pub active: bool,
    #[serde(rename = "aR")]
    pub a_r: Vec3,
    pub a: Vec3,
    /// Belief after this tick's update, in `belief_labels` order.
    pub belief: Option<Vec<f64>>,
    pub events: Vec<GraspEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndRecord {
    pub status: Status,
    pub ticks: u64,
}

/// One NDJSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum LogRecord {
    Header(EpisodeHeader),
    Tick(TickRecord),
    End(EndRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub ticks: Vec<TickRecord>,
    pub end: Option<EndRecord>,
}

impl EpisodeLog {
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &LogRecord::Header(self.header.clone()))?;
        w.write_all(b"\n")?;
        for t in &self.ticks {
            serde_json::to_writer(&mut w, &TickRef(t))?;
            w.write_all(b"\n")?;
        }
        if let Some(end) = &self.end {
            serde_json::to_writer(&mut w, &LogRecord::End(end.clone()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)?;
        Ok(String::from_utf8(buf).expect("json is utf-8"))
    }

    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut ticks = Vec::new();
        let mut end = None;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord = serde_json::from_str(&line)
                .map_err(|e| SimError::MalformedLog(format!("line {}: {e}", n + 1)))?;
            match rec {
                LogRecord::Header(h) if header.is_none() && ticks.is_empty() => header = Some(h),
                LogRecord::Tick(t) if header.is_some() && end.is_none() => ticks.push(t),
                LogRecord::End(e) if header.is_some() && end.is_none() => end = Some(e),
                _ => {
                    return Err(SimError::MalformedLog(format!(
                        "line {}: record out of order",
                        n + 1
                    )))
                }
            }
        }
        let header = header.ok_or(SimError::EmptyLog)?;
        for (i, t) in ticks.iter().enumerate() {
            if t.tick != i as u64 + 1 {
                return Err(SimError::MalformedLog(format!(
                    "tick {} found where {} was expected",
                    t.tick,
                    i + 1
                )));
            }
        }
        Ok(Self { header, ticks, end })
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        Self::read_ndjson(text.as_bytes())
    }

    /// The recorded operator inputs as a script.
    pub fn script(&self) -> Vec<ScriptEntry> {
        self.ticks
            .iter()
            .map(|t| ScriptEntry {
                t: (t.tick - 1) as f64 * self.header.dt,
                a_h: [t.a_h.x, t.a_h.y, t.a_h.z],
                df: t.df,
                dp: t.dp,
            })
            .collect()
    }
}

/// Serializes a tick record inside the tagged envelope without cloning it.
struct TickRef<'a>(&'a TickRecord);

impl Serialize for TickRef<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Tagged<'a> {
            #[serde(rename = "type")]
            kind: &'static str,
            #[serde(flatten)]
            rec: &'a TickRecord,
        }
        Tagged {
            kind: "tick",
            rec: self.0,
        }
        .serialize(s)
    }
}

/// Live episode. Owns the authoritative state and belief.
pub struct Session {
    scenario: Scenario,
    mode: Mode,
    seed: u64,
    state: SystemState,
    belief: Option<Belief>,
    last_action: Vec3,
    metrics: MetricsAccumulator,
    log: Option<EpisodeLog>,
    status: Option<Status>,
}

impl Session {
    /// New episode. `record` keeps every tick in memory for the log.
    pub fn new(scenario: Scenario, mode: Mode, seed: u64, record: bool) -> Result<Self> {
        scenario.validate()?;
        let state = SystemState::initial(&scenario);
        let belief = match mode {
            Mode::Shared => Some(Belief::prior(&scenario)?),
            Mode::Human => None,
        };
        let log = record.then(|| EpisodeLog {
            header: header(&scenario, mode, seed, &state),
            ticks: Vec::new(),
            end: None,
        });
        Ok(Self {
            scenario,
            mode,
            seed,
            state,
            belief,
            last_action: Vec3::zeros(),
            metrics: MetricsAccumulator::default(),
            log,
            status: None,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn belief(&self) -> Option<&Belief> {
        self.belief.as_ref()
    }

    pub fn status(&self) -> Option<Status> {
        self.status
    }

    pub fn header(&self) -> EpisodeHeader {
        header(
            &self.scenario,
            self.mode,
            self.seed,
            &SystemState::initial(&self.scenario),
        )
    }

    fn assist_active(&self) -> bool {
        self.mode == Mode::Shared && self.scenario.assistance.alpha < 1.0
    }

    pub fn observation(&self) -> Observation<'_> {
        Observation {
            scenario: &self.scenario,
            state: &self.state,
            belief: self.belief.as_ref(),
            assist_active: self.assist_active(),
            last_action: self.last_action,
        }
    }

    /// Terminal status reached before the next tick, if any.
    pub fn check_termination(&self, operator_finished: bool) -> Option<Status> {
        let (sc, st) = (&self.scenario, &self.state);
        if st.all_binned(sc) {
            Some(Status::Completed)
        } else if st.tick >= sc.budget_ticks() {
            Some(Status::BudgetExhausted)
        } else if operator_finished && !st.anything_falling(sc) {
            Some(Status::OperatorFinished)
        } else {
            None
        }
    }

    /// Advances one tick on `input`.
    pub fn tick(&mut self, input: OperatorInput) -> Result<TickRecord> {
        let sc = &self.scenario;
        let input = input.ingest(sc.physics.v_max)?;
        let assisting = self.mode == Mode::Shared && !self.state.any_held();
        let (a_r, alpha) = match (&mut self.belief, assisting) {
            (Some(b), true) => {
                *b = b.update(&self.state, &input.a_h, sc.assistance.beta, sc)?;
                (assistance_action(b, &self.state, sc), sc.assistance.alpha)
            }
            _ => (Vec3::zeros(), 1.0),
        };
        let a = blend(&input.a_h, &a_r, alpha, sc.physics.v_max)?;
        let (next, events) = transition(&self.state, &a, input.df, input.dp, sc)?;
        let released = events.iter().any(|e| {
            matches!(
                e.kind,
                GraspEventKind::SoftDetach | GraspEventKind::RigidDetach
            )
        });
        if released && self.belief.is_some() {
            self.belief = Some(Belief::restricted_prior(sc, &next)?);
        }
        self.metrics
            .observe(&self.state.ee, &next.ee, input.active, sc);
        self.state = next;
        self.last_action = a;
        let rec = TickRecord {
            tick: self.state.tick,
            time: self.state.time,
            state: self.state.clone(),
            a_h: input.a_h,
            df: input.df,
            dp: input.dp,
            active: input.active,
            a_r,
            a,
            belief: self.belief.as_ref().map(Belief::probabilities),
            events,
        };
        if let Some(log) = &mut self.log {
            log.ticks.push(rec.clone());
        }
        Ok(rec)
    }

    /// Marks the episode finished.
    pub fn finish(&mut self, status: Status) {
        self.status = Some(status);
        if let Some(log) = &mut self.log {
            log.end = Some(EndRecord {
                status,
                ticks: self.state.tick,
            });
        }
    }

    pub fn metrics(&self) -> MetricsReport {
        self.metrics.report(&self.state, &self.scenario)
    }

    pub fn log(&self) -> Option<&EpisodeLog> {
        self.log.as_ref()
    }

    pub fn into_log(self) -> Option<EpisodeLog> {
        self.log
    }

    /// Runs `operator` to a terminal status, calling `on_tick` after every
    /// tick.
    pub fn run_with<F>(&mut self, operator: &mut dyn Operator, mut on_tick: F) -> Result<Status>
    where
        F: FnMut(&Session, &TickRecord),
    {
        loop {
            if let Some(status) = self.check_termination(operator.finished()) {
                self.finish(status);
                return Ok(status);
            }
            let input = operator.act(&self.observation())?;
            let rec = self.tick(input)?;
            on_tick(self, &rec);
        }
    }

    pub fn run(&mut self, operator: &mut dyn Operator) -> Result<Status> {
        self.run_with(operator, |_, _| {})
    }
}

fn header(scenario: &Scenario, mode: Mode, seed: u64, initial: &SystemState) -> EpisodeHeader {
    let shared = mode == Mode::Shared;
    EpisodeHeader {
        scenario_hash: scenario.hash(),
        seed,
        alpha: if shared {
            scenario.assistance.alpha
        } else {
            1.0
        },
        beta: scenario.assistance.beta,
        mode,
        assist_enabled: shared,
        dt: scenario.physics.dt,
        belief_labels: if shared { labels(scenario) } else { Vec::new() },
        scenario: scenario.clone(),
        initial_state: initial.clone(),
    }
}

/// Result of a finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub status: Status,
    pub metrics: MetricsReport,
    pub final_state: SystemState,
    pub log: Option<EpisodeLog>,
}

pub fn run_episode(
    scenario: &Scenario,
    operator: &mut dyn Operator,
    mode: Mode,
    seed: u64,
    record: bool,
) -> Result<EpisodeOutcome> {
    let mut s = Session::new(scenario.clone(), mode, seed, record)?;
    let status = s.run(operator)?;
    Ok(EpisodeOutcome {
        status,
        metrics: s.metrics(),
        final_state: s.state.clone(),
        log: s.log,
    })
}

/// First disagreement between a log and its replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub tick: u64,
    pub what: String,
}

/// Re-runs a recorded episode from its header and input columns and
/// compares every tick record. Returns the replayed log and the first
/// mismatch, if any.
pub fn replay(log: &EpisodeLog) -> Result<(EpisodeLog, Option<Mismatch>)> {
    let h = &log.header;
    if h.scenario.hash() != h.scenario_hash {
        return Err(SimError::MalformedLog(
            "scenario hash does not match embedded scenario".into(),
        ));
    }
    let mut op = ScriptOperator::new(&log.script(), h.dt)?.with_end_tick(log.ticks.len() as u64);
    let mut s = Session::new(h.scenario.clone(), h.mode, h.seed, true)?;
    s.run(&mut op)?;
    let replayed = s.into_log().expect("recording session");
    Ok((replayed.clone(), first_mismatch(log, &replayed)))
}

/// Re-simulates only the world from the logged executed actions and channel
/// increments, comparing each state snapshot.
pub fn resimulate(log: &EpisodeLog) -> Result<Option<Mismatch>> {
    let sc = &log.header.scenario;
    let mut state = log.header.initial_state.clone();
    if state != SystemState::initial(sc) {
        return Ok(Some(Mismatch {
            tick: 0,
            what: "initial state".into(),
        }));
    }
    for t in &log.ticks {
        let (next, events) = transition(&state, &t.a, t.df, t.dp, sc)?;
        if next != t.state {
            return Ok(Some(Mismatch {
                tick: t.tick,
                what: "state".into(),
            }));
        }
        if events != t.events {
            return Ok(Some(Mismatch {
                tick: t.tick,
                what: "events".into(),
            }));
        }
        state = next;
    }
    Ok(None)
}

pub fn first_mismatch(a: &EpisodeLog, b: &EpisodeLog) -> Option<Mismatch> {
    if a.header != b.header {
        return Some(Mismatch {
            tick: 0,
            what: "header".into(),
        });
    }
    for (x, y) in a.ticks.iter().zip(&b.ticks) {
        if x != y {
            let what = if x.state != y.state {
                "state"
            } else if x.a != y.a {
                "action"
            } else if x.belief != y.belief {
                "belief"
            } else {
                "record"
            };
            return Some(Mismatch {
                tick: x.tick,
                what: what.into(),
            });
        }
    }
    if a.ticks.len() != b.ticks.len() {
        return Some(Mismatch {
            tick: a.ticks.len().min(b.ticks.len()) as u64 + 1,
            what: "length".into(),
        });
    }
    if a.end != b.end {
        return Some(Mismatch {
            tick: a.ticks.len() as u64,
            what: "end".into(),
        });
    }
    None
}
