//! Wire format: JSON text frames wrapped in `{v, type, payload}`.

use std::collections::BTreeMap;

use riso_core::grasping::GraspEvent;
use riso_core::session::TickRecord;
use riso_core::world::GraspTag;
use riso_core::{Mode, OperatorInput, Session, Vec3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u64,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMsg {
    Input(OperatorInput),
    Reset,
    SetMode(Mode),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct InputPayload {
    #[serde(rename = "aH")]
    a_h: [f64; 3],
    #[serde(default)]
    df: f64,
    #[serde(default, rename = "dP")]
    dp: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct ModePayload {
    mode: String,
}

/// A rejected client frame. `fatal` errors close the connection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolError {
    pub code: &'static str,
    pub msg: String,
    pub fatal: bool,
}

impl ProtocolError {
    fn new(code: &'static str, msg: impl Into<String>) -> Self {
        Self {
            code,
            msg: msg.into(),
            fatal: false,
        }
    }
}

pub fn parse_client(text: &str) -> Result<ClientMsg, ProtocolError> {
    let raw: Value = serde_json::from_str(text)
        .map_err(|e| ProtocolError::new("malformed", format!("not JSON: {e}")))?;
    match raw.get("v").and_then(Value::as_u64) {
        Some(PROTOCOL_VERSION) => {}
        other => {
            return Err(ProtocolError {
                code: "version",
                msg: format!("unsupported protocol version {other:?}, expected {PROTOCOL_VERSION}"),
                fatal: true,
            })
        }
    }
    let env: Envelope =
        serde_json::from_value(raw).map_err(|e| ProtocolError::new("malformed", e.to_string()))?;
    match env.kind.as_str() {
        "input" => {
            let p: InputPayload = serde_json::from_value(env.payload)
                .map_err(|e| ProtocolError::new("malformed", format!("input: {e}")))?;
            let input = OperatorInput::new(Vec3::from(p.a_h), p.df, p.dp);
            if !input
                .a_h
                .iter()
                .chain([&input.df, &input.dp])
                .all(|v| v.is_finite())
            {
                return Err(ProtocolError::new("malformed", "input: non-finite value"));
            }
            Ok(ClientMsg::Input(input))
        }
        "reset" => Ok(ClientMsg::Reset),
        "set_mode" => {
            let p: ModePayload = serde_json::from_value(env.payload)
                .map_err(|e| ProtocolError::new("malformed", format!("set_mode: {e}")))?;
            p.mode
                .parse()
                .map(ClientMsg::SetMode)
                .map_err(|e| ProtocolError::new("malformed", e.to_string()))
        }
        other => Err(ProtocolError::new(
            "unknown_type",
            format!("unknown message type `{other}`"),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFrame {
    pub id: String,
    pub pose: Vec3,
    pub count: u32,
    pub attached: Option<GraspTag>,
}

/// Snapshot published after every tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub tick: u64,
    pub time: f64,
    pub mode: Mode,
    pub ee: Vec3,
    pub f: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub objects: Vec<ObjectFrame>,
    /// Posterior keyed by `object/tag`; empty in human mode.
    pub belief: BTreeMap<String, f64>,
    #[serde(rename = "aH")]
    pub a_h: Vec3,
    #[serde(rename = "aR")]
    pub a_r: Vec3,
    pub a: Vec3,
    pub events: Vec<GraspEvent>,
}

impl StateFrame {
    /// Frame for the session's current state; `rec` is the tick that
    /// produced it, absent right after a reset.
    pub fn new(session: &Session, rec: Option<&TickRecord>) -> Self {
        let sc = session.scenario();
        let st = session.state();
        let objects = st
            .bodies
            .iter()
            .map(|b| ObjectFrame {
                id: sc.objects[b.object].id.clone(),
                pose: b.pose,
                count: b.count,
                attached: b.hold.as_ref().map(|h| h.tag),
            })
            .collect();
        let belief = session
            .belief()
            .map(|b| {
                riso_core::inference::labels(sc)
                    .into_iter()
                    .zip(b.probabilities())
                    .collect()
            })
            .unwrap_or_default();
        let zero = Vec3::zeros();
        Self {
            tick: st.tick,
            time: st.time,
            mode: session.mode(),
            ee: st.ee,
            f: st.force,
            p: st.pressure,
            objects,
            belief,
            a_h: rec.map_or(zero, |r| r.a_h),
            a_r: rec.map_or(zero, |r| r.a_r),
            a: rec.map_or(zero, |r| r.a),
            events: rec.map(|r| r.events.clone()).unwrap_or_default(),
        }
    }
}

fn frame(kind: &str, payload: impl Serialize) -> String {
    let env = Envelope {
        v: PROTOCOL_VERSION,
        kind: kind.to_string(),
        payload: serde_json::to_value(payload).expect("frame payload serializes"),
    };
    serde_json::to_string(&env).expect("envelope serializes")
}

pub fn state_frame(f: &StateFrame) -> String {
    frame("state", f)
}

pub fn metrics_frame(m: &riso_core::MetricsReport) -> String {
    frame("metrics", m)
}

pub fn error_frame(code: &str, msg: &str) -> String {
    frame("error", serde_json::json!({ "code": code, "msg": msg }))
}

pub fn input_frame(input: &OperatorInput) -> String {
    frame(
        "input",
        serde_json::json!({ "aH": [input.a_h.x, input.a_h.y, input.a_h.z], "df": input.df, "dP": input.dp }),
    )
}

pub fn reset_frame() -> String {
    frame("reset", Value::Null)
}

pub fn set_mode_frame(mode: Mode) -> String {
    frame("set_mode", serde_json::json!({ "mode": mode.to_string() }))
}

/// Parses a server frame into its type and payload.
pub fn parse_server(text: &str) -> Result<(String, Value), serde_json::Error> {
    let env: Envelope = serde_json::from_str(text)?;
    Ok((env.kind, env.payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_round_trip() {
        let i = OperatorInput::new(Vec3::new(0.1, -0.2, 0.0), 1.5, -1.0);
        assert_eq!(parse_client(&input_frame(&i)).unwrap(), ClientMsg::Input(i));
    }

    #[test]
    fn missing_gripper_channels_default_to_zero() {
        let m = parse_client(r#"{"v":1,"type":"input","payload":{"aH":[0,0,0]}}"#).unwrap();
        assert_eq!(m, ClientMsg::Input(OperatorInput::zero()));
    }

    #[test]
    fn version_mismatch_is_fatal() {
        let e = parse_client(r#"{"v":2,"type":"reset"}"#).unwrap_err();
        assert!(e.fatal);
        assert_eq!(e.code, "version");
    }

    #[test]
    fn malformed_frames_are_recoverable() {
        for text in [
            "nope",
            r#"{"v":1,"type":"input","payload":{"aH":[0,0]}}"#,
            r#"{"v":1,"type":"set_mode","payload":{"mode":"robot"}}"#,
            r#"{"v":1,"type":"dance"}"#,
        ] {
            let e = parse_client(text).unwrap_err();
            assert!(!e.fatal, "{text}");
        }
    }

    #[test]
    fn control_messages() {
        assert_eq!(parse_client(&reset_frame()).unwrap(), ClientMsg::Reset);
        assert_eq!(
            parse_client(&set_mode_frame(Mode::Human)).unwrap(),
            ClientMsg::SetMode(Mode::Human)
        );
    }
}
