use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use riso_core::agents::{Operator, ScriptEntry, ScriptOperator};
use riso_core::{scenarios, EpisodeLog, Mode, OperatorInput, Session, Vec3};
use riso_server::live::{serve, ServeConfig};
use riso_server::protocol::{self, StateFrame};
use serde_json::Value;
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start(mode: Mode, lockstep: bool, log_dir: Option<&Path>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let cfg = ServeConfig {
        scenario: scenarios::canonical(),
        mode,
        seed: 11,
        lockstep,
        log_dir: log_dir.map(Path::to_path_buf),
    };
    tokio::spawn(serve(listener, cfg));
    format!("ws://{addr}")
}

async fn connect(url: &str) -> Client {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn recv(ws: &mut Client) -> Option<(String, Value)> {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("server went silent")?;
        match msg.ok()? {
            Message::Text(t) => return Some(protocol::parse_server(t.as_str()).unwrap()),
            Message::Close(_) => return None,
            _ => continue,
        }
    }
}

async fn recv_state(ws: &mut Client) -> StateFrame {
    let (kind, payload) = recv(ws).await.expect("connection closed");
    assert_eq!(kind, "state", "{payload}");
    serde_json::from_value(payload).unwrap()
}

async fn send(ws: &mut Client, text: String) {
    ws.send(Message::text(text)).await.unwrap();
}

fn script() -> Vec<ScriptEntry> {
    let e = |t: f64, a: [f64; 3], df: f64, dp: f64| ScriptEntry { t, a_h: a, df, dp };
    vec![
        e(0.0, [0.2, -0.1, 0.0], 0.0, 0.0),
        e(0.5, [0.0, 0.0, -0.25], 0.0, -1.0),
        e(1.0, [-0.1, 0.3, 0.05], 2.0, 0.0),
        e(1.6, [0.0, 0.0, 0.0], 0.0, 0.5),
    ]
}

async fn wait_for_log(path: &Path, ticks: usize) -> EpisodeLog {
    for _ in 0..200 {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(log) = EpisodeLog::from_ndjson(&text) {
                if log.ticks.len() == ticks {
                    return log;
                }
            }
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("no log with {ticks} ticks at {}", path.display());
}

#[tokio::test]
async fn socket_session_matches_headless_run() {
    let dir = tempdir("transparency");
    let url = start(Mode::Shared, true, Some(&dir)).await;
    let mut ws = connect(&url).await;
    assert_eq!(recv_state(&mut ws).await.tick, 0);

    let sc = scenarios::canonical();
    let mut op = ScriptOperator::new(&script(), sc.physics.dt).unwrap();
    let mut headless = Session::new(sc.clone(), Mode::Shared, 11, true).unwrap();
    let mut metrics = None;
    while !op.finished() {
        let input = op.act(&headless.observation()).unwrap();
        headless.tick(input).unwrap();
        send(&mut ws, protocol::input_frame(&input)).await;
        let frame = recv_state(&mut ws).await;
        assert_eq!(frame.tick, headless.state().tick);
        assert_eq!(frame.ee, headless.state().ee);
        if headless.check_termination(false).is_some() {
            metrics = recv(&mut ws).await;
        }
    }
    assert!(metrics.is_none());
    ws.close(None).await.unwrap();

    let ticks = headless.state().tick as usize;
    let remote = wait_for_log(&dir.join("episode-0000.ndjson"), ticks).await;
    let local = headless.into_log().unwrap();
    assert_eq!(remote.header, local.header);
    assert_eq!(remote.ticks, local.ticks);
    assert_eq!(
        riso_core::compute_metrics(&remote).unwrap(),
        riso_core::compute_metrics(&local).unwrap()
    );
}

#[tokio::test]
async fn second_operator_is_turned_away() {
    let url = start(Mode::Shared, true, None).await;
    let mut first = connect(&url).await;
    recv_state(&mut first).await;
    let mut second = connect(&url).await;
    let (kind, payload) = recv(&mut second).await.unwrap();
    assert_eq!(kind, "error");
    assert_eq!(payload["code"], "busy");
    assert!(recv(&mut second).await.is_none());

    send(&mut first, protocol::input_frame(&OperatorInput::zero())).await;
    assert_eq!(recv_state(&mut first).await.tick, 1);
}

#[tokio::test]
async fn malformed_frames_get_errors_and_the_session_survives() {
    let url = start(Mode::Human, true, None).await;
    let mut ws = connect(&url).await;
    recv_state(&mut ws).await;
    for bad in [
        "{not json".to_string(),
        r#"{"v":1,"type":"input","payload":{"aH":"fast"}}"#.to_string(),
        r#"{"v":1,"type":"teleport"}"#.to_string(),
    ] {
        send(&mut ws, bad).await;
        let (kind, _) = recv(&mut ws).await.unwrap();
        assert_eq!(kind, "error");
    }
    send(
        &mut ws,
        protocol::input_frame(&OperatorInput::new(Vec3::new(0.25, 0.0, 0.0), 0.0, 0.0)),
    )
    .await;
    let f = recv_state(&mut ws).await;
    assert_eq!(f.tick, 1);
    assert!((f.ee.x - 0.0125).abs() < 1e-12);
    assert!(f.belief.is_empty());
}

#[tokio::test]
async fn version_mismatch_closes_the_connection() {
    let url = start(Mode::Shared, true, None).await;
    let mut ws = connect(&url).await;
    recv_state(&mut ws).await;
    send(&mut ws, r#"{"v":7,"type":"reset"}"#.to_string()).await;
    let (kind, payload) = recv(&mut ws).await.unwrap();
    assert_eq!(kind, "error");
    assert_eq!(payload["code"], "version");
    assert!(recv(&mut ws).await.is_none());
}

#[tokio::test]
async fn reset_and_mode_switch_start_a_new_episode() {
    let url = start(Mode::Shared, true, None).await;
    let mut ws = connect(&url).await;
    let f = recv_state(&mut ws).await;
    assert_eq!(f.belief.len(), 9);
    let sum: f64 = f.belief.values().sum();
    assert!((sum - 1.0).abs() < 1e-9);

    for _ in 0..3 {
        send(&mut ws, protocol::input_frame(&OperatorInput::zero())).await;
        recv_state(&mut ws).await;
    }
    send(&mut ws, protocol::reset_frame()).await;
    let f = recv_state(&mut ws).await;
    assert_eq!((f.tick, f.mode), (0, Mode::Shared));

    send(&mut ws, protocol::set_mode_frame(Mode::Human)).await;
    let f = recv_state(&mut ws).await;
    assert_eq!((f.tick, f.mode), (0, Mode::Human));
    assert!(f.belief.is_empty());
}

#[tokio::test]
async fn realtime_latches_input_and_pauses_on_disconnect() {
    let url = start(Mode::Human, false, None).await;
    let mut ws = connect(&url).await;
    recv_state(&mut ws).await;
    send(
        &mut ws,
        protocol::input_frame(&OperatorInput::new(Vec3::new(0.2, 0.0, 0.0), 0.0, 0.0)),
    )
    .await;
    let mut last = recv_state(&mut ws).await;
    while last.tick < 6 {
        last = recv_state(&mut ws).await;
    }
    // The latched command keeps moving the arm every tick.
    assert!(last.ee.x > 0.0);
    assert_eq!(last.a_h, Vec3::new(0.2, 0.0, 0.0));
    ws.close(None).await.unwrap();
    drop(ws);

    tokio::time::sleep(Duration::from_millis(300)).await;
    let mut ws = connect(&url).await;
    let resumed = recv_state(&mut ws).await;
    // At most the ticks in flight while the close was processed.
    assert!(
        resumed.tick <= last.tick + 2,
        "{} vs {}",
        resumed.tick,
        last.tick
    );
    let next = recv_state(&mut ws).await;
    assert_eq!(next.tick, resumed.tick + 1);
    assert_eq!(next.a_h, Vec3::zeros());
}

fn tempdir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("riso-socket-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
