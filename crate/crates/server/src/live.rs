//! Live teleoperation service: one operator connection at a time, one tick
//! per `dt` of wall-clock time.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use futures_util::{SinkExt, StreamExt};
use log::{info, warn};
use riso_core::session::TickRecord;
use riso_core::{Mode, OperatorInput, Scenario, Session};
use tokio::net::{TcpListener, TcpStream};
use tokio::time::MissedTickBehavior;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::WebSocketStream;

use crate::protocol::{self, ClientMsg, StateFrame};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub scenario: Scenario,
    pub mode: Mode,
    pub seed: u64,
    /// Tick once per received input instead of on the wall clock.
    pub lockstep: bool,
    /// Episode logs are written here on termination, reset, mode change and
    /// disconnect.
    pub log_dir: Option<PathBuf>,
}

struct Live {
    cfg: ServeConfig,
    session: Session,
    episode: u64,
    /// Most recent operator input; applied every tick until replaced.
    latched: OperatorInput,
    last: Option<TickRecord>,
}

impl Live {
    fn new(cfg: ServeConfig) -> Result<Self> {
        let session = Session::new(
            cfg.scenario.clone(),
            cfg.mode,
            cfg.seed,
            cfg.log_dir.is_some(),
        )?;
        Ok(Self {
            cfg,
            session,
            episode: 0,
            latched: OperatorInput::zero(),
            last: None,
        })
    }

    fn restart(&mut self, mode: Mode) -> Result<()> {
        self.save_log()?;
        self.cfg.mode = mode;
        self.session = Session::new(
            self.cfg.scenario.clone(),
            mode,
            self.cfg.seed,
            self.cfg.log_dir.is_some(),
        )?;
        self.episode += 1;
        self.latched = OperatorInput::zero();
        self.last = None;
        Ok(())
    }

    fn save_log(&self) -> Result<()> {
        let (Some(dir), Some(log)) = (&self.cfg.log_dir, self.session.log()) else {
            return Ok(());
        };
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("episode-{:04}.ndjson", self.episode));
        let file = std::fs::File::create(&path).with_context(|| path.display().to_string())?;
        log.write_ndjson(std::io::BufWriter::new(file))?;
        Ok(())
    }

    fn frame(&self) -> String {
        protocol::state_frame(&StateFrame::new(&self.session, self.last.as_ref()))
    }

    /// Advances one tick. Returns the frames to publish.
    fn step(&mut self, input: OperatorInput) -> Result<Vec<String>> {
        if self.session.status().is_some() {
            return Ok(Vec::new());
        }
        let rec = self.session.tick(input)?;
        self.last = Some(rec);
        let mut out = vec![self.frame()];
        if let Some(status) = self.session.check_termination(false) {
            self.session.finish(status);
            info!("episode {} ended: {status:?}", self.episode);
            self.save_log()?;
            out.push(protocol::metrics_frame(&self.session.metrics()));
        }
        Ok(out)
    }
}

type Ws = WebSocketStream<TcpStream>;

/// Serves until the listener fails. The episode persists across
/// connections.
pub async fn serve(listener: TcpListener, cfg: ServeConfig) -> Result<()> {
    let mut live = Live::new(cfg)?;
    info!("listening on {}", listener.local_addr()?);
    loop {
        let (stream, peer) = listener.accept().await?;
        let ws = match tokio_tungstenite::accept_async(stream).await {
            Ok(ws) => ws,
            Err(e) => {
                warn!("handshake with {peer} failed: {e}");
                continue;
            }
        };
        info!("operator connected from {peer}");
        if let Err(e) = session_loop(&listener, ws, &mut live).await {
            warn!("connection from {peer} ended with error: {e}");
        }
        // Input does not survive a disconnect.
        live.latched = OperatorInput::zero();
        live.save_log()?;
        info!(
            "operator {peer} disconnected, episode paused at tick {}",
            live.session.state().tick
        );
    }
}

async fn send_all(ws: &mut Ws, frames: Vec<String>) -> Result<()> {
    for f in frames {
        ws.send(Message::text(f)).await?;
    }
    Ok(())
}

async fn reject_busy(stream: TcpStream) {
    if let Ok(mut ws) = tokio_tungstenite::accept_async(stream).await {
        let _ = ws
            .send(Message::text(protocol::error_frame(
                "busy",
                "another operator is connected",
            )))
            .await;
        let _ = ws.close(None).await;
    }
}

async fn session_loop(listener: &TcpListener, mut ws: Ws, live: &mut Live) -> Result<()> {
    ws.send(Message::text(live.frame())).await?;
    let dt = Duration::from_secs_f64(live.session.scenario().physics.dt);
    let mut clock = tokio::time::interval(dt);
    clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let realtime = !live.cfg.lockstep;
    loop {
        tokio::select! {
            msg = ws.next() => {
                let Some(msg) = msg else { return Ok(()) };
                let text = match msg? {
                    Message::Text(t) => t,
                    Message::Close(_) => return Ok(()),
                    Message::Binary(_) => {
                        ws.send(Message::text(protocol::error_frame("malformed", "binary frames are not accepted"))).await?;
                        continue;
                    }
                    _ => continue,
                };
                match protocol::parse_client(text.as_str()) {
                    Ok(ClientMsg::Input(input)) => {
                        if live.cfg.lockstep {
                            if live.session.status().is_some() {
                                ws.send(Message::text(protocol::error_frame("finished", "episode is over; send reset"))).await?;
                            } else {
                                let frames = live.step(input)?;
                                send_all(&mut ws, frames).await?;
                            }
                        } else {
                            live.latched = input;
                        }
                    }
                    Ok(ClientMsg::Reset) => {
                        live.restart(live.cfg.mode)?;
                        ws.send(Message::text(live.frame())).await?;
                    }
                    Ok(ClientMsg::SetMode(mode)) => {
                        live.restart(mode)?;
                        ws.send(Message::text(live.frame())).await?;
                    }
                    Err(e) => {
                        ws.send(Message::text(protocol::error_frame(e.code, &e.msg))).await?;
                        if e.fatal {
                            let _ = ws.close(None).await;
                            return Ok(());
                        }
                    }
                }
            }
            _ = clock.tick(), if realtime => {
                let frames = live.step(live.latched)?;
                send_all(&mut ws, frames).await?;
            }
            accepted = listener.accept() => {
                if let Ok((stream, _)) = accepted {
                    tokio::spawn(reject_busy(stream));
                }
            }
        }
    }
}
