//! Live WebSocket session for a running balancing simulation.
//!
//! The simulation runs on its own thread, paced to the wall clock. Frames are
//! published to every connected viewer through a broadcast channel (slow
//! viewers lose frames, the loop never waits); commands from any viewer go
//! through a mailbox that the loop drains at tick boundaries.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use balance_core::simloop::{ReferenceSource, Scenario, Simulation, StepResult};
use balance_core::telemetry::{decode_command, encode_error, encode_frame, InboundCommand, TelemetryFrame};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc as tmpsc};
use tokio::task::JoinHandle;

pub const DEFAULT_PORT: u16 = 8765;
pub const DEFAULT_PUBLISH_HZ: f64 = 50.0;
pub const ROUTE: &str = "/ws";

/// Frames buffered per viewer before the oldest are dropped.
const FRAME_BUFFER: usize = 64;
/// Falling further behind the wall clock than this re-anchors the schedule
/// instead of running a catch-up burst.
const MAX_LAG: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Scenario(#[from] balance_core::Error),
    #[error("publish rate must be positive and finite, got {0}")]
    PublishRate(f64),
    #[error("server runtime failed: {0}")]
    Runtime(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub host: IpAddr,
    pub port: u16,
    pub publish_hz: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            publish_hz: DEFAULT_PUBLISH_HZ,
        }
    }
}

struct Envelope {
    command: InboundCommand,
    reply: tmpsc::UnboundedSender<String>,
}

#[derive(Clone)]
struct Shared {
    frames: broadcast::Sender<String>,
    commands: mpsc::Sender<Envelope>,
    range: f64,
}

/// A running session. Dropping it without calling [`Server::shutdown`] leaves
/// the simulation thread stopped but not joined.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<thread::JoinHandle<()>>,
    http: JoinHandle<()>,
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Waits until the listener task ends (normally never).
    pub async fn wait(&mut self) {
        let _ = (&mut self.http).await;
    }

    pub async fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.http.abort();
        if let Some(sim) = self.sim.take() {
            let _ = tokio::task::spawn_blocking(move || sim.join()).await;
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.http.abort();
    }
}

/// Binds the listener and starts the simulation thread. Must be called from
/// within a Tokio runtime. A non-live reference source is replaced by a live
/// one so that viewers can steer the robot.
pub async fn start(mut scenario: Scenario, options: ServeOptions) -> Result<Server, ServeError> {
    if !(options.publish_hz.is_finite() && options.publish_hz > 0.0) {
        return Err(ServeError::PublishRate(options.publish_hz));
    }
    let range = match scenario.reference {
        ReferenceSource::Live { range, .. } => range,
        _ => {
            scenario.reference = ReferenceSource::live(ReferenceSource::DEFAULT_LIVE_RANGE);
            ReferenceSource::DEFAULT_LIVE_RANGE
        }
    };
    let sim = Simulation::new(scenario)?;

    let addr = SocketAddr::new(options.host, options.port);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })?;
    let addr = listener.local_addr().map_err(ServeError::Runtime)?;

    let (frames, _) = broadcast::channel(FRAME_BUFFER);
    let (commands, mailbox) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));

    let publish_every = ((1.0 / (options.publish_hz * sim.scenario().tick)).round() as u64).max(1);
    let sim_thread = {
        let frames = frames.clone();
        let stop = Arc::clone(&stop);
        thread::Builder::new()
            .name("balance-sim".into())
            .spawn(move || run_loop(sim, publish_every, frames, mailbox, stop))
            .map_err(ServeError::Runtime)?
    };

    let app = Router::new().route(ROUTE, get(upgrade)).with_state(Shared {
        frames,
        commands,
        range,
    });
    let http = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("telemetry listener stopped: {e}");
        }
    });
    log::info!("telemetry listening on ws://{addr}{ROUTE}");
    Ok(Server {
        addr,
        stop,
        sim: Some(sim_thread),
        http,
    })
}

/// Runs a session on a fresh runtime until Ctrl-C.
pub fn serve_blocking(scenario: Scenario, options: ServeOptions) -> Result<(), ServeError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(ServeError::Runtime)?;
    runtime.block_on(async {
        let mut server = start(scenario, options).await?;
        tokio::select! {
            _ = server.wait() => {}
            _ = tokio::signal::ctrl_c() => log::info!("interrupted, shutting down"),
        }
        server.shutdown().await;
        Ok(())
    })
}

fn run_loop(
    mut sim: Simulation,
    publish_every: u64,
    frames: broadcast::Sender<String>,
    mailbox: mpsc::Receiver<Envelope>,
    stop: Arc<AtomicBool>,
) {
    let tick = Duration::from_secs_f64(sim.scenario().tick);
    let mut paused = false;
    let mut anchor = Instant::now();
    let mut ticks_since_anchor: u32 = 0;

    while !stop.load(Ordering::Relaxed) {
        for Envelope { command, reply } in mailbox.try_iter() {
            let outcome = match command {
                InboundCommand::SetReference(v) => {
                    sim.set_reference(v);
                    Ok(())
                }
                InboundCommand::SetGains(g) => sim.set_gains(g),
                InboundCommand::Pause => {
                    paused = true;
                    Ok(())
                }
                InboundCommand::Resume => {
                    paused = false;
                    Ok(())
                }
                InboundCommand::Reset => sim.reset(),
            };
            if let Err(e) = outcome {
                let _ = reply.send(encode_error(&e.to_string()));
            }
        }

        if paused || sim.has_fallen() {
            thread::sleep(tick);
            anchor = Instant::now();
            ticks_since_anchor = 0;
            continue;
        }

        let index = sim.tick_index();
        match sim.step_once() {
            Ok(StepResult::Running(row)) => {
                if index.is_multiple_of(publish_every) {
                    let _ = frames.send(encode_frame(&TelemetryFrame::from(&row)));
                }
            }
            Ok(StepResult::Fell(row)) => {
                let _ = frames.send(encode_frame(&TelemetryFrame::from(&row)));
                let _ = frames.send(encode_error(&format!(
                    "fell over at t={:.3} theta={:.4}; send reset to restart",
                    row.t, row.state.theta
                )));
            }
            Err(e) => {
                log::error!("simulation stopped: {e}");
                let _ = frames.send(encode_error(&format!("simulation stopped: {e}; send reset to restart")));
                paused = true;
                continue;
            }
        }

        ticks_since_anchor += 1;
        let deadline = anchor + tick * ticks_since_anchor;
        let now = Instant::now();
        if deadline > now {
            thread::sleep(deadline - now);
        } else if now - deadline > MAX_LAG {
            anchor = now;
            ticks_since_anchor = 0;
        }
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> Response {
    ws.on_upgrade(move |socket| viewer(socket, shared))
}

async fn viewer(mut socket: WebSocket, shared: Shared) {
    let mut frames = shared.frames.subscribe();
    let (reply, mut replies) = tmpsc::unbounded_channel();
    loop {
        let outgoing = tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => match decode_command(text.as_str(), shared.range) {
                    Ok(command) => {
                        if shared.commands.send(Envelope { command, reply: reply.clone() }).is_err() {
                            break;
                        }
                        continue;
                    }
                    Err(e) => encode_error(&e.to_string()),
                },
                Some(Ok(Message::Binary(_))) => encode_error("binary messages are not supported"),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
            frame = frames.recv() => match frame {
                Ok(text) => text,
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::debug!("viewer lagging, dropped {n} frames");
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(text) = replies.recv() => text,
        };
        if socket.send(Message::Text(outgoing.into())).await.is_err() {
            break;
        }
    }
}
