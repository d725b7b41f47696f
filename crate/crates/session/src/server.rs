//! Wall-clock host for the engine: WebSocket `/ws`, UDP sample ingest and
//! optional static files. One task owns the engine; everything else talks
//! to it through a queue.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use motionsketch_core::io::StreamSample;
use tokio::net::{TcpListener, UdpSocket};
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::engine::Engine;
use crate::protocol::{parse_message, CommandMsg, ErrorCode, ErrorMsg, Hello, SampleMsg, WireMessage, PROTOCOL_VERSION};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub http: SocketAddr,
    pub udp: Option<SocketAddr>,
    pub static_dir: Option<PathBuf>,
    /// Replace sample timestamps with the engine clock on arrival. Live
    /// trackers have their own epochs.
    pub restamp: bool,
}

enum Inbound {
    Sample(StreamSample),
    Command {
        msg: CommandMsg,
        reply: mpsc::UnboundedSender<WireMessage>,
    },
}

#[derive(Clone)]
struct Shared {
    inbound: mpsc::UnboundedSender<Inbound>,
    broadcast: broadcast::Sender<Arc<String>>,
    latest: watch::Receiver<Arc<String>>,
    hello: Arc<String>,
}

pub struct ServerHandle {
    pub http: SocketAddr,
    pub udp: Option<SocketAddr>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn abort(&self) {
        for t in &self.tasks {
            t.abort();
        }
    }

    /// Waits for the HTTP server to stop.
    pub async fn join(mut self) {
        if let Some(t) = self.tasks.pop() {
            let _ = t.await;
        }
    }
}

/// Binds the sockets and starts the engine loop.
pub async fn start(engine: Engine, config: ServeConfig) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(config.http).await?;
    let http = listener.local_addr()?;
    let udp = match config.udp {
        Some(a) => Some(UdpSocket::bind(a).await?),
        None => None,
    };
    let udp_addr = udp.as_ref().map(UdpSocket::local_addr).transpose()?;

    let cfg = *engine.config();
    let hello = Arc::new(
        WireMessage::Hello(Hello {
            protocol: PROTOCOL_VERSION,
            agent: Some(format!("motionsketch {}", env!("CARGO_PKG_VERSION"))),
            tick_rate: Some(1.0 / cfg.dt),
            snapshot_rate: Some(1.0 / cfg.snapshot_period),
        })
        .to_text(),
    );
    let (inbound_tx, inbound_rx) = mpsc::unbounded_channel();
    let (bcast, _) = broadcast::channel(256);
    let (latest_tx, latest_rx) = watch::channel(Arc::new(WireMessage::Snapshot(engine.snapshot()).to_text()));
    let shared = Shared {
        inbound: inbound_tx,
        broadcast: bcast.clone(),
        latest: latest_rx,
        hello,
    };

    let mut tasks = vec![tokio::spawn(engine_loop(engine, inbound_rx, bcast, latest_tx, config.restamp))];
    if let Some(sock) = udp {
        tasks.push(tokio::spawn(udp_loop(sock, shared.inbound.clone())));
    }
    let mut app = Router::new().route("/ws", get(ws_upgrade)).with_state(shared);
    if let Some(dir) = &config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    tasks.push(tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("http server stopped: {e}");
        }
    }));
    tracing::info!(%http, udp = ?udp_addr, "serving");
    Ok(ServerHandle {
        http,
        udp: udp_addr,
        tasks,
    })
}

async fn engine_loop(
    mut engine: Engine,
    mut inbound: mpsc::UnboundedReceiver<Inbound>,
    bcast: broadcast::Sender<Arc<String>>,
    latest: watch::Sender<Arc<String>>,
    restamp: bool,
) {
    let dt = engine.config().dt;
    let mut interval = tokio::time::interval(Duration::from_secs_f64(dt));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        interval.tick().await;
        loop {
            match inbound.try_recv() {
                Ok(Inbound::Sample(mut s)) => {
                    if restamp {
                        s.t = engine.clock();
                    }
                    engine.push_sample(s);
                }
                Ok(Inbound::Command { msg, reply }) => {
                    let _ = reply.send(engine.handle_command(&msg));
                }
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => return,
            }
        }
        let out = engine.tick(dt);
        for e in out.errors {
            let _ = bcast.send(Arc::new(WireMessage::Error(e).to_text()));
        }
        if let Some(s) = out.snapshot {
            let text = Arc::new(WireMessage::Snapshot(s).to_text());
            let _ = latest.send(text.clone());
            let _ = bcast.send(text);
        }
    }
}

async fn udp_loop(sock: UdpSocket, inbound: mpsc::UnboundedSender<Inbound>) {
    let mut buf = vec![0u8; 64 * 1024];
    loop {
        let Ok((n, from)) = sock.recv_from(&mut buf).await else {
            continue;
        };
        let text = String::from_utf8_lossy(&buf[..n]);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            match parse_sample_line(line) {
                Some(s) => {
                    if inbound.send(Inbound::Sample(s)).is_err() {
                        return;
                    }
                }
                None => tracing::warn!(%from, "dropping malformed sample line"),
            }
        }
    }
}

/// A UDP line is a `sample` message, with or without its `type` field.
pub fn parse_sample_line(line: &str) -> Option<StreamSample> {
    if let Ok(WireMessage::Sample(m)) = serde_json::from_str::<WireMessage>(line) {
        return Some(m.into());
    }
    serde_json::from_str::<SampleMsg>(line).ok().map(Into::into)
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> Response {
    ws.on_upgrade(move |socket| client(socket, shared))
}

async fn client(socket: WebSocket, shared: Shared) {
    let (mut sink, mut stream) = socket.split();
    let (reply_tx, mut reply_rx) = mpsc::unbounded_channel::<WireMessage>();
    let mut updates = shared.broadcast.subscribe();
    let first = shared.latest.borrow().clone();
    let hello = shared.hello.clone();

    let writer = tokio::spawn(async move {
        for text in [hello, first] {
            if sink.send(Message::Text(text.as_str().into())).await.is_err() {
                return;
            }
        }
        loop {
            let text = tokio::select! {
                r = reply_rx.recv() => match r {
                    Some(m) => m.to_text(),
                    None => return,
                },
                b = updates.recv() => match b {
                    Ok(t) => t.as_str().to_owned(),
                    // a slow viewer just misses snapshots
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return,
                },
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
    });

    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let inbound = match parse_message(&text) {
            Ok(WireMessage::Sample(s)) => Inbound::Sample(s.into()),
            Ok(WireMessage::Command(msg)) => Inbound::Command {
                msg,
                reply: reply_tx.clone(),
            },
            Ok(WireMessage::Hello(_)) => {
                let _ = reply_tx.send(serde_json::from_str(&shared.hello).expect("hello parses"));
                continue;
            }
            Ok(_) => {
                let _ = reply_tx.send(WireMessage::Error(ErrorMsg::new(
                    None,
                    ErrorCode::MalformedCommand,
                    "clients may send hello, sample and command only",
                )));
                continue;
            }
            Err(e) => {
                let _ = reply_tx.send(WireMessage::Error(e));
                continue;
            }
        };
        if shared.inbound.send(inbound).is_err() {
            break;
        }
    }
    writer.abort();
}
