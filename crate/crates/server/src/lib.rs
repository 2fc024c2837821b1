//! Live steering service: one websocket per session, static UI files on the
//! same port.

pub mod protocol;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use mpl_core::runtime::RuntimeConfig;
use mpl_core::{seed, Checkpoint, Scenario};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tower_http::services::ServeDir;

use crate::protocol::{Envelope, ServerMessage, SCHEMA_VERSION};
use crate::session::Session;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub checkpoint: Checkpoint,
    pub scenario: Scenario,
    pub runtime: RuntimeConfig,
    pub seed: u64,
    /// Simulated seconds per wall second.
    pub speedup: f64,
    pub static_dir: Option<PathBuf>,
}

struct AppState {
    cfg: ServerConfig,
    next_id: AtomicU64,
    shutdown: watch::Receiver<bool>,
}

/// A bound server that has not started accepting yet.
pub struct Server {
    listener: TcpListener,
    router: Router,
    shutdown: Arc<watch::Sender<bool>>,
}

impl Server {
    pub async fn bind(addr: SocketAddr, cfg: ServerConfig) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let (tx, rx) = watch::channel(false);
        let static_dir = cfg.static_dir.clone();
        let state = Arc::new(AppState { cfg, next_id: AtomicU64::new(1), shutdown: rx });
        let mut router = Router::new().route("/ws", get(upgrade)).with_state(state);
        if let Some(dir) = static_dir {
            router = router.fallback_service(ServeDir::new(dir));
        }
        Ok(Self { listener, router, shutdown: Arc::new(tx) })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serve until `signal` resolves, then send every open session a
    /// shutdown frame and wait briefly for them to close.
    pub async fn run(self, signal: impl std::future::Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let tx = self.shutdown.clone();
        let notify = async move {
            signal.await;
            let _ = tx.send(true);
        };
        axum::serve(self.listener, self.router).with_graceful_shutdown(notify).await?;
        let _ = tokio::time::timeout(Duration::from_secs(2), self.shutdown.closed()).await;
        Ok(())
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<AppState>>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

async fn send(sink: &mut (impl SinkExt<Message> + Unpin), msg: &Envelope) -> bool {
    let text = serde_json::to_string(msg).expect("messages serialize");
    sink.send(Message::Text(text.into())).await.is_ok()
}

// Ticks and client messages go through one select loop, so a session's state
// is only ever touched by this task.
async fn run_session(socket: WebSocket, state: Arc<AppState>) {
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}");
    let (mut sink, mut stream) = socket.split();
    let cfg = &state.cfg;
    let mut session = match Session::open(id.clone(), cfg.checkpoint.clone(), cfg.scenario.clone(), cfg.runtime.clone(), seed::derive(cfg.seed, &[n])) {
        Ok(s) => s,
        Err(e) => {
            let msg = Envelope { schema_version: SCHEMA_VERSION.into(), session_id: id, body: ServerMessage::Error { message: e.to_string() } };
            send(&mut sink, &msg).await;
            let _ = sink.close().await;
            return;
        }
    };
    tracing::info!(session = %session.id, "session opened");
    let mut shutdown = state.shutdown.clone();
    if !send(&mut sink, &session.arena_message()).await || !send(&mut sink, &session.frame()).await {
        return;
    }
    let period = Duration::from_secs_f64(cfg.scenario.flock_params.dt / cfg.speedup.max(1e-6));
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    ticker.tick().await;

    loop {
        tokio::select! {
            biased;
            _ = shutdown.changed() => {
                send(&mut sink, &session.wrap(ServerMessage::ServerShutdown)).await;
                let _ = sink.close().await;
                break;
            }
            incoming = stream.next() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                    Some(Ok(_)) => continue,
                };
                let mut ok = true;
                for reply in session.handle_text(&text) {
                    ok &= send(&mut sink, &reply).await;
                }
                if !ok {
                    break;
                }
            }
            _ = ticker.tick(), if !session.is_paused() => {
                match session.tick() {
                    Ok(_) => {
                        if !send(&mut sink, &session.frame()).await {
                            break;
                        }
                    }
                    Err(e) => {
                        send(&mut sink, &session.wrap(ServerMessage::Error { message: e.to_string() })).await;
                        break;
                    }
                }
            }
        }
    }
    tracing::info!(session = %session.id, "session closed");
}
