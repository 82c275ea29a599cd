use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::time::{interval_at, sleep_until, Instant, MissedTickBehavior};
use tower_http::services::ServeDir;

use crate::protocol::Envelope;
use crate::session::{SessionHandler, SharedConfig};
use crate::GatewayError;

/// A bound, not yet running, gateway.
pub struct Gateway {
    listener: TcpListener,
    router: Router,
}

impl Gateway {
    /// Binds the listener. Fails here, not later, when the port is taken.
    pub async fn bind(addr: SocketAddr, shared: SharedConfig, serve_ui: Option<PathBuf>) -> Result<Self, GatewayError> {
        if shared.scenes.is_empty() {
            return Err(GatewayError::NoScenes);
        }
        if !shared.scenes.contains_key(&shared.default_scene) {
            return Err(GatewayError::UnknownDefaultScene(shared.default_scene.clone()));
        }
        std::fs::create_dir_all(&shared.out_dir)?;
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|source| GatewayError::Bind { addr, source })?;
        let mut router = Router::new()
            .route("/ws", get(upgrade))
            .route("/healthz", get(|| async { "ok" }))
            .with_state(Arc::new(shared));
        if let Some(dir) = serve_ui {
            router = router.fallback_service(ServeDir::new(dir));
        }
        Ok(Self { listener, router })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn run(self) -> std::io::Result<()> {
        axum::serve(self.listener, self.router).await
    }

    /// Runs on the current runtime; returns the bound address.
    pub fn spawn(self) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, tokio::spawn(self.run())))
    }
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<SharedConfig>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| serve_connection(socket, shared))
}

async fn send(socket: &mut WebSocket, envelope: &Envelope) -> bool {
    socket.send(Message::Text(envelope.to_text().into())).await.is_ok()
}

/// One capture session per connection. Inbound messages, snapshots and
/// heartbeats are handled in one loop, so every outbound message reflects
/// the engine state at the moment it is sent.
async fn serve_connection(mut socket: WebSocket, shared: Arc<SharedConfig>) {
    let mut handler = SessionHandler::new(shared.clone());
    let id = handler.session_id().to_owned();
    tracing::info!(session = %id, "connected");

    let start = Instant::now();
    let mut snapshots = interval_at(start + shared.snapshot_period(), shared.snapshot_period());
    snapshots.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut heartbeats = interval_at(start + shared.heartbeat, shared.heartbeat);
    heartbeats.set_missed_tick_behavior(MissedTickBehavior::Skip);
    let mut idle_deadline = start + shared.idle_timeout;

    loop {
        tokio::select! {
            biased;
            inbound = socket.recv() => {
                let text = match inbound {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(b))) => match String::from_utf8(b.to_vec()) {
                        Ok(t) => t.into(),
                        Err(_) => {
                            let reply = handler.malformed("binary frame is not UTF-8");
                            if !send(&mut socket, &reply).await { break; }
                            continue;
                        }
                    },
                    Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                };
                idle_deadline = Instant::now() + shared.idle_timeout;
                let reply = handler.handle_text(&text);
                if !send(&mut socket, &reply).await { break; }
            }
            _ = snapshots.tick() => {
                if let Some(snapshot) = handler.snapshot() {
                    if !send(&mut socket, &snapshot).await { break; }
                }
            }
            _ = heartbeats.tick() => {
                let hb = handler.heartbeat();
                if !send(&mut socket, &hb).await { break; }
            }
            _ = sleep_until(idle_deadline) => {
                let err = handler.idle_timeout();
                let _ = send(&mut socket, &err).await;
                let _ = socket.send(Message::Close(None)).await;
                break;
            }
        }
    }
    if handler.capture().is_some_and(|c| c.state().episode_buffer.is_some()) {
        tracing::warn!(session = %id, "connection closed while recording; unfinished episode discarded");
    }
    tracing::info!(session = %id, episodes = handler.saved().len(), "disconnected");
}
