//! WebSocket gateway: one capture session per connection, JSON envelopes,
//! periodic state snapshots. The wire format is described in
//! `docs/protocol.md`.

pub mod protocol;
mod server;
mod session;

use std::net::SocketAddr;

use thiserror::Error;

pub use protocol::{Envelope, ErrorCode, Kind, PROTOCOL_VERSION};
pub use server::Gateway;
pub use session::{SessionHandler, SharedConfig};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("at least one scene is required")]
    NoScenes,
    #[error("default scene {0} is not loaded")]
    UnknownDefaultScene(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
