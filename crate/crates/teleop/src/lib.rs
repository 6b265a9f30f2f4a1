//! Live teleoperation of the insertion simulator.
//!
//! A [`server`] runs one simulation on a dedicated thread and exposes it
//! over WebSocket using the line-JSON [`protocol`]. Any number of viewers
//! may connect; one of them can claim the driver token and send commands.
//! [`client`] is a blocking scripted client used by tests and the CLI.

pub mod client;
pub mod outbox;
pub mod protocol;
pub mod scripted;
pub mod server;
pub mod service;

pub use client::{Client, ClientError};
pub use protocol::{ClientMessage, Command, ServerMessage, StateMessage};
pub use server::{spawn, ServerConfig, ServerHandle};
pub use service::{Service, ServiceConfig};

#[derive(Debug, thiserror::Error)]
pub enum TeleopError {
    #[error(transparent)]
    Core(#[from] insertion_core::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
}
