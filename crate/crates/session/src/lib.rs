//! Live session: the fixed-step engine, its JSON wire protocol, a
//! virtual-clock script runner and the WebSocket/UDP server.

pub mod engine;
pub mod protocol;
pub mod script;
pub mod server;

use thiserror::Error;

pub use engine::{Engine, EngineConfig, TickOutput};
pub use protocol::{Command, CommandMsg, ErrorCode, Mode, Snapshot, WireMessage};
pub use script::{record_stream, run_script, RecordPlan, Recorded, TimedCommand};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("the input stream has no samples")]
    EmptyStream,
    #[error("{code:?}: {message}")]
    Command { code: ErrorCode, message: String },
    #[error("during tick: {0}")]
    Tick(String),
    #[error("{0}")]
    Plan(String),
}
