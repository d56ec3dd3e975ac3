//! Live teleoperation of a simulated robot over websockets, and headless
//! replay of recorded command logs.

pub mod error;
pub mod protocol;
pub mod server;
pub mod session;

pub use error::{Result, TeleopError};
pub use protocol::{ClientMessage, ServerMessage, StateMessage};
pub use server::{bind, ServerHandle};
pub use session::{headless_replay, CommandLog, LogEntry, TeleopConfig, TeleopSession, LEFT_RIGHT_LOG};
