use std::net::SocketAddr;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TeleopError>;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error(transparent)]
    Sim(#[from] truss_sim::SimError),

    #[error("node {node} does not exist (robot has {count})")]
    UnknownNode { node: usize, count: usize },

    #[error("tick rate must be positive, got {0}")]
    BadRate(f64),

    #[error("bad command: {0}")]
    BadCommand(String),

    #[error("command log is not sorted by time at entry {0}")]
    UnsortedLog(usize),

    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },

    #[error("log file: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
