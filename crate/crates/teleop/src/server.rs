//! Websocket front end for a [`TeleopSession`].
//!
//! The session steps on its own thread at the configured rate whether or not
//! anyone is connected. Every connected client receives every state message
//! and may send commands; the most recent valid command wins.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::error::{Result, TeleopError};
use crate::protocol::{decode_client, encode, ClientMessage, ServerMessage};
use crate::session::{check_command, TeleopSession};

/// States a slow client may fall behind by before it is dropped.
const CLIENT_BACKLOG: usize = 64;

type Latest = Arc<Mutex<Option<(Vec<f64>, f64)>>>;

/// A running server. Dropping it stops the control loop.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    control: Option<thread::JoinHandle<()>>,
    accept: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.accept.abort();
        if let Some(t) = self.control.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Listens on `addr` and starts stepping `session`. Port 0 picks a free port;
/// the bound address is on the handle.
pub async fn bind(session: TeleopSession, addr: SocketAddr) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr).await.map_err(|source| TeleopError::Bind { addr, source })?;
    let addr = listener.local_addr()?;
    let (tx, _) = broadcast::channel::<Arc<String>>(CLIENT_BACKLOG);
    let latest: Latest = Arc::default();
    let shutdown = Arc::new(AtomicBool::new(false));
    let start = Instant::now();

    let node = session.config().node;
    let dim = session.dim();
    let control = {
        let (tx, latest, shutdown) = (tx.clone(), latest.clone(), shutdown.clone());
        thread::Builder::new().name("teleop-control".into()).spawn(move || control_loop(session, tx, latest, shutdown, start))?
    };

    let accept = tokio::spawn(async move {
        loop {
            let Ok((stream, peer)) = listener.accept().await else { continue };
            let rx = tx.subscribe();
            let latest = latest.clone();
            tokio::spawn(async move {
                if let Err(e) = client(stream, rx, latest, start, node, dim).await {
                    log::debug!("client {peer}: {e}");
                }
            });
        }
    });
    log::info!("teleop server on ws://{addr}, steering node {node}");
    Ok(ServerHandle { addr, shutdown, control: Some(control), accept })
}

fn control_loop(
    mut session: TeleopSession,
    tx: broadcast::Sender<Arc<String>>,
    latest: Latest,
    shutdown: Arc<AtomicBool>,
    start: Instant,
) {
    let period = Duration::from_secs_f64(1.0 / session.config().hz);
    let mut next = Instant::now();
    while !shutdown.load(Ordering::SeqCst) {
        if let Some((v, at)) = latest.lock().expect("command slot").take() {
            session.put_command(v, at);
        }
        let msg = match session.tick_at(start.elapsed().as_secs_f64()) {
            Ok((_, state)) => ServerMessage::State(state),
            Err(e) => {
                log::warn!("step failed: {e}");
                ServerMessage::Error { message: format!("step failed: {e}") }
            }
        };
        // no receivers is fine
        let _ = tx.send(Arc::new(encode(&msg)));
        next += period;
        let now = Instant::now();
        if next > now {
            thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

async fn client(
    stream: TcpStream,
    mut states: broadcast::Receiver<Arc<String>>,
    latest: Latest,
    start: Instant,
    node: usize,
    dim: usize,
) -> std::result::Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let (reply_tx, mut replies) = mpsc::unbounded_channel::<String>();

    let writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                s = states.recv() => match s {
                    Ok(s) => s.as_str().to_owned(),
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        log::debug!("dropping a client {n} states behind");
                        break;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                r = replies.recv() => match r {
                    Some(r) => r,
                    None => break,
                },
            };
            if sink.send(Message::text(text)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    while let Some(frame) = source.next().await {
        let text = match frame? {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let reply = match decode_client(&text) {
            Ok(ClientMessage::Command { node: n, v }) => match check_command(n, &v, node, dim) {
                Ok(()) => {
                    *latest.lock().expect("command slot") = Some((v, start.elapsed().as_secs_f64()));
                    None
                }
                Err(m) => Some(m),
            },
            Err(e) => Some(format!("malformed message: {e}")),
        };
        if let Some(message) = reply {
            if reply_tx.send(encode(&ServerMessage::Error { message })).is_err() {
                break;
            }
        }
        if writer.is_finished() {
            break;
        }
    }
    writer.abort();
    Ok(())
}
