//! Websocket bridge: a simulation thread ticking at a fixed rate and a
//! network thread serving one client at a time. Velocity commands go
//! through a single-slot mailbox where the newest command replaces older
//! ones; session requests are queued in order.

use crate::protocol::{ClientMessage, ServerMessage, SessionAction};
use crate::teleop::TeleopSession;
use anyhow::{Context, Result};
use log::{debug, info, warn};
use std::collections::VecDeque;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};
use tungstenite::{Message, WebSocket};

pub const TICK: Duration = Duration::from_millis(100);
/// Commands older than this are treated as a stop request.
pub const COMMAND_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Default)]
struct Mailbox {
    command: Option<(f64, f64, Instant)>,
    fresh_command: bool,
    session: VecDeque<SessionAction>,
}

/// Messages produced by the simulation, consumed by the network thread.
#[derive(Default)]
struct Outbox {
    latest_state: Option<String>,
    state_seq: u64,
    acks: VecDeque<String>,
}

struct Shared {
    mailbox: Mutex<Mailbox>,
    wake: Condvar,
    outbox: Mutex<Outbox>,
    stop: AtomicBool,
}

pub struct BridgeHandle {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl BridgeHandle {
    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.shared.wake.notify_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the bridge stops (Ctrl-C in the CLI).
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

/// Binds `addr` and starts both threads.
pub fn spawn(session: TeleopSession, addr: &str) -> Result<BridgeHandle> {
    let listener = TcpListener::bind(addr).with_context(|| format!("cannot bind {addr}"))?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let shared = Arc::new(Shared {
        mailbox: Mutex::new(Mailbox::default()),
        wake: Condvar::new(),
        outbox: Mutex::new(Outbox::default()),
        stop: AtomicBool::new(false),
    });
    let sim = {
        let shared = Arc::clone(&shared);
        std::thread::Builder::new().name("sim".into()).spawn(move || sim_loop(session, &shared))?
    };
    let net = {
        let shared = Arc::clone(&shared);
        std::thread::Builder::new().name("net".into()).spawn(move || net_loop(listener, &shared))?
    };
    info!("teleop bridge listening on ws://{local}");
    Ok(BridgeHandle { addr: local, shared, threads: vec![sim, net] })
}

fn publish_state(shared: &Shared, session: &TeleopSession) {
    let text = serde_json::to_string(&ServerMessage::State(session.message())).expect("state serializes");
    let mut out = shared.outbox.lock().unwrap();
    out.latest_state = Some(text);
    out.state_seq += 1;
}

fn sim_loop(mut session: TeleopSession, shared: &Shared) {
    let mut last = Instant::now();
    publish_state(shared, &session);
    while !shared.stop.load(Ordering::SeqCst) {
        let (command, actions) = {
            let mut mb = shared.mailbox.lock().unwrap();
            let deadline = last + TICK;
            while !mb.fresh_command && mb.session.is_empty() && !shared.stop.load(Ordering::SeqCst) {
                let now = Instant::now();
                if now >= deadline {
                    break;
                }
                mb = shared.wake.wait_timeout(mb, deadline - now).unwrap().0;
            }
            mb.fresh_command = false;
            (mb.command, mb.session.drain(..).collect::<Vec<_>>())
        };
        let now = Instant::now();
        let dt = (now - last).as_secs_f64();
        last = now;
        let (v, w) = match command {
            Some((v, w, at)) if now - at <= COMMAND_TIMEOUT => (v, w),
            _ => (0.0, 0.0),
        };
        session.advance(v, w, dt);
        for a in actions {
            let ack = session.handle(a);
            debug!("session {a:?}: {}", ack.detail);
            let text = serde_json::to_string(&ServerMessage::Ack(ack)).expect("ack serializes");
            shared.outbox.lock().unwrap().acks.push_back(text);
        }
        publish_state(shared, &session);
    }
}

fn net_loop(listener: TcpListener, shared: &Shared) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                info!("client connected from {peer}");
                if let Err(e) = serve_client(stream, shared) {
                    debug!("client {peer} closed: {e}");
                }
                info!("client {peer} disconnected");
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(20)),
            Err(e) => {
                warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(100));
            }
        }
    }
}

fn serve_client(stream: TcpStream, shared: &Shared) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake failed: {e}"))?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let mut sent_seq = 0u64;
    while !shared.stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => handle_client_text(&text, shared),
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
        flush_outbox(&mut ws, shared, &mut sent_seq)?;
    }
    let _ = ws.close(None);
    Ok(())
}

fn handle_client_text(text: &str, shared: &Shared) {
    match serde_json::from_str::<ClientMessage>(text) {
        Ok(ClientMessage::Cmd { v, w }) if v.is_finite() && w.is_finite() => {
            let mut mb = shared.mailbox.lock().unwrap();
            mb.command = Some((v, w, Instant::now()));
            mb.fresh_command = true;
            shared.wake.notify_all();
        }
        Ok(ClientMessage::Session { action }) => {
            shared.mailbox.lock().unwrap().session.push_back(action);
            shared.wake.notify_all();
        }
        Ok(_) => warn!("ignoring non-finite command"),
        Err(e) => warn!("ignoring malformed message: {e}"),
    }
}

fn flush_outbox(ws: &mut WebSocket<TcpStream>, shared: &Shared, sent_seq: &mut u64) -> Result<()> {
    let (acks, state) = {
        let mut out = shared.outbox.lock().unwrap();
        let acks: Vec<String> = out.acks.drain(..).collect();
        let state = (out.state_seq != *sent_seq).then(|| out.latest_state.clone()).flatten();
        *sent_seq = out.state_seq;
        (acks, state)
    };
    for text in acks.into_iter().chain(state) {
        ws.send(Message::Text(text))?;
    }
    Ok(())
}
