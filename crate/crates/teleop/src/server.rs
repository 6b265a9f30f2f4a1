//! WebSocket front end. The simulation lives on its own thread and owns the
//! [`Service`]; network tasks talk to it only through a bounded event queue
//! and the per-client outboxes, so a slow client can never stall the loop.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender, TrySendError};
use futures_util::{SinkExt, StreamExt};
use insertion_core::scenario::Scenario;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, watch};
use tokio_tungstenite::tungstenite::Message;

use crate::outbox::Outbox;
use crate::protocol::{encode_server, ErrorCode, ServerMessage};
use crate::service::{ClientId, Service, ServiceConfig};
use crate::TeleopError;

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: String,
    /// Simulated seconds per wall second. Zero or infinity runs unpaced.
    pub timescale: f64,
    /// Inbound command queue shared by all clients.
    pub queue_capacity: usize,
    pub heartbeat: Duration,
    /// Start paused so a client can drive the clock with `step`.
    pub start_paused: bool,
    pub service: ServiceConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            timescale: 1.0,
            queue_capacity: 4096,
            heartbeat: Duration::from_secs(1),
            start_paused: false,
            service: ServiceConfig::default(),
        }
    }
}

enum Event {
    Connect(oneshot::Sender<(ClientId, Arc<Outbox>)>),
    Disconnect(ClientId),
    Line(ClientId, String),
    Shutdown,
}

/// Running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    events: Sender<Event>,
    stop: Option<watch::Sender<bool>>,
    sim_thread: Option<JoinHandle<()>>,
    net_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.net_thread.take() {
            let _ = t.join();
        }
        self.shutdown();
    }

    pub fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(true);
        }
        let _ = self.events.send(Event::Shutdown);
        for t in [self.net_thread.take(), self.sim_thread.take()].into_iter().flatten() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts the simulation thread and the WebSocket listener. Returns once
/// the socket is bound.
pub fn spawn(scenario: Scenario, config: ServerConfig) -> Result<ServerHandle, TeleopError> {
    if !(config.timescale >= 0.0) {
        return Err(TeleopError::Config(format!("timescale must be >= 0, got {}", config.timescale)));
    }
    let mut service = Service::new(scenario, config.service.clone())?;
    if config.start_paused {
        service.pause();
    }

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime
        .block_on(TcpListener::bind(&config.bind))
        .map_err(|source| TeleopError::Bind { addr: config.bind.clone(), source })?;
    let addr = listener.local_addr()?;

    let (events_tx, events_rx) = crossbeam_channel::bounded(config.queue_capacity.max(1));
    let (stop_tx, stop_rx) = watch::channel(false);

    let sim_thread = std::thread::Builder::new()
        .name("sim".into())
        .spawn({
            let config = config.clone();
            move || sim_loop(service, events_rx, &config)
        })?;
    let net_thread = std::thread::Builder::new().name("net".into()).spawn({
        let events = events_tx.clone();
        move || {
            runtime.block_on(accept_loop(listener, events, stop_rx));
            runtime.shutdown_background();
        }
    })?;

    Ok(ServerHandle {
        addr,
        events: events_tx,
        stop: Some(stop_tx),
        sim_thread: Some(sim_thread),
        net_thread: Some(net_thread),
    })
}

/// Runs a server until the process is killed.
pub fn serve(scenario: Scenario, config: ServerConfig) -> Result<(), TeleopError> {
    let handle = spawn(scenario, config)?;
    handle.wait();
    Ok(())
}

fn sim_loop(mut service: Service, events: Receiver<Event>, config: &ServerConfig) {
    let paced = config.timescale > 0.0 && config.timescale.is_finite();
    let started = Instant::now();
    let mut next_beat = started + config.heartbeat;
    let mut beat = 0u64;
    // wall clock and simulated time at the last resynchronisation
    let mut anchor: Option<(Instant, f64)> = None;

    loop {
        let now = Instant::now();
        if now >= next_beat {
            service.heartbeat(beat, started.elapsed().as_millis() as u64);
            beat += 1;
            next_beat = now + config.heartbeat;
        }

        let mut step_now = false;
        let mut wait = Duration::ZERO;
        if service.is_paused() {
            anchor = None;
            wait = next_beat.saturating_duration_since(now);
        } else if !paced {
            step_now = true;
        } else {
            let t = service.time();
            let (wall0, t0) = match anchor {
                Some((w, t0)) if t >= t0 => (w, t0),
                _ => *anchor.insert((now, t)),
            };
            let due = wall0 + Duration::from_secs_f64((t - t0) / config.timescale);
            if now >= due {
                step_now = true;
                if now - due > Duration::from_millis(500) {
                    // fell far behind: resynchronise instead of racing
                    anchor = Some((now, t));
                }
            } else {
                wait = (due - now).min(next_beat.saturating_duration_since(now));
            }
        }

        let mut pending = if wait.is_zero() {
            events.try_recv().ok()
        } else {
            match events.recv_timeout(wait) {
                Ok(ev) => Some(ev),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => return,
            }
        };
        while let Some(ev) = pending.take() {
            match ev {
                Event::Connect(reply) => {
                    let (id, outbox) = service.connect();
                    if reply.send((id, outbox)).is_err() {
                        service.disconnect(id);
                    }
                }
                Event::Disconnect(id) => service.disconnect(id),
                Event::Line(id, line) => service.handle(id, &line),
                Event::Shutdown => return,
            }
            pending = events.try_recv().ok();
        }

        if step_now {
            // failures pause the service and are reported to every client
            let _ = service.tick();
        }
    }
}

async fn accept_loop(listener: TcpListener, events: Sender<Event>, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            _ = stop.changed() => return,
            accepted = listener.accept() => {
                if let Ok((stream, _)) = accepted {
                    tokio::spawn(client_session(stream, events.clone(), stop.clone()));
                }
            }
        }
    }
}

async fn client_session(stream: TcpStream, events: Sender<Event>, mut stop: watch::Receiver<bool>) {
    let _ = stream.set_nodelay(true);
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let (reply_tx, reply_rx) = oneshot::channel();
    if events.try_send(Event::Connect(reply_tx)).is_err() {
        return;
    }
    let Ok((id, outbox)) = reply_rx.await else {
        return;
    };
    let (mut sink, mut source) = ws.split();

    let writer = tokio::spawn({
        let outbox = outbox.clone();
        async move {
            loop {
                while let Some(envelope) = outbox.pop() {
                    if sink.send(Message::text(encode_server(&envelope))).await.is_err() {
                        return;
                    }
                }
                if outbox.is_closed() {
                    let _ = sink.close().await;
                    return;
                }
                outbox.ready().await;
            }
        }
    });

    loop {
        let frame = tokio::select! {
            _ = stop.changed() => break,
            frame = source.next() => frame,
        };
        match frame {
            Some(Ok(Message::Text(text))) => match events.try_send(Event::Line(id, text.to_string())) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => outbox.push(ServerMessage::Error {
                    id: None,
                    code: ErrorCode::Busy,
                    message: "command queue full, command dropped".into(),
                }),
                Err(TrySendError::Disconnected(_)) => break,
            },
            Some(Ok(Message::Binary(_))) => outbox.push(ServerMessage::Error {
                id: None,
                code: ErrorCode::Protocol,
                message: "binary frames are not supported".into(),
            }),
            Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
            Some(Ok(_)) => {}
        }
    }
    // the disconnect must not be lost to a full queue
    let events_blocking = events.clone();
    let _ = tokio::task::spawn_blocking(move || events_blocking.send(Event::Disconnect(id))).await;
    outbox.close();
    let _ = writer.await;
}
