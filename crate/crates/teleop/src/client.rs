//! Blocking scripted client. Used by the integration tests, the CLI and the
//! acceptance run to drive a server exactly like an operator console would.

use std::collections::VecDeque;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use insertion_core::experiments::InsertionSample;
use insertion_core::scenario::Mode;
use insertion_core::trajectory::InsertionProfile;
use tokio_tungstenite::tungstenite::stream::MaybeTlsStream;
use tokio_tungstenite::tungstenite::{self, Message, WebSocket};

use crate::protocol::{
    decode_server, encode_command, ClientMessage, Command, Envelope, ErrorCode, ProtocolError,
    ServerMessage, StateMessage,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("websocket: {0}")]
    WebSocket(#[from] Box<tungstenite::Error>),
    #[error("malformed server message: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("server replied {code:?}: {message}")]
    Server { code: ErrorCode, message: String },
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("connection closed")]
    Closed,
    #[error("unexpected reply: {0}")]
    Unexpected(String),
}

impl From<tungstenite::Error> for ClientError {
    fn from(e: tungstenite::Error) -> Self {
        ClientError::WebSocket(Box::new(e))
    }
}

pub struct Client {
    socket: WebSocket<MaybeTlsStream<TcpStream>>,
    token: Option<String>,
    next_id: u64,
    timeout: Duration,
    session: u64,
    dt: f64,
    latest: Option<StateMessage>,
    /// Messages read while waiting for something else.
    backlog: VecDeque<Envelope>,
    dropped: u64,
}

impl Client {
    /// Connects and waits for the `welcome` message.
    pub fn connect(url: &str) -> Result<Self, ClientError> {
        let (socket, _) = tungstenite::connect(url)?;
        if let MaybeTlsStream::Plain(tcp) = socket.get_ref() {
            let _ = tcp.set_nodelay(true);
        }
        let mut client = Self {
            socket,
            token: None,
            next_id: 1,
            timeout: Duration::from_secs(10),
            session: 0,
            dt: 0.0,
            latest: None,
            backlog: VecDeque::new(),
            dropped: 0,
        };
        match client.recv()?.message {
            ServerMessage::Welcome { session, dt, .. } => {
                client.session = session;
                client.dt = dt;
            }
            other => return Err(ClientError::Unexpected(format!("{other:?}"))),
        }
        Ok(client)
    }

    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    pub fn session(&self) -> u64 {
        self.session
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    /// Most recent state seen on the wire.
    pub fn latest_state(&self) -> Option<&StateMessage> {
        self.latest.as_ref()
    }

    /// Total messages the server reported as dropped for this client.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn read_frame(&mut self) -> Result<Envelope, ClientError> {
        loop {
            match self.socket.read()? {
                Message::Text(text) => {
                    let envelope = decode_server(&text)?;
                    self.dropped += envelope.dropped;
                    if let ServerMessage::State(state) = &envelope.message {
                        self.latest = Some(state.clone());
                    }
                    return Ok(envelope);
                }
                Message::Close(_) => return Err(ClientError::Closed),
                _ => {}
            }
        }
    }

    /// Next server message, oldest first.
    pub fn recv(&mut self) -> Result<Envelope, ClientError> {
        match self.backlog.pop_front() {
            Some(e) => Ok(e),
            None => self.read_frame(),
        }
    }

    /// Reads until `pick` returns a value. Messages it rejects stay queued
    /// for [`Client::recv`] unless they are states or heartbeats.
    fn wait_for<T>(
        &mut self,
        what: &'static str,
        mut pick: impl FnMut(&ServerMessage) -> Option<T>,
    ) -> Result<T, ClientError> {
        let deadline = Instant::now() + self.timeout;
        if let Some(pos) = self.backlog.iter().position(|e| pick(&e.message).is_some()) {
            let e = self.backlog.remove(pos).expect("position is valid");
            return Ok(pick(&e.message).expect("matched above"));
        }
        loop {
            if Instant::now() > deadline {
                return Err(ClientError::Timeout(what));
            }
            let envelope = self.read_frame()?;
            if let Some(v) = pick(&envelope.message) {
                return Ok(v);
            }
            if !matches!(envelope.message, ServerMessage::State(_) | ServerMessage::Heartbeat { .. }) {
                self.backlog.push_back(envelope);
            }
        }
    }

    /// Sends a command without waiting; returns its request id.
    pub fn send(&mut self, command: Command) -> Result<u64, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut msg = ClientMessage::new(command).with_id(id);
        if let Some(t) = &self.token {
            msg = msg.with_token(t.clone());
        }
        self.send_raw(&encode_command(&msg))?;
        Ok(id)
    }

    /// Sends one text frame verbatim.
    pub fn send_raw(&mut self, text: &str) -> Result<(), ClientError> {
        self.socket.send(Message::text(text))?;
        Ok(())
    }

    /// Waits for the `ack` or `error` answering request `id`; returns the
    /// tick reported in the ack.
    pub fn wait_reply(&mut self, id: u64) -> Result<u64, ClientError> {
        let reply = self.wait_for("reply", |m| match m {
            ServerMessage::Ack { id: Some(r), tick, .. } if *r == id => Some(Ok(*tick)),
            ServerMessage::Error { id: Some(r), code, message } if *r == id => {
                Some(Err(ClientError::Server { code: *code, message: message.clone() }))
            }
            _ => None,
        })?;
        reply
    }

    /// Sends a command and waits for its reply.
    pub fn request(&mut self, command: Command) -> Result<u64, ClientError> {
        let id = self.send(command)?;
        self.wait_reply(id)
    }

    pub fn claim_driver(&mut self) -> Result<String, ClientError> {
        self.send(Command::ClaimDriver)?;
        let token = self.wait_for("driver token", |m| match m {
            ServerMessage::Driver { token } => Some(Ok(token.clone())),
            ServerMessage::Error { code, message, .. }
                if matches!(code, ErrorCode::DriverTaken | ErrorCode::Protocol) =>
            {
                Some(Err(ClientError::Server { code: *code, message: message.clone() }))
            }
            _ => None,
        })??;
        self.token = Some(token.clone());
        Ok(token)
    }

    /// Waits for a state whose tick satisfies `pred`.
    pub fn wait_state(&mut self, pred: impl Fn(&StateMessage) -> bool) -> Result<StateMessage, ClientError> {
        if let Some(s) = self.latest.as_ref().filter(|s| pred(s)) {
            return Ok(s.clone());
        }
        self.wait_for("state", |m| match m {
            ServerMessage::State(s) if pred(s) => Some(s.clone()),
            _ => None,
        })
    }

    /// Steps a paused server by `ticks` and returns the resulting state.
    pub fn step(&mut self, ticks: u64) -> Result<StateMessage, ClientError> {
        let id = self.send(Command::Step { ticks })?;
        let tick = self.wait_reply(id)?;
        self.wait_state(|s| s.tick == tick)
    }

    pub fn close(mut self) -> Result<(), ClientError> {
        self.socket.close(None)?;
        // drain until the server acknowledges the close
        loop {
            match self.socket.read() {
                Ok(_) => {}
                Err(tungstenite::Error::ConnectionClosed) | Err(tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(tungstenite::Error::Io(_)) | Err(tungstenite::Error::Protocol(_)) => return Ok(()),
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Drives a full insertion through the protocol: claims the driver, pauses,
/// switches to insert mode and, tick by tick, sends the haptic target of
/// `profile` followed by `step`. Returns one sample per state, starting with
/// the state before the first step.
pub fn scripted_insertion(
    client: &mut Client,
    profile: &InsertionProfile,
    duration: f64,
) -> Result<Vec<InsertionSample>, ClientError> {
    if client.token().is_none() {
        client.claim_driver()?;
    }
    client.request(Command::Pause)?;
    client.request(Command::SetMode { mode: Mode::Insert })?;
    let dt = client.dt();
    let ticks = (duration / dt).round() as u64;
    let start = client.wait_state(|_| true)?;
    let mut samples = vec![sample(&start)];
    let mut state = start;
    for _ in 0..ticks {
        client.send(Command::HapticTarget { x_h: profile.target(state.t) })?;
        let next_tick = state.tick + 1;
        let id = client.send(Command::Step { ticks: 1 })?;
        client.wait_reply(id)?;
        state = client.wait_state(|s| s.tick == next_tick)?;
        samples.push(sample(&state));
    }
    Ok(samples)
}

fn sample(s: &StateMessage) -> InsertionSample {
    InsertionSample {
        t: s.t,
        haptic_target: s.haptic_target,
        depth: s.depth,
        force: s.f_t,
        drive_force: s.drive_force,
        puncture: s.puncture,
    }
}
