//! Transport-independent session logic. One [`Service`] owns the simulation;
//! clients reach it only through [`Service::handle`] and read replies and
//! state from their [`Outbox`].

use std::collections::BTreeMap;
use std::sync::Arc;

use insertion_core::scenario::{Mode, Scenario};
use insertion_core::sim::{EventFlags, LogRecord, Simulation};
use nalgebra::Vector6;
use rand::Rng;

use crate::outbox::Outbox;
use crate::protocol::{
    decode_command, ClientMessage, Command, ErrorCode, PoseMessage, SaturationFlags, ServerMessage,
    StateMessage,
};
use crate::TeleopError;

pub type ClientId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    /// State broadcast rate in simulated time, Hz.
    pub broadcast_hz: f64,
    /// Largest translational jog per command, m.
    pub jog_limit_linear: f64,
    /// Largest rotational jog per command, rad.
    pub jog_limit_angular: f64,
    pub outbox_capacity: usize,
    /// Largest `ticks` accepted by one `step` command.
    pub max_step_ticks: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            broadcast_hz: 50.0,
            jog_limit_linear: 0.010,
            jog_limit_angular: 0.1,
            outbox_capacity: 1024,
            max_step_ticks: 100_000,
        }
    }
}

pub struct Service {
    sim: Simulation,
    config: ServiceConfig,
    paused: bool,
    driver: Option<(ClientId, String)>,
    clients: BTreeMap<ClientId, Arc<Outbox>>,
    next_client: ClientId,
    last_command: Option<String>,
    broadcast_every: u64,
    last_broadcast: Option<u64>,
}

fn pose_message(pose: &insertion_core::kinematics::Pose) -> PoseMessage {
    let r = pose.rotvec();
    PoseMessage {
        xyz: [pose.position.x, pose.position.y, pose.position.z],
        rotvec: [r.x, r.y, r.z],
    }
}

impl Service {
    pub fn new(scenario: Scenario, config: ServiceConfig) -> Result<Self, TeleopError> {
        if !(config.broadcast_hz > 0.0) {
            return Err(TeleopError::Config("broadcast rate must be positive".into()));
        }
        let broadcast_every = ((1.0 / config.broadcast_hz) / scenario.dt).round().max(1.0) as u64;
        Ok(Self {
            sim: Simulation::new(scenario)?,
            config,
            paused: false,
            driver: None,
            clients: BTreeMap::new(),
            next_client: 1,
            last_command: None,
            broadcast_every,
            last_broadcast: None,
        })
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn pause(&mut self) {
        self.paused = true;
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn client_count(&self) -> usize {
        self.clients.len()
    }

    /// Registers a client; it receives `welcome` and the current state.
    pub fn connect(&mut self) -> (ClientId, Arc<Outbox>) {
        let id = self.next_client;
        self.next_client += 1;
        let outbox = Arc::new(Outbox::new(self.config.outbox_capacity));
        outbox.push(ServerMessage::Welcome {
            session: id,
            scenario: self.sim.scenario().name.clone(),
            dt: self.sim.scenario().dt,
            driver_present: self.driver.is_some(),
        });
        outbox.push(ServerMessage::State(self.state_message()));
        self.clients.insert(id, outbox.clone());
        (id, outbox)
    }

    pub fn disconnect(&mut self, id: ClientId) {
        if let Some(out) = self.clients.remove(&id) {
            out.close();
        }
        if self.driver.as_ref().is_some_and(|(d, _)| *d == id) {
            self.driver = None;
        }
    }

    pub fn state_message(&self) -> StateMessage {
        state_from_record(
            self.sim.record(),
            self.sim.tick(),
            self.sim.mode(),
            self.paused,
            self.sim.tissue().punctured().to_vec(),
            self.last_command.clone(),
        )
    }

    fn send(&self, id: ClientId, message: ServerMessage) {
        if let Some(out) = self.clients.get(&id) {
            out.push(message);
        }
    }

    fn broadcast(&mut self, message: ServerMessage) {
        for out in self.clients.values() {
            out.push(message.clone());
        }
    }

    /// Sends the current state to everyone unless this tick was already sent.
    pub fn broadcast_state(&mut self) {
        let tick = self.sim.tick();
        if self.last_broadcast == Some(tick) {
            return;
        }
        self.last_broadcast = Some(tick);
        let state = ServerMessage::State(self.state_message());
        self.broadcast(state);
    }

    pub fn heartbeat(&mut self, seq: u64, wall_ms: u64) {
        let t = self.sim.time();
        self.broadcast(ServerMessage::Heartbeat { seq, t, wall_ms });
    }

    fn error(&self, id: ClientId, request: Option<u64>, code: ErrorCode, message: impl Into<String>) {
        self.send(
            id,
            ServerMessage::Error {
                id: request,
                code,
                message: message.into(),
            },
        );
    }

    /// Decodes and applies one line from client `id`. Malformed input only
    /// produces an error reply.
    pub fn handle(&mut self, id: ClientId, line: &str) {
        match decode_command(line) {
            Ok(msg) => self.apply(id, msg),
            Err(e) => self.error(id, None, ErrorCode::Protocol, e.to_string()),
        }
    }

    pub fn apply(&mut self, id: ClientId, msg: ClientMessage) {
        let ClientMessage { id: request, token, command } = msg;
        let name = command.name();
        if let Command::ClaimDriver = command {
            match &self.driver {
                Some((holder, token)) if *holder == id => {
                    let token = token.clone();
                    self.send(id, ServerMessage::Driver { token })
                }
                Some(_) => self.error(id, request, ErrorCode::DriverTaken, "another client is driving"),
                None => {
                    let token = format!("{:016x}", rand::rng().random::<u64>());
                    self.driver = Some((id, token.clone()));
                    self.send(id, ServerMessage::Driver { token });
                }
            }
            return;
        }
        let is_driver = matches!((&self.driver, &token), (Some((holder, t)), Some(given)) if *holder == id && t == given);
        if !is_driver {
            self.error(id, request, ErrorCode::NotDriver, format!("'{name}' needs the driver token"));
            return;
        }
        match self.execute(command) {
            Ok(()) => {
                self.last_command = Some(name.to_string());
                let tick = self.sim.tick();
                self.send(id, ServerMessage::Ack { id: request, command: name.into(), tick });
                if name == "step" {
                    self.broadcast_state();
                }
            }
            Err((code, message)) => self.error(id, request, code, message),
        }
    }

    fn execute(&mut self, command: Command) -> Result<(), (ErrorCode, String)> {
        let rejected = |e: insertion_core::Error| (ErrorCode::Rejected, e.to_string());
        match command {
            Command::ClaimDriver => unreachable!("handled before dispatch"),
            Command::ReleaseDriver => self.driver = None,
            Command::SetMode { mode } => self.sim.set_mode(mode).map_err(rejected)?,
            Command::Jog { axis, delta } => {
                let limit = if axis < 3 {
                    self.config.jog_limit_linear
                } else {
                    self.config.jog_limit_angular
                };
                if !(delta.abs() <= limit) {
                    return Err((ErrorCode::Rejected, format!("jog of {delta} exceeds the limit {limit}")));
                }
                self.sim.jog(axis, delta).map_err(rejected)?
            }
            Command::ApplyWrench { wrench, duration } => {
                if self.sim.mode() != Mode::Admittance {
                    return Err((ErrorCode::Rejected, "apply_wrench needs admittance mode".into()));
                }
                self.sim.apply_wrench(Vector6::from(wrench), duration).map_err(rejected)?
            }
            Command::HapticTarget { x_h } => self.sim.set_haptic_target(x_h).map_err(rejected)?,
            Command::SetGains { gains } => {
                let merged = gains.apply(self.sim.gains());
                self.sim.set_gains(merged).map_err(rejected)?
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::Reset => {
                self.sim.reset().map_err(rejected)?;
                self.last_broadcast = None;
            }
            Command::Step { ticks } => {
                if !self.paused {
                    return Err((ErrorCode::Rejected, "step is only accepted while paused".into()));
                }
                if ticks > self.config.max_step_ticks {
                    return Err((ErrorCode::Rejected, format!("at most {} ticks per step", self.config.max_step_ticks)));
                }
                for _ in 0..ticks {
                    self.advance().map_err(|e| (ErrorCode::Simulation, e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    fn advance(&mut self) -> Result<(), insertion_core::Error> {
        if let Err(e) = self.sim.step() {
            self.paused = true;
            let message = e.to_string();
            self.broadcast(ServerMessage::Error { id: None, code: ErrorCode::Simulation, message });
            return Err(e);
        }
        if self.sim.tick() % self.broadcast_every == 0 {
            self.broadcast_state();
        }
        Ok(())
    }

    /// One free-running tick; does nothing while paused.
    pub fn tick(&mut self) -> Result<bool, TeleopError> {
        if self.paused {
            return Ok(false);
        }
        self.advance()?;
        Ok(true)
    }
}

pub fn state_from_record(
    r: &LogRecord,
    tick: u64,
    mode: Mode,
    paused: bool,
    punctured_layers: Vec<bool>,
    last_command: Option<String>,
) -> StateMessage {
    let e = &r.task_error;
    StateMessage {
        t: r.t,
        tick,
        mode,
        paused,
        pose: pose_message(&r.pose),
        desired: pose_message(&r.desired),
        task_error: [e[0], e[1], e[2], e[3], e[4], e[5]],
        q: r.q.iter().copied().collect(),
        depth: r.depth,
        theta: r.theta,
        v: r.velocity,
        f_t: r.sensed_force,
        haptic_target: r.haptic_target,
        drive_force: r.drive_force,
        puncture: r.events.contains(EventFlags::PUNCTURE),
        punctured_layers,
        saturation: SaturationFlags {
            force: r.events.contains(EventFlags::FORCE_SATURATED),
            speed: r.events.contains(EventFlags::SPEED_SATURATED),
            spin: r.events.contains(EventFlags::SPIN_SATURATED),
        },
        last_command,
    }
}
