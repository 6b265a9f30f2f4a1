use std::sync::Arc;

use insertion_core::experiments::{insertion_scenario, ExperimentConfig};
use insertion_core::scenario::{Mode, Scenario};
use insertion_teleop::outbox::Outbox;
use insertion_teleop::protocol::{encode_command, ClientMessage, Command, ErrorCode, ServerMessage, StateMessage};
use insertion_teleop::service::{ClientId, Service, ServiceConfig};

fn drain(out: &Arc<Outbox>) -> Vec<ServerMessage> {
    std::iter::from_fn(|| out.pop().map(|e| e.message)).collect()
}

fn last_state(msgs: &[ServerMessage]) -> Option<StateMessage> {
    msgs.iter().rev().find_map(|m| match m {
        ServerMessage::State(s) => Some(s.clone()),
        _ => None,
    })
}

fn send(service: &mut Service, id: ClientId, token: Option<&str>, command: Command) {
    let mut msg = ClientMessage::new(command).with_id(1);
    if let Some(t) = token {
        msg = msg.with_token(t);
    }
    service.handle(id, &encode_command(&msg));
}

fn claim(service: &mut Service, id: ClientId, out: &Arc<Outbox>) -> String {
    send(service, id, None, Command::ClaimDriver);
    drain(out)
        .into_iter()
        .find_map(|m| match m {
            ServerMessage::Driver { token } => Some(token),
            _ => None,
        })
        .expect("driver token")
}

fn insert_service() -> Service {
    let cfg = ExperimentConfig::default();
    let mut s = insertion_scenario(&cfg, 1, 0.001).unwrap();
    s.insertion.profile = None;
    Service::new(s, ServiceConfig::default()).unwrap()
}

#[test]
fn welcome_then_state_on_connect() {
    let mut service = insert_service();
    let (id, out) = service.connect();
    let msgs = drain(&out);
    assert!(matches!(&msgs[0], ServerMessage::Welcome { session, driver_present: false, .. } if *session == id));
    assert_eq!(last_state(&msgs).unwrap().tick, 0);
}

#[test]
fn malformed_lines_get_protocol_errors_and_session_survives() {
    let mut service = insert_service();
    let (id, out) = service.connect();
    drain(&out);
    for line in ["garbage", "{\"v\":\"v1\",\"type\":\"fly\"}", "{\"type\":\"pause\"}", "{\"v\":\"v1\",\"type\":\"jog\",\"axis\":\"z\"}"] {
        service.handle(id, line);
        let msgs = drain(&out);
        assert!(
            matches!(msgs.as_slice(), [ServerMessage::Error { code: ErrorCode::Protocol, .. }]),
            "{line}: {msgs:?}"
        );
    }
    assert_eq!(service.client_count(), 1);
    let token = claim(&mut service, id, &out);
    send(&mut service, id, Some(&token), Command::Pause);
    assert!(service.is_paused());
}

#[test]
fn viewers_cannot_drive() {
    let mut service = insert_service();
    let (driver, dout) = service.connect();
    let (viewer, vout) = service.connect();
    let token = claim(&mut service, driver, &dout);

    send(&mut service, viewer, None, Command::Pause);
    send(&mut service, viewer, Some(&token), Command::Pause);
    send(&mut service, viewer, None, Command::ClaimDriver);
    let codes: Vec<ErrorCode> = drain(&vout)
        .into_iter()
        .filter_map(|m| match m {
            ServerMessage::Error { code, .. } => Some(code),
            _ => None,
        })
        .collect();
    assert_eq!(codes, [ErrorCode::NotDriver, ErrorCode::NotDriver, ErrorCode::DriverTaken]);
    assert!(!service.is_paused());

    send(&mut service, driver, Some("wrong"), Command::Pause);
    assert!(!service.is_paused());
    send(&mut service, driver, Some(&token), Command::Pause);
    assert!(service.is_paused());

    // the seat frees up when the driver leaves
    service.disconnect(driver);
    assert!(dout.is_closed());
    let new_token = claim(&mut service, viewer, &vout);
    assert_ne!(new_token, token);
}

#[test]
fn pause_and_resume_keep_time_continuous() {
    let mut service = insert_service();
    let (id, out) = service.connect();
    let token = claim(&mut service, id, &out);
    for _ in 0..50 {
        service.tick().unwrap();
    }
    send(&mut service, id, Some(&token), Command::Pause);
    let t_pause = service.time();
    for _ in 0..20 {
        assert!(!service.tick().unwrap());
    }
    assert_eq!(service.time(), t_pause);
    send(&mut service, id, Some(&token), Command::Resume);
    service.tick().unwrap();
    let dt = service.simulation().scenario().dt;
    assert!((service.time() - (t_pause + dt)).abs() < 1e-12);
}

#[test]
fn step_only_while_paused_and_broadcasts_state() {
    let mut service = insert_service();
    let (id, out) = service.connect();
    let (_viewer, vout) = service.connect();
    let token = claim(&mut service, id, &out);
    drain(&vout);

    send(&mut service, id, Some(&token), Command::Step { ticks: 3 });
    assert!(matches!(drain(&out).as_slice(), [ServerMessage::Error { code: ErrorCode::Rejected, .. }]));

    send(&mut service, id, Some(&token), Command::Pause);
    send(&mut service, id, Some(&token), Command::Step { ticks: 3 });
    let msgs = drain(&out);
    assert!(msgs.iter().any(|m| matches!(m, ServerMessage::Ack { command, tick: 3, .. } if command == "step")));
    assert_eq!(last_state(&drain(&vout)).unwrap().tick, 3);
}

#[test]
fn haptic_target_converges() {
    let mut service = insert_service();
    let (id, out) = service.connect();
    let token = claim(&mut service, id, &out);
    send(&mut service, id, Some(&token), Command::SetMode { mode: Mode::Insert });
    send(&mut service, id, Some(&token), Command::HapticTarget { x_h: 0.005 });
    for _ in 0..3000 {
        service.tick().unwrap();
    }
    let state = service.state_message();
    assert!((state.depth - 0.005).abs() < 1e-4, "depth {}", state.depth);
    assert_eq!(state.haptic_target, 0.005);
    assert_eq!(state.last_command.as_deref(), Some("haptic_target"));
}

#[test]
fn oversized_jog_is_rejected() {
    let mut service = Service::new(Scenario::new("hold", Mode::Track, 60.0), ServiceConfig::default()).unwrap();
    let (id, out) = service.connect();
    let token = claim(&mut service, id, &out);
    send(&mut service, id, Some(&token), Command::Jog { axis: 0, delta: 0.5 });
    assert!(matches!(drain(&out).as_slice(), [ServerMessage::Error { code: ErrorCode::Rejected, .. }]));
    send(&mut service, id, Some(&token), Command::Jog { axis: 0, delta: 0.005 });
    assert!(matches!(drain(&out).as_slice(), [ServerMessage::Ack { .. }]));
}

#[test]
fn wrench_needs_admittance_mode() {
    let mut service = Service::new(Scenario::new("hold", Mode::Track, 60.0), ServiceConfig::default()).unwrap();
    let (id, out) = service.connect();
    let token = claim(&mut service, id, &out);
    let wrench = Command::ApplyWrench { wrench: [2.0, 0.0, 0.0, 0.0, 0.0, 0.0], duration: 0.2 };
    send(&mut service, id, Some(&token), wrench.clone());
    assert!(matches!(drain(&out).as_slice(), [ServerMessage::Error { code: ErrorCode::Rejected, .. }]));
    send(&mut service, id, Some(&token), Command::SetMode { mode: Mode::Admittance });
    let x0 = service.state_message().pose.xyz[0];
    send(&mut service, id, Some(&token), wrench);
    for _ in 0..500 {
        service.tick().unwrap();
    }
    assert!(service.state_message().pose.xyz[0] > x0 + 1e-3);
}

#[test]
fn simulation_failure_pauses_and_reports() {
    let mut service = Service::new(Scenario::new("hold", Mode::Track, 60.0), ServiceConfig::default()).unwrap();
    let (id, out) = service.connect();
    let token = claim(&mut service, id, &out);
    let gains = r#"{"v":"v1","type":"set_gains","gains":{"kp":[1e300,1e300,1e300,1e300,1e300,1e300]},"token":"TOKEN"}"#;
    service.handle(id, &gains.replace("TOKEN", &token));
    // at rest the error is zero, so nudge the reference
    send(&mut service, id, Some(&token), Command::Jog { axis: 2, delta: 0.005 });
    assert!(drain(&out).iter().all(|m| matches!(m, ServerMessage::Ack { .. })));
    for _ in 0..100 {
        if service.tick().is_err() {
            break;
        }
    }
    assert!(service.is_paused());
    assert!(drain(&out).iter().any(|m| matches!(m, ServerMessage::Error { code: ErrorCode::Simulation, .. })));
}

#[test]
fn reset_restarts_the_clock() {
    let mut service = insert_service();
    let (id, out) = service.connect();
    let token = claim(&mut service, id, &out);
    for _ in 0..30 {
        service.tick().unwrap();
    }
    send(&mut service, id, Some(&token), Command::Reset);
    assert_eq!(service.time(), 0.0);
    assert_eq!(service.state_message().tick, 0);
}
