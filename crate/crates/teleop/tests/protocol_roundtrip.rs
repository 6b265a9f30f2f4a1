use insertion_core::scenario::Mode;
use insertion_teleop::protocol::{
    decode_command, decode_server, encode_command, encode_server, ClientMessage, Command, Envelope, ErrorCode,
    GainPatch, PoseMessage, SaturationFlags, ServerMessage, StateMessage, COMMAND_TYPES,
};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3..1e3f64, Just(0.0), Just(-0.0), Just(1e-300), Just(f64::MAX)]
}

fn arr<const N: usize>() -> impl Strategy<Value = [f64; N]> {
    proptest::collection::vec(finite(), N).prop_map(|v| v.try_into().unwrap())
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Track), Just(Mode::Admittance), Just(Mode::Insert)]
}

fn gains() -> impl Strategy<Value = GainPatch> {
    (
        proptest::option::of(arr::<6>()),
        proptest::option::of(arr::<6>()),
        proptest::option::of(finite()),
        proptest::option::of(finite()),
        proptest::option::of(finite()),
        proptest::option::of(finite()),
    )
        .prop_map(|(kp, kd, insertion_kp, insertion_kd, insertion_ko, damping_lambda)| GainPatch {
            kp,
            kd,
            insertion_kp,
            insertion_kd,
            insertion_ko,
            damping_lambda,
        })
}

fn command() -> impl Strategy<Value = Command> {
    prop_oneof![
        Just(Command::ClaimDriver),
        Just(Command::ReleaseDriver),
        mode().prop_map(|mode| Command::SetMode { mode }),
        (0usize..6, finite()).prop_map(|(axis, delta)| Command::Jog { axis, delta }),
        (arr::<6>(), finite()).prop_map(|(wrench, duration)| Command::ApplyWrench { wrench, duration }),
        finite().prop_map(|x_h| Command::HapticTarget { x_h }),
        gains().prop_map(|gains| Command::SetGains { gains }),
        Just(Command::Pause),
        Just(Command::Resume),
        Just(Command::Reset),
        any::<u64>().prop_map(|ticks| Command::Step { ticks }),
    ]
}

fn pose() -> impl Strategy<Value = PoseMessage> {
    (arr::<3>(), arr::<3>()).prop_map(|(xyz, rotvec)| PoseMessage { xyz, rotvec })
}

fn state() -> impl Strategy<Value = StateMessage> {
    (
        (finite(), any::<u64>(), mode(), any::<bool>(), pose(), pose(), arr::<6>()),
        (proptest::collection::vec(finite(), 0..8), arr::<6>(), any::<bool>()),
        (proptest::collection::vec(any::<bool>(), 0..4), any::<[bool; 3]>(), proptest::option::of("[a-z_]{1,12}")),
    )
        .prop_map(|((t, tick, mode, paused, pose, desired, task_error), (q, f, puncture), (layers, sat, last))| {
            StateMessage {
                t,
                tick,
                mode,
                paused,
                pose,
                desired,
                task_error,
                q,
                depth: f[0],
                theta: f[1],
                v: f[2],
                f_t: f[3],
                haptic_target: f[4],
                drive_force: f[5],
                puncture,
                punctured_layers: layers,
                saturation: SaturationFlags { force: sat[0], speed: sat[1], spin: sat[2] },
                last_command: last,
            }
        })
}

fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop_oneof![
        Just(ErrorCode::Protocol),
        Just(ErrorCode::NotDriver),
        Just(ErrorCode::DriverTaken),
        Just(ErrorCode::Rejected),
        Just(ErrorCode::Simulation),
        Just(ErrorCode::Busy),
    ]
}

fn server_message() -> impl Strategy<Value = ServerMessage> {
    prop_oneof![
        (any::<u64>(), ".{0,20}", finite(), any::<bool>()).prop_map(|(session, scenario, dt, driver_present)| {
            ServerMessage::Welcome { session, scenario, dt, driver_present }
        }),
        "[0-9a-f]{16}".prop_map(|token| ServerMessage::Driver { token }),
        (proptest::option::of(any::<u64>()), "[a-z_]{1,16}", any::<u64>())
            .prop_map(|(id, command, tick)| ServerMessage::Ack { id, command, tick }),
        (proptest::option::of(any::<u64>()), error_code(), ".{0,40}")
            .prop_map(|(id, code, message)| ServerMessage::Error { id, code, message }),
        state().prop_map(ServerMessage::State),
        (any::<u64>(), finite(), any::<u64>()).prop_map(|(seq, t, wall_ms)| ServerMessage::Heartbeat { seq, t, wall_ms }),
    ]
}

proptest! {
    #[test]
    fn commands_round_trip(
        command in command(),
        id in proptest::option::of(any::<u64>()),
        token in proptest::option::of("[0-9a-f]{16}"),
    ) {
        let msg = ClientMessage { id, token, command };
        let line = encode_command(&msg);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(decode_command(&line).unwrap(), msg);
    }

    #[test]
    fn server_messages_round_trip(message in server_message(), dropped in prop_oneof![Just(0u64), any::<u64>()]) {
        let envelope = Envelope { message, dropped };
        let line = encode_server(&envelope);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(decode_server(&line).unwrap(), envelope);
    }

    #[test]
    fn arbitrary_text_never_panics(line in ".{0,200}") {
        let _ = decode_command(&line);
    }
}

#[test]
fn every_command_type_is_listed() {
    let samples = [
        Command::ClaimDriver,
        Command::ReleaseDriver,
        Command::SetMode { mode: Mode::Track },
        Command::Jog { axis: 0, delta: 0.0 },
        Command::ApplyWrench { wrench: [0.0; 6], duration: 0.0 },
        Command::HapticTarget { x_h: 0.0 },
        Command::SetGains { gains: GainPatch::default() },
        Command::Pause,
        Command::Resume,
        Command::Reset,
        Command::Step { ticks: 1 },
    ];
    let names: Vec<&str> = samples.iter().map(Command::name).collect();
    assert_eq!(names, COMMAND_TYPES);
}

#[test]
fn envelope_carries_version_and_drop_count() {
    let line = encode_server(&Envelope {
        message: ServerMessage::Heartbeat { seq: 1, t: 0.5, wall_ms: 3 },
        dropped: 2,
    });
    assert!(line.contains("\"dropped\":2"));
    assert!(line.contains("\"v\":\"v1\""));
}
