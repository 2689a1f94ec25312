use borderwatch_core::protocol::{Message, Role};
use borderwatch_core::relay::{ConnId, DeviceEntry, NotificationTemplate, OperatorEntry, Outbound, Registry, Relay};
use borderwatch_core::store::{EventLog, MemoryLog, Query};
use proptest::prelude::*;

const TOKEN: &str = "374524ebf2ca430bacfd47e29e4156d";

fn relay() -> Relay<MemoryLog> {
    let devices = vec![
        DeviceEntry { token: TOKEN.into(), device_id: "gate-4".into(), display_name: "Gate 4".into() },
        DeviceEntry { token: "tok-d2".into(), device_id: "tower-1".into(), display_name: String::new() },
    ];
    let operators = vec![
        OperatorEntry { token: "op-a".into(), operator_id: "alice".into() },
        OperatorEntry { token: "op-b".into(), operator_id: "bob".into() },
    ];
    Relay::new(Registry::new(devices, operators).unwrap(), MemoryLog::new())
}

fn login(r: &mut Relay<MemoryLog>, role: Role, token: &str) -> (ConnId, Vec<Outbound>) {
    let c = r.connect();
    let out = r.handle_frame(c, 0, Message::Login { role, auth: token.into(), proto: 1 });
    (c, out)
}

fn operator(r: &mut Relay<MemoryLog>, token: &str, patterns: &[&str]) -> ConnId {
    let (c, _) = login(r, Role::Operator, token);
    r.handle_frame(c, 0, Message::Subscribe { devices: patterns.iter().map(|s| s.to_string()).collect() });
    c
}

fn notify(seq: u64) -> Message {
    Message::Notify { seq, ts_ms: seq * 10, text: "==> Motion detected".into() }
}

fn sends_to(out: &[Outbound], conn: ConnId) -> Vec<&Message> {
    out.iter()
        .filter_map(|o| match o {
            Outbound::Send(c, m) if *c == conn => Some(m),
            _ => None,
        })
        .collect()
}

fn events_in(out: &[Outbound]) -> usize {
    out.iter().filter(|o| matches!(o, Outbound::Send(_, Message::Event(_)))).count()
}

#[test]
fn registered_device_is_accepted() {
    let mut r = relay();
    let (c, out) = login(&mut r, Role::Device, TOKEN);
    assert_eq!(out, vec![Outbound::Send(c, Message::LoginAck { ok: true, id: "gate-4".into(), error: None })]);
    assert!(r.is_device_online("gate-4"));
}

#[test]
fn unknown_token_is_rejected_and_closed() {
    let mut r = relay();
    let (c, out) = login(&mut r, Role::Device, "nope");
    assert_eq!(
        out,
        vec![
            Outbound::Send(c, Message::LoginAck { ok: false, id: String::new(), error: Some("bad_auth".into()) }),
            Outbound::Close(c)
        ]
    );
    assert_eq!(r.connection_count(), 0);
    // operator token on the device role is not a device
    let (_, out) = login(&mut r, Role::Device, "op-a");
    assert!(matches!(&out[0], Outbound::Send(_, Message::LoginAck { ok: false, .. })));
}

#[test]
fn wrong_protocol_version_is_rejected() {
    let mut r = relay();
    let c = r.connect();
    let out = r.handle_frame(c, 0, Message::Login { role: Role::Device, auth: TOKEN.into(), proto: 2 });
    assert!(matches!(&out[0], Outbound::Send(_, Message::LoginAck { ok: false, error: Some(e), .. }) if e == "bad_proto"));
}

#[test]
fn second_login_on_same_connection_closes() {
    let mut r = relay();
    let (c, _) = login(&mut r, Role::Device, TOKEN);
    let out = r.handle_frame(c, 0, Message::Login { role: Role::Device, auth: TOKEN.into(), proto: 1 });
    assert!(matches!(&out[0], Outbound::Send(_, Message::Error { code, .. }) if code == "protocol"));
    assert_eq!(out[1], Outbound::Close(c));
    assert!(!r.is_device_online("gate-4"));
}

#[test]
fn newer_device_login_evicts_older() {
    let mut r = relay();
    let (first, _) = login(&mut r, Role::Device, TOKEN);
    let (second, out) = login(&mut r, Role::Device, TOKEN);
    assert!(out.contains(&Outbound::Close(first)));
    assert_eq!(r.device_connection("gate-4"), Some(second));

    let op = operator(&mut r, "op-a", &["*"]);
    let out = r.handle_frame(op, 5, Message::Command { device_id: "gate-4".into(), pin: "V1".into(), value: 1, cmd_id: 1 });
    let writes: Vec<_> = out
        .iter()
        .filter(|o| matches!(o, Outbound::Send(_, Message::HwWrite { .. })))
        .collect();
    assert_eq!(writes.len(), 1);
    assert!(matches!(writes[0], Outbound::Send(c, _) if *c == second));

    // frames on the evicted connection go nowhere
    assert!(r.handle_frame(first, 6, notify(1)).is_empty());
    // and its late disconnect does not unbind the live session
    r.disconnect(first);
    assert!(r.is_device_online("gate-4"));
}

#[test]
fn unauthenticated_frames_are_never_forwarded() {
    let mut r = relay();
    let op = operator(&mut r, "op-a", &["*"]);
    let c = r.connect();
    let out = r.handle_frame(c, 0, notify(1));
    assert_eq!(events_in(&out), 0);
    assert!(sends_to(&out, op).is_empty());
    assert!(matches!(&out[0], Outbound::Send(_, Message::Error { code, .. }) if code == "not_authenticated"));
    assert_eq!(out[1], Outbound::Close(c));
    assert!(r.store().query(&Query::all()).is_empty());
}

#[test]
fn notify_fans_out_to_subscribed_operators() {
    let mut r = relay();
    let a = operator(&mut r, "op-a", &["*"]);
    let b = operator(&mut r, "op-b", &["gate-*"]);
    let (d, _) = login(&mut r, Role::Device, TOKEN);
    let out = r.handle_frame(d, 100, notify(1));
    assert_eq!(r.store().query(&Query::all()).len(), 1);
    assert_eq!(events_in(&out), 2);
    assert_eq!(sends_to(&out, d), vec![&Message::NotifyAck { seq: 1 }]);
    for op in [a, b] {
        let got = sends_to(&out, op);
        assert!(matches!(got[..], [Message::Event(ref e)] if e.event_id == 1 && e.ts_ms == 100 && e.device_ts_ms == 10));
    }
}

#[test]
fn duplicate_notify_is_acked_without_fanout() {
    let mut r = relay();
    operator(&mut r, "op-a", &["*"]);
    let (d, _) = login(&mut r, Role::Device, TOKEN);
    r.handle_frame(d, 100, notify(1));
    let out = r.handle_frame(d, 200, notify(1));
    assert_eq!(out, vec![Outbound::Send(d, Message::NotifyAck { seq: 1 })]);
    assert_eq!(r.store().query(&Query::all()).len(), 1);
}

#[test]
fn unsubscribed_and_unmatched_operators_get_nothing() {
    let mut r = relay();
    let (silent, _) = login(&mut r, Role::Operator, "op-a");
    let other = operator(&mut r, "op-b", &["tower-1"]);
    let (d, _) = login(&mut r, Role::Device, TOKEN);
    let out = r.handle_frame(d, 1, notify(1));
    assert!(sends_to(&out, silent).is_empty());
    assert!(sends_to(&out, other).is_empty());
}

#[test]
fn template_applies_to_fanout() {
    let mut r = relay();
    r.set_template(NotificationTemplate::new("Intruder at {device}: {text}"));
    let op = operator(&mut r, "op-a", &["*"]);
    let (d, _) = login(&mut r, Role::Device, TOKEN);
    let out = r.handle_frame(d, 1, notify(1));
    match sends_to(&out, op)[..] {
        [Message::Event(e)] => assert_eq!(e.text, "Intruder at gate-4: ==> Motion detected"),
        ref other => panic!("unexpected {other:?}"),
    }
    // the log keeps what the device sent
    assert_eq!(r.store().query(&Query::all())[0].text, "==> Motion detected");
}

#[test]
fn command_routing() {
    let mut r = relay();
    let op = operator(&mut r, "op-a", &["*"]);
    let (d, _) = login(&mut r, Role::Device, TOKEN);

    let out = r.handle_frame(op, 7, Message::Command { device_id: "gate-4".into(), pin: "V1".into(), value: 1, cmd_id: 42 });
    assert_eq!(sends_to(&out, d), vec![&Message::HwWrite { pin: "V1".into(), value: 1, cmd_id: 1 }]);
    assert_eq!(sends_to(&out, op), vec![&Message::CommandAck { cmd_id: 42, delivered: true }]);

    // registered but offline
    let out = r.handle_frame(op, 8, Message::Command { device_id: "tower-1".into(), pin: "V1".into(), value: 1, cmd_id: 43 });
    assert_eq!(out, vec![Outbound::Send(op, Message::CommandAck { cmd_id: 43, delivered: false })]);

    let out = r.handle_frame(op, 9, Message::Command { device_id: "ghost".into(), pin: "V1".into(), value: 1, cmd_id: 44 });
    assert!(matches!(&out[..], [Outbound::Send(_, Message::Error { code, .. })] if code == "no_such_device"));

    let audits = r.store().index().audits();
    assert_eq!(audits.len(), 2);
    assert!(audits[0].delivered && !audits[1].delivered);
    assert_eq!((audits[0].cmd_id, audits[1].cmd_id), (1, 2));
    assert_eq!(audits[0].operator_id, "alice");
}

#[test]
fn devices_cannot_issue_operator_requests() {
    let mut r = relay();
    let (d, _) = login(&mut r, Role::Device, TOKEN);
    let out = r.handle_frame(d, 0, Message::Command { device_id: "gate-4".into(), pin: "V1".into(), value: 1, cmd_id: 1 });
    assert!(matches!(&out[..], [Outbound::Send(_, Message::Error { code, .. })] if code == "unexpected"));
    let out = r.handle_frame(d, 0, Message::HistoryRequest { device_id: None, from_ms: 0, to_ms: 1, limit: 1 });
    assert!(matches!(&out[..], [Outbound::Send(_, Message::Error { .. })]));
}

fn history(r: &mut Relay<MemoryLog>, op: ConnId, from_ms: u64, to_ms: u64, limit: u64) -> Vec<u64> {
    let out = r.handle_frame(op, 0, Message::HistoryRequest { device_id: None, from_ms, to_ms, limit });
    match &out[..] {
        [Outbound::Send(_, Message::HistoryResponse { events })] => events.iter().map(|e| e.event_id).collect(),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn history_examples() {
    let mut r = relay();
    let op = operator(&mut r, "op-a", &[]);
    assert!(history(&mut r, op, 0, u64::MAX, 100).is_empty());
    let (d, _) = login(&mut r, Role::Device, TOKEN);
    for (seq, ts) in [(1, 10), (2, 20), (3, 30), (4, 40), (5, 50)] {
        r.handle_frame(d, ts, notify(seq));
    }
    // brute-force oracle over the five server timestamps
    let stamps = [(1u64, 10u64), (2, 20), (3, 30), (4, 40), (5, 50)];
    let oracle: Vec<u64> = stamps.iter().filter(|(_, t)| (20..=40).contains(t)).map(|(id, _)| *id).collect();
    assert_eq!(history(&mut r, op, 20, 40, 100), oracle);
    assert_eq!(history(&mut r, op, 0, u64::MAX, 2), vec![1, 2]);

    let out = r.handle_frame(op, 0, Message::HistoryRequest { device_id: None, from_ms: 5, to_ms: 4, limit: 1 });
    assert!(matches!(&out[..], [Outbound::Send(_, Message::Error { code, .. })] if code == "bad_request"));
}

#[test]
fn heartbeat_is_echoed_with_server_time() {
    let mut r = relay();
    let (d, _) = login(&mut r, Role::Device, TOKEN);
    assert_eq!(r.handle_frame(d, 77, Message::Heartbeat { ts_ms: 1 }), vec![Outbound::Send(d, Message::Heartbeat { ts_ms: 77 })]);
}

proptest! {
    #[test]
    fn duplicated_delivery_stores_the_deduplicated_set(
        sends in proptest::collection::vec((0usize..2, 1u64..20), 1..120),
    ) {
        let mut r = relay();
        let op = operator(&mut r, "op-a", &["*"]);
        let (d1, _) = login(&mut r, Role::Device, TOKEN);
        let (d2, _) = login(&mut r, Role::Device, "tok-d2");
        let mut pushed = Vec::new();
        let mut expected = std::collections::BTreeSet::new();
        for (i, &(dev, seq)) in sends.iter().enumerate() {
            let (conn, name) = if dev == 0 { (d1, "gate-4") } else { (d2, "tower-1") };
            expected.insert((name.to_string(), seq));
            for o in r.handle_frame(conn, i as u64, notify(seq)) {
                if let Outbound::Send(c, Message::Event(e)) = o {
                    prop_assert_eq!(c, op);
                    pushed.push(e.event_id);
                }
            }
        }
        let stored: std::collections::BTreeSet<_> =
            r.store().query(&Query::all()).into_iter().map(|e| (e.device_id, e.device_seq)).collect();
        prop_assert_eq!(&stored, &expected);
        // one push per stored event, in event_id order
        prop_assert_eq!(pushed.len(), expected.len());
        prop_assert!(pushed.windows(2).all(|w| w[0] < w[1]));
    }
}
