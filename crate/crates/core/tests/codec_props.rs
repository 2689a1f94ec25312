use borderwatch_core::protocol::{decode, encode, Event, LineFramer, Message, Role};
use proptest::prelude::*;

fn text() -> impl Strategy<Value = String> {
    // any unicode, including quotes, escapes and newlines
    prop_oneof![".{0,24}", "[a-z0-9\\-]{1,12}", Just("==> Motion detected".to_string())]
}

fn event() -> impl Strategy<Value = Event> {
    (any::<u64>(), text(), any::<u64>(), any::<u64>(), text()).prop_map(
        |(event_id, device_id, ts_ms, device_ts_ms, text)| Event { event_id, device_id, ts_ms, device_ts_ms, text },
    )
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (prop_oneof![Just(Role::Device), Just(Role::Operator)], text(), any::<u32>())
            .prop_map(|(role, auth, proto)| Message::Login { role, auth, proto }),
        (any::<bool>(), text(), proptest::option::of(text()))
            .prop_map(|(ok, id, error)| Message::LoginAck { ok, id, error }),
        (any::<u64>(), any::<u64>(), text()).prop_map(|(seq, ts_ms, text)| Message::Notify { seq, ts_ms, text }),
        any::<u64>().prop_map(|seq| Message::NotifyAck { seq }),
        any::<u64>().prop_map(|ts_ms| Message::Heartbeat { ts_ms }),
        (text(), text(), any::<i64>(), any::<u64>())
            .prop_map(|(device_id, pin, value, cmd_id)| Message::Command { device_id, pin, value, cmd_id }),
        (text(), any::<i64>(), any::<u64>()).prop_map(|(pin, value, cmd_id)| Message::HwWrite { pin, value, cmd_id }),
        (any::<u64>(), any::<bool>()).prop_map(|(cmd_id, delivered)| Message::CommandAck { cmd_id, delivered }),
        proptest::collection::vec(text(), 0..4).prop_map(|devices| Message::Subscribe { devices }),
        event().prop_map(Message::Event),
        (proptest::option::of(text()), any::<u64>(), any::<u64>(), any::<u64>()).prop_map(
            |(device_id, from_ms, to_ms, limit)| Message::HistoryRequest { device_id, from_ms, to_ms, limit }
        ),
        proptest::collection::vec(event(), 0..4).prop_map(|events| Message::HistoryResponse { events }),
        (text(), text()).prop_map(|(code, detail)| Message::Error { code, detail }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(m in message()) {
        let bytes = encode(&m);
        prop_assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
        prop_assert_eq!(*bytes.last().unwrap(), b'\n');
        prop_assert!(bytes.starts_with(br#"{"type":"#), "type must lead");
        prop_assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn framing_preserves_order(ms in proptest::collection::vec(message(), 0..20), split in any::<prop::sample::Index>()) {
        let stream: Vec<u8> = ms.iter().flat_map(encode).collect();
        let cut = if stream.is_empty() { 0 } else { split.index(stream.len()) };
        let mut framer = LineFramer::new();
        let mut lines = framer.push(&stream[..cut]).unwrap();
        lines.extend(framer.push(&stream[cut..]).unwrap());
        let decoded: Vec<Message> = lines.iter().map(|l| decode(l).unwrap()).collect();
        prop_assert_eq!(decoded, ms);
    }

    #[test]
    fn decoder_survives_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..4096)) {
        let _ = decode(&bytes);
    }

    #[test]
    fn decoder_survives_mutated_frames(m in message(), pos in any::<prop::sample::Index>(), b in any::<u8>()) {
        let mut bytes = encode(&m);
        let i = pos.index(bytes.len());
        bytes[i] = b;
        let _ = decode(&bytes);
    }
}
