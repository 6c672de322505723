#[path = "support/oracles.rs"]
mod oracles;

use ozforge_core::trace::{HelpRequestPayload, ObjectKind, Payload, RequestType, Timestamp, TraceRecord, UserAction, UserEventPayload};
use ozforge_core::wire::*;
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frame_bytes(rng: &mut impl RngCore, len: usize) -> Vec<u8> {
    let mut v = vec![0; len];
    rng.fill_bytes(&mut v);
    v
}

#[test]
fn seeded_loss_matches_the_replayed_generator() {
    let mut ch = LossyChannel::new(0.05, 0.0, 42);
    let delivered = ch.transmit((0..10_000u32).map(|i| i.to_be_bytes().to_vec()));
    let expected = oracles::seeded_drops(42, 0.05, 10_000);
    let dropped = expected.iter().filter(|d| **d).count() as u64;
    assert_eq!(ch.stats().dropped, dropped);
    let survivors: Vec<Vec<u8>> =
        (0..10_000u32).filter(|i| !expected[*i as usize]).map(|i| i.to_be_bytes().to_vec()).collect();
    assert_eq!(delivered, survivors);
    // replayable
    let mut again = LossyChannel::new(0.05, 0.0, 42);
    assert_eq!(again.transmit((0..10_000u32).map(|i| i.to_be_bytes().to_vec())), delivered);
}

#[test]
fn extreme_loss_rates() {
    let mut none = LossyChannel::new(0.0, 0.0, 1);
    let all: Vec<Vec<u8>> = (0..100u8).map(|b| vec![b]).collect();
    assert_eq!(none.transmit(all.clone()), all);
    let mut total = LossyChannel::new(1.0, 0.0, 1);
    assert!(total.transmit(all).is_empty());
}

#[test]
fn incomplete_frames_match_the_loss_pattern() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames: Vec<Vec<u8>> = (0..200).map(|_| {
        let len = rng.gen_range(0..40_000);
        frame_bytes(&mut rng, len)
    }).collect();
    let mut per_frame = Vec::new();
    let mut datagrams = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let d = chunk_frame(f, 3, i as u32, i as u64 * 33_000, DEFAULT_MAX_DATAGRAM).unwrap();
        per_frame.push(d.len());
        datagrams.extend(d);
    }
    let drops = oracles::seeded_drops(9, 0.05, datagrams.len());
    let mut ch = LossyChannel::new(0.05, 0.0, 9);
    let mut r = Reassembler::default();
    let mut delivered = Vec::new();
    for d in ch.transmit(datagrams) {
        if let Some(done) = r.push(parse_datagram(&d).unwrap()) {
            delivered.push(done);
        }
    }
    let stats = r.finish();
    assert_eq!(stats.dropped_incomplete as usize, oracles::partially_lost_frames(&per_frame, &drops));
    let mut at = 0;
    let intact: Vec<usize> = per_frame
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| {
            let ok = drops[at..at + c].iter().all(|d| !d);
            at += c;
            ok.then_some(i)
        })
        .collect();
    assert_eq!(delivered.iter().map(|f| f.frame_seq as usize).collect::<Vec<_>>(), intact);
    for f in &delivered {
        assert_eq!(f.bytes, frames[f.frame_seq as usize]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn lossy_reordered_delivery_is_never_corrupt(
        seed in any::<u64>(),
        sizes in prop::collection::vec(0usize..=512 * 1024, 1..12),
        p_loss in 0.0f64..0.2,
        p_reorder in 0.0f64..0.5,
        max_datagram in 64usize..=1500,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Vec<u8>> = sizes.iter().map(|&n| frame_bytes(&mut rng, n)).collect();
        let mut ch = LossyChannel::new(p_loss, p_reorder, seed);
        let mut r = Reassembler::default();
        let mut out = Vec::new();
        let mut last = None;
        for (i, f) in frames.iter().enumerate() {
            let Ok(dgs) = chunk_frame(f, 1, i as u32, i as u64, max_datagram) else {
                // too many chunks for this datagram size
                prop_assert!(chunk_count(f.len(), max_datagram) > 65_535);
                continue;
            };
            for d in ch.transmit(dgs) {
                if let Some(done) = r.push(parse_datagram(&d).unwrap()) {
                    prop_assert!(last.is_none_or(|l| done.frame_seq > l));
                    last = Some(done.frame_seq);
                    out.push(done);
                }
            }
        }
        for d in ch.flush() {
            if let Some(done) = r.push(parse_datagram(&d).unwrap()) {
                out.push(done);
            }
        }
        let stats = r.finish();
        prop_assert_eq!(stats.delivered as usize, out.len());
        for f in &out {
            prop_assert_eq!(&f.bytes, &frames[f.frame_seq as usize]);
            prop_assert_eq!(f.t_us, u64::from(f.frame_seq));
        }
        if p_loss == 0.0 && p_reorder == 0.0 {
            prop_assert_eq!(stats.dropped_incomplete, 0);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic_the_parser(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = parse_datagram(&bytes);
    }

    #[test]
    fn any_single_bit_flip_is_rejected(len in 0usize..600, bit in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = frame_bytes(&mut rng, len);
        let mut d = chunk_frame(&data, 7, 1, 2, 1400).unwrap().remove(0);
        let i = bit.index(d.len() * 8);
        d[i / 8] ^= 1 << (i % 8);
        prop_assert!(parse_datagram(&d).is_err());
    }
}

fn sample_messages(rng: &mut ChaCha8Rng, n: usize) -> Vec<ControlMessage> {
    (0..n)
        .map(|i| match rng.gen_range(0..6) {
            0 => ControlMessage::Heartbeat { t_us: rng.gen() },
            1 => ControlMessage::HelpRequest {
                seq: i as u64,
                t_us: rng.gen(),
                request: HelpRequestPayload::new(RequestType::Explanation, ObjectKind::Lexicon, "tools/brush"),
            },
            2 => ControlMessage::Undo { command_id: i as u64, n: rng.gen_range(1..9) },
            3 => ControlMessage::ActivateMessage { command_id: i as u64, message_id: format!("m{i:04}") },
            4 => ControlMessage::EventBatch {
                events: (0..rng.gen_range(0..20))
                    .map(|k| TraceRecord {
                        seq: k,
                        t: Timestamp(k * 1000),
                        payload: Payload::UserEvent(UserEventPayload {
                            action: UserAction::KeyPress,
                            cursor_x: 1,
                            cursor_y: 2,
                            detail: "é\n\"".into(),
                        }),
                    })
                    .collect(),
            },
            _ => ControlMessage::Hello {
                session_id: rng.gen(),
                subject_label: "subject".into(),
                accepted: Some(rng.gen()),
                reason: None,
            },
        })
        .collect()
}

proptest! {
    #[test]
    fn control_stream_survives_any_split(seed in any::<u64>(), n in 0usize..30, max_piece in 1usize..64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let msgs = sample_messages(&mut rng, n);
        let stream: Vec<u8> = msgs.iter().flat_map(|m| encode_control(m).unwrap()).collect();
        let mut dec = ControlDecoder::new();
        let mut got = Vec::new();
        let mut at = 0;
        while at < stream.len() {
            let piece = rng.gen_range(1..=max_piece).min(stream.len() - at);
            got.extend(dec.decode(&stream[at..at + piece]).unwrap());
            at += piece;
        }
        prop_assert_eq!(got, msgs);
        prop_assert_eq!(dec.buffered(), 0);
    }
}

#[test]
fn one_byte_increments_decode_both_messages_in_order() {
    let a = ControlMessage::Heartbeat { t_us: 5 };
    let b = ControlMessage::Undo { command_id: 1, n: 2 };
    let stream: Vec<u8> = [encode_control(&a).unwrap(), encode_control(&b).unwrap()].concat();
    let mut dec = ControlDecoder::new();
    let mut got = Vec::new();
    for byte in stream {
        got.extend(dec.decode(&[byte]).unwrap());
    }
    assert_eq!(got, vec![a, b]);
}

#[test]
fn oversized_length_poisons_the_stream() {
    let mut dec = ControlDecoder::new();
    dec.feed(&(2u32 << 20).to_be_bytes());
    assert!(matches!(dec.next_message(), Err(ProtocolError::TooLong(_))));
    dec.feed(&encode_control(&ControlMessage::Heartbeat { t_us: 1 }).unwrap());
    assert!(dec.next_message().is_err());
}

#[test]
fn malformed_body_is_skipped() {
    let mut stream = 5u32.to_be_bytes().to_vec();
    stream.extend_from_slice(b"{nope");
    stream.extend(encode_control(&ControlMessage::Heartbeat { t_us: 9 }).unwrap());
    let mut dec = ControlDecoder::new();
    dec.feed(&stream);
    match dec.next_message() {
        Err(ProtocolError::Malformed { raw, .. }) => assert_eq!(raw, b"{nope"),
        other => panic!("{other:?}"),
    }
    assert_eq!(dec.next_message().unwrap(), Some(ControlMessage::Heartbeat { t_us: 9 }));
}
