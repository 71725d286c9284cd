mod common;

use std::io::Cursor;
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use proptest::prelude::*;

use szbench::annotations::{parse_events_tsv, render_events_tsv, Event, EventList};
use szbench::edf::{encode_header, write_edf_to, EdfHeader, EdfReader, SignalHeader, SignalMatrix};

fn ascii(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(0x20u8..0x7f, 0..=max)
        .prop_map(|b| String::from_utf8(b).unwrap().trim().to_string())
}

fn arb_signal(spr: usize) -> impl Strategy<Value = SignalHeader> {
    (ascii(16), ascii(8), -5000i32..0, 1i32..5000, -32768i32..-100, 100i32..32768).prop_map(
        move |(label, dim, pmin, pmax, dmin, dmax)| SignalHeader {
            label,
            transducer: "AgAgCl".into(),
            physical_dimension: dim,
            physical_min: pmin as f64 / 4.0,
            physical_max: pmax as f64 / 4.0,
            digital_min: dmin,
            digital_max: dmax,
            prefiltering: "HP:0.1Hz".into(),
            samples_per_record: spr,
            reserved: String::new(),
        },
    )
}

fn arb_file() -> impl Strategy<Value = (EdfHeader, SignalMatrix)> {
    let shape = (1usize..6, 1usize..64, 1u64..5, prop::sample::select(vec![0.5, 1.0, 2.0, 0.25]));
    shape.prop_flat_map(|(ns, base_spr, records, dur)| {
        let sigs = prop::collection::vec((1usize..3).prop_flat_map(move |m| arb_signal(base_spr * m)), ns);
        (sigs, ascii(80), ascii(80), 0i64..36500, 0u32..86400, Just(records), Just(dur), any::<u64>())
            .prop_map(|(signals, patient, recording, day, sec, records, dur, seed)| {
                let date = NaiveDate::from_ymd_opt(1985, 1, 1).unwrap() + chrono::Duration::days(day);
                let mut h = EdfHeader::new(
                    patient,
                    recording,
                    date.and_time(NaiveTime::from_num_seconds_from_midnight_opt(sec, 0).unwrap()),
                    dur,
                    records,
                    signals,
                );
                h.version = "0".into();
                let mut state = seed | 1;
                let samples = h
                    .signals
                    .iter()
                    .map(|s| {
                        (0..s.samples_per_record * records as usize)
                            .map(|_| {
                                state ^= state << 13;
                                state ^= state >> 7;
                                state ^= state << 17;
                                let u = (state >> 11) as f64 / (1u64 << 53) as f64;
                                s.physical_min + u * (s.physical_max - s.physical_min)
                            })
                            .collect()
                    })
                    .collect();
                let m = SignalMatrix {
                    channels: h.signals.iter().map(|s| s.label.clone()).collect(),
                    fs: (0..h.num_signals()).map(|i| h.sampling_rate(i)).collect(),
                    samples,
                    duration_s: records as f64 * dur,
                };
                (h, m)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edf_round_trip((header, signals) in arb_file()) {
        let mut bytes = Vec::new();
        write_edf_to(&header, &signals, &mut bytes).unwrap();
        let reader = EdfReader::new(Cursor::new(bytes.clone())).unwrap();
        let (h2, s2) = reader.read_to_end().unwrap();
        prop_assert_eq!(encode_header(&h2).unwrap(), bytes[..header.header_bytes].to_vec());
        prop_assert_eq!(h2.start_date, header.start_date);
        for ((sig, a), b) in header.signals.iter().zip(&signals.samples).zip(&s2.samples) {
            prop_assert_eq!(a.len(), b.len());
            let q = sig.quantization_step();
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= q, "{} vs {} (step {})", x, y, q);
            }
        }
    }

    #[test]
    fn tsv_round_trip(raw in prop::collection::vec((0u32..3_000_000, 1u32..600_000), 0..20), extra in 0u32..1000) {
        let events: Vec<Event> = raw.iter().map(|&(a, d)| Event::new(a as f64 / 1000.0, d as f64 / 1000.0)).collect();
        let duration = events.iter().map(|e| e.end_s()).fold(1.0f64, f64::max) + extra as f64 / 7.0;
        let list = EventList::new(duration, events);
        let text = render_events_tsv(&list);
        let back = parse_events_tsv(&text, duration, Path::new("mem.tsv")).unwrap();
        prop_assert_eq!(&back.events, &list.events);
        prop_assert_eq!(render_events_tsv(&EventList::new(duration, back.events.clone())), text);
    }
}
