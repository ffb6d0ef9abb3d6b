mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use ipembed::graph::{
    build_graphs, read_snapshot, write_snapshot, FeatureScaler, IntervalGraph, ProtocolVocab,
    NUMERIC_FEATURES,
};
use ipembed::zeek::ConnRecord;
use proptest::prelude::*;

const LEN: f64 = 600.0;

fn graphs_of(records: &[ConnRecord]) -> Vec<IntervalGraph> {
    let vocab = ProtocolVocab::fit_records(records).unwrap();
    build_graphs(records, LEN, 0.0, &vocab).unwrap()
}

/// Direct re-aggregation: per interval and ordered pair, per protocol, the
/// summed counters.
type Oracle = BTreeMap<(i64, IpAddr, IpAddr, String), [f64; NUMERIC_FEATURES]>;

fn oracle(records: &[ConnRecord]) -> Oracle {
    let mut out = Oracle::new();
    for r in records {
        let k = ((r.ts / LEN).floor() as i64, r.source_ip, r.destination_ip, r.protocol_service.clone());
        let v = [
            r.request_bytes as f64,
            r.response_bytes as f64,
            r.duration,
            r.bytes as f64,
            r.request_packets as f64,
            r.response_packets as f64,
            r.request_ip_bytes as f64,
            r.response_ip_bytes as f64,
        ];
        let slot = out.entry(k).or_insert([0.0; NUMERIC_FEATURES]);
        for (s, x) in slot.iter_mut().zip(v) {
            *s += x;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn edges_pair_up_with_identical_features(records in prop::collection::vec(common::arb_record(3000.0), 1..100)) {
        for g in graphs_of(&records) {
            prop_assert_eq!(g.num_edges() % 2, 0);
            for k in (0..g.num_edges()).step_by(2) {
                let (f, r) = (g.edges[k], g.edges[k + 1]);
                prop_assert!(!f.reverse && r.reverse);
                prop_assert_eq!((f.source, f.destination), (r.destination, r.source));
                prop_assert_eq!(g.raw.row(k), g.raw.row(k + 1));
            }
            let forward: BTreeSet<(usize, usize)> = g.edges.iter().filter(|e| !e.reverse)
                .map(|e| (e.source, e.destination)).collect();
            prop_assert_eq!(forward.len() * 2, g.num_edges());
            prop_assert!(g.edges.iter().all(|e| e.source < g.num_nodes() && e.destination < g.num_nodes()));
            prop_assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn numeric_blocks_match_brute_force_aggregation(records in prop::collection::vec(common::arb_record(3000.0), 1..100)) {
        let expected = oracle(&records);
        let graphs = graphs_of(&records);
        let mut seen = 0;
        for g in &graphs {
            let p = g.vocab.len();
            for (k, e) in g.edges.iter().enumerate().filter(|(_, e)| !e.reverse) {
                let (s, d) = (g.nodes[e.source], g.nodes[e.destination]);
                let row = g.raw.row(k);
                for (slot, token) in g.vocab.tokens().iter().enumerate() {
                    let key = (g.interval, s, d, token.clone());
                    let block = &row[p + slot * NUMERIC_FEATURES..p + (slot + 1) * NUMERIC_FEATURES];
                    match expected.get(&key) {
                        Some(sum) => {
                            prop_assert_eq!(row[slot], 1.0);
                            for (a, b) in block.iter().zip(sum) {
                                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                            }
                            seen += 1;
                        }
                        None => {
                            prop_assert_eq!(row[slot], 0.0);
                            prop_assert!(block.iter().all(|&x| x == 0.0));
                        }
                    }
                }
            }
        }
        prop_assert_eq!(seen, expected.len());
    }

    #[test]
    fn building_is_deterministic(records in prop::collection::vec(common::arb_record(3000.0), 1..60)) {
        prop_assert_eq!(graphs_of(&records), graphs_of(&records));
    }

    #[test]
    fn normalization_is_bounded_and_monotone(
        records in prop::collection::vec(common::arb_record(3000.0), 1..60),
        a in 0.0..1e7f64,
        b in 0.0..1e7f64,
    ) {
        let mut graphs = graphs_of(&records);
        let scaler = FeatureScaler::fit(&graphs).unwrap();
        prop_assert!(scaler.maxima().iter().all(|&m| m > 0.0));
        for g in &mut graphs {
            scaler.normalize(g).unwrap();
            let norm = g.normalized.as_ref().unwrap();
            prop_assert!(norm.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for dim in 0..scaler.maxima().len() {
            prop_assert!(scaler.normalize_value(dim, lo) <= scaler.normalize_value(dim, hi));
        }
    }

    #[test]
    fn snapshot_round_trip(records in prop::collection::vec(common::arb_record(3000.0), 1..40)) {
        for g in graphs_of(&records) {
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &g).unwrap();
            prop_assert_eq!(read_snapshot(buf.as_slice()).unwrap(), g);
        }
    }
}

#[test]
fn unseen_protocol_pools_into_other() {
    let mut records: Vec<ConnRecord> = Vec::new();
    let mut add = |proto: &str, bytes: u64| {
        records.push(ConnRecord {
            ts: 1.0,
            source_ip: "10.0.0.1".parse().unwrap(),
            destination_ip: "10.0.0.2".parse().unwrap(),
            source_port: 1,
            destination_port: 2,
            protocol_service: proto.into(),
            duration: 0.0,
            request_bytes: bytes,
            response_bytes: 0,
            bytes,
            request_packets: 1,
            response_packets: 0,
            request_ip_bytes: bytes + 40,
            response_ip_bytes: 0,
        })
    };
    add("dns", 5);
    add("smtp", 7);
    add("ftp", 11);
    let vocab = ProtocolVocab::from_tokens(vec!["dns".into(), "other".into()]).unwrap();
    let g = &build_graphs(&records, LEN, 0.0, &vocab).unwrap()[0];
    let row = g.raw.row(0);
    assert_eq!(&row[..2], &[1.0, 1.0]);
    assert_eq!(row[2], 5.0);
    assert_eq!(row[2 + NUMERIC_FEATURES], 18.0);
}
