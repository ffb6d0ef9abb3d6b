mod common;

use std::fs::File;
use std::io::{BufReader, Cursor};
use std::path::PathBuf;

use ipembed::zeek::{
    canonical_header, parse_conn_log, read_conn_log, write_canonical_tsv, ConnRecord, LogFormat,
    ParseError,
};
use proptest::prelude::*;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn read_fixture(name: &str, format: LogFormat) -> (Vec<ConnRecord>, ipembed::zeek::ParseStats) {
    let f = BufReader::new(File::open(fixture(name)).unwrap());
    read_conn_log(f, format, false).unwrap()
}

#[test]
fn thousand_row_fixture_skips_exactly_the_corrupted_rows() {
    let (records, stats) = read_fixture("conn_1000.log", LogFormat::Tsv);
    assert_eq!(records.len(), 997);
    assert_eq!((stats.read, stats.emitted, stats.skipped), (1000, 997, 3));
    assert!(records.windows(2).all(|w| w[0].ts <= w[1].ts));
}

#[test]
fn thousand_row_fixture_field_values() {
    let (records, _) = read_fixture("conn_1000.log", LogFormat::Tsv);
    let first = &records[0];
    assert_eq!(first.ts, 1600000265.292094);
    assert_eq!(first.source_ip.to_string(), "10.1.0.5");
    assert_eq!(first.destination_ip.to_string(), "10.0.0.4");
    assert_eq!((first.source_port, first.destination_port), (63341, 22));
    // service "-" falls back to the transport protocol
    assert_eq!(first.protocol_service, "tcp");
    assert_eq!((first.request_bytes, first.response_bytes), (3479, 22412));
    assert_eq!(first.bytes, 3479 + 22412);
    assert_eq!((first.request_packets, first.response_packets), (3, 17));
    assert_eq!((first.request_ip_bytes, first.response_ip_bytes), (3599, 23092));
    assert_eq!(first.duration, 0.983405);
}

#[test]
fn strict_mode_reports_first_corrupted_line() {
    let f = BufReader::new(File::open(fixture("conn_1000.log")).unwrap());
    match read_conn_log(f, LogFormat::Tsv, true) {
        // eight header lines precede the 100th data row
        Err(ParseError::Row { line, reason }) => {
            assert_eq!(line, 108);
            assert!(reason.contains("10.1.999.1"), "{reason}");
        }
        other => panic!("expected row error, got {other:?}"),
    }
}

#[test]
fn jsonl_fixture_matches_tsv_rows() {
    let (json, stats) = read_fixture("conn_small.jsonl", LogFormat::JsonLines);
    assert_eq!((stats.read, stats.emitted, stats.skipped), (40, 40, 0));
    let (tsv, _) = read_fixture("conn_1000.log", LogFormat::Tsv);
    assert_eq!(json, tsv[..40].to_vec());
}

#[test]
fn unset_markers_and_directives() {
    let text = "#separator \\x09\n#unset_field\t-\n#empty_field\t(empty)\n\
#fields\tts\tid.orig_h\tid.orig_p\tid.resp_h\tid.resp_p\tproto\tservice\tduration\torig_bytes\tresp_bytes\torig_pkts\tresp_pkts\n\
5.5\t10.0.0.1\t5353\t10.0.0.2\t53\tudp\t-\t-\t100\t40\t-\t(empty)\n\
#close\t2020\n";
    let (records, stats) = read_conn_log(Cursor::new(text), LogFormat::Tsv, true).unwrap();
    assert_eq!(stats.emitted, 1);
    let r = &records[0];
    assert_eq!(r.protocol_service, "udp");
    assert_eq!((r.request_bytes, r.response_bytes, r.bytes), (100, 40, 140));
    assert_eq!((r.request_packets, r.response_packets), (0, 0));
    assert_eq!(r.duration, 0.0);
}

#[test]
fn missing_fields_header_is_fatal_even_when_lenient() {
    let text = "1\t10.0.0.1\t1\t10.0.0.2\t2\ttcp\n";
    let mut reader = parse_conn_log(Cursor::new(text), LogFormat::Tsv, false);
    assert!(matches!(reader.next(), Some(Err(ParseError::Header(_)))));
}

#[test]
fn canonical_header_lists_fourteen_columns() {
    let header = canonical_header();
    assert!(header.starts_with("#fields\tts\t"));
    assert_eq!(header.split('\t').count(), 15);
}

fn round_trip(records: &[ConnRecord]) -> Vec<ConnRecord> {
    let mut buf = Vec::new();
    write_canonical_tsv(&mut buf, records).unwrap();
    let (back, stats) = read_conn_log(Cursor::new(buf), LogFormat::Tsv, true).unwrap();
    assert_eq!(stats.skipped, 0);
    back
}

#[test]
fn fixture_round_trips_through_canonical_tsv() {
    let (records, _) = read_fixture("conn_1000.log", LogFormat::Tsv);
    assert_eq!(round_trip(&records), records);
}

proptest! {
    #[test]
    fn canonical_round_trip_is_lossless(records in prop::collection::vec(common::arb_record(1e9), 0..40)) {
        prop_assert_eq!(round_trip(&records), records);
    }

    #[test]
    fn stats_balance_under_random_corruption(
        records in prop::collection::vec(common::arb_record(1e6), 1..30),
        corrupt in prop::collection::vec(any::<bool>(), 30),
    ) {
        let mut buf = Vec::new();
        write_canonical_tsv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let mut broken = 0;
        for (k, line) in lines.iter_mut().skip(1).enumerate() {
            if corrupt[k] {
                *line = line.replacen('\t', "\tnot-an-ip\t", 1);
                broken += 1;
            }
        }
        let joined = lines.join("\n") + "\n";
        let (out, stats) = read_conn_log(Cursor::new(joined), LogFormat::Tsv, false).unwrap();
        prop_assert_eq!(stats.read, records.len() as u64);
        prop_assert_eq!(stats.emitted + stats.skipped, stats.read);
        prop_assert_eq!(stats.skipped, broken);
        let kept: Vec<ConnRecord> = records
            .iter()
            .zip(&corrupt)
            .filter(|(_, c)| !**c)
            .map(|(r, _)| r.clone())
            .collect();
        prop_assert_eq!(out, kept);
    }
}
