//! Zeek `conn.log` ingestion.
//!
//! Two input variants are understood: the tab-separated format with `#`
//! directive headers (`#separator`, `#unset_field`, `#empty_field`,
//! `#fields`) and the JSON-lines format. The canonical dump written by
//! [`write_canonical_tsv`] is itself a TSV variant whose `#fields` line names
//! the columns `ts` followed by the thirteen flow fields, so it can be read
//! back with the same parser.

use std::io::{self, BufRead, Write};
use std::net::IpAddr;

use serde_json::Value;
use thiserror::Error;

/// One flow summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnRecord {
    pub ts: f64,
    pub source_ip: IpAddr,
    pub destination_ip: IpAddr,
    pub source_port: u16,
    pub destination_port: u16,
    pub protocol_service: String,
    pub duration: f64,
    pub request_bytes: u64,
    pub response_bytes: u64,
    pub bytes: u64,
    pub request_packets: u64,
    pub response_packets: u64,
    pub request_ip_bytes: u64,
    pub response_ip_bytes: u64,
}

impl ConnRecord {
    pub fn touches(&self, ip: &IpAddr) -> bool {
        self.source_ip == *ip || self.destination_ip == *ip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Tsv,
    JsonLines,
}

impl std::str::FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Self::Tsv),
            "jsonl" | "json" => Ok(Self::JsonLines),
            other => Err(format!("unknown log format {other:?} (expected tsv or jsonl)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseStats {
    pub read: u64,
    pub emitted: u64,
    pub skipped: u64,
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: String },
    #[error("conn.log header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Canonical column order: `ts` then the flow fields.
pub const CANONICAL_FIELDS: [&str; 14] = [
    "ts",
    "sourceIP",
    "destinationIP",
    "sourcePort",
    "destinationPort",
    "protocolService",
    "responseBytes",
    "requestBytes",
    "duration",
    "bytes",
    "responsePackets",
    "requestPackets",
    "responseIPBytes",
    "requestIPBytes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Field {
    Ts,
    SourceIp,
    DestinationIp,
    SourcePort,
    DestinationPort,
    ProtocolService,
    Service,
    Proto,
    Duration,
    RequestBytes,
    ResponseBytes,
    Bytes,
    RequestPackets,
    ResponsePackets,
    RequestIpBytes,
    ResponseIpBytes,
}

impl Field {
    fn from_column(name: &str) -> Option<Self> {
        Some(match name {
            "ts" => Self::Ts,
            "id.orig_h" | "sourceIP" => Self::SourceIp,
            "id.resp_h" | "destinationIP" => Self::DestinationIp,
            "id.orig_p" | "sourcePort" => Self::SourcePort,
            "id.resp_p" | "destinationPort" => Self::DestinationPort,
            "protocolService" => Self::ProtocolService,
            "service" => Self::Service,
            "proto" => Self::Proto,
            "duration" => Self::Duration,
            "orig_bytes" | "requestBytes" => Self::RequestBytes,
            "resp_bytes" | "responseBytes" => Self::ResponseBytes,
            "bytes" => Self::Bytes,
            "orig_pkts" | "requestPackets" => Self::RequestPackets,
            "resp_pkts" | "responsePackets" => Self::ResponsePackets,
            "orig_ip_bytes" | "requestIPBytes" => Self::RequestIpBytes,
            "resp_ip_bytes" | "responseIPBytes" => Self::ResponseIpBytes,
            _ => return None,
        })
    }
}

/// Field lookup for a single row; `None` means absent or unset.
trait RowSource {
    fn field(&self, field: Field) -> Option<String>;
}

fn build_record(row: &dyn RowSource) -> Result<ConnRecord, String> {
    let required = |f: Field, name: &str| row.field(f).ok_or_else(|| format!("{name} is unset"));

    let ts_raw = required(Field::Ts, "ts")?;
    let ts: f64 = ts_raw
        .parse()
        .map_err(|_| format!("invalid timestamp {ts_raw:?}"))?;
    if !ts.is_finite() {
        return Err(format!("non-finite timestamp {ts_raw:?}"));
    }
    let ip = |f: Field, name: &str| -> Result<IpAddr, String> {
        let raw = required(f, name)?;
        raw.parse().map_err(|_| format!("invalid {name} {raw:?}"))
    };
    let port = |f: Field, name: &str| -> Result<u16, String> {
        let raw = required(f, name)?;
        raw.parse().map_err(|_| format!("invalid {name} {raw:?}"))
    };
    let count = |f: Field, name: &str| -> Result<u64, String> {
        match row.field(f) {
            None => Ok(0),
            Some(raw) => raw.parse().map_err(|_| format!("invalid {name} {raw:?}")),
        }
    };

    let protocol_service = row
        .field(Field::ProtocolService)
        .or_else(|| row.field(Field::Service))
        .or_else(|| row.field(Field::Proto))
        .map(|s| s.to_ascii_lowercase())
        .ok_or_else(|| "neither service nor proto is set".to_string())?;

    let duration = match row.field(Field::Duration) {
        None => 0.0,
        Some(raw) => {
            let d: f64 = raw
                .parse()
                .map_err(|_| format!("invalid duration {raw:?}"))?;
            if !d.is_finite() || d < 0.0 {
                return Err(format!("duration {raw:?} out of range"));
            }
            d
        }
    };

    let request_bytes = count(Field::RequestBytes, "orig_bytes")?;
    let response_bytes = count(Field::ResponseBytes, "resp_bytes")?;
    let bytes = match row.field(Field::Bytes) {
        Some(raw) => raw.parse().map_err(|_| format!("invalid bytes {raw:?}"))?,
        None => request_bytes
            .checked_add(response_bytes)
            .ok_or_else(|| "byte counters overflow".to_string())?,
    };

    Ok(ConnRecord {
        ts,
        source_ip: ip(Field::SourceIp, "id.orig_h")?,
        destination_ip: ip(Field::DestinationIp, "id.resp_h")?,
        source_port: port(Field::SourcePort, "id.orig_p")?,
        destination_port: port(Field::DestinationPort, "id.resp_p")?,
        protocol_service,
        duration,
        request_bytes,
        response_bytes,
        bytes,
        request_packets: count(Field::RequestPackets, "orig_pkts")?,
        response_packets: count(Field::ResponsePackets, "resp_pkts")?,
        request_ip_bytes: count(Field::RequestIpBytes, "orig_ip_bytes")?,
        response_ip_bytes: count(Field::ResponseIpBytes, "resp_ip_bytes")?,
    })
}

struct TsvHeader {
    separator: String,
    unset: String,
    empty: String,
    columns: Option<Vec<Option<Field>>>,
}

impl Default for TsvHeader {
    fn default() -> Self {
        Self {
            separator: "\t".into(),
            unset: "-".into(),
            empty: "(empty)".into(),
            columns: None,
        }
    }
}

fn unescape(raw: &str) -> Result<String, String> {
    let mut out = String::new();
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('x') => {
                let hex: String = chars.by_ref().take(2).collect();
                let code = u8::from_str_radix(&hex, 16)
                    .map_err(|_| format!("bad escape \\x{hex} in separator"))?;
                out.push(code as char);
            }
            Some('t') => out.push('\t'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    Ok(out)
}

struct TsvRow<'a> {
    header: &'a TsvHeader,
    columns: &'a [Option<Field>],
    values: Vec<&'a str>,
}

impl RowSource for TsvRow<'_> {
    fn field(&self, field: Field) -> Option<String> {
        let idx = self.columns.iter().position(|c| *c == Some(field))?;
        let v = self.values[idx];
        if v.is_empty() || v == self.header.unset || v == self.header.empty {
            None
        } else {
            Some(v.to_string())
        }
    }
}

struct JsonRow(serde_json::Map<String, Value>);

impl RowSource for JsonRow {
    fn field(&self, field: Field) -> Option<String> {
        let keys: &[&str] = match field {
            Field::Ts => &["ts"],
            Field::SourceIp => &["id.orig_h"],
            Field::DestinationIp => &["id.resp_h"],
            Field::SourcePort => &["id.orig_p"],
            Field::DestinationPort => &["id.resp_p"],
            Field::ProtocolService => &[],
            Field::Service => &["service"],
            Field::Proto => &["proto"],
            Field::Duration => &["duration"],
            Field::RequestBytes => &["orig_bytes"],
            Field::ResponseBytes => &["resp_bytes"],
            Field::Bytes => &["bytes"],
            Field::RequestPackets => &["orig_pkts"],
            Field::ResponsePackets => &["resp_pkts"],
            Field::RequestIpBytes => &["orig_ip_bytes"],
            Field::ResponseIpBytes => &["resp_ip_bytes"],
        };
        for key in keys {
            let value = self.0.get(*key).or_else(|| {
                // nested {"id": {"orig_h": ..}} layout
                let (outer, inner) = key.split_once('.')?;
                self.0.get(outer)?.get(inner)
            });
            match value {
                None | Some(Value::Null) => continue,
                Some(Value::String(s)) if s.is_empty() || s == "-" || s == "(empty)" => continue,
                Some(Value::String(s)) => return Some(s.clone()),
                Some(Value::Array(items)) if items.is_empty() => continue,
                Some(Value::Array(items)) => {
                    let joined: Vec<String> = items
                        .iter()
                        .map(|v| v.as_str().map_or_else(|| v.to_string(), str::to_string))
                        .collect();
                    return Some(joined.join(","));
                }
                Some(other) => return Some(other.to_string()),
            }
        }
        None
    }
}

/// Streaming conn.log reader. Yields one record per well-formed row.
///
/// In lenient mode malformed rows are skipped and counted; in strict mode the
/// first malformed row is returned as an error and iteration stops. A TSV
/// input without a `#fields` header is always an error.
pub struct ConnLogReader<R> {
    input: R,
    format: LogFormat,
    strict: bool,
    header: TsvHeader,
    stats: ParseStats,
    line_no: u64,
    buf: String,
    done: bool,
}

pub fn parse_conn_log<R: BufRead>(input: R, format: LogFormat, strict: bool) -> ConnLogReader<R> {
    ConnLogReader {
        input,
        format,
        strict,
        header: TsvHeader::default(),
        stats: ParseStats::default(),
        line_no: 0,
        buf: String::new(),
        done: false,
    }
}

/// Parses everything into memory.
pub fn read_conn_log<R: BufRead>(
    input: R,
    format: LogFormat,
    strict: bool,
) -> Result<(Vec<ConnRecord>, ParseStats), ParseError> {
    let mut reader = parse_conn_log(input, format, strict);
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((records, reader.stats()))
}

impl<R: BufRead> ConnLogReader<R> {
    pub fn stats(&self) -> ParseStats {
        self.stats
    }

    fn directive(&mut self, line: &str) -> Result<(), ParseError> {
        if let Some(rest) = line.strip_prefix("#separator") {
            self.header.separator = unescape(rest.trim_start_matches([' ', '\t']))
                .map_err(ParseError::Header)?;
            if self.header.separator.is_empty() {
                return Err(ParseError::Header("empty #separator".into()));
            }
            return Ok(());
        }
        let mut parts = line.split(self.header.separator.as_str());
        let name = parts.next().unwrap_or_default();
        match name {
            "#unset_field" => self.header.unset = parts.next().unwrap_or("-").to_string(),
            "#empty_field" => self.header.empty = parts.next().unwrap_or("(empty)").to_string(),
            "#fields" => {
                let columns: Vec<Option<Field>> = parts.map(Field::from_column).collect();
                let has = |f: Field| columns.contains(&Some(f));
                for (f, name) in [
                    (Field::Ts, "ts"),
                    (Field::SourceIp, "id.orig_h"),
                    (Field::DestinationIp, "id.resp_h"),
                    (Field::SourcePort, "id.orig_p"),
                    (Field::DestinationPort, "id.resp_p"),
                ] {
                    if !has(f) {
                        return Err(ParseError::Header(format!("#fields lacks column {name}")));
                    }
                }
                if !(has(Field::ProtocolService) || has(Field::Service) || has(Field::Proto)) {
                    return Err(ParseError::Header(
                        "#fields lacks a proto or service column".into(),
                    ));
                }
                self.header.columns = Some(columns);
            }
            _ => {}
        }
        Ok(())
    }

    fn parse_row(&self, line: &str) -> Result<ConnRecord, String> {
        match self.format {
            LogFormat::Tsv => {
                let columns = self.header.columns.as_deref().expect("checked by caller");
                let values: Vec<&str> = line.split(self.header.separator.as_str()).collect();
                if values.len() != columns.len() {
                    return Err(format!(
                        "expected {} columns, found {}",
                        columns.len(),
                        values.len()
                    ));
                }
                build_record(&TsvRow {
                    header: &self.header,
                    columns,
                    values,
                })
            }
            LogFormat::JsonLines => match serde_json::from_str::<Value>(line) {
                Ok(Value::Object(map)) => build_record(&JsonRow(map)),
                Ok(_) => Err("expected a JSON object".into()),
                Err(e) => Err(format!("invalid JSON: {e}")),
            },
        }
    }
}

impl<R: BufRead> Iterator for ConnLogReader<R> {
    type Item = Result<ConnRecord, ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            match self.input.read_line(&mut self.buf) {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
                Ok(0) => {
                    self.done = true;
                    if self.format == LogFormat::Tsv && self.header.columns.is_none() {
                        return Some(Err(ParseError::Header("missing #fields line".into())));
                    }
                    return None;
                }
                Ok(_) => {}
            }
            self.line_no += 1;
            let line = std::mem::take(&mut self.buf);
            let line_str = line.trim_end_matches(['\n', '\r']);
            if line_str.trim().is_empty() {
                self.buf = line;
                continue;
            }
            if self.format == LogFormat::Tsv && line_str.starts_with('#') {
                let res = self.directive(line_str);
                self.buf = line;
                if let Err(e) = res {
                    self.done = true;
                    return Some(Err(e));
                }
                continue;
            }
            if self.format == LogFormat::Tsv && self.header.columns.is_none() {
                self.done = true;
                return Some(Err(ParseError::Header(format!(
                    "data on line {} before #fields line",
                    self.line_no
                ))));
            }
            self.stats.read += 1;
            let parsed = self.parse_row(line_str);
            self.buf = line;
            match parsed {
                Ok(rec) => {
                    self.stats.emitted += 1;
                    return Some(Ok(rec));
                }
                Err(reason) => {
                    self.stats.skipped += 1;
                    if self.strict {
                        self.done = true;
                        return Some(Err(ParseError::Row {
                            line: self.line_no,
                            reason,
                        }));
                    }
                }
            }
        }
    }
}

/// Header line of the canonical dump.
pub fn canonical_header() -> String {
    format!("#fields\t{}", CANONICAL_FIELDS.join("\t"))
}

/// One canonical TSV row (no trailing newline).
pub fn canonical_row(r: &ConnRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.ts,
        r.source_ip,
        r.destination_ip,
        r.source_port,
        r.destination_port,
        r.protocol_service,
        r.response_bytes,
        r.request_bytes,
        r.duration,
        r.bytes,
        r.response_packets,
        r.request_packets,
        r.response_ip_bytes,
        r.request_ip_bytes,
    )
}

pub fn write_canonical_tsv<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a ConnRecord>,
) -> io::Result<()> {
    writeln!(out, "{}", canonical_header())?;
    for r in records {
        writeln!(out, "{}", canonical_row(r))?;
    }
    out.flush()
}
