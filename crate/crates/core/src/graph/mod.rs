//! Interval communication graphs built from flow records.
//!
//! Records are bucketed into fixed-length intervals and grouped by
//! `(source, destination, protocol)`; numeric counters are summed per group.
//! Each ordered IP pair with traffic becomes one forward edge whose feature
//! vector is a multi-hot protocol block followed by one block of
//! [`NUMERIC_FEATURES`] summed counters per protocol. Every forward edge is
//! paired with a reverse companion carrying identical features so messages
//! reach both endpoints.

mod scaler;
mod snapshot;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::IpAddr;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};
use crate::zeek::ConnRecord;

pub use scaler::FeatureScaler;
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

/// Per-protocol numeric block width.
pub const NUMERIC_FEATURES: usize = 8;

/// Names of the numeric block entries, in layout order.
pub const NUMERIC_FEATURE_NAMES: [&str; NUMERIC_FEATURES] = [
    "requestBytes",
    "responseBytes",
    "duration",
    "bytes",
    "requestPackets",
    "responsePackets",
    "requestIPBytes",
    "responseIPBytes",
];

/// Reserved trailing vocabulary slot for protocols unseen at fit time.
pub const OTHER_PROTOCOL: &str = "other";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("interval length must be positive, got {0}")]
    NonPositiveInterval(f64),
    #[error("record at {ts} precedes the stream origin {origin}")]
    BeforeOrigin { ts: f64, origin: f64 },
    #[error("cannot fit a protocol vocabulary on empty input")]
    EmptyVocab,
    #[error("protocol vocabulary must end with the {OTHER_PROTOCOL:?} slot")]
    MissingOther,
    #[error("duplicate protocol token {0:?} in vocabulary")]
    DuplicateToken(String),
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("cannot fit a feature scaler without edges")]
    NoEdges,
    #[error("graph has no normalized features")]
    NotNormalized,
    #[error("graph snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Summed numeric counters for one flow group, in [`NUMERIC_FEATURE_NAMES`] order.
pub type FlowFeatures = [f64; NUMERIC_FEATURES];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub source: IpAddr,
    pub destination: IpAddr,
    pub protocol: String,
}

impl FlowKey {
    pub fn of(r: &ConnRecord) -> Self {
        Self {
            source: r.source_ip,
            destination: r.destination_ip,
            protocol: r.protocol_service.clone(),
        }
    }
}

pub fn record_features(r: &ConnRecord) -> FlowFeatures {
    [
        r.request_bytes as f64,
        r.response_bytes as f64,
        r.duration,
        r.bytes as f64,
        r.request_packets as f64,
        r.response_packets as f64,
        r.request_ip_bytes as f64,
        r.response_ip_bytes as f64,
    ]
}

/// `floor((ts - origin) / len)`.
pub fn assign_interval(ts: f64, interval_len: f64, origin: f64) -> Result<i64> {
    if !(interval_len > 0.0) {
        return Err(GraphError::NonPositiveInterval(interval_len));
    }
    if ts < origin {
        return Err(GraphError::BeforeOrigin { ts, origin });
    }
    Ok(((ts - origin) / interval_len).floor() as i64)
}

/// Earliest timestamp floored to a whole interval boundary.
pub fn default_origin(records: &[ConnRecord], interval_len: f64) -> Option<f64> {
    records
        .iter()
        .map(|r| r.ts)
        .min_by(f64::total_cmp)
        .map(|t| (t / interval_len).floor() * interval_len)
}

pub type IntervalAggregates = BTreeMap<FlowKey, FlowFeatures>;

/// Sums counters per flow key within each interval.
pub fn aggregate_flows<'a>(
    records: impl IntoIterator<Item = &'a ConnRecord>,
    interval_len: f64,
    origin: f64,
) -> Result<BTreeMap<i64, IntervalAggregates>> {
    let mut out: BTreeMap<i64, IntervalAggregates> = BTreeMap::new();
    for r in records {
        let idx = assign_interval(r.ts, interval_len, origin)?;
        let key = FlowKey::of(r);
        let slot = out
            .entry(idx)
            .or_default()
            .entry(key)
            .or_insert([0.0; NUMERIC_FEATURES]);
        for (s, v) in slot.iter_mut().zip(record_features(r)) {
            *s += v;
        }
    }
    Ok(out)
}

/// Ordered protocol tokens with a trailing [`OTHER_PROTOCOL`] slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolVocab {
    tokens: Vec<String>,
}

impl ProtocolVocab {
    /// Distinct protocol tokens sorted lexically, plus the `other` slot.
    pub fn fit<'a>(keys: impl IntoIterator<Item = &'a FlowKey>) -> Result<Self> {
        let distinct: BTreeSet<&str> = keys
            .into_iter()
            .map(|k| k.protocol.as_str())
            .filter(|p| *p != OTHER_PROTOCOL)
            .collect();
        if distinct.is_empty() {
            return Err(GraphError::EmptyVocab);
        }
        let mut tokens: Vec<String> = distinct.into_iter().map(str::to_string).collect();
        tokens.push(OTHER_PROTOCOL.to_string());
        Ok(Self { tokens })
    }

    /// Takes tokens verbatim; only uniqueness is checked here.
    pub fn fit_records(records: &[ConnRecord]) -> Result<Self> {
        let keys: Vec<FlowKey> = records.iter().map(FlowKey::of).collect();
        Self::fit(&keys)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(GraphError::DuplicateToken(t.clone()));
            }
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_other_slot(&self) -> bool {
        self.tokens.last().map(String::as_str) == Some(OTHER_PROTOCOL)
    }

    /// Slot for `token`; unknown tokens map to the trailing `other` slot.
    pub fn index_of(&self, token: &str) -> usize {
        self.tokens[..self.tokens.len().saturating_sub(1)]
            .iter()
            .position(|t| t == token)
            .unwrap_or(self.tokens.len().saturating_sub(1))
    }

    /// Raw edge feature width: one-hot block plus one numeric block per slot.
    pub fn feature_dim(&self) -> usize {
        self.tokens.len() * (1 + NUMERIC_FEATURES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub source: usize,
    pub destination: usize,
    pub reverse: bool,
}

/// Communication graph for one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalGraph {
    pub interval: i64,
    pub start: f64,
    pub end: f64,
    pub vocab: ProtocolVocab,
    pub nodes: Vec<IpAddr>,
    pub edges: Vec<Edge>,
    /// `|edges| x vocab.feature_dim()` summed counters and protocol bits.
    pub raw: Tensor,
    /// Scaled copy of `raw` with entries in `[0, 1]`.
    pub normalized: Option<Tensor>,
}

/// Builds one interval's graph from its aggregated flow groups.
pub fn build_graph(
    interval: i64,
    start: f64,
    end: f64,
    aggregates: &IntervalAggregates,
    vocab: &ProtocolVocab,
) -> Result<IntervalGraph> {
    if !vocab.has_other_slot() {
        return Err(GraphError::MissingOther);
    }
    let p = vocab.len();
    let dim = vocab.feature_dim();

    let mut pairs: BTreeMap<(IpAddr, IpAddr), Vec<f64>> = BTreeMap::new();
    for (key, feats) in aggregates {
        let row = pairs
            .entry((key.source, key.destination))
            .or_insert_with(|| vec![0.0; dim]);
        let slot = vocab.index_of(&key.protocol);
        row[slot] = 1.0;
        let block = &mut row[p + slot * NUMERIC_FEATURES..p + (slot + 1) * NUMERIC_FEATURES];
        for (b, v) in block.iter_mut().zip(feats) {
            *b += v;
        }
    }

    let nodes: Vec<IpAddr> = pairs
        .keys()
        .flat_map(|(s, d)| [*s, *d])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<IpAddr, usize> = nodes.iter().enumerate().map(|(i, ip)| (*ip, i)).collect();

    let mut edges = Vec::with_capacity(pairs.len() * 2);
    let mut data = Vec::with_capacity(pairs.len() * 2 * dim);
    for ((s, d), row) in &pairs {
        let (si, di) = (index[s], index[d]);
        edges.push(Edge {
            source: si,
            destination: di,
            reverse: false,
        });
        edges.push(Edge {
            source: di,
            destination: si,
            reverse: true,
        });
        data.extend_from_slice(row);
        data.extend_from_slice(row);
    }
    let raw = Tensor::from_vec(edges.len(), dim, data)?;
    Ok(IntervalGraph {
        interval,
        start,
        end,
        vocab: vocab.clone(),
        nodes,
        edges,
        raw,
        normalized: None,
    })
}

/// Aggregates `records` and builds one graph per non-empty interval, in
/// interval order.
pub fn build_graphs(
    records: &[ConnRecord],
    interval_len: f64,
    origin: f64,
    vocab: &ProtocolVocab,
) -> Result<Vec<IntervalGraph>> {
    aggregate_flows(records, interval_len, origin)?
        .iter()
        .map(|(&idx, agg)| {
            let start = origin + idx as f64 * interval_len;
            build_graph(idx, start, start + interval_len, agg, vocab)
        })
        .collect()
}

impl IntervalGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.raw.cols()
    }

    pub fn node_index(&self, ip: &IpAddr) -> Option<usize> {
        self.nodes.binary_search(ip).ok()
    }

    pub fn contains(&self, ip: &IpAddr) -> bool {
        self.node_index(ip).is_some()
    }

    pub fn senders(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.source).collect()
    }

    pub fn receivers(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.destination).collect()
    }

    /// Normalized features with the reverse flag appended as the last column.
    pub fn model_input(&self) -> Result<Tensor> {
        let norm = self.normalized.as_ref().ok_or(GraphError::NotNormalized)?;
        let dim = norm.cols() + 1;
        let mut data = Vec::with_capacity(norm.rows() * dim);
        for (row, edge) in norm.iter_rows().zip(&self.edges) {
            data.extend_from_slice(row);
            data.push(if edge.reverse { 1.0 } else { 0.0 });
        }
        Ok(Tensor::from_vec(norm.rows(), dim, data)?)
    }

    /// Re-expresses the raw features against another vocabulary, pooling
    /// tokens it lacks into its `other` slot. The result is unnormalized and
    /// equals building the graph with `vocab` from the start.
    pub fn with_vocab(&self, vocab: &ProtocolVocab) -> Result<IntervalGraph> {
        if !vocab.has_other_slot() {
            return Err(GraphError::MissingOther);
        }
        if *vocab == self.vocab {
            return Ok(IntervalGraph {
                normalized: None,
                ..self.clone()
            });
        }
        let (old_p, new_p) = (self.vocab.len(), vocab.len());
        let slot_map: Vec<usize> = self.vocab.tokens().iter().map(|t| vocab.index_of(t)).collect();
        let dim = vocab.feature_dim();
        let mut data = Vec::with_capacity(self.edges.len() * dim);
        for row in self.raw.iter_rows() {
            let mut out = vec![0.0; dim];
            for (old, &new) in slot_map.iter().enumerate() {
                if row[old] == 0.0 {
                    continue;
                }
                out[new] = 1.0;
                let src = &row[old_p + old * NUMERIC_FEATURES..old_p + (old + 1) * NUMERIC_FEATURES];
                let dst = &mut out[new_p + new * NUMERIC_FEATURES..new_p + (new + 1) * NUMERIC_FEATURES];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            data.extend(out);
        }
        Ok(IntervalGraph {
            vocab: vocab.clone(),
            raw: Tensor::from_vec(self.edges.len(), dim, data)?,
            normalized: None,
            ..self.clone()
        })
    }

    /// Drops every edge touching one of `ips` and any node left without
    /// edges. Equivalent to building the graph from records filtered the
    /// same way.
    pub fn without_ips(&self, ips: &BTreeSet<IpAddr>) -> IntervalGraph {
        let keep: Vec<usize> = (0..self.edges.len())
            .filter(|&k| {
                let e = self.edges[k];
                !ips.contains(&self.nodes[e.source]) && !ips.contains(&self.nodes[e.destination])
            })
            .collect();
        let used: BTreeSet<usize> = keep
            .iter()
            .flat_map(|&k| [self.edges[k].source, self.edges[k].destination])
            .collect();
        let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(n, &o)| (o, n)).collect();
        let nodes = used.iter().map(|&o| self.nodes[o]).collect();
        let edges = keep
            .iter()
            .map(|&k| {
                let e = self.edges[k];
                Edge {
                    source: remap[&e.source],
                    destination: remap[&e.destination],
                    reverse: e.reverse,
                }
            })
            .collect();
        let select = |t: &Tensor| {
            let data = keep.iter().flat_map(|&k| t.row(k).to_vec()).collect();
            Tensor::from_vec(keep.len(), t.cols(), data).expect("row selection")
        };
        IntervalGraph {
            interval: self.interval,
            start: self.start,
            end: self.end,
            vocab: self.vocab.clone(),
            nodes,
            edges,
            raw: select(&self.raw),
            normalized: self.normalized.as_ref().map(select),
        }
    }
}
