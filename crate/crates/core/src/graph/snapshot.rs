//! Binary graph snapshot: one interval per file.
//!
//! Layout (little endian): magic `IPGR`, `u16` version, `i64` interval index,
//! `f64` start, `f64` end, vocabulary (`u32` count, `u16`-length strings),
//! node table (`u32` count, IP strings), edge table (`u32` edge count, `u32`
//! feature width, then per edge `u32` source, `u32` destination, `u8`
//! reverse flag and the raw features as `f64`).

use std::io::{self, Read, Write};
use std::net::IpAddr;

use super::{Edge, GraphError, IntervalGraph, ProtocolVocab, Result};
use crate::codec::{Decoder, Encoder};
use crate::tensor::Tensor;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"IPGR";
pub const SNAPSHOT_VERSION: u16 = 1;

pub fn write_snapshot<W: Write>(out: W, graph: &IntervalGraph) -> Result<()> {
    let mut enc = Encoder::new(out);
    enc.bytes(SNAPSHOT_MAGIC)?;
    enc.u16(SNAPSHOT_VERSION)?;
    enc.i64(graph.interval)?;
    enc.f64(graph.start)?;
    enc.f64(graph.end)?;
    enc.len(graph.vocab.len())?;
    for t in graph.vocab.tokens() {
        enc.str(t)?;
    }
    enc.len(graph.nodes.len())?;
    for ip in &graph.nodes {
        enc.str(&ip.to_string())?;
    }
    enc.len(graph.edges.len())?;
    enc.len(graph.feature_dim())?;
    for (edge, row) in graph.edges.iter().zip(graph.raw.iter_rows()) {
        enc.len(edge.source)?;
        enc.len(edge.destination)?;
        enc.u8(u8::from(edge.reverse))?;
        for &v in row {
            enc.f64(v)?;
        }
    }
    enc.into_inner().flush()?;
    Ok(())
}

fn snapshot_err(e: io::Error) -> GraphError {
    match e.kind() {
        io::ErrorKind::UnexpectedEof => GraphError::Snapshot("truncated file".into()),
        io::ErrorKind::InvalidData => GraphError::Snapshot(e.to_string()),
        _ => GraphError::Io(e),
    }
}

pub fn read_snapshot<R: Read>(input: R) -> Result<IntervalGraph> {
    read_inner(Decoder::new(input)).map_err(|e| match e {
        GraphError::Io(io) => snapshot_err(io),
        other => other,
    })
}

fn read_inner<R: Read>(mut dec: Decoder<R>) -> Result<IntervalGraph> {
    if dec.bytes(4)? != SNAPSHOT_MAGIC {
        return Err(GraphError::Snapshot("bad magic".into()));
    }
    let version = dec.u16()?;
    if version != SNAPSHOT_VERSION {
        return Err(GraphError::Snapshot(format!("unsupported version {version}")));
    }
    let interval = dec.i64()?;
    let start = dec.f64()?;
    let end = dec.f64()?;
    let tokens = (0..dec.len()?)
        .map(|_| dec.str())
        .collect::<io::Result<Vec<_>>>()?;
    let vocab = ProtocolVocab::from_tokens(tokens)?;
    let node_count = dec.len()?;
    let mut nodes: Vec<IpAddr> = Vec::with_capacity(node_count.min(1 << 16));
    for _ in 0..node_count {
        let s = dec.str()?;
        nodes.push(
            s.parse()
                .map_err(|_| GraphError::Snapshot(format!("invalid IP {s:?}")))?,
        );
    }
    if nodes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GraphError::Snapshot("node table is not sorted".into()));
    }
    let edge_count = dec.len()?;
    let dim = dec.len()?;
    if dim != vocab.feature_dim() {
        return Err(GraphError::Dimension {
            expected: vocab.feature_dim(),
            found: dim,
        });
    }
    let mut edges = Vec::with_capacity(edge_count.min(1 << 20));
    let mut data = Vec::with_capacity((edge_count * dim).min(1 << 24));
    for _ in 0..edge_count {
        let source = dec.len()?;
        let destination = dec.len()?;
        if source >= nodes.len() || destination >= nodes.len() {
            return Err(GraphError::Snapshot("edge references a missing node".into()));
        }
        let reverse = match dec.u8()? {
            0 => false,
            1 => true,
            other => return Err(GraphError::Snapshot(format!("bad reverse flag {other}"))),
        };
        edges.push(Edge {
            source,
            destination,
            reverse,
        });
        for _ in 0..dim {
            data.push(dec.f64()?);
        }
    }
    dec.finish()?;
    Ok(IntervalGraph {
        interval,
        start,
        end,
        vocab,
        nodes,
        edges,
        raw: Tensor::from_vec(edge_count, dim, data)?,
        normalized: None,
    })
}
