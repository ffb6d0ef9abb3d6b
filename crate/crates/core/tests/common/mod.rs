#![allow(dead_code)]

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use ipembed::model::{GnnModel, GraphInput, ModelConfig, ModelParams};
use ipembed::tensor::Tensor;
use ipembed::zeek::ConnRecord;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PROTOCOLS: [&str; 5] = ["dns", "http", "ssl", "tcp", "udp"];

/// Small address pool so that random records collide on pairs.
pub fn arb_ip() -> impl Strategy<Value = IpAddr> {
    prop_oneof![
        4 => (0u8..8).prop_map(|n| IpAddr::V4(Ipv4Addr::new(10, 0, 0, n))),
        1 => (1u16..3).prop_map(|n| IpAddr::V6(Ipv6Addr::new(0xfd00, 0, 0, 0, 0, 0, 0, n))),
    ]
}

pub fn arb_record(span: f64) -> impl Strategy<Value = ConnRecord> {
    (
        (0.0..span, arb_ip(), arb_ip(), any::<u16>(), any::<u16>()),
        (0..PROTOCOLS.len(), 0.0..100.0f64),
        (0u64..1 << 20, 0u64..1 << 20, 0u64..1000, 0u64..1000),
    )
        .prop_map(|((ts, s, d, sp, dp), (p, duration), (rq, rs, rqp, rsp))| ConnRecord {
            ts,
            source_ip: s,
            destination_ip: d,
            source_port: sp,
            destination_port: dp,
            protocol_service: PROTOCOLS[p].to_string(),
            duration,
            request_bytes: rq,
            response_bytes: rs,
            bytes: rq + rs,
            request_packets: rqp,
            response_packets: rsp,
            request_ip_bytes: rq + 40 * rqp,
            response_ip_bytes: rs + 40 * rsp,
        })
}

/// Random graph with every edge mirrored, features in [0, 1) and the last
/// column holding the reverse flag.
pub fn random_input(seed: u64, nodes: usize, pairs: usize, dim: usize) -> GraphInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut senders = Vec::new();
    let mut receivers = Vec::new();
    let mut rows = Vec::new();
    for _ in 0..pairs {
        let s = rng.random_range(0..nodes);
        let r = rng.random_range(0..nodes);
        let mut row: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
        *row.last_mut().unwrap() = 0.0;
        senders.extend([s, r]);
        receivers.extend([r, s]);
        rows.push(row.clone());
        *row.last_mut().unwrap() = 1.0;
        rows.push(row);
    }
    GraphInput::new(Tensor::from_rows(&rows).unwrap(), senders, receivers, nodes).unwrap()
}

pub fn small_config(dim: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        decoder_hidden: hidden + 1,
        ..ModelConfig::new(dim)
    }
}

/// Randomly initialized model with non-trivial running statistics, so eval
/// mode does more than the identity normalization.
pub fn random_model(cfg: ModelConfig, seed: u64) -> GnnModel {
    let mut params = ModelParams::init(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for run in params.running_stats_mut() {
        let w = run.width();
        let mean = (0..w).map(|_| rng.random_range(-0.5..0.5)).collect();
        let var = (0..w).map(|_| rng.random_range(0.5..2.0)).collect();
        run.set(mean, var).unwrap();
    }
    GnnModel::with_params(cfg, params).unwrap()
}

/// Relabels node `i` as `perm[i]` and lists edges in the order `edge_order`.
pub fn permute(graph: &GraphInput, perm: &[usize], edge_order: &[usize]) -> GraphInput {
    let rows: Vec<Vec<f64>> = edge_order.iter().map(|&k| graph.features.row(k).to_vec()).collect();
    GraphInput::new(
        Tensor::from_rows(&rows).unwrap(),
        edge_order.iter().map(|&k| perm[graph.senders[k]]).collect(),
        edge_order.iter().map(|&k| perm[graph.receivers[k]]).collect(),
        graph.nodes,
    )
    .unwrap()
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
