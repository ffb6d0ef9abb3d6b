//! Role-based synthetic traffic and the holdout experiment harness.
//!
//! Members of a role share one traffic profile, so a model that learns
//! behavior rather than identity should embed them close together. The
//! harness hides some members of one role from training and checks that
//! they still land near their peers at test time.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::net::{IpAddr, Ipv4Addr};

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal, Zipf};
use thiserror::Error;

use crate::embed::{cosine, mean_std, EmbedError, EmbeddingSet};
use crate::graph::{build_graphs, FeatureScaler, GraphError, IntervalGraph, ProtocolVocab};
use crate::model::GnnModel;
use crate::train::filter_holdout;
use crate::zeek::ConnRecord;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid role definition: {0}")]
    Spec(String),
    #[error("invalid experiment: {0}")]
    Experiment(String),
    #[error("holdout IP {ip} appears in training interval {interval}")]
    HoldoutLeak { ip: IpAddr, interval: i64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// How an initiating member picks the peer for each flow.
#[derive(Debug, Clone, PartialEq)]
pub enum PeerSelection {
    Uniform,
    /// Rank-`r` member (1-based) drawn with weight `r^-s`.
    Zipf(f64),
}

/// Log-normal distribution given by its mean and coefficient of variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCv {
    pub mean: f64,
    pub cv: f64,
}

impl MeanCv {
    pub const fn new(mean: f64, cv: f64) -> Self {
        Self { mean, cv }
    }

    fn distribution(&self) -> Result<LogNormal<f64>> {
        if !(self.mean > 0.0) || !self.mean.is_finite() || !(self.cv >= 0.0) || !self.cv.is_finite() {
            return Err(SynthError::Spec(format!(
                "log-normal needs finite mean > 0 and cv >= 0, got {self:?}"
            )));
        }
        LogNormal::from_mean_cv(self.mean, self.cv).map_err(|e| SynthError::Spec(e.to_string()))
    }
}

/// Flows one member of a role initiates towards another role.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProfile {
    pub target_role: String,
    /// Transport protocol, `udp` or `tcp`.
    pub proto: String,
    /// Application service; the transport name is used when absent.
    pub service: Option<String>,
    pub destination_port: u16,
    /// Flows per second per initiating member.
    pub rate: f64,
    pub peers: PeerSelection,
    pub request_bytes: MeanCv,
    pub response_bytes: MeanCv,
    pub duration: MeanCv,
    /// Payload bytes per packet when deriving packet counts.
    pub packet_payload: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoleSpec {
    pub name: String,
    /// Members get consecutive addresses `prefix.1`, `prefix.2`, ...
    pub prefix: [u8; 3],
    pub members: usize,
    pub profiles: Vec<FlowProfile>,
}

impl RoleSpec {
    pub fn ips(&self) -> Vec<IpAddr> {
        let [a, b, c] = self.prefix;
        (1..=self.members)
            .map(|k| IpAddr::V4(Ipv4Addr::new(a, b, c, k as u8)))
            .collect()
    }
}

fn header_bytes(proto: &str) -> u64 {
    if proto == "udp" {
        28
    } else {
        40
    }
}

/// Thirty clients querying four DNS servers and browsing six web servers.
pub fn default_roles() -> Vec<RoleSpec> {
    let dns = FlowProfile {
        target_role: "dns_server".into(),
        proto: "udp".into(),
        service: Some("dns".into()),
        destination_port: 53,
        rate: 1.0 / 60.0,
        peers: PeerSelection::Uniform,
        request_bytes: MeanCv::new(40.0, 0.3),
        response_bytes: MeanCv::new(130.0, 0.5),
        duration: MeanCv::new(0.05, 1.0),
        packet_payload: 512.0,
    };
    let http = FlowProfile {
        target_role: "web_server".into(),
        proto: "tcp".into(),
        service: Some("http".into()),
        destination_port: 80,
        rate: 1.0 / 240.0,
        peers: PeerSelection::Uniform,
        request_bytes: MeanCv::new(600.0, 0.8),
        response_bytes: MeanCv::new(25_000.0, 1.5),
        duration: MeanCv::new(2.0, 1.2),
        packet_payload: 1448.0,
    };
    let ssl = FlowProfile {
        service: Some("ssl".into()),
        destination_port: 443,
        request_bytes: MeanCv::new(1_200.0, 0.8),
        response_bytes: MeanCv::new(40_000.0, 1.5),
        duration: MeanCv::new(5.0, 1.2),
        ..http.clone()
    };
    vec![
        RoleSpec {
            name: "client".into(),
            prefix: [10, 0, 1],
            members: 30,
            profiles: vec![dns, http, ssl],
        },
        RoleSpec {
            name: "dns_server".into(),
            prefix: [10, 0, 0],
            members: 4,
            profiles: Vec::new(),
        },
        RoleSpec {
            name: "web_server".into(),
            prefix: [10, 0, 2],
            members: 6,
            profiles: Vec::new(),
        },
    ]
}

fn role_index(roles: &[RoleSpec], name: &str) -> Result<usize> {
    roles
        .iter()
        .position(|r| r.name == name)
        .ok_or_else(|| SynthError::Spec(format!("unknown role {name:?}")))
}

pub fn validate_roles(roles: &[RoleSpec]) -> Result<()> {
    if roles.len() < 2 {
        return Err(SynthError::Spec("at least two roles are required".into()));
    }
    let mut prefixes = BTreeSet::new();
    for r in roles {
        if r.members == 0 {
            return Err(SynthError::Spec(format!("role {:?} has no members", r.name)));
        }
        if r.members > 254 {
            return Err(SynthError::Spec(format!("role {:?} has more than 254 members", r.name)));
        }
        if !prefixes.insert(r.prefix) {
            return Err(SynthError::Spec(format!("role {:?} reuses an address prefix", r.name)));
        }
        for p in &r.profiles {
            role_index(roles, &p.target_role)?;
            if !(p.rate > 0.0) || !p.rate.is_finite() {
                return Err(SynthError::Spec(format!("role {:?}: rate must be positive", r.name)));
            }
            if !(p.packet_payload > 0.0) {
                return Err(SynthError::Spec(format!(
                    "role {:?}: packet payload must be positive",
                    r.name
                )));
            }
            if let PeerSelection::Zipf(s) = p.peers {
                if !s.is_finite() || s < 0.0 {
                    return Err(SynthError::Spec(format!("role {:?}: bad Zipf exponent", r.name)));
                }
            }
            for d in [p.request_bytes, p.response_bytes, p.duration] {
                d.distribution()?;
            }
        }
    }
    Ok(())
}

fn pick_peer(peers: &PeerSelection, n: usize, rng: &mut ChaCha8Rng) -> usize {
    match peers {
        PeerSelection::Uniform => rng.random_range(0..n),
        PeerSelection::Zipf(s) => {
            let zipf = Zipf::new(n as f64, *s).expect("validated exponent");
            zipf.sample(rng) as usize - 1
        }
    }
}

/// Draws flows over `[0, duration)` seconds, sorted by timestamp.
pub fn generate(roles: &[RoleSpec], duration: f64, seed: u64) -> Result<Vec<ConnRecord>> {
    validate_roles(roles)?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(SynthError::Spec("duration must be positive".into()));
    }
    let members: Vec<Vec<IpAddr>> = roles.iter().map(RoleSpec::ips).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (ri, role) in roles.iter().enumerate() {
        for p in &role.profiles {
            let targets = &members[role_index(roles, &p.target_role)?];
            let gap = Exp::new(p.rate).map_err(|e| SynthError::Spec(e.to_string()))?;
            let (req, resp, dur) = (
                p.request_bytes.distribution()?,
                p.response_bytes.distribution()?,
                p.duration.distribution()?,
            );
            let service = p.service.clone().unwrap_or_else(|| p.proto.clone());
            let hdr = header_bytes(&p.proto);
            for &src in &members[ri] {
                let mut t = gap.sample(&mut rng);
                while t < duration {
                    let dst = targets[pick_peer(&p.peers, targets.len(), &mut rng)];
                    let request_bytes = req.sample(&mut rng).round() as u64;
                    let response_bytes = resp.sample(&mut rng).round() as u64;
                    let packets = |b: u64| ((b as f64 / p.packet_payload).ceil() as u64).max(1);
                    let (rq_pk, rs_pk) = (packets(request_bytes), packets(response_bytes));
                    out.push(ConnRecord {
                        ts: t,
                        source_ip: src,
                        destination_ip: dst,
                        source_port: rng.random_range(32768..=60999),
                        destination_port: p.destination_port,
                        protocol_service: service.clone(),
                        duration: dur.sample(&mut rng),
                        request_bytes,
                        response_bytes,
                        bytes: request_bytes + response_bytes,
                        request_packets: rq_pk,
                        response_packets: rs_pk,
                        request_ip_bytes: request_bytes + hdr * rq_pk,
                        response_ip_bytes: response_bytes + hdr * rs_pk,
                    });
                    t += gap.sample(&mut rng);
                }
            }
        }
    }
    out.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub roles: Vec<RoleSpec>,
    /// Simulated seconds.
    pub duration: f64,
    pub interval_len: f64,
    /// Share of intervals, from the start, used for training.
    pub train_fraction: f64,
    pub holdout_role: String,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            roles: default_roles(),
            duration: 7200.0,
            interval_len: 600.0,
            train_fraction: 0.7,
            holdout_role: "dns_server".into(),
            holdout_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Number of held-out members: `floor(n·f)`, at least 1.
pub fn holdout_count(members: usize, fraction: f64) -> usize {
    ((members as f64 * fraction).floor() as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub records: Vec<ConnRecord>,
    pub train_graphs: Vec<IntervalGraph>,
    pub test_graphs: Vec<IntervalGraph>,
    pub vocab: ProtocolVocab,
    pub scaler: FeatureScaler,
    /// Records at or after this timestamp belong to the test window.
    pub split_time: f64,
    pub holdout: Vec<IpAddr>,
    pub in_role: Vec<IpAddr>,
    pub out_role: Vec<IpAddr>,
}

/// Generates traffic, splits it by time, strips the holdout from the
/// training window and builds normalized graphs for both windows.
pub fn make_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    if !(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0) {
        return Err(SynthError::Experiment("holdout fraction must lie in (0, 1)".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(SynthError::Experiment("train fraction must lie in (0, 1)".into()));
    }
    if !(cfg.interval_len > 0.0) {
        return Err(GraphError::NonPositiveInterval(cfg.interval_len).into());
    }
    let role = &cfg.roles[role_index(&cfg.roles, &cfg.holdout_role)?];
    let k = holdout_count(role.members, cfg.holdout_fraction);
    if k >= role.members {
        return Err(SynthError::Experiment(format!(
            "holding out {k} of {} {} members leaves none for training",
            role.members, role.name
        )));
    }
    let members = role.ips();
    let (in_role, holdout) = members.split_at(role.members - k);
    let out_role: Vec<IpAddr> = cfg
        .roles
        .iter()
        .filter(|r| r.name != role.name)
        .flat_map(RoleSpec::ips)
        .collect();

    let records = generate(&cfg.roles, cfg.duration, cfg.seed)?;
    let intervals = (cfg.duration / cfg.interval_len).ceil() as usize;
    let train_intervals = (intervals as f64 * cfg.train_fraction).floor() as usize;
    if train_intervals == 0 || train_intervals >= intervals {
        return Err(SynthError::Experiment(format!(
            "{intervals} intervals cannot be split {:.2}/{:.2}",
            cfg.train_fraction,
            1.0 - cfg.train_fraction
        )));
    }
    let split_time = train_intervals as f64 * cfg.interval_len;
    let (train_part, test_part): (Vec<ConnRecord>, Vec<ConnRecord>) =
        records.iter().cloned().partition(|r| r.ts < split_time);
    let hold_set: BTreeSet<IpAddr> = holdout.iter().copied().collect();
    let train_part = filter_holdout(&train_part, &hold_set);

    let vocab = ProtocolVocab::fit_records(&train_part)?;
    let mut train_graphs = build_graphs(&train_part, cfg.interval_len, 0.0, &vocab)?;
    let mut test_graphs = build_graphs(&test_part, cfg.interval_len, 0.0, &vocab)?;
    let scaler = FeatureScaler::fit(&train_graphs)?;
    for g in train_graphs.iter_mut().chain(test_graphs.iter_mut()) {
        scaler.normalize(g)?;
    }
    Ok(Experiment {
        records,
        train_graphs,
        test_graphs,
        vocab,
        scaler,
        split_time,
        holdout: holdout.to_vec(),
        in_role: in_role.to_vec(),
        out_role,
    })
}

/// Similarities of the held-out IPs in one test graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphInductive {
    pub interval: i64,
    /// Mean cosine from held-out IPs to in-role IPs present in the graph.
    pub in_role: f64,
    pub out_role: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductiveEvalResult {
    pub graphs: Vec<GraphInductive>,
}

impl InductiveEvalResult {
    pub fn count(&self) -> usize {
        self.graphs.len()
    }

    pub fn in_role_mean_std(&self) -> Option<(f64, f64)> {
        mean_std(&self.graphs.iter().map(|g| g.in_role).collect::<Vec<_>>())
    }

    pub fn out_role_mean_std(&self) -> Option<(f64, f64)> {
        mean_std(&self.graphs.iter().map(|g| g.out_role).collect::<Vec<_>>())
    }

    pub fn margin_mean_std(&self) -> Option<(f64, f64)> {
        mean_std(&self.graphs.iter().map(|g| g.margin).collect::<Vec<_>>())
    }

    /// Share of graphs meeting both thresholds.
    pub fn pass_fraction(&self, min_in_role: f64, min_margin: f64) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        let ok = self
            .graphs
            .iter()
            .filter(|g| g.in_role >= min_in_role && g.margin >= min_margin)
            .count();
        ok as f64 / self.graphs.len() as f64
    }
}

/// Fails if any holdout IP appears in a training graph.
pub fn assert_no_leak(train_graphs: &[IntervalGraph], holdout: &[IpAddr]) -> Result<()> {
    for g in train_graphs {
        if let Some(ip) = holdout.iter().find(|ip| g.contains(ip)) {
            return Err(SynthError::HoldoutLeak {
                ip: *ip,
                interval: g.interval,
            });
        }
    }
    Ok(())
}

fn mean_cosine(set: &EmbeddingSet, from: &[f64], to: &[IpAddr]) -> Option<f64> {
    let values: Vec<f64> = to
        .iter()
        .filter_map(|ip| set.get(ip))
        .map(|v| cosine(from, v).value)
        .collect();
    mean_std(&values).map(|(m, _)| m)
}

/// Per test graph: mean similarity of held-out IPs to in-role and
/// out-of-role IPs present in that graph.
pub fn eval_inductive(
    model: &GnnModel,
    train_graphs: &[IntervalGraph],
    test_graphs: &[IntervalGraph],
    holdout: &[IpAddr],
    in_role: &[IpAddr],
    out_role: &[IpAddr],
) -> Result<InductiveEvalResult> {
    assert_no_leak(train_graphs, holdout)?;
    let mut graphs = Vec::new();
    for g in test_graphs {
        if !holdout.iter().any(|ip| g.contains(ip)) {
            continue;
        }
        let set = crate::embed::infer_embeddings(model, g)?;
        let (mut ins, mut outs) = (Vec::new(), Vec::new());
        for ip in holdout {
            let Some(h) = set.get(ip) else { continue };
            if let (Some(a), Some(b)) = (mean_cosine(&set, h, in_role), mean_cosine(&set, h, out_role)) {
                ins.push(a);
                outs.push(b);
            }
        }
        if let (Some((a, _)), Some((b, _))) = (mean_std(&ins), mean_std(&outs)) {
            graphs.push(GraphInductive {
                interval: g.interval,
                in_role: a,
                out_role: b,
                margin: a - b,
            });
        }
    }
    if graphs.is_empty() {
        return Err(SynthError::Experiment(
            "no test graph contains a held-out IP alongside in-role and out-of-role IPs".into(),
        ));
    }
    Ok(InductiveEvalResult { graphs })
}

/// `interval,in_role,out_role,margin` rows plus a `mean` summary row and a
/// `count` row.
pub fn write_inductive_csv<W: Write>(mut out: W, result: &InductiveEvalResult) -> io::Result<()> {
    writeln!(out, "interval,in_role,out_role,margin")?;
    for g in &result.graphs {
        writeln!(out, "{},{},{},{}", g.interval, g.in_role, g.out_role, g.margin)?;
    }
    let m = |v: Option<(f64, f64)>| v.map(|(m, _)| m.to_string()).unwrap_or_default();
    writeln!(
        out,
        "mean,{},{},{}",
        m(result.in_role_mean_std()),
        m(result.out_role_mean_std()),
        m(result.margin_mean_std())
    )?;
    writeln!(out, "count,{},{},{}", result.count(), result.count(), result.count())
}

/// Copy of `graph` with the numeric counters of every edge between the
/// given node pairs, in either direction, multiplied by `factor`. The copy
/// is unnormalized.
pub fn inflate_edges(graph: &IntervalGraph, pairs: &[(usize, usize)], factor: f64) -> IntervalGraph {
    let pairs: BTreeSet<(usize, usize)> = pairs
        .iter()
        .flat_map(|&(a, b)| [(a, b), (b, a)])
        .collect();
    let p = graph.vocab.len();
    let mut out = graph.clone();
    out.normalized = None;
    for (k, e) in graph.edges.iter().enumerate() {
        if pairs.contains(&(e.source, e.destination)) {
            out.raw.row_mut(k)[p..].iter_mut().for_each(|v| *v *= factor);
        }
    }
    out
}
