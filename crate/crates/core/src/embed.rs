//! Inference-time queries over per-IP embeddings.

use std::io::{self, Write};
use std::net::IpAddr;

use thiserror::Error;

use crate::graph::{GraphError, IntervalGraph};
use crate::model::{bce, GnnModel, GraphInput, ModelError};
use crate::tensor::{BnMode, Tensor};

/// Norm below which a vector is treated as zero by [`cosine`].
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("IP {ip} does not appear in interval {interval}")]
    UnknownIp { ip: IpAddr, interval: i64 },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("projection needs at least 2 embeddings, got {0}")]
    TooFewPoints(usize),
    #[error("no graphs to report on")]
    NoGraphs,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// Embeddings and reconstruction errors for one interval graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub interval: i64,
    /// Node IPs in ascending order; row `k` of `embeddings` belongs to `ips[k]`.
    pub ips: Vec<IpAddr>,
    pub embeddings: Tensor,
    /// `(source, destination)` node indices of every edge, reverse
    /// companions included.
    pub edges: Vec<(usize, usize)>,
    /// Mean unweighted cross-entropy between each edge's input features and
    /// its reconstruction.
    pub edge_bce: Vec<f64>,
    /// Mean cross-entropy in excess of the input features' own entropy;
    /// zero for a perfect reconstruction.
    pub edge_errors: Vec<f64>,
    /// Mean of `edge_errors` over each node's incident edges; 0 for
    /// isolated nodes.
    pub anomaly: Vec<f64>,
}

impl EmbeddingSet {
    pub fn index_of(&self, ip: &IpAddr) -> Option<usize> {
        self.ips.binary_search(ip).ok()
    }

    pub fn get(&self, ip: &IpAddr) -> Option<&[f64]> {
        self.index_of(ip).map(|k| self.embeddings.row(k))
    }

    pub fn anomaly_of(&self, ip: &IpAddr) -> Option<f64> {
        self.index_of(ip).map(|k| self.anomaly[k])
    }

    pub fn len(&self) -> usize {
        self.ips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ips.is_empty()
    }

    fn require(&self, ip: &IpAddr) -> Result<usize> {
        self.index_of(ip).ok_or(EmbedError::UnknownIp {
            ip: *ip,
            interval: self.interval,
        })
    }
}

fn row_means(targets: &Tensor, probs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    targets
        .iter_rows()
        .zip(probs.iter_rows())
        .map(|(t, p)| t.iter().zip(p).map(|(&t, &p)| f(t, p)).sum::<f64>() / t.len() as f64)
        .collect()
}

/// Per-edge mean cross-entropy of `probs` against `targets`.
pub fn edge_bce(targets: &Tensor, probs: &Tensor) -> Vec<f64> {
    row_means(targets, probs, bce)
}

/// `BCE(t, p) - BCE(t, t)`, the part of the cross-entropy that depends on
/// the reconstruction.
pub fn excess_bce(target: f64, prob: f64) -> f64 {
    (bce(target, prob) - bce(target, target)).max(0.0)
}

/// Per-edge mean of [`excess_bce`].
pub fn edge_errors(targets: &Tensor, probs: &Tensor) -> Vec<f64> {
    row_means(targets, probs, excess_bce)
}

/// Per-node mean of incident edge errors.
pub fn node_anomaly(nodes: usize, edges: &[(usize, usize)], errors: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; nodes];
    let mut count = vec![0usize; nodes];
    for (&(s, d), &e) in edges.iter().zip(errors) {
        sum[s] += e;
        count[s] += 1;
        if d != s {
            sum[d] += e;
            count[d] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}

/// Eval-mode embeddings and reconstruction errors for a graph already
/// normalized with the model's vocabulary and scaler.
pub fn infer_embeddings(model: &GnnModel, graph: &IntervalGraph) -> Result<EmbeddingSet> {
    let input = GraphInput::from_graph(graph)?;
    let out = model.forward(&input, BnMode::Eval)?;
    let edges: Vec<(usize, usize)> = graph.edges.iter().map(|e| (e.source, e.destination)).collect();
    let raw = edge_bce(&input.features, &out.reconstruction);
    let errors = edge_errors(&input.features, &out.reconstruction);
    let anomaly = node_anomaly(graph.num_nodes(), &edges, &errors);
    Ok(EmbeddingSet {
        interval: graph.interval,
        ips: graph.nodes.clone(),
        embeddings: out.embeddings,
        edges,
        edge_bce: raw,
        edge_errors: errors,
        anomaly,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input had norm below [`DEGENERATE_NORM`]; `value`
    /// is then 0.
    pub degenerate: bool,
}

pub fn cosine(u: &[f64], v: &[f64]) -> Cosine {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < DEGENERATE_NORM || nv < DEGENERATE_NORM {
        return Cosine {
            value: 0.0,
            degenerate: true,
        };
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Cosine {
        value: (dot / (nu * nv)).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// The `k` IPs most similar to `query`, highest first; ties go to the
/// lower IP.
pub fn top_k_similar(set: &EmbeddingSet, query: &IpAddr, k: usize) -> Result<Vec<(IpAddr, f64)>> {
    if k == 0 {
        return Err(EmbedError::ZeroK);
    }
    let q = set.require(query)?;
    let target = set.embeddings.row(q);
    let mut ranked: Vec<(IpAddr, f64)> = (0..set.len())
        .filter(|&j| j != q)
        .map(|j| (set.ips[j], cosine(target, set.embeddings.row(j)).value))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Linear-interpolation percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 50.0)
}

/// Every unordered pair from `ips`, in input order.
pub fn all_pairs(ips: &[IpAddr]) -> Vec<(IpAddr, IpAddr)> {
    let mut out = Vec::new();
    for (i, a) in ips.iter().enumerate() {
        for b in &ips[i + 1..] {
            out.push((*a, *b));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSimilarity {
    pub pair: (IpAddr, IpAddr),
    /// `(interval, cosine)` for each graph containing both IPs.
    pub values: Vec<(i64, f64)>,
}

impl PairSimilarity {
    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn mean_std(&self) -> Option<(f64, f64)> {
        mean_std(&self.cosines())
    }

    fn cosines(&self) -> Vec<f64> {
        self.values.iter().map(|&(_, c)| c).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub pairs: Vec<PairSimilarity>,
    /// Graphs scanned.
    pub graphs: usize,
}

impl SimilarityReport {
    /// Mean, standard deviation and count over every recorded value of
    /// every pair.
    pub fn pooled(&self) -> (Option<(f64, f64)>, usize) {
        let all: Vec<f64> = self.pairs.iter().flat_map(|p| p.cosines()).collect();
        (mean_std(&all), all.len())
    }

    /// Graphs in which at least one pair was recorded.
    pub fn graphs_with_pairs(&self) -> usize {
        let mut seen: Vec<i64> = self
            .pairs
            .iter()
            .flat_map(|p| p.values.iter().map(|&(i, _)| i))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }
}

/// Cosine similarity of each pair in every graph where both members appear.
pub fn pairwise_report(
    model: &GnnModel,
    graphs: &[IntervalGraph],
    pairs: &[(IpAddr, IpAddr)],
) -> Result<SimilarityReport> {
    let sets = graphs
        .iter()
        .map(|g| infer_embeddings(model, g))
        .collect::<Result<Vec<_>>>()?;
    report_from_sets(&sets, pairs)
}

pub fn report_from_sets(sets: &[EmbeddingSet], pairs: &[(IpAddr, IpAddr)]) -> Result<SimilarityReport> {
    if sets.is_empty() {
        return Err(EmbedError::NoGraphs);
    }
    let pairs = pairs
        .iter()
        .map(|&(a, b)| PairSimilarity {
            pair: (a, b),
            values: sets
                .iter()
                .filter_map(|s| {
                    let (u, v) = (s.get(&a)?, s.get(&b)?);
                    Some((s.interval, cosine(u, v).value))
                })
                .collect(),
        })
        .collect();
    Ok(SimilarityReport {
        pairs,
        graphs: sets.len(),
    })
}

/// Top-two principal component coordinates per IP. Each component's
/// largest-magnitude loading is made positive.
pub fn project_2d(set: &EmbeddingSet) -> Result<Vec<(IpAddr, [f64; 2])>> {
    let coords = pca_2d(&set.embeddings)?;
    Ok(set.ips.iter().copied().zip(coords).collect())
}

pub fn pca_2d(x: &Tensor) -> Result<Vec<[f64; 2]>> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(EmbedError::TooFewPoints(n));
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    let (values, vectors) = jacobi_eigen(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Vec<f64> {
        let Some(&c) = order.get(k) else {
            return vec![0.0; d];
        };
        let mut v: Vec<f64> = (0..d).map(|i| vectors[i][c]).collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let (a, b) = (axis(0), axis(1));
    let dot = |r: &[f64], w: &[f64]| r.iter().zip(w).map(|(p, q)| p * q).sum::<f64>();
    Ok(centered.iter().map(|r| [dot(r, &a), dot(r, &b)]).collect())
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues and a matrix whose columns are the matching eigenvectors.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (ap, aq) = (a[p].clone(), a[q].clone());
                a[p] = ap.iter().zip(&aq).map(|(x, y)| c * x - s * y).collect();
                a[q] = ap.iter().zip(&aq).map(|(x, y)| s * x + c * y).collect();
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub fn pair_label(pair: &(IpAddr, IpAddr)) -> String {
    format!("{}|{}", pair.0, pair.1)
}

pub fn write_embeddings_csv<W: Write>(mut out: W, set: &EmbeddingSet) -> io::Result<()> {
    write!(out, "ip")?;
    for k in 0..set.embeddings.cols() {
        write!(out, ",dim_{k}")?;
    }
    writeln!(out)?;
    for (ip, row) in set.ips.iter().zip(set.embeddings.iter_rows()) {
        write!(out, "{ip}")?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `pair,interval,cosine` rows followed by a `pair,mean,std,count`
/// summary; the summary's `all` row pools every pair.
pub fn write_report_csv<W: Write>(mut out: W, report: &SimilarityReport) -> io::Result<()> {
    writeln!(out, "pair,interval,cosine")?;
    for p in &report.pairs {
        let label = pair_label(&p.pair);
        for (interval, c) in &p.values {
            writeln!(out, "{label},{interval},{c}")?;
        }
    }
    writeln!(out, "pair,mean,std,count")?;
    let stat = |ms: Option<(f64, f64)>| match ms {
        Some((m, s)) => (m.to_string(), s.to_string()),
        None => (String::new(), String::new()),
    };
    for p in &report.pairs {
        let (m, s) = stat(p.mean_std());
        writeln!(out, "{},{m},{s},{}", pair_label(&p.pair), p.count())?;
    }
    let (pooled, count) = report.pooled();
    let (m, s) = stat(pooled);
    writeln!(out, "all,{m},{s},{count}")?;
    Ok(())
}

pub fn write_projection_csv<W: Write>(mut out: W, coords: &[(IpAddr, [f64; 2])]) -> io::Result<()> {
    writeln!(out, "ip,x,y")?;
    for (ip, [x, y]) in coords {
        writeln!(out, "{ip},{x},{y}")?;
    }
    Ok(())
}

pub fn write_similar_csv<W: Write>(mut out: W, ranked: &[(IpAddr, f64)]) -> io::Result<()> {
    writeln!(out, "ip,cosine")?;
    for (ip, c) in ranked {
        writeln!(out, "{ip},{c}")?;
    }
    Ok(())
}

pub fn write_anomaly_csv<W: Write>(mut out: W, set: &EmbeddingSet) -> io::Result<()> {
    writeln!(out, "ip,interval,anomaly")?;
    for (ip, a) in set.ips.iter().zip(&set.anomaly) {
        writeln!(out, "{ip},{},{a}", set.interval)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> IpAddr {
        s.parse().unwrap()
    }

    fn set(rows: &[Vec<f64>]) -> EmbeddingSet {
        let ips: Vec<IpAddr> = (0..rows.len()).map(|k| ip(&format!("10.0.0.{}", k + 1))).collect();
        EmbeddingSet {
            interval: 4,
            ips,
            embeddings: Tensor::from_rows(rows).unwrap(),
            edges: Vec::new(),
            edge_bce: Vec::new(),
            edge_errors: Vec::new(),
            anomaly: vec![0.0; rows.len()],
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).value - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).value, 0.0);
        assert_eq!(cosine(&[1.0, 1.0], &[1.0, -1.0]).value, 0.0);
        assert_eq!(cosine(&[2.0, 0.0], &[1.0, 0.0]).value, 1.0);
        let z = cosine(&[0.0, 1e-13], &[1.0, 0.0]);
        assert!(z.degenerate && z.value == 0.0);
    }

    #[test]
    fn duplicate_ranks_first_and_k_clamps() {
        let s = set(&[vec![1.0, 0.2], vec![0.0, 1.0], vec![1.0, 0.2], vec![0.5, 0.5]]);
        let top = top_k_similar(&s, &ip("10.0.0.1"), 10).unwrap();
        assert_eq!(top.len(), 3);
        assert_eq!(top[0].0, ip("10.0.0.3"));
        assert!((top[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_ip_order() {
        let s = set(&[vec![1.0], vec![2.0], vec![3.0]]);
        let top = top_k_similar(&s, &ip("10.0.0.3"), 2).unwrap();
        assert_eq!(top, vec![(ip("10.0.0.1"), 1.0), (ip("10.0.0.2"), 1.0)]);
    }

    #[test]
    fn unknown_query_names_interval() {
        let s = set(&[vec![1.0], vec![2.0]]);
        let err = top_k_similar(&s, &ip("10.9.9.9"), 1).unwrap_err();
        assert!(err.to_string().contains("interval 4"), "{err}");
        assert!(matches!(top_k_similar(&s, &ip("10.0.0.1"), 0), Err(EmbedError::ZeroK)));
    }

    #[test]
    fn report_statistics() {
        let a = set(&[vec![1.0, 0.0], vec![0.8, 0.6]]);
        let b = set(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let pair = (ip("10.0.0.1"), ip("10.0.0.2"));
        let missing = (ip("10.0.0.1"), ip("10.0.0.7"));
        let r = report_from_sets(&[a, b], &[pair, missing]).unwrap();
        let (m, s) = r.pairs[0].mean_std().unwrap();
        assert!((m - 0.9).abs() < 1e-12 && (s - 0.1).abs() < 1e-12);
        assert_eq!(r.pairs[1].count(), 0);
        assert!(r.pairs[1].mean_std().is_none());
        let mut csv = Vec::new();
        write_report_csv(&mut csv, &r).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.contains("10.0.0.1|10.0.0.7,,,0\n"), "{text}");
        assert!(text.starts_with("pair,interval,cosine\n10.0.0.1|10.0.0.2,4,"));
    }

    #[test]
    fn constant_embeddings_report_one() {
        let sets: Vec<EmbeddingSet> = (0..3).map(|_| set(&[vec![0.3, 0.4], vec![0.3, 0.4]])).collect();
        let r = report_from_sets(&sets, &[(ip("10.0.0.1"), ip("10.0.0.2"))]).unwrap();
        let (m, s) = r.pairs[0].mean_std().unwrap();
        assert!((m - 1.0).abs() < 1e-15);
        assert!(s.abs() < 1e-12);
        assert_eq!(r.pairs[0].count(), 3);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 100.0), Some(4.0));
        assert_eq!(median(&v), Some(2.5));
        assert!(percentile(&[], 50.0).is_none());
    }

    #[test]
    fn excess_bce_vanishes_at_target() {
        for t in [0.0, 0.3, 0.5, 1.0] {
            assert!(excess_bce(t, t.clamp(1e-300, 1.0 - 1e-16)) < 1e-12);
        }
        let p: f64 = 0.8;
        let expected = -(0.3 * p.ln() + 0.7 * (1.0 - p).ln()) + (0.3 * 0.3f64.ln() + 0.7 * 0.7f64.ln());
        assert!((excess_bce(0.3, p) - expected).abs() < 1e-15);
        let t = Tensor::row_vector(&[1.0, 0.0]);
        let q = Tensor::row_vector(&[0.9, 0.2]);
        assert_eq!(edge_bce(&t, &q), edge_errors(&t, &q));
    }

    #[test]
    fn anomaly_is_mean_over_incident_edges() {
        let a = node_anomaly(3, &[(0, 1), (1, 0), (1, 1)], &[0.2, 0.4, 0.9]);
        assert!((a[0] - 0.3).abs() < 1e-15);
        assert!((a[1] - 0.5).abs() < 1e-15);
        assert_eq!(a[2], 0.0);
    }

    #[test]
    fn projection_of_axis_aligned_data_is_identity() {
        let pts = vec![vec![3.0, 0.0], vec![-3.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let out = pca_2d(&Tensor::from_rows(&pts).unwrap()).unwrap();
        for (p, q) in pts.iter().zip(&out) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12, "{q:?}");
        }
    }

    #[test]
    fn identical_points_project_to_origin() {
        let out = pca_2d(&Tensor::filled(3, 4, 0.7)).unwrap();
        assert!(out.iter().all(|c| c[0] == 0.0 && c[1] == 0.0));
        assert!(matches!(pca_2d(&Tensor::zeros(1, 3)), Err(EmbedError::TooFewPoints(1))));
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let (vals, vecs) = jacobi_eigen(vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        assert!((sorted[0] - 1.0).abs() < 1e-14 && (sorted[1] - 3.0).abs() < 1e-14);
        let col: Vec<f64> = (0..2).map(|i| vecs[i][0]).collect();
        assert!((col[0].abs() - col[1].abs()).abs() < 1e-14);
    }

    #[test]
    fn embeddings_csv_layout() {
        let s = set(&[vec![0.5, 1.0], vec![2.0, -1.0]]);
        let mut buf = Vec::new();
        write_embeddings_csv(&mut buf, &s).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "ip,dim_0,dim_1\n10.0.0.1,0.5,1\n10.0.0.2,2,-1\n"
        );
    }
}
