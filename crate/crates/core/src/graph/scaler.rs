use super::{GraphError, IntervalGraph, Result, NUMERIC_FEATURES};
use crate::tensor::Tensor;

/// Per-dimension maxima of `log1p` numeric edge features.
///
/// Normalization maps a numeric entry `x` to `min(log1p(x) / max, 1)`; the
/// protocol bits pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    maxima: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(graphs: &[IntervalGraph]) -> Result<Self> {
        let first = graphs
            .iter()
            .find(|g| g.num_edges() > 0)
            .ok_or(GraphError::NoEdges)?;
        let protocols = first.vocab.len();
        let mut maxima = vec![0.0f64; protocols * NUMERIC_FEATURES];
        for g in graphs {
            if g.vocab.len() != protocols {
                return Err(GraphError::Dimension {
                    expected: first.feature_dim(),
                    found: g.feature_dim(),
                });
            }
            for row in g.raw.iter_rows() {
                for (m, &v) in maxima.iter_mut().zip(&row[protocols..]) {
                    *m = m.max(v.max(0.0).ln_1p());
                }
            }
        }
        for m in &mut maxima {
            if !(*m > 0.0) {
                *m = 1.0;
            }
        }
        Ok(Self { maxima })
    }

    pub fn from_maxima(maxima: Vec<f64>) -> Result<Self> {
        if !maxima.len().is_multiple_of(NUMERIC_FEATURES) {
            return Err(GraphError::Dimension {
                expected: maxima.len().next_multiple_of(NUMERIC_FEATURES),
                found: maxima.len(),
            });
        }
        if let Some(bad) = maxima.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(GraphError::Snapshot(format!("scaler maximum {bad} must be positive")));
        }
        Ok(Self { maxima })
    }

    pub fn maxima(&self) -> &[f64] {
        &self.maxima
    }

    pub fn protocols(&self) -> usize {
        self.maxima.len() / NUMERIC_FEATURES
    }

    pub fn normalize_value(&self, dim: usize, raw: f64) -> f64 {
        (raw.max(0.0).ln_1p() / self.maxima[dim]).min(1.0)
    }

    /// Attaches the normalized feature matrix to `graph`.
    pub fn normalize(&self, graph: &mut IntervalGraph) -> Result<()> {
        let protocols = graph.vocab.len();
        let expected = self.maxima.len() + protocols;
        if protocols != self.protocols() || graph.feature_dim() != expected {
            return Err(GraphError::Dimension {
                expected,
                found: graph.feature_dim(),
            });
        }
        let mut out = Tensor::zeros(graph.raw.rows(), graph.raw.cols());
        for r in 0..graph.raw.rows() {
            let src = graph.raw.row(r);
            let dst = out.row_mut(r);
            dst[..protocols].copy_from_slice(&src[..protocols]);
            for (k, (d, &s)) in dst[protocols..].iter_mut().zip(&src[protocols..]).enumerate() {
                *d = self.normalize_value(k, s);
            }
        }
        graph.normalized = Some(out);
        Ok(())
    }
}
