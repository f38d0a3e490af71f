//! Cluster prevalence and cohesion metrics plus temporal-stability
//! diagnostics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{shared_displacement, EmbeddingFrame};
use crate::ingest::Layer;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("cohesion needs a cluster of size >= 2, got {0}")]
    ClusterTooSmall(usize),
}

/// One exported metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetricRow {
    pub group: String,
    pub period: i32,
    pub cluster_label: i64,
    pub size: usize,
    pub prevalence: f64,
    /// Missing when alpha or beta is zero.
    pub cohesion: Option<f64>,
}

/// Share of the layer's articles containing the tag.
pub fn tag_prevalence(layer: &Layer, tag: &str) -> Result<f64, MetricsError> {
    let idx = layer
        .vocab
        .index_of(tag)
        .ok_or_else(|| MetricsError::UnknownTag(tag.to_string()))?;
    Ok(layer.vocab.usage_counts[idx] as f64 / layer.article_total as f64)
}

/// Arithmetic mean of member tag prevalences.
pub fn cluster_prevalence(layer: &Layer, members: &[usize]) -> f64 {
    assert!(!members.is_empty(), "cluster must be non-empty");
    let sum: f64 = members
        .iter()
        .map(|&i| layer.vocab.usage_counts[i] as f64 / layer.article_total as f64)
        .sum();
    sum / members.len() as f64
}

/// Log-odds of within-cluster co-occurrence weight versus the chance
/// expectation: ln(alpha/beta) - ln(k(k-1)/(k(N-1))). `None` when alpha or
/// beta is zero.
pub fn cluster_cohesion(layer: &Layer, members: &[usize]) -> Result<Option<f64>, MetricsError> {
    let k = members.len();
    if k < 2 {
        return Err(MetricsError::ClusterTooSmall(k));
    }
    let n = layer.len();
    let in_cluster = {
        let mut mask = vec![false; n];
        for &m in members {
            mask[m] = true;
        }
        mask
    };
    let mut alpha = 0u64;
    let mut beta = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = layer.cooc[i][j];
            if w == 0 {
                continue;
            }
            match (in_cluster[i], in_cluster[j]) {
                (true, true) => {
                    alpha += w;
                    beta += w;
                }
                (true, false) | (false, true) => beta += w,
                (false, false) => {}
            }
        }
    }
    if alpha == 0 || beta == 0 {
        return Ok(None);
    }
    let kf = k as f64;
    let nf = n as f64;
    let expected = (kf * (kf - 1.0)) / (kf * (nf - 1.0));
    Ok(Some((alpha as f64 / beta as f64).ln() - expected.ln()))
}

/// Per-consecutive-pair mean displacement of shared tags along one group's
/// chain, in intermediate-space units.
pub fn chain_stability(layers: &[Layer], frames: &[EmbeddingFrame]) -> Vec<f64> {
    assert!(layers.len() == frames.len());
    assert!(frames.len() >= 2, "need at least two frames");
    (1..frames.len())
        .map(|t| {
            shared_displacement(&layers[t - 1], &layers[t], &frames[t - 1], &frames[t])
                .unwrap_or(0.0)
        })
        .collect()
}
