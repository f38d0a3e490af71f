//! Chained low-dimensional layout of fuzzy graphs with temporal anchoring.
//!
//! Each layer is laid out by stochastic gradient descent on the fuzzy
//! cross-entropy objective (attraction along sampled edges, repulsion via
//! uniform negative sampling). Consecutive layers of one group are chained:
//! nodes present in both layers start at (and are pulled toward) their
//! previous-period positions through a quadratic anchor penalty.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RowTransform;
use crate::graph::{self, FuzzyGraph};
use crate::ingest::{Layer, LayerKey};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("non-finite gradient at epoch {epoch}, node {node}")]
    NonFinite { epoch: usize, node: usize },
    #[error("init matrix has {got} rows, graph has {expected} nodes")]
    InitShape { got: usize, expected: usize },
}

/// Which coordinate space a frame lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Intermediate,
    Aligned,
    Final,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Space::Intermediate => write!(f, "intermediate"),
            Space::Aligned => write!(f, "aligned"),
            Space::Final => write!(f, "final"),
        }
    }
}

/// N x D coordinates for one layer's vocabulary in a named space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingFrame {
    pub key: LayerKey,
    pub space: Space,
    pub coords: Vec<Vec<f64>>,
}

impl EmbeddingFrame {
    pub fn dim(&self) -> usize {
        self.coords.first().map_or(0, |r| r.len())
    }
}

/// Node correspondence between consecutive layers of one group:
/// (index in prev, index in next) for identical normalized tag strings.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Relation {
    pub pairs: Vec<(usize, usize)>,
}

/// One pinned node: pulled toward `position` with weight lambda.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub node: usize,
    pub position: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EmbedParams {
    pub dim: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: usize,
    pub negatives: usize,
    pub n_neighbors: usize,
    pub lambda: f64,
    pub row_transform: RowTransform,
}

impl Default for EmbedParams {
    fn default() -> Self {
        EmbedParams {
            dim: 4,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: 200,
            negatives: 5,
            n_neighbors: 15,
            lambda: 0.3,
            row_transform: RowTransform::None,
        }
    }
}

const GRAD_CLIP: f64 = 4.0;
const INIT_RANGE: f64 = 10.0;
const NEW_NODE_JITTER: f64 = 0.01;

/// Fits (a, b) of the low-dimensional similarity kernel 1/(1 + a d^{2b})
/// against the piecewise target (1 for d <= min_dist, exponential decay
/// beyond) by least squares on a grid over [0, 3 * spread].
pub fn curve_params(min_dist: f64, spread: f64) -> (f64, f64) {
    assert!(spread > 0.0, "spread must be > 0");
    assert!(min_dist >= 0.0, "min_dist must be >= 0");
    let n_grid = 300;
    let grid: Vec<(f64, f64)> = (0..=n_grid)
        .map(|i| {
            let d = 3.0 * spread * i as f64 / n_grid as f64;
            let target = if d <= min_dist {
                1.0
            } else {
                (-(d - min_dist) / spread).exp()
            };
            (d, target)
        })
        .collect();
    let sse = |a: f64, b: f64| -> f64 {
        grid.iter()
            .map(|&(d, t)| {
                let phi = 1.0 / (1.0 + a * d.powf(2.0 * b));
                (phi - t) * (phi - t)
            })
            .sum()
    };
    // Coarse grid search, then shrinking local refinement.
    let mut best = (1.0, 1.0, sse(1.0, 1.0));
    for ai in 0..=80 {
        let a = 0.05 + ai as f64 * 0.075;
        for bi in 0..=60 {
            let b = 0.1 + bi as f64 * 0.04;
            let e = sse(a, b);
            if e < best.2 {
                best = (a, b, e);
            }
        }
    }
    let mut range_a = 0.1;
    let mut range_b = 0.05;
    for _ in 0..8 {
        let (a0, b0, _) = best;
        for ai in -10i32..=10 {
            let a = (a0 + ai as f64 * range_a / 10.0).max(1e-6);
            for bi in -10i32..=10 {
                let b = (b0 + bi as f64 * range_b / 10.0).max(1e-6);
                let e = sse(a, b);
                if e < best.2 {
                    best = (a, b, e);
                }
            }
        }
        range_a /= 4.0;
        range_b /= 4.0;
    }
    (best.0, best.1)
}

/// Pairs nodes of consecutive layers whose normalized tag strings are
/// byte-identical. The mapping is injective because vocabularies hold
/// distinct tags.
pub fn relations(prev: &Layer, next: &Layer) -> Relation {
    let mut next_index = std::collections::HashMap::new();
    for (j, tag) in next.vocab.tags.iter().enumerate() {
        next_index.insert(tag.as_str(), j);
    }
    let mut pairs = Vec::new();
    for (i, tag) in prev.vocab.tags.iter().enumerate() {
        if let Some(&j) = next_index.get(tag.as_str()) {
            pairs.push((i, j));
        }
    }
    Relation { pairs }
}

/// Lays out one fuzzy graph. `init` seeds the coordinates (otherwise uniform
/// random in [-10, 10]^D); anchored nodes additionally feel a quadratic pull
/// of weight `lambda` toward their fixed positions.
pub fn embed_layer(
    graph: &FuzzyGraph,
    params: &EmbedParams,
    seed: u64,
    init: Option<&[Vec<f64>]>,
    anchors: &[Anchor],
) -> Result<Vec<Vec<f64>>, EmbedError> {
    let n = graph.n_nodes;
    let dim = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<Vec<f64>> = match init {
        Some(m) => {
            if m.len() != n {
                return Err(EmbedError::InitShape {
                    got: m.len(),
                    expected: n,
                });
            }
            m.to_vec()
        }
        None => (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect())
            .collect(),
    };
    if n <= 1 {
        return Ok(coords);
    }
    let (a, b) = curve_params(params.min_dist, params.spread);
    for epoch in 0..params.n_epochs {
        let lr = 1.0 - epoch as f64 / params.n_epochs as f64;
        for &(i, j, w) in &graph.edges {
            if rng.gen::<f64>() > w {
                continue;
            }
            attract(&mut coords, i, j, a, b, lr);
            for _ in 0..params.negatives {
                let k = rng.gen_range(0..n);
                if k == i {
                    continue;
                }
                repel(&mut coords, i, k, a, b, lr);
            }
        }
        for anchor in anchors {
            if params.lambda > 0.0 {
                // Implicit (proximal) step on lambda * ||y - anchor||^2:
                // exact minimizer of the penalty sub-step, stable for any
                // lambda.
                let pull = lr * 2.0 * params.lambda;
                let y = &mut coords[anchor.node];
                for d in 0..dim {
                    y[d] = (y[d] + pull * anchor.position[d]) / (1.0 + pull);
                }
            }
        }
        for (node, row) in coords.iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::NonFinite { epoch, node });
            }
        }
    }
    Ok(coords)
}

fn attract(coords: &mut [Vec<f64>], i: usize, j: usize, a: f64, b: f64, lr: f64) {
    let dim = coords[i].len();
    let mut d2 = 0.0;
    for d in 0..dim {
        let diff = coords[i][d] - coords[j][d];
        d2 += diff * diff;
    }
    if d2 <= 0.0 {
        return;
    }
    // Gradient of log(1 / (1 + a d^{2b})) w.r.t. y_i.
    let coeff = (-2.0 * a * b * d2.powf(b - 1.0)) / (1.0 + a * d2.powf(b));
    for d in 0..dim {
        let g = (coeff * (coords[i][d] - coords[j][d])).clamp(-GRAD_CLIP, GRAD_CLIP);
        coords[i][d] += lr * g;
        coords[j][d] -= lr * g;
    }
}

fn repel(coords: &mut [Vec<f64>], i: usize, k: usize, a: f64, b: f64, lr: f64) {
    let dim = coords[i].len();
    let mut d2 = 0.0;
    for d in 0..dim {
        let diff = coords[i][d] - coords[k][d];
        d2 += diff * diff;
    }
    if d2 > 0.0 {
        let coeff = (2.0 * b) / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
        for d in 0..dim {
            let g = (coeff * (coords[i][d] - coords[k][d])).clamp(-GRAD_CLIP, GRAD_CLIP);
            coords[i][d] += lr * g;
        }
    } else {
        for d in 0..dim {
            coords[i][d] += lr * GRAD_CLIP;
        }
    }
}

/// Fuzzy cross-entropy of a layout over all node pairs (edges carry their
/// membership strength, non-edges weight 0). Diagnostic only.
pub fn layout_objective(graph: &FuzzyGraph, coords: &[Vec<f64>], a: f64, b: f64) -> f64 {
    let n = graph.n_nodes;
    let mut weights = std::collections::HashMap::new();
    for &(i, j, w) in &graph.edges {
        weights.insert((i, j), w);
    }
    let eps = 1e-9;
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = weights.get(&(i, j)).copied().unwrap_or(0.0);
            let mut d2 = 0.0;
            for d in 0..coords[i].len() {
                let diff = coords[i][d] - coords[j][d];
                d2 += diff * diff;
            }
            let phi = 1.0 / (1.0 + a * d2.powf(b));
            total += -w * (phi + eps).ln() - (1.0 - w) * (1.0 - phi + eps).ln();
        }
    }
    total
}

/// Embeds a time-ordered chain of one group's layers. Frame 0 is laid out
/// unanchored; every later frame starts from the frozen previous frame
/// (shared tags jittered, new tags at the co-occurrence-weighted mean of
/// already-initialized neighbors) with shared tags anchored to their
/// previous positions.
pub fn embed_chain(
    layers: &[Layer],
    params: &EmbedParams,
    seed: u64,
) -> Result<Vec<EmbeddingFrame>, EmbedError> {
    let mut frames: Vec<EmbeddingFrame> = Vec::with_capacity(layers.len());
    let mut chain_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    for (t, layer) in layers.iter().enumerate() {
        let frame_seed = chain_rng.gen::<u64>();
        let fuzzy = build_fuzzy(layer, params);
        let (init, anchors) = if t == 0 {
            (None, Vec::new())
        } else {
            let prev_layer = &layers[t - 1];
            let prev_coords = &frames[t - 1].coords;
            let relation = relations(prev_layer, layer);
            let (init, anchors) =
                chain_init(layer, &relation, prev_coords, params.dim, &mut chain_rng);
            (Some(init), anchors)
        };
        let coords = embed_layer(&fuzzy, params, frame_seed, init.as_deref(), &anchors)?;
        frames.push(EmbeddingFrame {
            key: layer.key.clone(),
            space: Space::Intermediate,
            coords,
        });
    }
    Ok(frames)
}

fn build_fuzzy(layer: &Layer, params: &EmbedParams) -> FuzzyGraph {
    if layer.len() < 2 {
        return FuzzyGraph {
            n_nodes: layer.len(),
            edges: Vec::new(),
        };
    }
    let knn = graph::knn_graph(layer, params.n_neighbors, params.row_transform);
    graph::fuzzy_graph(&knn, params.n_neighbors)
}

fn chain_init(
    layer: &Layer,
    relation: &Relation,
    prev_coords: &[Vec<f64>],
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<Anchor>) {
    let n = layer.len();
    let mut coords = vec![vec![0.0; dim]; n];
    let mut initialized = vec![false; n];
    let mut anchors = Vec::with_capacity(relation.pairs.len());
    for &(prev_idx, next_idx) in &relation.pairs {
        let base = &prev_coords[prev_idx];
        for d in 0..dim {
            coords[next_idx][d] = base[d] + rng.gen_range(-NEW_NODE_JITTER..NEW_NODE_JITTER);
        }
        initialized[next_idx] = true;
        anchors.push(Anchor {
            node: next_idx,
            position: base.clone(),
        });
    }
    for i in 0..n {
        if initialized[i] {
            continue;
        }
        let mut acc = vec![0.0; dim];
        let mut total = 0.0;
        for j in 0..n {
            if initialized[j] && layer.cooc[i][j] > 0 {
                let w = layer.cooc[i][j] as f64;
                for d in 0..dim {
                    acc[d] += w * coords[j][d];
                }
                total += w;
            }
        }
        if total > 0.0 {
            for d in 0..dim {
                coords[i][d] = acc[d] / total;
            }
        } else {
            for d in 0..dim {
                coords[i][d] = rng.gen_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        initialized[i] = true;
    }
    (coords, anchors)
}

/// Mean Euclidean displacement of tags shared by two consecutive frames.
pub fn shared_displacement(
    prev_layer: &Layer,
    next_layer: &Layer,
    prev_frame: &EmbeddingFrame,
    next_frame: &EmbeddingFrame,
) -> Option<f64> {
    let relation = relations(prev_layer, next_layer);
    if relation.pairs.is_empty() {
        return None;
    }
    let sum: f64 = relation
        .pairs
        .iter()
        .map(|&(i, j)| euclidean(&prev_frame.coords[i], &next_frame.coords[j]))
        .sum();
    Some(sum / relation.pairs.len() as f64)
}

pub(crate) fn euclidean(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Vocabulary;

    fn layer_with_tags(group: &str, period: i32, tags: &[&str], cooc: Vec<Vec<u64>>) -> Layer {
        Layer {
            key: LayerKey {
                group: group.into(),
                period,
            },
            vocab: Vocabulary {
                tags: tags.iter().map(|t| t.to_string()).collect(),
                usage_counts: vec![1; tags.len()],
            },
            cooc,
            article_total: tags.len() as u64,
        }
    }

    /// Two 20-node cliques with no inter-clique edges.
    fn two_cliques() -> FuzzyGraph {
        let mut edges = Vec::new();
        for base in [0usize, 20] {
            for i in 0..20 {
                for j in (i + 1)..20 {
                    edges.push((base + i, base + j, 1.0));
                }
            }
        }
        FuzzyGraph { n_nodes: 40, edges }
    }

    #[test]
    fn curve_params_standard_defaults() {
        let (a, b) = curve_params(0.1, 1.0);
        assert!((a - 1.58).abs() < 0.05, "a = {a}");
        assert!((b - 0.90).abs() < 0.05, "b = {b}");
    }

    #[test]
    fn curve_params_kernel_near_one_at_zero() {
        let (a, b) = curve_params(0.0, 1.0);
        let phi0 = 1.0 / (1.0 + a * 0f64.powf(2.0 * b));
        assert!(phi0 >= 0.99);
    }

    #[test]
    fn curve_params_beats_unit_candidate() {
        let (a, b) = curve_params(0.1, 1.0);
        let sse = |a: f64, b: f64| -> f64 {
            (0..=300)
                .map(|i| {
                    let d = 3.0 * i as f64 / 300.0;
                    let target = if d <= 0.1 { 1.0 } else { (-(d - 0.1)).exp() };
                    let phi = 1.0 / (1.0 + a * d.powf(2.0 * b));
                    (phi - target) * (phi - target)
                })
                .sum()
        };
        assert!(sse(a, b) < sse(1.0, 1.0));
    }

    #[test]
    fn relations_full_and_disjoint() {
        let a = layer_with_tags("en", 2020, &["x", "y", "z"], vec![vec![0; 3]; 3]);
        let b = layer_with_tags("en", 2021, &["x", "y", "z"], vec![vec![0; 3]; 3]);
        assert_eq!(relations(&a, &b).pairs.len(), 3);
        let c = layer_with_tags("en", 2021, &["p", "q"], vec![vec![0; 2]; 2]);
        assert!(relations(&a, &c).pairs.is_empty());
    }

    #[test]
    fn relations_partial_overlap() {
        let tags_a: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        // 9 of 10 shared.
        let mut tags_b = tags_a.clone();
        tags_b[9] = "fresh".into();
        let a = layer_with_tags(
            "en",
            2020,
            &tags_a.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            vec![vec![0; 10]; 10],
        );
        let b = layer_with_tags(
            "en",
            2021,
            &tags_b.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            vec![vec![0; 10]; 10],
        );
        assert_eq!(relations(&a, &b).pairs.len(), 9);
    }

    #[test]
    fn singleton_returns_init_unchanged() {
        let g = FuzzyGraph {
            n_nodes: 1,
            edges: Vec::new(),
        };
        let init = vec![vec![1.5, -2.5, 0.5, 3.0]];
        let out = embed_layer(&g, &EmbedParams::default(), 0, Some(&init), &[]).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn cliques_separate() {
        let g = two_cliques();
        let params = EmbedParams {
            dim: 2,
            n_epochs: 100,
            ..EmbedParams::default()
        };
        let coords = embed_layer(&g, &params, 0, None, &[]).unwrap();
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for i in 0..40 {
            for j in (i + 1)..40 {
                let d = euclidean(&coords[i], &coords[j]);
                if (i < 20) == (j < 20) {
                    intra.push(d);
                } else {
                    inter.push(d);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&inter) > mean(&intra),
            "inter {} <= intra {}",
            mean(&inter),
            mean(&intra)
        );
    }

    #[test]
    fn dominant_anchor_wins() {
        let g = two_cliques();
        let params = EmbedParams {
            dim: 2,
            n_epochs: 100,
            lambda: 1e6,
            ..EmbedParams::default()
        };
        let anchor = Anchor {
            node: 0,
            position: vec![50.0, -50.0],
        };
        let coords = embed_layer(&g, &params, 0, None, std::slice::from_ref(&anchor)).unwrap();
        let d = euclidean(&coords[0], &anchor.position);
        assert!(d < 0.01, "distance to anchor {d}");
    }

    #[test]
    fn embedding_is_deterministic() {
        let g = two_cliques();
        let params = EmbedParams {
            dim: 3,
            n_epochs: 30,
            ..EmbedParams::default()
        };
        let a = embed_layer(&g, &params, 42, None, &[]).unwrap();
        let b = embed_layer(&g, &params, 42, None, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_coordinates_finite() {
        let g = two_cliques();
        let params = EmbedParams {
            dim: 4,
            n_epochs: 50,
            ..EmbedParams::default()
        };
        let coords = embed_layer(&g, &params, 7, None, &[]).unwrap();
        assert!(coords.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn objective_decreases_on_average() {
        let g = two_cliques();
        let (a, b) = curve_params(0.1, 1.0);
        let params = EmbedParams {
            dim: 2,
            n_epochs: 80,
            ..EmbedParams::default()
        };
        let mut decreased = 0;
        let mut initial_sum = 0.0;
        let mut final_sum = 0.0;
        for seed in 0..10u64 {
            let zero_epochs = EmbedParams {
                n_epochs: 0,
                ..params.clone()
            };
            let start = embed_layer(&g, &zero_epochs, seed, None, &[]).unwrap();
            let end = embed_layer(&g, &params, seed, None, &[]).unwrap();
            let o0 = layout_objective(&g, &start, a, b);
            let o1 = layout_objective(&g, &end, a, b);
            initial_sum += o0;
            final_sum += o1;
            if o1 < o0 {
                decreased += 1;
            }
        }
        assert!(final_sum < initial_sum, "objective did not decrease on average");
        assert!(decreased >= 8, "only {decreased}/10 runs improved");
    }

    fn chain_layers(n_layers: usize) -> Vec<Layer> {
        // Identical ring layers: tag i co-occurs with neighbors on a ring.
        let n = 24;
        let tags: Vec<String> = (0..n).map(|i| format!("t{i:02}")).collect();
        let mut cooc = vec![vec![0u64; n]; n];
        for i in 0..n {
            let j = (i + 1) % n;
            cooc[i][j] = 3;
            cooc[j][i] = 3;
            let k = (i + 2) % n;
            cooc[i][k] = 1;
            cooc[k][i] = 1;
        }
        (0..n_layers)
            .map(|t| {
                layer_with_tags(
                    "en",
                    2020 + t as i32,
                    &tags.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
                    cooc.clone(),
                )
            })
            .collect()
    }

    #[test]
    fn repeated_layer_stays_close() {
        let layers = chain_layers(2);
        let params = EmbedParams {
            dim: 2,
            n_epochs: 80,
            n_neighbors: 4,
            lambda: 1.0,
            ..EmbedParams::default()
        };
        let frames = embed_chain(&layers, &params, 0).unwrap();
        let disp = shared_displacement(&layers[0], &layers[1], &frames[0], &frames[1]).unwrap();
        // Mean nearest-neighbor distance within frame 0.
        let n = frames[0].coords.len();
        let mut nn_sum = 0.0;
        for i in 0..n {
            let mut best = f64::INFINITY;
            for j in 0..n {
                if i != j {
                    best = best.min(euclidean(&frames[0].coords[i], &frames[0].coords[j]));
                }
            }
            nn_sum += best;
        }
        let mean_nn = nn_sum / n as f64;
        assert!(disp < mean_nn, "displacement {disp} >= mean nn {mean_nn}");
    }

    #[test]
    fn lambda_reduces_displacement() {
        let layers = chain_layers(3);
        let mut displacements = Vec::new();
        for lambda in [0.0, 1.0] {
            let params = EmbedParams {
                dim: 2,
                n_epochs: 60,
                n_neighbors: 4,
                lambda,
                ..EmbedParams::default()
            };
            let frames = embed_chain(&layers, &params, 0).unwrap();
            let mut total = 0.0;
            for t in 1..frames.len() {
                total += shared_displacement(&layers[t - 1], &layers[t], &frames[t - 1], &frames[t])
                    .unwrap();
            }
            displacements.push(total);
        }
        assert!(
            displacements[1] < displacements[0],
            "lambda=1 displacement {} not below lambda=0 {}",
            displacements[1],
            displacements[0]
        );
    }

    #[test]
    fn empty_relation_means_no_anchors() {
        let a = layer_with_tags("en", 2020, &["x", "y"], vec![vec![0, 1], vec![1, 0]]);
        let b = layer_with_tags("en", 2021, &["p", "q"], vec![vec![0, 1], vec![1, 0]]);
        let relation = relations(&a, &b);
        let prev = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, anchors) = chain_init(&b, &relation, &prev, 2, &mut rng);
        assert!(anchors.is_empty());
    }
}
