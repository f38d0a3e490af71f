//! Co-occurrence matrices, cosine kNN graphs and fuzzy membership graphs.

use std::collections::HashMap;
use std::io::Write;

use crate::config::RowTransform;
use crate::ingest::{ArticleRecord, Layer, Vocabulary};

/// Directed k-nearest-neighbor lists under cosine distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    /// neighbors[i] lists (neighbor index, cosine distance), nearest first.
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

/// Symmetric weighted graph of membership strengths in (0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub n_nodes: usize,
    /// Undirected edges (i, j, strength) with i < j.
    pub edges: Vec<(usize, usize, f64)>,
}

impl FuzzyGraph {
    /// Adjacency list view: for each node, (other endpoint, strength).
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(i, j, w) in &self.edges {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }
}

/// Counts, for each article, each unordered pair of distinct in-vocab tags
/// once. The result is symmetric with a zero diagonal.
pub fn cooccurrence_matrix<'a, I>(articles: I, vocab: &Vocabulary) -> Vec<Vec<u64>>
where
    I: IntoIterator<Item = &'a ArticleRecord>,
{
    let n = vocab.len();
    let index: HashMap<&str, usize> = vocab
        .tags
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut cooc = vec![vec![0u64; n]; n];
    for article in articles {
        let mut ids: Vec<usize> = article
            .tags
            .iter()
            .filter_map(|t| index.get(t.as_str()).copied())
            .collect();
        ids.sort_unstable();
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                cooc[i][j] += 1;
                cooc[j][i] += 1;
            }
        }
    }
    cooc
}

fn feature_rows(layer: &Layer, transform: RowTransform) -> Vec<Vec<f64>> {
    layer
        .cooc
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| match transform {
                    RowTransform::None => v as f64,
                    RowTransform::Log1p => (v as f64).ln_1p(),
                })
                .collect()
        })
        .collect()
}

/// Cosine distance between co-occurrence rows. A zero row is at distance 1
/// from everything.
fn cosine_distance(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (nu.sqrt() * nv.sqrt())).max(0.0)
}

/// Exact kNN lists over a layer's co-occurrence rows. Ties break by
/// ascending node index.
pub fn knn_graph(layer: &Layer, n_neighbors: usize, transform: RowTransform) -> KnnGraph {
    let rows = feature_rows(layer, transform);
    knn_from_rows(&rows, n_neighbors)
}

pub fn knn_from_rows(rows: &[Vec<f64>], n_neighbors: usize) -> KnnGraph {
    let n = rows.len();
    assert!(n >= 2, "kNN graph needs at least two nodes");
    let k = n_neighbors.min(n - 1);
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<(usize, f64)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (j, cosine_distance(&rows[i], &rows[j])))
            .collect();
        dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        dists.truncate(k);
        neighbors.push(dists);
    }
    KnnGraph { neighbors }
}

const SMOOTH_TOLERANCE: f64 = 1e-5;
const SMOOTH_MAX_ITER: usize = 64;

/// Smooth-kNN membership graph. Per node, sigma is solved by bisection so
/// the directed strengths sum to log2(n_neighbors); non-convergence falls
/// back to the mean neighbor distance. Directed strengths are symmetrized
/// with the probabilistic union w + w' - w*w'.
pub fn fuzzy_graph(knn: &KnnGraph, n_neighbors: usize) -> FuzzyGraph {
    let n = knn.neighbors.len();
    let target = (n_neighbors.max(2) as f64).log2();
    let mut directed: HashMap<(usize, usize), f64> = HashMap::new();
    for (i, list) in knn.neighbors.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let rho = list[0].1;
        let sigma = solve_sigma(list, rho, target);
        for &(j, d) in list {
            let w = if sigma > 0.0 {
                (-((d - rho).max(0.0)) / sigma).exp()
            } else {
                // All neighbors at exactly rho.
                1.0
            };
            directed.insert((i, j), w);
        }
    }
    let mut edges = Vec::new();
    let mut seen: HashMap<(usize, usize), ()> = HashMap::new();
    let mut keys: Vec<(usize, usize)> = directed.keys().copied().collect();
    keys.sort_unstable();
    for (i, j) in keys {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        if seen.insert((a, b), ()).is_some() {
            continue;
        }
        let wab = directed.get(&(a, b)).copied().unwrap_or(0.0);
        let wba = directed.get(&(b, a)).copied().unwrap_or(0.0);
        let w = wab + wba - wab * wba;
        if w > 0.0 {
            edges.push((a, b, w.min(1.0)));
        }
    }
    edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    FuzzyGraph { n_nodes: n, edges }
}

fn smooth_sum(list: &[(usize, f64)], rho: f64, sigma: f64) -> f64 {
    list.iter()
        .map(|&(_, d)| (-((d - rho).max(0.0)) / sigma).exp())
        .sum()
}

fn solve_sigma(list: &[(usize, f64)], rho: f64, target: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    let mut mid = 1.0f64;
    for _ in 0..SMOOTH_MAX_ITER {
        let sum = smooth_sum(list, rho, mid);
        if (sum - target).abs() < SMOOTH_TOLERANCE {
            return mid;
        }
        if sum > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    // Fallback: mean neighbor distance.
    let mean = list.iter().map(|&(_, d)| d).sum::<f64>() / list.len() as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

/// Debug export of the upper triangle of a layer's co-occurrence matrix.
pub fn export_cooccurrence_csv<W: Write>(layer: &Layer, mut out: W) -> std::io::Result<()> {
    writeln!(out, "tag_i,tag_j,weight")?;
    let n = layer.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if layer.cooc[i][j] > 0 {
                writeln!(
                    out,
                    "{},{},{}",
                    csv_field(&layer.vocab.tags[i]),
                    csv_field(&layer.vocab.tags[j]),
                    layer.cooc[i][j]
                )?;
            }
        }
    }
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ArticleRecord, LayerKey};
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    fn article(id: usize, tags: &[&str]) -> ArticleRecord {
        ArticleRecord {
            id: format!("a{id}"),
            group: "en".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn vocab(tags: &[&str]) -> Vocabulary {
        Vocabulary {
            tags: tags.iter().map(|t| t.to_string()).collect(),
            usage_counts: vec![1; tags.len()],
        }
    }

    fn layer_from_rows(cooc: Vec<Vec<u64>>) -> Layer {
        let n = cooc.len();
        let tags: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        Layer {
            key: LayerKey { group: "en".into(), period: 2020 },
            vocab: Vocabulary {
                tags,
                usage_counts: vec![1; n],
            },
            cooc,
            article_total: 1,
        }
    }

    #[test]
    fn cooccurrence_triangle() {
        let articles = vec![article(1, &["a", "b", "c"])];
        let v = vocab(&["a", "b", "c"]);
        let cooc = cooccurrence_matrix(&articles, &v);
        assert_eq!(cooc, vec![vec![0, 1, 1], vec![1, 0, 1], vec![1, 1, 0]]);
    }

    #[test]
    fn cooccurrence_accumulates() {
        let articles = vec![article(1, &["a", "b"]), article(2, &["a", "b"])];
        let v = vocab(&["a", "b"]);
        let cooc = cooccurrence_matrix(&articles, &v);
        assert_eq!(cooc[0][1], 2);
        assert_eq!(cooc[1][0], 2);
    }

    #[test]
    fn cooccurrence_matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tags: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let articles: Vec<ArticleRecord> = (0..100)
            .map(|id| {
                let k = rng.gen_range(0..=5);
                let mut chosen: Vec<&str> = tags
                    .choose_multiple(&mut rng, k)
                    .map(|s| s.as_str())
                    .collect();
                chosen.sort_unstable();
                article(id, &chosen)
            })
            .collect();
        let v = vocab(&tags.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        let cooc = cooccurrence_matrix(&articles, &v);

        // Oracle: O(articles * tags^2) direct pair scan.
        let n = v.len();
        let mut oracle = vec![vec![0u64; n]; n];
        for a in &articles {
            for i in 0..n {
                for j in 0..n {
                    if i != j
                        && a.tags.contains(&v.tags[i])
                        && a.tags.contains(&v.tags[j])
                    {
                        oracle[i][j] += 1;
                    }
                }
            }
        }
        assert_eq!(cooc, oracle);
    }

    #[test]
    fn cosine_distance_identical_and_orthogonal() {
        assert!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).abs() < 1e-12);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_distance_one() {
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]), 1.0);
    }

    #[test]
    fn knn_matches_exhaustive_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..6).map(|_| rng.gen_range(0.0..5.0)).collect())
            .collect();
        let layer = {
            let mut l = layer_from_rows(vec![vec![0; n]; n]);
            l.cooc = rows
                .iter()
                .map(|r| r.iter().map(|&v| v as u64).collect())
                .collect();
            l
        };
        let knn = knn_graph(&layer, 4, RowTransform::None);
        let int_rows: Vec<Vec<f64>> = layer
            .cooc
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect();
        for i in 0..n {
            let mut all: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cosine_distance(&int_rows[i], &int_rows[j])))
                .collect();
            all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            all.truncate(4);
            assert_eq!(knn.neighbors[i], all);
        }
    }

    #[test]
    fn fuzzy_nearest_neighbor_strength_is_one() {
        let rows = vec![
            vec![1.0, 0.0, 0.1],
            vec![1.0, 0.1, 0.1],
            vec![0.0, 1.0, 0.0],
            vec![0.2, 0.9, 0.0],
        ];
        let knn = knn_from_rows(&rows, 2);
        let g = fuzzy_graph(&knn, 2);
        // Each node's nearest neighbor sits at d = rho, so the directed
        // strength toward it is exactly 1 and the union keeps it at 1.
        for (i, list) in knn.neighbors.iter().enumerate() {
            let j = list[0].0;
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            let w = g
                .edges
                .iter()
                .find(|&&(x, y, _)| (x, y) == (a, b))
                .map(|&(_, _, w)| w)
                .unwrap();
            assert!((w - 1.0).abs() < 1e-12, "w = {w}");
        }
    }

    #[test]
    fn symmetrization_combine_absorbs_one() {
        // w + w' - w*w' with w=1, w'=0 -> 1.
        let w: f64 = 1.0;
        let wp: f64 = 0.0;
        assert_eq!(w + wp - w * wp, 1.0);
    }

    #[test]
    fn fuzzy_graph_is_symmetric_by_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..8).map(|_| rng.gen_range(0.0..3.0)).collect())
            .collect();
        let knn = knn_from_rows(&rows, 5);
        let g = fuzzy_graph(&knn, 5);
        let adj = g.adjacency();
        for &(i, j, w) in &g.edges {
            let back = adj[j].iter().find(|&&(k, _)| k == i).map(|&(_, w)| w);
            assert_eq!(back, Some(w));
            assert!(w > 0.0 && w <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn knn_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.gen_range(0.1..4.0)).collect())
            .collect();
        let knn = knn_from_rows(&rows, 3);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted_rows: Vec<Vec<f64>> = perm.iter().map(|&p| rows[p].clone()).collect();
        let knn_p = knn_from_rows(&permuted_rows, 3);
        // inverse[old] = new
        let mut inverse = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        for (new, &old) in perm.iter().enumerate() {
            let expected: Vec<(usize, f64)> = knn.neighbors[old]
                .iter()
                .map(|&(j, d)| (inverse[j], d))
                .collect();
            // Distances are generic (no ties), so order must match exactly.
            let got = &knn_p.neighbors[new];
            assert_eq!(got.len(), expected.len());
            for (g, e) in got.iter().zip(&expected) {
                assert_eq!(g.0, e.0);
                assert!((g.1 - e.1).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn fuzzy_strengths_in_unit_interval(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(4..20);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..4).map(|_| rng.gen_range(0.0..2.0)).collect())
                .collect();
            let knn = knn_from_rows(&rows, 3);
            let g = fuzzy_graph(&knn, 3);
            for &(i, j, w) in &g.edges {
                prop_assert!(i < j);
                prop_assert!(w > 0.0 && w <= 1.0);
            }
        }
    }
}
