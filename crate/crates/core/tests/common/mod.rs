//! Shared helpers for integration tests: independent oracles implemented
//! with deliberately different algorithms than the library.

#![allow(dead_code)]

use rand::Rng;

/// Standard normal via Box-Muller.
pub fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Adjusted Rand index between two labelings (noise label -1 is treated as
/// its own class).
pub fn adjusted_rand_index(a: &[i64], b: &[i64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: std::collections::HashMap<(i64, i64), u64> = std::collections::HashMap::new();
    let mut rows: std::collections::HashMap<i64, u64> = std::collections::HashMap::new();
    let mut cols: std::collections::HashMap<i64, u64> = std::collections::HashMap::new();
    for i in 0..n {
        *table.entry((a[i], b[i])).or_insert(0) += 1;
        *rows.entry(a[i]).or_insert(0) += 1;
        *cols.entry(b[i]).or_insert(0) += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-15 {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

fn euclid(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Total weight of the minimum spanning tree by Kruskal's algorithm over a
/// dense distance matrix.
pub fn kruskal_mst_weight(dist: &[Vec<f64>]) -> f64 {
    let n = dist.len();
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((dist[i][j], i, j));
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut total = 0.0;
    let mut used = 0;
    for (w, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            total += w;
            used += 1;
            if used == n - 1 {
                break;
            }
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Brute-force density-based clustering oracle. Recursive agglomeration and
// condensation, structured differently from the library implementation.
// ---------------------------------------------------------------------------

enum Dendrogram {
    Leaf(usize),
    Merge {
        left: Box<Dendrogram>,
        right: Box<Dendrogram>,
        distance: f64,
        size: usize,
    },
}

impl Dendrogram {
    fn size(&self) -> usize {
        match self {
            Dendrogram::Leaf(_) => 1,
            Dendrogram::Merge { size, .. } => *size,
        }
    }

    fn points(&self, out: &mut Vec<usize>) {
        match self {
            Dendrogram::Leaf(p) => out.push(*p),
            Dendrogram::Merge { left, right, .. } => {
                left.points(out);
                right.points(out);
            }
        }
    }
}

/// Naive O(n^3) single-linkage agglomeration: repeatedly merge the pair of
/// components with the smallest cross distance.
fn single_linkage(dist: &[Vec<f64>]) -> Dendrogram {
    let n = dist.len();
    let mut components: Vec<(Dendrogram, Vec<usize>)> =
        (0..n).map(|i| (Dendrogram::Leaf(i), vec![i])).collect();
    while components.len() > 1 {
        let mut best = (f64::INFINITY, 0usize, 1usize);
        for a in 0..components.len() {
            for b in (a + 1)..components.len() {
                let mut d = f64::INFINITY;
                for &p in &components[a].1 {
                    for &q in &components[b].1 {
                        d = d.min(dist[p][q]);
                    }
                }
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let (d, a, b) = best;
        let (right_tree, mut right_pts) = components.swap_remove(b);
        let (left_tree, left_pts) = components.swap_remove(a);
        let size = left_tree.size() + right_tree.size();
        let mut pts = left_pts;
        pts.append(&mut right_pts);
        components.push((
            Dendrogram::Merge {
                left: Box::new(left_tree),
                right: Box::new(right_tree),
                distance: d,
                size,
            },
            pts,
        ));
    }
    components.pop().unwrap().0
}

struct OracleCluster {
    birth_lambda: f64,
    birth_size: usize,
    /// (point, lambda at which it left this cluster as noise-side fallout)
    falls: Vec<(usize, f64)>,
    children: Vec<OracleCluster>,
}

impl OracleCluster {
    fn stability(&self) -> f64 {
        let from_falls: f64 = self.falls.iter().map(|&(_, l)| l - self.birth_lambda).sum();
        let from_children: f64 = self
            .children
            .iter()
            .map(|c| c.birth_size as f64 * (c.birth_lambda - self.birth_lambda))
            .sum();
        from_falls + from_children
    }
}

fn condense(tree: &Dendrogram, birth_lambda: f64, mcs: usize) -> OracleCluster {
    let mut cluster = OracleCluster {
        birth_lambda,
        birth_size: tree.size(),
        falls: Vec::new(),
        children: Vec::new(),
    };
    let mut node = tree;
    loop {
        match node {
            Dendrogram::Leaf(p) => {
                // Only reachable when the whole input is a single point.
                cluster.falls.push((*p, f64::INFINITY));
                return cluster;
            }
            Dendrogram::Merge {
                left,
                right,
                distance,
                ..
            } => {
                let lambda = if *distance > 0.0 {
                    1.0 / distance
                } else {
                    f64::INFINITY
                };
                let (ls, rs) = (left.size(), right.size());
                if ls >= mcs && rs >= mcs {
                    cluster.children.push(condense(left, lambda, mcs));
                    cluster.children.push(condense(right, lambda, mcs));
                    return cluster;
                }
                let mut fall_side = |side: &Dendrogram| {
                    let mut pts = Vec::new();
                    side.points(&mut pts);
                    for p in pts {
                        cluster.falls.push((p, lambda));
                    }
                };
                if ls >= mcs {
                    fall_side(right);
                    node = left;
                } else if rs >= mcs {
                    fall_side(left);
                    node = right;
                } else {
                    fall_side(left);
                    fall_side(right);
                    return cluster;
                }
            }
        }
    }
}

/// Excess-of-mass selection: returns the subtree score and marks selections
/// by collecting (cluster points, stability).
fn select(
    cluster: &OracleCluster,
    mcs: usize,
    ancestor_selected: bool,
    out: &mut Vec<(Vec<usize>, f64)>,
) -> f64 {
    let eligible = cluster.birth_size >= mcs;
    let stability = cluster.stability();
    let child_sum: f64 = cluster
        .children
        .iter()
        .map(|c| subtree_score(c, mcs))
        .sum();
    let selected_here = if cluster.children.is_empty() {
        eligible && stability > 0.0
    } else {
        eligible && stability > child_sum
    };
    if selected_here && !ancestor_selected {
        let mut pts = Vec::new();
        collect_points(cluster, &mut pts);
        pts.sort_unstable();
        out.push((pts, stability));
    }
    for child in &cluster.children {
        select(child, mcs, ancestor_selected || selected_here, out);
    }
    if selected_here { stability } else { child_sum }
}

fn subtree_score(cluster: &OracleCluster, mcs: usize) -> f64 {
    let eligible = cluster.birth_size >= mcs;
    let stability = cluster.stability();
    let child_sum: f64 = cluster
        .children
        .iter()
        .map(|c| subtree_score(c, mcs))
        .sum();
    if cluster.children.is_empty() {
        if eligible && stability > 0.0 {
            stability
        } else {
            0.0
        }
    } else if eligible && stability > child_sum {
        stability
    } else {
        child_sum
    }
}

fn collect_points(cluster: &OracleCluster, out: &mut Vec<usize>) {
    for &(p, _) in &cluster.falls {
        out.push(p);
    }
    for child in &cluster.children {
        collect_points(child, out);
    }
}

/// Independent density-based clustering: naive core distances, mutual
/// reachability, exhaustive single linkage, recursive condensation and
/// excess-of-mass selection. Labels follow the same numbering convention as
/// the library (descending size, ties by smallest member).
pub fn hdbscan_oracle(points: &[Vec<f64>], min_samples: usize, mcs: usize) -> Vec<i64> {
    let n = points.len();
    assert!(n > min_samples);
    let mut cores = vec![0.0; n];
    for i in 0..n {
        let mut ds: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| euclid(&points[i], &points[j])).collect();
        ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cores[i] = ds[min_samples - 1];
    }
    let mut mreach = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                mreach[i][j] = euclid(&points[i], &points[j]).max(cores[i]).max(cores[j]);
            }
        }
    }
    let tree = single_linkage(&mreach);
    let root = condense(&tree, 0.0, mcs);
    let mut selections: Vec<(Vec<usize>, f64)> = Vec::new();
    select(&root, mcs, false, &mut selections);
    selections.sort_by(|a, b| {
        b.0.len()
            .cmp(&a.0.len())
            .then(a.0.first().cmp(&b.0.first()))
    });
    let mut labels = vec![-1i64; n];
    for (label, (members, _)) in selections.iter().enumerate() {
        for &p in members {
            labels[p] = label as i64;
        }
    }
    labels
}
