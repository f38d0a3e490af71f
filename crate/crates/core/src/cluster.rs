//! HDBSCAN over embedding frames: core distances, mutual reachability,
//! minimum spanning tree, condensed dendrogram and excess-of-mass cluster
//! selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::euclidean;
use crate::ingest::LayerKey;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need more than min_samples={min_samples} points, got {n}")]
    TooFewPoints { n: usize, min_samples: usize },
}

/// Per-node cluster labels (-1 = noise) plus per-cluster stability scores.
/// Clusters are numbered by descending size, ties by smallest member index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub key: LayerKey,
    pub labels: Vec<i64>,
    pub stabilities: Vec<f64>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.stabilities.len()
    }

    /// Member indices of one cluster.
    pub fn members(&self, cluster: i64) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Euclidean distance from each point to its min_samples-th nearest
/// neighbor (excluding itself).
pub fn core_distances(points: &[Vec<f64>], min_samples: usize) -> Result<Vec<f64>, ClusterError> {
    let n = points.len();
    if n <= min_samples {
        return Err(ClusterError::TooFewPoints { n, min_samples });
    }
    let mut cores = Vec::with_capacity(n);
    for i in 0..n {
        let mut dists: Vec<f64> = (0..n)
            .filter(|&j| j != i)
            .map(|j| euclidean(&points[i], &points[j]))
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cores.push(dists[min_samples - 1]);
    }
    Ok(cores)
}

/// mreach(i, j) = max(core_i, core_j, d_ij).
pub fn mutual_reachability(distances: &[Vec<f64>], cores: &[f64]) -> Vec<Vec<f64>> {
    let n = cores.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m[i][j] = distances[i][j].max(cores[i]).max(cores[j]);
            }
        }
    }
    m
}

pub fn distance_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = euclidean(&points[i], &points[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Prim's algorithm over the complete mutual-reachability graph.
/// Ties break by (weight, min index, max index).
pub fn minimum_spanning_tree(mreach: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let n = mreach.len();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    // best[j] = (weight, attached tree node)
    let mut best: Vec<(f64, usize)> = (0..n).map(|j| (mreach[0][j], 0)).collect();
    in_tree[0] = true;
    let mut edges = Vec::with_capacity(n - 1);
    for _ in 1..n {
        let mut pick = usize::MAX;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            if pick == usize::MAX {
                pick = j;
                continue;
            }
            let (wj, aj) = best[j];
            let (wp, ap) = best[pick];
            let cand = (wj, aj.min(j), aj.max(j));
            let cur = (wp, ap.min(pick), ap.max(pick));
            if cand.0 < cur.0
                || (cand.0 == cur.0 && (cand.1, cand.2) < (cur.1, cur.2))
            {
                pick = j;
            }
        }
        let (w, attach) = best[pick];
        edges.push((attach.min(pick), attach.max(pick), w));
        in_tree[pick] = true;
        for j in 0..n {
            if !in_tree[j] {
                let w = mreach[pick][j];
                if w < best[j].0 || (w == best[j].0 && pick < best[j].1) {
                    best[j] = (w, pick);
                }
            }
        }
    }
    edges.sort_by(|a, b| {
        a.2.partial_cmp(&b.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    edges
}

struct SingleLinkageNode {
    children: (usize, usize),
    distance: f64,
    size: usize,
}

/// Builds the single-linkage merge tree from MST edges. Leaves are
/// 0..n-1; internal nodes n..2n-2, root last.
fn single_linkage_tree(mst: &[(usize, usize, f64)], n: usize) -> Vec<SingleLinkageNode> {
    let mut edges = mst.to_vec();
    edges.sort_by(|a, b| {
        a.2.partial_cmp(&b.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    // Union-find mapping each component to its current tree node.
    let mut parent: Vec<usize> = (0..n).collect();
    let mut component_node: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut nodes: Vec<SingleLinkageNode> = Vec::with_capacity(n - 1);
    for &(i, j, w) in &edges {
        let ri = find(&mut parent, i);
        let rj = find(&mut parent, j);
        debug_assert_ne!(ri, rj, "MST contains a cycle");
        let node_i = component_node[ri];
        let node_j = component_node[rj];
        let size_i = if node_i < n { 1 } else { nodes[node_i - n].size };
        let size_j = if node_j < n { 1 } else { nodes[node_j - n].size };
        let new_node = n + nodes.len();
        nodes.push(SingleLinkageNode {
            children: (node_i, node_j),
            distance: w,
            size: size_i + size_j,
        });
        parent[rj] = ri;
        component_node[ri] = new_node;
    }
    nodes
}

struct CondensedCluster {
    parent: Option<usize>,
    birth_lambda: f64,
    birth_size: usize,
    children: Vec<usize>,
    /// (point index, lambda at which it left this cluster)
    falls: Vec<(usize, f64)>,
}

fn leaves_of(node: usize, n: usize, sl: &[SingleLinkageNode], out: &mut Vec<usize>) {
    if node < n {
        out.push(node);
    } else {
        let (a, b) = sl[node - n].children;
        leaves_of(a, n, sl, out);
        leaves_of(b, n, sl, out);
    }
}

fn condense(sl: &[SingleLinkageNode], n: usize, min_cluster_size: usize) -> Vec<CondensedCluster> {
    let mut clusters = vec![CondensedCluster {
        parent: None,
        birth_lambda: 0.0,
        birth_size: n,
        children: Vec::new(),
        falls: Vec::new(),
    }];
    if n < 2 {
        if n == 1 {
            clusters[0].falls.push((0, f64::INFINITY));
        }
        return clusters;
    }
    // (single-linkage node, condensed cluster it currently belongs to)
    let mut stack = vec![(n + sl.len() - 1, 0usize)];
    while let Some((node, cluster)) = stack.pop() {
        if node < n {
            // A bare point can only reach here as the surviving side of a
            // split, which requires size >= min_cluster_size >= 2.
            unreachable!("leaf reached as surviving split side");
        }
        let entry = &sl[node - n];
        let lambda = if entry.distance > 0.0 {
            1.0 / entry.distance
        } else {
            f64::INFINITY
        };
        let (left, right) = entry.children;
        let size = |x: usize| if x < n { 1 } else { sl[x - n].size };
        let (ls, rs) = (size(left), size(right));
        let drop_side = |clusters: &mut Vec<CondensedCluster>, side: usize| {
            let mut pts = Vec::new();
            leaves_of(side, n, sl, &mut pts);
            for p in pts {
                clusters[cluster].falls.push((p, lambda));
            }
        };
        if ls >= min_cluster_size && rs >= min_cluster_size {
            for (child, child_size) in [(left, ls), (right, rs)] {
                let id = clusters.len();
                clusters.push(CondensedCluster {
                    parent: Some(cluster),
                    birth_lambda: lambda,
                    birth_size: child_size,
                    children: Vec::new(),
                    falls: Vec::new(),
                });
                clusters[cluster].children.push(id);
                stack.push((child, id));
            }
        } else if ls >= min_cluster_size {
            drop_side(&mut clusters, right);
            stack.push((left, cluster));
        } else if rs >= min_cluster_size {
            drop_side(&mut clusters, left);
            stack.push((right, cluster));
        } else {
            drop_side(&mut clusters, left);
            drop_side(&mut clusters, right);
        }
    }
    clusters
}

fn stability(clusters: &[CondensedCluster], id: usize) -> f64 {
    let c = &clusters[id];
    let mut s: f64 = c.falls.iter().map(|&(_, l)| l - c.birth_lambda).sum();
    for &child in &c.children {
        s += clusters[child].birth_size as f64
            * (clusters[child].birth_lambda - c.birth_lambda);
    }
    s
}

/// Condenses the single-linkage dendrogram and selects clusters by the
/// excess-of-mass rule. The root is selectable when the whole layer reaches
/// min_cluster_size, so a single dense blob yields one cluster.
pub fn condense_and_extract(
    mst: &[(usize, usize, f64)],
    min_cluster_size: usize,
    key: LayerKey,
) -> ClusterAssignment {
    let n = mst.len() + 1;
    let sl = single_linkage_tree(mst, n);
    let clusters = condense(&sl, n, min_cluster_size);
    let stabilities: Vec<f64> = (0..clusters.len()).map(|i| stability(&clusters, i)).collect();

    // Excess-of-mass selection, bottom-up (children have larger ids).
    let mut selected = vec![false; clusters.len()];
    let mut subtree_score = vec![0.0f64; clusters.len()];
    for id in (0..clusters.len()).rev() {
        let eligible = clusters[id].birth_size >= min_cluster_size;
        let child_sum: f64 = clusters[id].children.iter().map(|&c| subtree_score[c]).sum();
        if clusters[id].children.is_empty() {
            if eligible && stabilities[id] > 0.0 {
                selected[id] = true;
                subtree_score[id] = stabilities[id];
            }
        } else if eligible && stabilities[id] > child_sum {
            selected[id] = true;
            subtree_score[id] = stabilities[id];
            // Deselect all descendants.
            let mut walk = clusters[id].children.clone();
            while let Some(c) = walk.pop() {
                selected[c] = false;
                walk.extend(clusters[c].children.iter().copied());
            }
        } else {
            subtree_score[id] = child_sum;
        }
    }

    // A point belongs to the nearest selected ancestor-or-self of the
    // cluster it fell out of.
    let mut nearest_selected: Vec<Option<usize>> = vec![None; clusters.len()];
    for id in 0..clusters.len() {
        if selected[id] {
            nearest_selected[id] = Some(id);
        } else if let Some(p) = clusters[id].parent {
            nearest_selected[id] = nearest_selected[p];
        }
    }
    let mut member_sets: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut owner: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for id in 0..clusters.len() {
        if let Some(s) = nearest_selected[id] {
            for &(p, _) in &clusters[id].falls {
                owner.insert(p, s);
            }
        }
    }
    for id in 0..clusters.len() {
        if selected[id] {
            let mut members: Vec<usize> =
                owner.iter().filter(|&(_, &s)| s == id).map(|(&p, _)| p).collect();
            members.sort_unstable();
            member_sets.push((id, members));
        }
    }
    // Renumber by descending size, ties by smallest member index.
    member_sets.sort_by(|a, b| {
        b.1.len()
            .cmp(&a.1.len())
            .then(a.1.first().cmp(&b.1.first()))
    });
    let mut labels = vec![-1i64; n];
    let mut out_stabilities = Vec::with_capacity(member_sets.len());
    for (label, (id, members)) in member_sets.iter().enumerate() {
        for &p in members {
            labels[p] = label as i64;
        }
        out_stabilities.push(stabilities[*id]);
    }
    ClusterAssignment {
        key,
        labels,
        stabilities: out_stabilities,
    }
}

/// Full HDBSCAN run over a point set.
pub fn hdbscan(
    points: &[Vec<f64>],
    min_samples: usize,
    min_cluster_size: usize,
    key: LayerKey,
) -> Result<ClusterAssignment, ClusterError> {
    let cores = core_distances(points, min_samples)?;
    let d = distance_matrix(points);
    let mreach = mutual_reachability(&d, &cores);
    let mst = minimum_spanning_tree(&mreach);
    Ok(condense_and_extract(&mst, min_cluster_size, key))
}
