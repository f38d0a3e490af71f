//! Cross-group cluster matching through semantic term vectors, and the
//! tag-level anchor links it produces.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::ClusterAssignment;
use crate::config::ThresholdRule;
use crate::ingest::Layer;
use crate::metrics::tag_prevalence;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("vector file: {0}")]
    VectorFile(String),
    #[error("empty term has no vector")]
    EmptyTerm,
    #[error("override row {row}: {message}")]
    Override { row: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Lookup from term string to unit-length vector. A miss is an explicit
/// `None`, never a zero vector.
pub trait SemanticVectorProvider {
    fn dim(&self) -> usize;
    fn vector(&self, term: &str) -> Result<Option<Vec<f64>>, LinkError>;
}

/// Vectors read from a TSV file (`#dim K` header, then `term\tv1 v2 ...`),
/// re-normalized on load.
pub struct FileVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FileVectors {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn load_vectors(path: &Path) -> Result<FileVectors, LinkError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut dim: Option<usize> = None;
    let mut vectors = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("#dim") {
            dim = Some(rest.trim().parse().map_err(|_| {
                LinkError::VectorFile(format!("line {}: bad dimension header", idx + 1))
            })?);
            continue;
        }
        let (term, values) = trimmed.split_once('\t').ok_or_else(|| {
            LinkError::VectorFile(format!("line {}: expected term<TAB>components", idx + 1))
        })?;
        let mut v: Vec<f64> = Vec::new();
        for part in values.split_whitespace() {
            v.push(part.parse().map_err(|_| {
                LinkError::VectorFile(format!("line {}: bad component {part:?}", idx + 1))
            })?);
        }
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(LinkError::VectorFile(format!(
                    "line {}: dimension {} does not match {}",
                    idx + 1,
                    v.len(),
                    d
                )));
            }
            _ => {}
        }
        let norm = l2_norm(&v);
        if norm == 0.0 {
            return Err(LinkError::VectorFile(format!(
                "line {}: zero vector for term {term:?}",
                idx + 1
            )));
        }
        for x in &mut v {
            *x /= norm;
        }
        vectors.insert(term.to_string(), v);
    }
    Ok(FileVectors {
        dim: dim.unwrap_or(0),
        vectors,
    })
}

impl SemanticVectorProvider for FileVectors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, term: &str) -> Result<Option<Vec<f64>>, LinkError> {
        Ok(self.vectors.get(term).cloned())
    }
}

/// Deterministic pseudo-random unit vectors derived from term bytes.
/// Language-independent: identical spellings across groups collide by
/// construction, which makes this a usable test double and offline default.
pub struct StubVectors {
    dim: usize,
    seed: u64,
}

pub fn stub_vectors(dim: usize, seed: u64) -> StubVectors {
    assert!(dim >= 2, "stub vector dimension must be >= 2");
    StubVectors { dim, seed }
}

impl SemanticVectorProvider for StubVectors {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, term: &str) -> Result<Option<Vec<f64>>, LinkError> {
        if term.is_empty() {
            return Err(LinkError::EmptyTerm);
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(term.as_bytes());
        let digest = hasher.finalize();
        let mut seed_bytes = [0u8; 32];
        seed_bytes.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed_bytes);
        let mut v: Vec<f64> = (0..self.dim).map(|_| standard_normal(&mut rng)).collect();
        let norm = l2_norm(&v);
        for x in &mut v {
            *x /= norm;
        }
        Ok(Some(v))
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        (dot / (nu * nv)).clamp(-1.0, 1.0)
    }
}

/// Tag-level anchor between two groups in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterlingualLink {
    pub period: i32,
    pub group_a: String,
    pub tag_a: String,
    pub group_b: String,
    pub tag_b: String,
    pub similarity: f64,
    pub source: LinkSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkSource {
    Matched,
    Override,
}

impl std::fmt::Display for LinkSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkSource::Matched => write!(f, "matched"),
            LinkSource::Override => write!(f, "override"),
        }
    }
}

/// The three most prevalent member tags of a cluster (ties lexicographic),
/// in selection order.
pub fn top_prevalent_terms(members: &[usize], layer: &Layer, count: usize) -> Vec<String> {
    let mut ranked: Vec<(&String, f64)> = members
        .iter()
        .map(|&i| {
            let tag = &layer.vocab.tags[i];
            (tag, tag_prevalence(layer, tag).expect("member tag in vocab"))
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(b.0)));
    ranked.truncate(count);
    ranked.into_iter().map(|(t, _)| t.clone()).collect()
}

/// Averaged vector of a cluster's three most prevalent resolvable terms,
/// re-normalized. `None` when every term misses or the mean cancels to zero.
pub fn cluster_vector<P: SemanticVectorProvider>(
    members: &[usize],
    layer: &Layer,
    provider: &P,
) -> Result<Option<Vec<f64>>, LinkError> {
    assert!(!members.is_empty(), "cluster must be non-empty");
    let terms = top_prevalent_terms(members, layer, 3);
    let mut acc = vec![0.0; provider.dim()];
    let mut hits = 0usize;
    for term in &terms {
        if let Some(v) = provider.vector(term)? {
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += b;
            }
            hits += 1;
        }
    }
    if hits == 0 {
        return Ok(None);
    }
    let norm = l2_norm(&acc);
    if norm == 0.0 {
        // Degenerate cancellation; the cluster is unmatchable.
        return Ok(None);
    }
    for x in &mut acc {
        *x /= norm;
    }
    Ok(Some(acc))
}

/// A matched pair of clusters from two groups in the same period.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub cluster_a: i64,
    pub cluster_b: i64,
    pub similarity: f64,
}

fn group_cluster_vectors<P: SemanticVectorProvider>(
    assign: &ClusterAssignment,
    layer: &Layer,
    provider: &P,
) -> Result<Vec<Option<Vec<f64>>>, LinkError> {
    (0..assign.n_clusters() as i64)
        .map(|c| cluster_vector(&assign.members(c), layer, provider))
        .collect()
}

/// Best similarity between any two distinct matchable clusters of one
/// group. With fewer than two matchable clusters the bound defaults to 1,
/// so only exact matches can clear it.
fn intra_group_max(vectors: &[Option<Vec<f64>>]) -> f64 {
    let present: Vec<&Vec<f64>> = vectors.iter().flatten().collect();
    if present.len() < 2 {
        return 1.0;
    }
    let mut best = -1.0f64;
    for i in 0..present.len() {
        for j in (i + 1)..present.len() {
            best = best.max(cosine(present[i], present[j]));
        }
    }
    best
}

/// Greedy one-to-one matching of clusters between two groups. A pair is
/// accepted iff its similarity reaches the threshold derived from the two
/// groups' intra-group cluster similarities under `rule`.
pub fn match_clusters<P: SemanticVectorProvider>(
    assign_a: &ClusterAssignment,
    assign_b: &ClusterAssignment,
    layer_a: &Layer,
    layer_b: &Layer,
    provider: &P,
    rule: ThresholdRule,
) -> Result<Vec<MatchedPair>, LinkError> {
    let vectors_a = group_cluster_vectors(assign_a, layer_a, provider)?;
    let vectors_b = group_cluster_vectors(assign_b, layer_b, provider)?;
    let threshold = match rule {
        ThresholdRule::MaxIntra => intra_group_max(&vectors_a).max(intra_group_max(&vectors_b)),
        ThresholdRule::MinIntra => intra_group_max(&vectors_a).min(intra_group_max(&vectors_b)),
        ThresholdRule::Fixed(v) => v,
    };
    let mut candidates: Vec<MatchedPair> = Vec::new();
    for (ca, va) in vectors_a.iter().enumerate() {
        let Some(va) = va else { continue };
        for (cb, vb) in vectors_b.iter().enumerate() {
            let Some(vb) = vb else { continue };
            let sim = cosine(va, vb);
            if sim >= threshold {
                candidates.push(MatchedPair {
                    cluster_a: ca as i64,
                    cluster_b: cb as i64,
                    similarity: sim,
                });
            }
        }
    }
    candidates.sort_by(|x, y| {
        y.similarity
            .partial_cmp(&x.similarity)
            .unwrap()
            .then(x.cluster_a.cmp(&y.cluster_a))
            .then(x.cluster_b.cmp(&y.cluster_b))
    });
    let mut used_a = vec![false; assign_a.n_clusters()];
    let mut used_b = vec![false; assign_b.n_clusters()];
    let mut accepted = Vec::new();
    for pair in candidates {
        if used_a[pair.cluster_a as usize] || used_b[pair.cluster_b as usize] {
            continue;
        }
        used_a[pair.cluster_a as usize] = true;
        used_b[pair.cluster_b as usize] = true;
        accepted.push(pair);
    }
    Ok(accepted)
}

/// For each matched pair, emits the single most similar term pair among the
/// two sides' top-3 prevalent terms; ties break lexicographically.
pub fn derive_links<P: SemanticVectorProvider>(
    pairs: &[MatchedPair],
    assign_a: &ClusterAssignment,
    assign_b: &ClusterAssignment,
    layer_a: &Layer,
    layer_b: &Layer,
    provider: &P,
) -> Result<Vec<InterlingualLink>, LinkError> {
    let mut links = Vec::new();
    for pair in pairs {
        let terms_a = top_prevalent_terms(&assign_a.members(pair.cluster_a), layer_a, 3);
        let terms_b = top_prevalent_terms(&assign_b.members(pair.cluster_b), layer_b, 3);
        let mut best: Option<(f64, &String, &String)> = None;
        for ta in &terms_a {
            let Some(va) = provider.vector(ta)? else { continue };
            for tb in &terms_b {
                let Some(vb) = provider.vector(tb)? else { continue };
                let sim = cosine(&va, &vb);
                let better = match &best {
                    None => true,
                    Some((bs, bta, btb)) => {
                        sim > *bs || (sim == *bs && (ta, tb) < (*bta, *btb))
                    }
                };
                if better {
                    best = Some((sim, ta, tb));
                }
            }
        }
        if let Some((sim, ta, tb)) = best {
            links.push(InterlingualLink {
                period: layer_a.key.period,
                group_a: layer_a.key.group.clone(),
                tag_a: ta.clone(),
                group_b: layer_b.key.group.clone(),
                tag_b: tb.clone(),
                similarity: sim,
                source: LinkSource::Matched,
            });
        }
    }
    Ok(links)
}

#[derive(Debug, Clone, Deserialize)]
struct OverrideRow {
    period: i32,
    group_a: String,
    tag_a: String,
    group_b: String,
    tag_b: String,
    action: String,
}

/// Applies a manual override file: `add` rows insert links (replacing any
/// matched link on the same period/group-pair touching either tag),
/// `remove` rows delete matched links.
pub fn apply_overrides<R: std::io::Read>(
    links: Vec<InterlingualLink>,
    reader: R,
    layers: &BTreeMap<(String, i32), &Layer>,
) -> Result<Vec<InterlingualLink>, LinkError> {
    let mut reader = csv::Reader::from_reader(reader);
    let mut links = links;
    for (idx, row) in reader.deserialize::<OverrideRow>().enumerate() {
        let row_no = idx + 2; // header is row 1
        let row = row.map_err(|e| LinkError::Override {
            row: row_no,
            message: e.to_string(),
        })?;
        for (group, tag) in [(&row.group_a, &row.tag_a), (&row.group_b, &row.tag_b)] {
            let layer = layers.get(&(group.clone(), row.period)).ok_or_else(|| {
                LinkError::Override {
                    row: row_no,
                    message: format!("no layer for group {group:?} period {}", row.period),
                }
            })?;
            if layer.vocab.index_of(tag).is_none() {
                return Err(LinkError::Override {
                    row: row_no,
                    message: format!("unknown tag {tag:?} in group {group:?} period {}", row.period),
                });
            }
        }
        let same_cell = |l: &InterlingualLink| {
            l.period == row.period && l.group_a == row.group_a && l.group_b == row.group_b
        };
        match row.action.as_str() {
            "add" => {
                links.retain(|l| {
                    !(same_cell(l)
                        && l.source == LinkSource::Matched
                        && (l.tag_a == row.tag_a || l.tag_b == row.tag_b))
                });
                links.push(InterlingualLink {
                    period: row.period,
                    group_a: row.group_a,
                    tag_a: row.tag_a,
                    group_b: row.group_b,
                    tag_b: row.tag_b,
                    similarity: 1.0,
                    source: LinkSource::Override,
                });
            }
            "remove" => {
                links.retain(|l| {
                    !(same_cell(l)
                        && l.source == LinkSource::Matched
                        && l.tag_a == row.tag_a
                        && l.tag_b == row.tag_b)
                });
            }
            other => {
                return Err(LinkError::Override {
                    row: row_no,
                    message: format!("unknown action {other:?}"),
                });
            }
        }
    }
    Ok(links)
}

/// Referential integrity: both endpoints of every link must exist in their
/// layers' vocabularies.
pub fn check_link_integrity(
    links: &[InterlingualLink],
    layers: &BTreeMap<(String, i32), &Layer>,
) -> Result<(), LinkError> {
    for link in links {
        for (group, tag) in [(&link.group_a, &link.tag_a), (&link.group_b, &link.tag_b)] {
            let layer = layers.get(&(group.clone(), link.period)).ok_or_else(|| {
                LinkError::VectorFile(format!(
                    "link references missing layer {group}/{}",
                    link.period
                ))
            })?;
            if layer.vocab.index_of(tag).is_none() {
                return Err(LinkError::VectorFile(format!(
                    "link references tag {tag:?} absent from {group}/{}",
                    link.period
                )));
            }
        }
    }
    Ok(())
}
