//! Article parsing and per-(group, period) layer assembly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::graph;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate article id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One tagged document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub group: String,
    pub date: NaiveDate,
    pub tags: Vec<String>,
}

/// Identifies one (group, period) network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LayerKey {
    pub group: String,
    pub period: i32,
}

impl std::fmt::Display for LayerKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.group, self.period)
    }
}

/// Capped, usage-ranked tag vocabulary of one layer.
///
/// Tags are ordered by the number of distinct articles containing them,
/// descending, with ties broken lexicographically ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tags: Vec<String>,
    pub usage_counts: Vec<u64>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }
}

/// One (group, period) co-occurrence network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub key: LayerKey,
    pub vocab: Vocabulary,
    /// Symmetric co-occurrence counts, zero diagonal, aligned to vocab order.
    pub cooc: Vec<Vec<u64>>,
    /// Total number of articles in this layer, including articles whose tags
    /// all fall outside the vocabulary.
    pub article_total: u64,
}

impl Layer {
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }
}

/// Canonical tag form: Unicode NFC, surrounding whitespace trimmed,
/// case preserved.
pub fn normalize_tag(tag: &str) -> String {
    tag.trim().nfc().collect()
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    group: String,
    date: String,
    tags: Vec<String>,
}

/// Parses line-delimited records. Blank lines are skipped; any malformed
/// line aborts with its line number.
pub fn parse_articles<R: BufRead>(reader: R) -> Result<Vec<ArticleRecord>, IngestError> {
    let mut records = Vec::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if raw.id.is_empty() {
            return Err(IngestError::Malformed {
                line: line_no,
                message: "empty id".into(),
            });
        }
        let date = NaiveDate::parse_from_str(&raw.date, "%Y-%m-%d").map_err(|e| {
            IngestError::Malformed {
                line: line_no,
                message: format!("bad date {:?}: {e}", raw.date),
            }
        })?;
        if seen_ids.insert(raw.id.clone(), line_no).is_some() {
            return Err(IngestError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        let mut tags = Vec::with_capacity(raw.tags.len());
        let mut seen_tags = HashSet::new();
        for tag in &raw.tags {
            let tag = normalize_tag(tag);
            if tag.is_empty() {
                continue;
            }
            if seen_tags.insert(tag.clone()) {
                tags.push(tag);
            }
        }
        records.push(ArticleRecord {
            id: raw.id,
            group: raw.group,
            date,
            tags,
        });
    }
    Ok(records)
}

/// Ranks tags by the number of distinct articles containing them and keeps
/// the top `k`. Duplicate tags within a record are already collapsed, so a
/// simple pass counts distinct articles.
pub fn top_k_tags(articles: &[ArticleRecord], k: usize) -> Vocabulary {
    assert!(k >= 1, "k must be >= 1");
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for article in articles {
        for tag in &article.tags {
            *counts.entry(tag).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    // BTreeMap iteration is already lexicographic, so a stable sort by
    // descending count leaves ties in ascending tag order.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(k);
    Vocabulary {
        tags: ranked.iter().map(|(t, _)| (*t).to_string()).collect(),
        usage_counts: ranked.iter().map(|(_, c)| *c).collect(),
    }
}

/// Assembles one layer per (group, period) with at least one article,
/// ordered by (group, period). Articles dated outside the period range are
/// dropped entirely.
pub fn build_layers(
    articles: &[ArticleRecord],
    period_start: i32,
    period_end: i32,
    top_k: usize,
) -> Vec<Layer> {
    assert!(period_start <= period_end, "empty period range");
    let mut buckets: BTreeMap<LayerKey, Vec<&ArticleRecord>> = BTreeMap::new();
    for article in articles {
        let period = article.date.year();
        if period < period_start || period > period_end {
            continue;
        }
        buckets
            .entry(LayerKey {
                group: article.group.clone(),
                period,
            })
            .or_default()
            .push(article);
    }
    buckets
        .into_iter()
        .map(|(key, layer_articles)| {
            let vocab = top_k_tags_ref(&layer_articles, top_k);
            let cooc = graph::cooccurrence_matrix(layer_articles.iter().copied(), &vocab);
            Layer {
                key,
                article_total: layer_articles.len() as u64,
                vocab,
                cooc,
            }
        })
        .collect()
}

fn top_k_tags_ref(articles: &[&ArticleRecord], k: usize) -> Vocabulary {
    assert!(k >= 1, "k must be >= 1");
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for article in articles {
        for tag in &article.tags {
            *counts.entry(tag).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(k);
    Vocabulary {
        tags: ranked.iter().map(|(t, _)| (*t).to_string()).collect(),
        usage_counts: ranked.iter().map(|(_, c)| *c).collect(),
    }
}
