//! End-to-end orchestration: articles in, aligned maps and metrics out.

use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, ClusterAssignment, ClusterError};
use crate::config::{PipelineConfig, RowTransform};
use crate::embed::{self, EmbedError, EmbedParams, EmbeddingFrame, Space};
use crate::graph;
use crate::ingest::{self, IngestError, Layer, LayerKey};
use crate::link::{
    self, FileVectors, InterlingualLink, LinkError, SemanticVectorProvider, StubVectors,
};
use crate::metrics::{self, ClusterMetricRow, MetricsError};
use crate::project::{self, AffineMap, ProjectError};
use crate::report::{self, BoundingBox, DensityGrid};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("embed: {0}")]
    Embed(#[from] EmbedError),
    #[error("cluster: {0}")]
    Cluster(#[from] ClusterError),
    #[error("link: {0}")]
    Link(#[from] LinkError),
    #[error("project: {0}")]
    Project(#[from] ProjectError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl PipelineError {
    /// Process exit code: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Embed(EmbedError::NonFinite { .. })
            | PipelineError::Project(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Overrides the config seed when set.
    pub seed: Option<u64>,
    /// Omit wall-clock timings from the manifest so repeated runs are
    /// byte-identical.
    pub deterministic: bool,
}

/// How each layer was aligned onto the base group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    Base,
    Full,
    Translation,
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub group: String,
    pub period: i32,
    pub mode: AlignmentMode,
    pub anchor_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunCounts {
    pub articles: usize,
    pub layers: usize,
    pub groups: usize,
    pub intermediate_frames: usize,
    pub aligned_frames: usize,
    pub final_frames: usize,
    pub affine_maps: usize,
    pub clusters: usize,
    pub links: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub millis: Option<u128>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config: PipelineConfig,
    pub counts: RunCounts,
    pub alignments: Vec<AlignmentRecord>,
    pub warnings: Vec<String>,
    pub stages: Vec<StageRecord>,
    /// Relative paths of every file this run wrote, manifest excluded.
    pub artifacts: Vec<String>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub counts: RunCounts,
    pub warnings: Vec<String>,
    pub manifest_path: PathBuf,
}

/// Collects written files so a failed run can clean up after itself.
struct ArtifactSink {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl ArtifactSink {
    fn new(root: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(root).map_err(|source| PipelineError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(ArtifactSink {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        std::fs::write(&path, bytes).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn relative_paths(&self) -> Vec<String> {
        let mut rels: Vec<String> = self
            .written
            .iter()
            .map(|p| {
                p.strip_prefix(&self.root)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace('\\', "/")
            })
            .collect();
        rels.sort();
        rels
    }

    fn remove_all(&self) {
        for path in &self.written {
            let _ = std::fs::remove_file(path);
        }
    }
}

enum Provider {
    File(FileVectors),
    Stub(StubVectors),
}

impl SemanticVectorProvider for Provider {
    fn dim(&self) -> usize {
        match self {
            Provider::File(p) => p.dim(),
            Provider::Stub(p) => p.dim(),
        }
    }

    fn vector(&self, term: &str) -> Result<Option<Vec<f64>>, LinkError> {
        match self {
            Provider::File(p) => p.vector(term),
            Provider::Stub(p) => p.vector(term),
        }
    }
}

struct StageClock {
    deterministic: bool,
    stages: Vec<StageRecord>,
    current: Option<(String, Instant)>,
}

impl StageClock {
    fn new(deterministic: bool) -> Self {
        StageClock {
            deterministic,
            stages: Vec::new(),
            current: None,
        }
    }

    fn start(&mut self, name: &str) {
        self.finish();
        self.current = Some((name.to_string(), Instant::now()));
    }

    fn finish(&mut self) {
        if let Some((name, started)) = self.current.take() {
            let millis = if self.deterministic {
                None
            } else {
                Some(started.elapsed().as_millis())
            };
            self.stages.push(StageRecord { name, millis });
        }
    }
}

/// Runs the full pipeline and writes all artifacts under `options.out_dir`.
/// On error every partially written artifact is removed.
pub fn run_pipeline(
    config: &PipelineConfig,
    options: &RunOptions,
) -> Result<RunSummary, PipelineError> {
    let mut sink = ArtifactSink::new(&options.out_dir)?;
    match run_inner(config, options, &mut sink) {
        Ok(summary) => Ok(summary),
        Err(e) => {
            sink.remove_all();
            Err(e)
        }
    }
}

fn run_inner(
    config: &PipelineConfig,
    options: &RunOptions,
    sink: &mut ArtifactSink,
) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let seed = options.seed.unwrap_or(config.seed);
    let mut warnings: Vec<String> = Vec::new();
    let mut clock = StageClock::new(options.deterministic);

    // --- ingest ---
    clock.start("ingest");
    let file = std::fs::File::open(&config.input).map_err(|source| PipelineError::Io {
        path: config.input.clone(),
        source,
    })?;
    let articles = ingest::parse_articles(BufReader::new(file))?;
    let layers = ingest::build_layers(
        &articles,
        config.period_start,
        config.period_end,
        config.top_k,
    );
    if layers.is_empty() {
        return Err(PipelineError::Ingest(IngestError::Malformed {
            line: 0,
            message: "no articles fall inside the configured period range".into(),
        }));
    }
    for layer in &layers {
        let json = serde_json::to_vec_pretty(layer).expect("layer serializes");
        sink.write(&format!("layers/{}_{}.json", layer.key.group, layer.key.period), &json)?;
        let mut csv_bytes = Vec::new();
        graph::export_cooccurrence_csv(layer, &mut csv_bytes).map_err(|source| {
            PipelineError::Io {
                path: sink.root.clone(),
                source,
            }
        })?;
        sink.write(
            &format!("layers/{}_{}_cooc.csv", layer.key.group, layer.key.period),
            &csv_bytes,
        )?;
    }

    // --- embed chains, one per group ---
    clock.start("embed");
    let mut groups: BTreeMap<String, Vec<Layer>> = BTreeMap::new();
    for layer in layers.iter().cloned() {
        groups.entry(layer.key.group.clone()).or_default().push(layer);
    }
    let params = EmbedParams {
        dim: config.intermediate_dim,
        min_dist: config.min_dist,
        spread: config.spread,
        n_epochs: config.n_epochs,
        negatives: config.negatives,
        n_neighbors: config.n_neighbors,
        lambda: config.lambda,
        row_transform: config.row_transform.unwrap_or(RowTransform::None),
    };
    let group_list: Vec<(String, Vec<Layer>)> = groups.into_iter().collect();
    let chains: Vec<(String, Vec<EmbeddingFrame>)> = group_list
        .par_iter()
        .enumerate()
        .map(|(idx, (group, group_layers))| {
            let chain_seed = seed.wrapping_add(idx as u64);
            embed::embed_chain(group_layers, &params, chain_seed)
                .map(|frames| (group.clone(), frames))
        })
        .collect::<Result<_, EmbedError>>()?;
    let mut frames_by_key: BTreeMap<LayerKey, EmbeddingFrame> = BTreeMap::new();
    for (_, frames) in chains {
        for frame in frames {
            frames_by_key.insert(frame.key.clone(), frame);
        }
    }
    let layers_by_key: BTreeMap<LayerKey, &Layer> =
        layers.iter().map(|l| (l.key.clone(), l)).collect();
    write_frames_csv(sink, "frames_intermediate.csv", frames_by_key.values(), &layers_by_key)?;

    // --- cluster each frame ---
    clock.start("cluster");
    let mut assignments: BTreeMap<LayerKey, ClusterAssignment> = BTreeMap::new();
    for (key, frame) in &frames_by_key {
        let n = frame.coords.len();
        let assignment = if n <= config.min_samples {
            warnings.push(format!(
                "{key}: only {n} tags (min_samples={}), all marked noise",
                config.min_samples
            ));
            ClusterAssignment {
                key: key.clone(),
                labels: vec![-1; n],
                stabilities: Vec::new(),
            }
        } else {
            cluster::hdbscan(
                &frame.coords,
                config.min_samples,
                config.min_cluster_size,
                key.clone(),
            )?
        };
        assignments.insert(key.clone(), assignment);
    }
    write_clusters_csv(sink, &assignments, &layers_by_key)?;

    // --- cross-group links ---
    clock.start("link");
    let provider = match &config.vectors {
        Some(path) => Provider::File(link::load_vectors(path)?),
        None => Provider::Stub(link::stub_vectors(config.stub_dim, seed)),
    };
    let mut links: Vec<InterlingualLink> = Vec::new();
    let periods: Vec<i32> = {
        let mut p: Vec<i32> = layers.iter().map(|l| l.key.period).collect();
        p.sort_unstable();
        p.dedup();
        p
    };
    let group_names: Vec<String> = group_list.iter().map(|(g, _)| g.clone()).collect();
    for &period in &periods {
        let base_key = LayerKey {
            group: config.base_group.clone(),
            period,
        };
        let Some(base_layer) = layers_by_key.get(&base_key) else {
            warnings.push(format!(
                "no {} layer in period {period}; groups in that period stay unaligned",
                config.base_group
            ));
            continue;
        };
        let base_assign = &assignments[&base_key];
        for group in &group_names {
            if group == &config.base_group {
                continue;
            }
            let key = LayerKey {
                group: group.clone(),
                period,
            };
            let Some(layer) = layers_by_key.get(&key) else { continue };
            let assign = &assignments[&key];
            let pairs = link::match_clusters(
                base_assign,
                assign,
                base_layer,
                layer,
                &provider,
                config.threshold_rule,
            )?;
            let derived =
                link::derive_links(&pairs, base_assign, assign, base_layer, layer, &provider)?;
            links.extend(derived);
        }
    }
    let override_layers: BTreeMap<(String, i32), &Layer> = layers
        .iter()
        .map(|l| ((l.key.group.clone(), l.key.period), l))
        .collect();
    if let Some(path) = &config.overrides {
        let file = std::fs::File::open(path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        links = link::apply_overrides(links, file, &override_layers)?;
    }
    link::check_link_integrity(&links, &override_layers)?;
    links.sort_by(|a, b| {
        (a.period, &a.group_a, &a.group_b, &a.tag_a, &a.tag_b)
            .cmp(&(b.period, &b.group_a, &b.group_b, &b.tag_a, &b.tag_b))
    });
    write_links_csv(sink, &links)?;

    // --- affine alignment onto the base group ---
    clock.start("align");
    let mut aligned: BTreeMap<LayerKey, EmbeddingFrame> = BTreeMap::new();
    let mut maps: Vec<AffineMap> = Vec::new();
    let mut alignments: Vec<AlignmentRecord> = Vec::new();
    for (key, frame) in &frames_by_key {
        if key.group == config.base_group {
            let mut base = frame.clone();
            base.space = Space::Aligned;
            aligned.insert(key.clone(), base);
            alignments.push(AlignmentRecord {
                group: key.group.clone(),
                period: key.period,
                mode: AlignmentMode::Base,
                anchor_count: 0,
            });
            continue;
        }
        let base_key = LayerKey {
            group: config.base_group.clone(),
            period: key.period,
        };
        let (src, dst) = match (frames_by_key.get(&base_key), layers_by_key.get(&base_key)) {
            (Some(base_frame), Some(base_layer)) => anchor_pairs(
                &links,
                key,
                &layers_by_key[key],
                frame,
                base_layer,
                base_frame,
            ),
            _ => (Vec::new(), Vec::new()),
        };
        let dim = config.intermediate_dim;
        let (map, mode) = if src.len() >= dim + 1 {
            match project::ols_affine(&src, &dst, &key.group, key.period, &config.base_group) {
                Ok(map) => (map, AlignmentMode::Full),
                Err(ProjectError::UnderDetermined { .. }) => {
                    warnings.push(format!("{key}: rank-deficient anchors, translation fallback"));
                    (translation_map(&src, &dst, key, &config.base_group), AlignmentMode::Translation)
                }
                Err(e) => return Err(e.into()),
            }
        } else if !src.is_empty() {
            warnings.push(format!(
                "{key}: {} anchors < {}, translation fallback",
                src.len(),
                dim + 1
            ));
            (translation_map(&src, &dst, key, &config.base_group), AlignmentMode::Translation)
        } else {
            warnings.push(format!("{key}: no anchors, identity fallback"));
            (
                AffineMap::identity(&key.group, key.period, &config.base_group, dim),
                AlignmentMode::Identity,
            )
        };
        aligned.insert(key.clone(), project::apply_affine(frame, &map)?);
        alignments.push(AlignmentRecord {
            group: key.group.clone(),
            period: key.period,
            mode,
            anchor_count: src.len(),
        });
        maps.push(map);
    }
    sink.write(
        "affine_maps.json",
        &serde_json::to_vec_pretty(&maps).expect("maps serialize"),
    )?;
    write_frames_csv(sink, "frames_aligned.csv", aligned.values(), &layers_by_key)?;

    // --- single global projection to 2D ---
    clock.start("project");
    let aligned_refs: Vec<&EmbeddingFrame> = aligned.values().collect();
    let pca = project::fit_pca(&aligned_refs, 2)?;
    let mut finals: BTreeMap<LayerKey, EmbeddingFrame> = BTreeMap::new();
    for (key, frame) in &aligned {
        finals.insert(key.clone(), project::project_pca(frame, &pca)?);
    }
    sink.write(
        "pca_model.json",
        &serde_json::to_vec_pretty(&pca).expect("model serializes"),
    )?;
    write_frames_csv(sink, "frames_final.csv", finals.values(), &layers_by_key)?;

    // --- metrics ---
    clock.start("metrics");
    let metric_rows = cluster_metric_rows(&layers_by_key, &assignments)?;
    let mut metrics_bytes = Vec::new();
    write_metrics_csv(&metric_rows, &mut metrics_bytes).map_err(|source| PipelineError::Io {
        path: sink.root.join("metrics.csv"),
        source,
    })?;
    sink.write("metrics.csv", &metrics_bytes)?;

    // --- density maps ---
    clock.start("report");
    let final_refs: Vec<&EmbeddingFrame> = finals.values().collect();
    let bbox = BoundingBox::from_frames(final_refs.iter().copied()).unwrap_or(BoundingBox {
        x_min: -1.0,
        x_max: 1.0,
        y_min: -1.0,
        y_max: 1.0,
    });
    let pooled: Vec<Vec<f64>> = final_refs
        .iter()
        .flat_map(|f| f.coords.iter().cloned())
        .collect();
    let bandwidth = report::scott_bandwidth(&pooled);
    let grids: BTreeMap<LayerKey, DensityGrid> = finals
        .par_iter()
        .map(|(key, frame)| {
            (
                key.clone(),
                report::density_grid(frame, bbox, config.grid_resolution, bandwidth),
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    for (key, frame) in &finals {
        if frame.coords.is_empty() {
            warnings.push(format!("{key}: empty frame, rendering blank map"));
        }
        let base_grid = if key.group != config.base_group {
            grids
                .get(&LayerKey {
                    group: config.base_group.clone(),
                    period: key.period,
                })
        } else {
            None
        };
        let svg = report::render_svg(&grids[key], base_grid);
        sink.write(&format!("maps/{}_{}.svg", key.group, key.period), svg.as_bytes())?;
    }
    clock.finish();

    // --- manifest ---
    let counts = RunCounts {
        articles: articles.len(),
        layers: layers.len(),
        groups: group_list.len(),
        intermediate_frames: frames_by_key.len(),
        aligned_frames: aligned.len(),
        final_frames: finals.len(),
        affine_maps: maps.len(),
        clusters: assignments.values().map(|a| a.n_clusters()).sum(),
        links: links.len(),
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        deterministic: options.deterministic,
        config: config.clone(),
        counts: counts.clone(),
        alignments,
        warnings: warnings.clone(),
        stages: clock.stages,
        artifacts: sink.relative_paths(),
    };
    sink.write(
        "manifest.json",
        &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(RunSummary {
        counts,
        warnings,
        manifest_path: sink.root.join("manifest.json"),
    })
}

/// Anchor coordinate pairs (this group's space, base space) for every link
/// joining the two layers of one period.
fn anchor_pairs(
    links: &[InterlingualLink],
    key: &LayerKey,
    layer: &Layer,
    frame: &EmbeddingFrame,
    base_layer: &Layer,
    base_frame: &EmbeddingFrame,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for link in links {
        if link.period != key.period
            || link.group_a != base_layer.key.group
            || link.group_b != key.group
        {
            continue;
        }
        let (Some(i), Some(j)) = (
            layer.vocab.index_of(&link.tag_b),
            base_layer.vocab.index_of(&link.tag_a),
        ) else {
            continue;
        };
        src.push(frame.coords[i].clone());
        dst.push(base_frame.coords[j].clone());
    }
    (src, dst)
}

fn translation_map(
    src: &[Vec<f64>],
    dst: &[Vec<f64>],
    key: &LayerKey,
    base_group: &str,
) -> AffineMap {
    let dim = src[0].len();
    let mut shift = vec![0.0; dim];
    for (s, d) in src.iter().zip(dst) {
        for c in 0..dim {
            shift[c] += d[c] - s[c];
        }
    }
    for c in &mut shift {
        *c /= src.len() as f64;
    }
    AffineMap::translation(&key.group, key.period, base_group, &shift)
}

/// Metric rows for every selected cluster of every layer, sorted by
/// (group, period, label).
pub fn cluster_metric_rows(
    layers_by_key: &BTreeMap<LayerKey, &Layer>,
    assignments: &BTreeMap<LayerKey, ClusterAssignment>,
) -> Result<Vec<ClusterMetricRow>, MetricsError> {
    let mut rows = Vec::new();
    for (key, assignment) in assignments {
        let layer = layers_by_key[key];
        for label in 0..assignment.n_clusters() as i64 {
            let members = assignment.members(label);
            rows.push(ClusterMetricRow {
                group: key.group.clone(),
                period: key.period,
                cluster_label: label,
                size: members.len(),
                prevalence: metrics::cluster_prevalence(layer, &members),
                cohesion: metrics::cluster_cohesion(layer, &members)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_metrics_csv<W: Write>(rows: &[ClusterMetricRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "group,period,cluster_label,size,prevalence,cohesion")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&row.group),
            row.period,
            row.cluster_label,
            row.size,
            row.prevalence,
            row.cohesion.map_or(String::new(), |c| c.to_string()),
        )?;
    }
    Ok(())
}

fn write_frames_csv<'a, I>(
    sink: &mut ArtifactSink,
    name: &str,
    frames: I,
    layers_by_key: &BTreeMap<LayerKey, &Layer>,
) -> Result<(), PipelineError>
where
    I: IntoIterator<Item = &'a EmbeddingFrame>,
{
    let mut out = Vec::new();
    let mut header_written = false;
    let io_err = |source| PipelineError::Io {
        path: PathBuf::from(name),
        source,
    };
    for frame in frames {
        if !header_written {
            let coord_cols: Vec<String> = (1..=frame.dim().max(1)).map(|d| format!("x{d}")).collect();
            writeln!(out, "group,period,tag,space,{}", coord_cols.join(",")).map_err(io_err)?;
            header_written = true;
        }
        let layer = layers_by_key[&frame.key];
        for (i, point) in frame.coords.iter().enumerate() {
            let coords: Vec<String> = point.iter().map(|v| v.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&frame.key.group),
                frame.key.period,
                csv_field(&layer.vocab.tags[i]),
                frame.space,
                coords.join(","),
            )
            .map_err(io_err)?;
        }
    }
    if !header_written {
        writeln!(out, "group,period,tag,space,x1").map_err(io_err)?;
    }
    sink.write(name, &out)
}

fn write_clusters_csv(
    sink: &mut ArtifactSink,
    assignments: &BTreeMap<LayerKey, ClusterAssignment>,
    layers_by_key: &BTreeMap<LayerKey, &Layer>,
) -> Result<(), PipelineError> {
    let mut out = Vec::new();
    let io_err = |source| PipelineError::Io {
        path: PathBuf::from("clusters.csv"),
        source,
    };
    writeln!(out, "group,period,tag,cluster_label,cluster_stability").map_err(io_err)?;
    for (key, assignment) in assignments {
        let layer = layers_by_key[key];
        for (i, &label) in assignment.labels.iter().enumerate() {
            let stability = if label >= 0 {
                assignment.stabilities[label as usize].to_string()
            } else {
                String::new()
            };
            writeln!(
                out,
                "{},{},{},{},{}",
                csv_field(&key.group),
                key.period,
                csv_field(&layer.vocab.tags[i]),
                label,
                stability,
            )
            .map_err(io_err)?;
        }
    }
    sink.write("clusters.csv", &out)
}

fn write_links_csv(sink: &mut ArtifactSink, links: &[InterlingualLink]) -> Result<(), PipelineError> {
    let mut out = Vec::new();
    let io_err = |source| PipelineError::Io {
        path: PathBuf::from("links.csv"),
        source,
    };
    writeln!(out, "period,group_a,tag_a,group_b,tag_b,similarity,source").map_err(io_err)?;
    for link in links {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            link.period,
            csv_field(&link.group_a),
            csv_field(&link.tag_a),
            csv_field(&link.group_b),
            csv_field(&link.tag_b),
            link.similarity,
            link.source,
        )
        .map_err(io_err)?;
    }
    sink.write("links.csv", &out)
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

// ---------------------------------------------------------------------------
// Standalone artifact consumers for the `render` and `metrics` subcommands.
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct FrameRow {
    group: String,
    period: i32,
    #[allow(dead_code)]
    tag: String,
    #[allow(dead_code)]
    space: String,
    x1: f64,
    x2: f64,
}

/// Re-renders density maps from a previously exported 2D frames CSV.
pub fn render_from_csv(
    frames_csv: &Path,
    out_dir: &Path,
    grid_resolution: usize,
) -> Result<Vec<PathBuf>, PipelineError> {
    let file = std::fs::File::open(frames_csv).map_err(|source| PipelineError::Io {
        path: frames_csv.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut by_key: BTreeMap<LayerKey, Vec<Vec<f64>>> = BTreeMap::new();
    for row in reader.deserialize::<FrameRow>() {
        let row = row.map_err(|e| PipelineError::Artifact {
            path: frames_csv.to_path_buf(),
            message: e.to_string(),
        })?;
        by_key
            .entry(LayerKey {
                group: row.group,
                period: row.period,
            })
            .or_default()
            .push(vec![row.x1, row.x2]);
    }
    if by_key.is_empty() {
        return Err(PipelineError::Artifact {
            path: frames_csv.to_path_buf(),
            message: "no frame rows".into(),
        });
    }
    let frames: Vec<EmbeddingFrame> = by_key
        .into_iter()
        .map(|(key, coords)| EmbeddingFrame {
            key,
            space: Space::Final,
            coords,
        })
        .collect();
    let bbox = BoundingBox::from_frames(&frames).expect("non-empty frames");
    let pooled: Vec<Vec<f64>> = frames.iter().flat_map(|f| f.coords.iter().cloned()).collect();
    let bandwidth = report::scott_bandwidth(&pooled);
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for frame in &frames {
        let grid = report::density_grid(frame, bbox, grid_resolution, bandwidth);
        let svg = report::render_svg(&grid, None);
        let path = out_dir.join(format!("{}_{}.svg", frame.key.group, frame.key.period));
        std::fs::write(&path, svg.as_bytes()).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Deserialize)]
struct ClusterRow {
    group: String,
    period: i32,
    tag: String,
    cluster_label: i64,
    #[allow(dead_code)]
    cluster_stability: Option<f64>,
}

/// Recomputes cluster metrics from exported layer JSON files and a clusters
/// CSV.
pub fn metrics_from_artifacts(
    layers_dir: &Path,
    clusters_csv: &Path,
) -> Result<Vec<ClusterMetricRow>, PipelineError> {
    let mut layers: BTreeMap<LayerKey, Layer> = BTreeMap::new();
    let entries = std::fs::read_dir(layers_dir).map_err(|source| PipelineError::Io {
        path: layers_dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in &paths {
        let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        let layer: Layer =
            serde_json::from_slice(&bytes).map_err(|e| PipelineError::Artifact {
                path: path.clone(),
                message: e.to_string(),
            })?;
        layers.insert(layer.key.clone(), layer);
    }
    if layers.is_empty() {
        return Err(PipelineError::Artifact {
            path: layers_dir.to_path_buf(),
            message: "no layer JSON files".into(),
        });
    }

    let file = std::fs::File::open(clusters_csv).map_err(|source| PipelineError::Io {
        path: clusters_csv.to_path_buf(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let mut members: BTreeMap<(LayerKey, i64), Vec<usize>> = BTreeMap::new();
    for row in reader.deserialize::<ClusterRow>() {
        let row = row.map_err(|e| PipelineError::Artifact {
            path: clusters_csv.to_path_buf(),
            message: e.to_string(),
        })?;
        if row.cluster_label < 0 {
            continue;
        }
        let key = LayerKey {
            group: row.group.clone(),
            period: row.period,
        };
        let layer = layers.get(&key).ok_or_else(|| PipelineError::Artifact {
            path: clusters_csv.to_path_buf(),
            message: format!("cluster row references unknown layer {key}"),
        })?;
        let idx = layer
            .vocab
            .index_of(&row.tag)
            .ok_or_else(|| PipelineError::Artifact {
                path: clusters_csv.to_path_buf(),
                message: format!("tag {:?} absent from layer {key}", row.tag),
            })?;
        members.entry((key, row.cluster_label)).or_default().push(idx);
    }
    let mut rows = Vec::new();
    for ((key, label), member_list) in &members {
        let layer = &layers[key];
        rows.push(ClusterMetricRow {
            group: key.group.clone(),
            period: key.period,
            cluster_label: *label,
            size: member_list.len(),
            prevalence: metrics::cluster_prevalence(layer, member_list),
            cohesion: metrics::cluster_cohesion(layer, member_list)?,
        });
    }
    Ok(rows)
}
