//! Temporally stable, cross-group-aligned embeddings of multilayer tag
//! co-occurrence networks.
//!
//! The pipeline turns a corpus of tagged articles into one co-occurrence
//! network per (group, period), embeds each group's chain of networks into a
//! shared low-dimensional intermediate space with temporal anchoring, clusters
//! every frame with HDBSCAN, matches clusters across groups through semantic
//! term vectors, aligns every group onto a fixed base group with an affine
//! least-squares map, and projects everything into a final 2D space with a
//! single global PCA. Density plots and prevalence/cohesion metrics are
//! emitted as run artifacts.

pub mod cluster;
pub mod config;
pub mod embed;
pub mod graph;
pub mod ingest;
pub mod link;
pub mod metrics;
pub mod pipeline;
pub mod project;
pub mod report;

pub use config::PipelineConfig;
pub use ingest::{ArticleRecord, Layer, LayerKey, Vocabulary};
