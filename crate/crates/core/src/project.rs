//! Affine least-squares alignment onto the base group and the single
//! global PCA into the final 2D space.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbeddingFrame, Space};

#[derive(Debug, Error)]
pub enum ProjectError {
    #[error("under-determined affine fit: {anchors} anchors for dimension {dim} (need {need}, full rank)")]
    UnderDetermined {
        anchors: usize,
        dim: usize,
        need: usize,
    },
    #[error("dimension mismatch: frame has D={frame}, map expects D={map}")]
    DimensionMismatch { frame: usize, map: usize },
    #[error("requested {out_dim} components from dimension {dim}")]
    TooManyComponents { out_dim: usize, dim: usize },
    #[error("PCA needs more rows than dimensions ({rows} rows, D={dim})")]
    TooFewRows { rows: usize, dim: usize },
}

/// (D+1) x D matrix mapping ones-augmented coordinates of one group onto
/// the base group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub group: String,
    pub period: i32,
    pub base_group: String,
    /// Row-major (D+1) x D.
    pub matrix: Vec<Vec<f64>>,
}

impl AffineMap {
    pub fn dim(&self) -> usize {
        self.matrix.len() - 1
    }

    pub fn identity(group: &str, period: i32, base_group: &str, dim: usize) -> Self {
        let mut matrix = vec![vec![0.0; dim]; dim + 1];
        for (d, row) in matrix.iter_mut().enumerate().take(dim) {
            row[d] = 1.0;
        }
        AffineMap {
            group: group.into(),
            period,
            base_group: base_group.into(),
            matrix,
        }
    }

    /// Pure translation by `shift`.
    pub fn translation(group: &str, period: i32, base_group: &str, shift: &[f64]) -> Self {
        let dim = shift.len();
        let mut map = Self::identity(group, period, base_group, dim);
        map.matrix[dim].copy_from_slice(shift);
        map
    }
}

fn augmented(anchors: &[Vec<f64>]) -> DMatrix<f64> {
    let m = anchors.len();
    let dim = anchors[0].len();
    DMatrix::from_fn(m, dim + 1, |r, c| if c < dim { anchors[r][c] } else { 1.0 })
}

/// Solves min_X ||[A | 1] X - B||_F by QR least squares. Errors when fewer
/// than D+1 anchors are given or the augmented anchor matrix is rank
/// deficient.
pub fn ols_affine(
    anchors_a: &[Vec<f64>],
    anchors_b: &[Vec<f64>],
    group: &str,
    period: i32,
    base_group: &str,
) -> Result<AffineMap, ProjectError> {
    assert_eq!(anchors_a.len(), anchors_b.len(), "anchor sets differ in size");
    let m = anchors_a.len();
    let dim = anchors_a.first().map_or(0, |p| p.len());
    if m < dim + 1 {
        return Err(ProjectError::UnderDetermined {
            anchors: m,
            dim,
            need: dim + 1,
        });
    }
    let design = augmented(anchors_a);
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > max_sv * 1e-12)
        .count();
    if rank < dim + 1 {
        return Err(ProjectError::UnderDetermined {
            anchors: m,
            dim,
            need: dim + 1,
        });
    }
    let targets = DMatrix::from_fn(m, dim, |r, c| anchors_b[r][c]);
    let solution = svd
        .solve(&targets, max_sv * 1e-14)
        .expect("SVD solve after rank check");
    let matrix: Vec<Vec<f64>> = (0..dim + 1)
        .map(|r| (0..dim).map(|c| solution[(r, c)]).collect())
        .collect();
    Ok(AffineMap {
        group: group.into(),
        period,
        base_group: base_group.into(),
        matrix,
    })
}

/// Applies an affine map to every node of a frame, relabeling the space.
pub fn apply_affine(frame: &EmbeddingFrame, map: &AffineMap) -> Result<EmbeddingFrame, ProjectError> {
    let dim = map.dim();
    if frame.dim() != dim && !frame.coords.is_empty() {
        return Err(ProjectError::DimensionMismatch {
            frame: frame.dim(),
            map: dim,
        });
    }
    let coords = frame
        .coords
        .iter()
        .map(|p| {
            (0..dim)
                .map(|c| {
                    let mut v = map.matrix[dim][c]; // translation row
                    for (d, &x) in p.iter().enumerate() {
                        v += x * map.matrix[d][c];
                    }
                    v
                })
                .collect()
        })
        .collect();
    Ok(EmbeddingFrame {
        key: frame.key.clone(),
        space: Space::Aligned,
        coords,
    })
}

/// Mean vector plus orthonormal principal components, variances sorted
/// descending. Covariance uses the population divisor so duplicating the
/// dataset leaves the model unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// out_dim x D orthonormal rows; largest-magnitude entry positive.
    pub components: Vec<Vec<f64>>,
    pub explained_variances: Vec<f64>,
    /// Sum of variances over all D directions.
    pub total_variance: f64,
}

/// Fits a single PCA on the pooled rows of all given frames.
pub fn fit_pca(frames: &[&EmbeddingFrame], out_dim: usize) -> Result<PcaModel, ProjectError> {
    let rows: Vec<&Vec<f64>> = frames.iter().flat_map(|f| f.coords.iter()).collect();
    let n = rows.len();
    let dim = rows.first().map_or(0, |r| r.len());
    if out_dim > dim {
        return Err(ProjectError::TooManyComponents { out_dim, dim });
    }
    if n <= dim {
        return Err(ProjectError::TooFewRows { rows: n, dim });
    }
    let mut mean = vec![0.0; dim];
    for row in &rows {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, dim, |r, c| rows[r][c] - mean[c]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let variances: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2) / n as f64)
        .collect();
    let total_variance: f64 = variances.iter().sum();
    let mut components = Vec::with_capacity(out_dim);
    for &i in order.iter().take(out_dim) {
        let mut row: Vec<f64> = (0..dim).map(|c| v_t[(i, c)]).collect();
        // Sign convention: largest-magnitude entry positive.
        let lead = row
            .iter()
            .cloned()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if lead < 0.0 {
            for v in &mut row {
                *v = -*v;
            }
        }
        components.push(row);
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variances: variances[..out_dim].to_vec(),
        total_variance,
    })
}

/// coords' = (coords - mean) * components^T, space = final.
pub fn project_pca(frame: &EmbeddingFrame, model: &PcaModel) -> Result<EmbeddingFrame, ProjectError> {
    let dim = model.mean.len();
    if frame.dim() != dim && !frame.coords.is_empty() {
        return Err(ProjectError::DimensionMismatch {
            frame: frame.dim(),
            map: dim,
        });
    }
    let coords = frame
        .coords
        .iter()
        .map(|p| {
            model
                .components
                .iter()
                .map(|comp| {
                    p.iter()
                        .zip(comp)
                        .zip(&model.mean)
                        .map(|((x, c), m)| (x - m) * c)
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(EmbeddingFrame {
        key: frame.key.clone(),
        space: Space::Final,
        coords,
    })
}

#[cfg(test)]
fn project_point(point: &[f64], model: &PcaModel) -> Vec<f64> {
    model
        .components
        .iter()
        .map(|comp| {
            point
                .iter()
                .zip(comp)
                .zip(&model.mean)
                .map(|((x, c), m)| (x - m) * c)
                .sum()
        })
        .collect()
}

/// OLS objective ||[A | 1] X - B||_F^2 for a candidate matrix.
pub fn affine_objective(anchors_a: &[Vec<f64>], anchors_b: &[Vec<f64>], matrix: &[Vec<f64>]) -> f64 {
    let dim = anchors_a[0].len();
    let mut total = 0.0;
    for (pa, pb) in anchors_a.iter().zip(anchors_b) {
        for c in 0..dim {
            let mut v = matrix[dim][c];
            for (d, &x) in pa.iter().enumerate() {
                v += x * matrix[d][c];
            }
            let r = v - pb[c];
            total += r * r;
        }
    }
    total
}

/// Residual matrix must be orthogonal to the column space of [A | 1].
pub fn residual_orthogonality(
    anchors_a: &[Vec<f64>],
    anchors_b: &[Vec<f64>],
    map: &AffineMap,
) -> f64 {
    let design = augmented(anchors_a);
    let dim = anchors_a[0].len();
    let m = anchors_a.len();
    let x = DMatrix::from_fn(dim + 1, dim, |r, c| map.matrix[r][c]);
    let b = DMatrix::from_fn(m, dim, |r, c| anchors_b[r][c]);
    let residual = &design * &x - b;
    (design.transpose() * residual).abs().max()
}
