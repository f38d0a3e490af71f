//! Kernel density grids over final 2D frames and their SVG rendering.

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingFrame;

/// Shared plotting window for all frames of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl BoundingBox {
    /// Smallest box containing every point of every frame, padded by 5%.
    pub fn from_frames<'a, I>(frames: I) -> Option<BoundingBox>
    where
        I: IntoIterator<Item = &'a EmbeddingFrame>,
    {
        let mut bbox: Option<BoundingBox> = None;
        for frame in frames {
            for p in &frame.coords {
                let b = bbox.get_or_insert(BoundingBox {
                    x_min: p[0],
                    x_max: p[0],
                    y_min: p[1],
                    y_max: p[1],
                });
                b.x_min = b.x_min.min(p[0]);
                b.x_max = b.x_max.max(p[0]);
                b.y_min = b.y_min.min(p[1]);
                b.y_max = b.y_max.max(p[1]);
            }
        }
        bbox.map(|mut b| {
            let pad_x = 0.05 * (b.x_max - b.x_min).max(1e-9);
            let pad_y = 0.05 * (b.y_max - b.y_min).max(1e-9);
            b.x_min -= pad_x;
            b.x_max += pad_x;
            b.y_min -= pad_y;
            b.y_max += pad_y;
            b
        })
    }
}

/// Normalized Gaussian kernel density estimate on an R x R grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub bbox: BoundingBox,
    pub resolution: usize,
    pub bandwidth: f64,
    /// Row-major cell densities, summing to 1 unless the frame was empty.
    pub cells: Vec<f64>,
}

impl DensityGrid {
    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.resolution + col]
    }
}

/// Scott's bandwidth factor over pooled 2D coordinates:
/// n^(-1/6) times the mean per-dimension standard deviation.
pub fn scott_bandwidth(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let mut std_sum = 0.0;
    for d in 0..2 {
        let mean: f64 = points.iter().map(|p| p[d]).sum::<f64>() / n as f64;
        let var: f64 = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n as f64;
        std_sum += var.sqrt();
    }
    let std = (std_sum / 2.0).max(1e-9);
    std * (n as f64).powf(-1.0 / 6.0)
}

/// Evaluates an isotropic Gaussian KDE at cell centers and normalizes the
/// grid to sum 1. An empty frame yields an all-zero grid (a warning is the
/// caller's job).
pub fn density_grid(
    frame: &EmbeddingFrame,
    bbox: BoundingBox,
    resolution: usize,
    bandwidth: f64,
) -> DensityGrid {
    assert!(resolution >= 16, "grid resolution must be >= 16");
    assert!(bandwidth > 0.0, "bandwidth must be > 0");
    let mut cells = vec![0.0; resolution * resolution];
    if !frame.coords.is_empty() {
        let dx = (bbox.x_max - bbox.x_min) / resolution as f64;
        let dy = (bbox.y_max - bbox.y_min) / resolution as f64;
        let inv_2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
        for row in 0..resolution {
            let cy = bbox.y_min + (row as f64 + 0.5) * dy;
            for col in 0..resolution {
                let cx = bbox.x_min + (col as f64 + 0.5) * dx;
                let mut density = 0.0;
                for p in &frame.coords {
                    let d2 = (p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy);
                    density += (-d2 * inv_2h2).exp();
                }
                cells[row * resolution + col] = density;
            }
        }
        let total: f64 = cells.iter().sum();
        if total > 0.0 {
            for c in &mut cells {
                *c /= total;
            }
        }
    }
    DensityGrid {
        bbox,
        resolution,
        bandwidth,
        cells,
    }
}

pub const N_BANDS: usize = 10;

/// Assigns each cell a contour band 0..=N_BANDS: band 0 is (near) zero
/// density, bands 1..=N_BANDS split the positive densities at equal
/// quantiles.
pub fn assign_bands(grid: &DensityGrid) -> Vec<u8> {
    let mut positive: Vec<f64> = grid.cells.iter().copied().filter(|&v| v > 0.0).collect();
    if positive.is_empty() {
        return vec![0; grid.cells.len()];
    }
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thresholds: Vec<f64> = (1..N_BANDS)
        .map(|k| {
            let idx = (k * positive.len()) / N_BANDS;
            positive[idx.min(positive.len() - 1)]
        })
        .collect();
    grid.cells
        .iter()
        .map(|&v| {
            if v <= 0.0 {
                0
            } else {
                let mut band = 1u8;
                for &t in &thresholds {
                    if v >= t {
                        band += 1;
                    }
                }
                band
            }
        })
        .collect()
}

/// Density level of the outermost silhouette contour (5th percentile of
/// positive densities).
pub fn outline_level(grid: &DensityGrid) -> f64 {
    let mut positive: Vec<f64> = grid.cells.iter().copied().filter(|&v| v > 0.0).collect();
    if positive.is_empty() {
        return f64::INFINITY;
    }
    positive.sort_by(|a, b| a.partial_cmp(b).unwrap());
    positive[(positive.len() * 5) / 100]
}

const PLOT_SIZE: f64 = 600.0;
const MARGIN: f64 = 30.0;

fn band_color(band: u8) -> &'static str {
    // Sequential blue ramp, light to dark.
    const COLORS: [&str; 10] = [
        "#f7fbff", "#e3eef9", "#cfe1f2", "#b5d4e9", "#93c3df", "#6daed5", "#4b97c9", "#2f7ebc",
        "#1864aa", "#0a4a90",
    ];
    COLORS[(band as usize - 1).min(9)]
}

/// Renders a density grid as a filled contour-band SVG. If `base_outline`
/// is given, its outermost contour is drawn as a gray silhouette beneath.
/// Output bytes are deterministic for identical inputs.
pub fn render_svg(grid: &DensityGrid, base_outline: Option<&DensityGrid>) -> String {
    let r = grid.resolution;
    let cell = PLOT_SIZE / r as f64;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = PLOT_SIZE + 2.0 * MARGIN,
        h = PLOT_SIZE + 2.0 * MARGIN,
    ));
    svg.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{s}\" height=\"{s}\" fill=\"white\" stroke=\"black\" stroke-width=\"1\"/>\n",
        m = MARGIN,
        s = PLOT_SIZE,
    ));
    // Base-group silhouette underneath.
    if let Some(base) = base_outline {
        let level = outline_level(base);
        svg.push_str("<g fill=\"#d9d9d9\">\n");
        push_cell_runs(&mut svg, base, cell, |v| v >= level, |_| "#d9d9d9");
        svg.push_str("</g>\n");
    }
    let bands = assign_bands(grid);
    svg.push_str("<g>\n");
    for row in 0..r {
        let mut col = 0;
        while col < r {
            let band = bands[row * r + col];
            if band == 0 {
                col += 1;
                continue;
            }
            let mut end = col + 1;
            while end < r && bands[row * r + end] == band {
                end += 1;
            }
            svg.push_str(&format!(
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{}\"/>\n",
                MARGIN + col as f64 * cell,
                // SVG y grows downward; grid row 0 is y_min (bottom).
                MARGIN + PLOT_SIZE - (row + 1) as f64 * cell,
                (end - col) as f64 * cell,
                cell,
                band_color(band),
            ));
            col = end;
        }
    }
    svg.push_str("</g>\n");
    // Axis labels: data-space corner coordinates.
    svg.push_str(&format!(
        "<text x=\"{m}\" y=\"{y}\" font-size=\"10\" font-family=\"monospace\">({:.2}, {:.2})</text>\n",
        grid.bbox.x_min,
        grid.bbox.y_min,
        m = MARGIN,
        y = PLOT_SIZE + 2.0 * MARGIN - 8.0,
    ));
    svg.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" font-size=\"10\" font-family=\"monospace\" text-anchor=\"end\">({:.2}, {:.2})</text>\n",
        grid.bbox.x_max,
        grid.bbox.y_max,
        x = MARGIN + PLOT_SIZE,
        y = MARGIN - 8.0,
    ));
    svg.push_str("</svg>\n");
    svg
}

fn push_cell_runs<F, C>(svg: &mut String, grid: &DensityGrid, cell: f64, keep: F, color: C)
where
    F: Fn(f64) -> bool,
    C: Fn(f64) -> &'static str,
{
    let r = grid.resolution;
    for row in 0..r {
        let mut col = 0;
        while col < r {
            let v = grid.cell(row, col);
            if !keep(v) {
                col += 1;
                continue;
            }
            let mut end = col + 1;
            while end < r && keep(grid.cell(row, end)) {
                end += 1;
            }
            svg.push_str(&format!(
                "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"{}\"/>\n",
                MARGIN + col as f64 * cell,
                MARGIN + PLOT_SIZE - (row + 1) as f64 * cell,
                (end - col) as f64 * cell,
                cell,
                color(v),
            ));
            col = end;
        }
    }
}
