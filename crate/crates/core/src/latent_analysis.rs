//! PCA over flattened latent mean vectors: fitting, projection, and 2D
//! scatter export (CSV + static SVG) for group-level visualization.
//!
//! Components carry a fixed sign convention (largest-magnitude loading
//! positive) so repeated fits of the same data are bit-identical.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PCA_SIGN_CONVENTION: &str = "largest-loading-positive";

/// Linear PCA model: row `i` of `components` is the i-th principal axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub sign_convention: String,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), json).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let json =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&json)?)
    }
}

fn sorted_desc(eigenvalues: &nalgebra::DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).expect("finite"));
    order
}

/// Flip each component so its largest-magnitude loading is positive
/// (first index wins ties).
fn fix_signs(components: &mut Array2<f64>) {
    for mut row in components.rows_mut() {
        let mut best = 0;
        let mut best_mag = -1.0;
        for (i, &v) in row.iter().enumerate() {
            if v.abs() > best_mag {
                best_mag = v.abs();
                best = i;
            }
        }
        if row[best] < 0.0 {
            row.mapv_inplace(|v| -v);
        }
    }
}

/// Fit a PCA on row-vector samples via the eigendecomposition of whichever
/// of the covariance (dim×dim) or Gram (n×n) matrix is smaller.
pub fn fit_pca(data: &Array2<f64>, n_components: usize) -> Result<PcaModel> {
    let (n, dim) = data.dim();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "pca needs at least 2 samples, got {n}"
        )));
    }
    if n_components == 0 {
        return Err(Error::InvalidInput("pca needs at least 1 component".into()));
    }
    let max_components = (n - 1).min(dim);
    if n_components > max_components {
        return Err(Error::InvalidInput(format!(
            "{n_components} components exceed min(n_samples - 1, dim) = {max_components}"
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("pca input contains non-finite values".into()));
    }

    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let centered = data - &mean;
    let denom = (n - 1) as f64;
    let total_variance: f64 = centered.iter().map(|v| v * v).sum::<f64>() / denom;
    // identical samples leave only rounding residue after centering
    let mean_square: f64 =
        data.iter().map(|v| v * v).sum::<f64>() / (n * dim) as f64;
    if total_variance <= 1e-20 * mean_square.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(
            "pca input is degenerate: all samples identical".into(),
        ));
    }

    let x = DMatrix::from_row_iterator(n, dim, centered.iter().copied());
    let mut components = Array2::<f64>::zeros((n_components, dim));
    let mut explained = Vec::with_capacity(n_components);

    if dim <= n {
        let cov = x.transpose() * &x / denom;
        let eig = SymmetricEigen::new(cov);
        let order = sorted_desc(&eig.eigenvalues);
        for (r, &c) in order.iter().take(n_components).enumerate() {
            explained.push(eig.eigenvalues[c].max(0.0));
            for d in 0..dim {
                components[[r, d]] = eig.eigenvectors[(d, c)];
            }
        }
    } else {
        let gram = &x * x.transpose() / denom;
        let eig = SymmetricEigen::new(gram);
        let order = sorted_desc(&eig.eigenvalues);
        let scale = eig.eigenvalues[order[0]].max(0.0);
        for (r, &c) in order.iter().take(n_components).enumerate() {
            let lambda = eig.eigenvalues[c].max(0.0);
            // the covariance eigenvector is recovered as Xᵀu/‖Xᵀu‖, which
            // is pure noise when the eigenvalue is numerically zero
            if lambda <= 1e-10 * scale {
                return Err(Error::InvalidInput(format!(
                    "pca input is rank-deficient: component {} has no variance",
                    r + 1
                )));
            }
            let v = x.transpose() * eig.eigenvectors.column(c);
            let norm = v.norm();
            explained.push(lambda);
            for d in 0..dim {
                components[[r, d]] = v[d] / norm;
            }
        }
    }

    fix_signs(&mut components);
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
        sign_convention: PCA_SIGN_CONVENTION.into(),
    })
}

/// Project row-vector samples: (x − mean)·componentsᵀ.
pub fn project(model: &PcaModel, data: &Array2<f64>) -> Result<Array2<f64>> {
    if data.ncols() != model.dim() {
        return Err(Error::shape_mismatch(&[model.dim()], &[data.ncols()]));
    }
    let centered = data - &model.mean;
    Ok(centered.dot(&model.components.t()))
}

/// Map projected coordinates back to the input space:
/// mean + coords·components.
pub fn reconstruct(model: &PcaModel, coords: &Array2<f64>) -> Result<Array2<f64>> {
    if coords.ncols() != model.n_components() {
        return Err(Error::shape_mismatch(&[model.n_components()], &[coords.ncols()]));
    }
    Ok(coords.dot(&model.components) + &model.mean)
}

// ---------------------------------------------------------------------------
// Scatter export
// ---------------------------------------------------------------------------

/// One subject's position in the 2D principal-component plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub subject_id: String,
    pub pc1: f64,
    pub pc2: f64,
    pub group: String,
}

pub const SCATTER_CSV_HEADER: &str = "subject_id,pc1,pc2,group";

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::from(SCATTER_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.subject_id, p.pc1, p.pc2, p.group));
    }
    out
}

const SVG_PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Static SVG scatter plot, colored per group; no interactivity.
pub fn scatter_svg(points: &[ScatterPoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 56.0;

    let mut groups: Vec<&str> = points.iter().map(|p| p.group.as_str()).collect();
    groups.sort_unstable();
    groups.dedup();
    let color = |g: &str| {
        let idx = groups.iter().position(|&k| k == g).expect("known group");
        SVG_PALETTE[idx % SVG_PALETTE.len()]
    };

    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for p in points {
        x_lo = x_lo.min(p.pc1);
        x_hi = x_hi.max(p.pc1);
        y_lo = y_lo.min(p.pc2);
        y_hi = y_hi.max(p.pc2);
    }
    let pad = |lo: &mut f64, hi: &mut f64| {
        let span = *hi - *lo;
        let margin = if span > 0.0 { 0.05 * span } else { 1.0 };
        *lo -= margin;
        *hi += margin;
    };
    pad(&mut x_lo, &mut x_hi);
    pad(&mut y_lo, &mut y_hi);

    let sx = |v: f64| M + (v - x_lo) / (x_hi - x_lo) * (W - 2.0 * M);
    let sy = |v: f64| H - M - (v - y_lo) / (y_hi - y_lo) * (H - 2.0 * M);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<rect x=\"{M}\" y=\"{M}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" \
         stroke=\"#444\" stroke-width=\"1\"/>\n",
        W - 2.0 * M,
        H - 2.0 * M
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\">PC1</text>\n",
        W / 2.0,
        H - M / 3.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"14\" transform=\"rotate(-90 {:.2} {:.2})\">PC2</text>\n",
        M / 3.0,
        H / 2.0,
        M / 3.0,
        H / 2.0
    ));
    for p in points {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{}\" fill-opacity=\"0.75\"/>\n",
            sx(p.pc1),
            sy(p.pc2),
            color(&p.group)
        ));
    }
    for (i, g) in groups.iter().enumerate() {
        let y = M + 16.0 + 18.0 * i as f64;
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{}\"/>\n",
            W - M + 14.0,
            y - 4.0,
            color(g)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{g}</text>\n",
            W - M + 24.0,
            y
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Write the scatter as a CSV table and a static SVG image.
pub fn export_scatter(
    points: &[ScatterPoint],
    csv_path: impl AsRef<Path>,
    svg_path: impl AsRef<Path>,
) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no scatter points to export".into()));
    }
    std::fs::write(csv_path.as_ref(), scatter_csv(points))
        .map_err(|e| Error::io(csv_path.as_ref(), e))?;
    std::fs::write(svg_path.as_ref(), scatter_svg(points))
        .map_err(|e| Error::io(svg_path.as_ref(), e))
}
