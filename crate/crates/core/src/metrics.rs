//! Reconstruction-fidelity metrics (SSIM, MS-SSIM, MSE, embedding distance
//! and similarity) and classification metrics (accuracy, per-class
//! sensitivity/specificity, tie-aware ROC-AUC with one-vs-rest macro
//! averaging).
//!
//! All metrics are pure functions over immutable inputs and accumulate in
//! f64, so they are safe to evaluate concurrently and reproduce exactly.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::volume::Volume;

/// Per-scale exponents for multi-scale SSIM, finest scale first; when fewer
/// scales are used, the leading entries are renormalized to sum to 1.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

// ---------------------------------------------------------------------------
// Reconstruction fidelity
// ---------------------------------------------------------------------------

/// SSIM parameters: uniform cubic window, canonical stabilizers at unit
/// data range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_edge: usize,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_edge: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    fn validate(&self) -> Result<()> {
        if self.window_edge == 0 {
            return Err(Error::InvalidInput("ssim window must be >= 1".into()));
        }
        if self.data_range <= 0.0 || self.k1 <= 0.0 || self.k2 <= 0.0 {
            return Err(Error::InvalidInput(
                "ssim stabilizers and data range must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mean of squared voxel differences.
pub fn mse(x: &Volume, y: &Volume) -> Result<f64> {
    x.check_same_shape(y)?;
    let mut acc = 0.0f64;
    for (a, b) in x.data().iter().zip(y.data().iter()) {
        let d = *a as f64 - *b as f64;
        acc += d * d;
    }
    Ok(acc / x.num_voxels() as f64)
}

fn to_f64(v: &Volume) -> Array3<f64> {
    v.data().mapv(|x| x as f64)
}

/// 3D summed-area table with a zero border, so any box sum is 8 lookups.
fn sat3(a: &Array3<f64>) -> Array3<f64> {
    let (nx, ny, nz) = a.dim();
    let mut s = Array3::<f64>::zeros((nx + 1, ny + 1, nz + 1));
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                s[[i + 1, j + 1, k + 1]] = a[[i, j, k]]
                    + s[[i, j + 1, k + 1]]
                    + s[[i + 1, j, k + 1]]
                    + s[[i + 1, j + 1, k]]
                    - s[[i, j, k + 1]]
                    - s[[i, j + 1, k]]
                    - s[[i + 1, j, k]]
                    + s[[i, j, k]];
            }
        }
    }
    s
}

fn window_sum(s: &Array3<f64>, i: usize, j: usize, k: usize, w: usize) -> f64 {
    let (i2, j2, k2) = (i + w, j + w, k + w);
    s[[i2, j2, k2]] - s[[i, j2, k2]] - s[[i2, j, k2]] - s[[i2, j2, k]]
        + s[[i, j, k2]] + s[[i, j2, k]] + s[[i2, j, k]]
        - s[[i, j, k]]
}

/// Means over all sliding windows of the full SSIM value and of its
/// contrast-structure factor alone. Window statistics are population
/// moments (divide by window volume).
fn ssim_means(a: &Array3<f64>, b: &Array3<f64>, p: &SsimParams) -> Result<(f64, f64)> {
    p.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::shape_mismatch(a.dim(), b.dim()));
    }
    let w = p.window_edge;
    let (nx, ny, nz) = a.dim();
    if nx < w || ny < w || nz < w {
        return Err(Error::InvalidInput(format!(
            "volume {:?} is smaller than the {w}^3 ssim window",
            a.dim()
        )));
    }
    let c1 = (p.k1 * p.data_range) * (p.k1 * p.data_range);
    let c2 = (p.k2 * p.data_range) * (p.k2 * p.data_range);
    let n = (w * w * w) as f64;

    let sa = sat3(a);
    let sb = sat3(b);
    let saa = sat3(&(a * a));
    let sbb = sat3(&(b * b));
    let sab = sat3(&(a * b));

    let mut sum_ssim = 0.0;
    let mut sum_cs = 0.0;
    let mut count = 0u64;
    for i in 0..=(nx - w) {
        for j in 0..=(ny - w) {
            for k in 0..=(nz - w) {
                let mu_a = window_sum(&sa, i, j, k, w) / n;
                let mu_b = window_sum(&sb, i, j, k, w) / n;
                let va = window_sum(&saa, i, j, k, w) / n - mu_a * mu_a;
                let vb = window_sum(&sbb, i, j, k, w) / n - mu_b * mu_b;
                let cov = window_sum(&sab, i, j, k, w) / n - mu_a * mu_b;
                let cs = (2.0 * cov + c2) / (va + vb + c2);
                let lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
                sum_ssim += lum * cs;
                sum_cs += cs;
                count += 1;
            }
        }
    }
    Ok((sum_ssim / count as f64, sum_cs / count as f64))
}

/// Structural similarity averaged over all 7³ sliding windows.
pub fn ssim3d(x: &Volume, y: &Volume) -> Result<f64> {
    ssim3d_with(x, y, &SsimParams::default())
}

pub fn ssim3d_with(x: &Volume, y: &Volume, params: &SsimParams) -> Result<f64> {
    x.check_same_shape(y)?;
    Ok(ssim_means(&to_f64(x), &to_f64(y), params)?.0)
}

/// 2× downsampling by 2³ mean pooling; a trailing odd slice is dropped.
fn downsample2_mean(a: &Array3<f64>) -> Array3<f64> {
    let (nx, ny, nz) = a.dim();
    let (mx, my, mz) = (nx / 2, ny / 2, nz / 2);
    let mut out = Array3::<f64>::zeros((mx, my, mz));
    for i in 0..mx {
        for j in 0..my {
            for k in 0..mz {
                let mut s = 0.0;
                for di in 0..2 {
                    for dj in 0..2 {
                        for dk in 0..2 {
                            s += a[[2 * i + di, 2 * j + dj, 2 * k + dk]];
                        }
                    }
                }
                out[[i, j, k]] = s / 8.0;
            }
        }
    }
    out
}

/// Multi-scale SSIM: contrast-structure terms at every scale, luminance
/// only at the coarsest, combined as a weighted geometric mean. Negative
/// per-scale terms are clamped to 0 before exponentiation.
pub fn ms_ssim3d(x: &Volume, y: &Volume, scales: usize) -> Result<f64> {
    x.check_same_shape(y)?;
    if scales == 0 {
        return Err(Error::InvalidInput("ms-ssim needs at least one scale".into()));
    }
    if scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::InvalidInput(format!(
            "ms-ssim supports at most {} scales, got {scales}",
            MS_SSIM_WEIGHTS.len()
        )));
    }
    let params = SsimParams::default();
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();

    let mut a = to_f64(x);
    let mut b = to_f64(y);
    let mut result = 1.0;
    for s in 0..scales {
        let (nx, ny, nz) = a.dim();
        if nx.min(ny).min(nz) < params.window_edge {
            return Err(Error::InvalidInput(format!(
                "scale {} volume {:?} is smaller than the {}^3 ssim window; reduce scales",
                s + 1,
                a.dim(),
                params.window_edge
            )));
        }
        let (ssim_mean, cs_mean) = ssim_means(&a, &b, &params)?;
        let term = if s + 1 == scales { ssim_mean } else { cs_mean };
        result *= term.max(0.0).powf(MS_SSIM_WEIGHTS[s] / weight_sum);
        if s + 1 < scales {
            a = downsample2_mean(&a);
            b = downsample2_mean(&b);
        }
    }
    Ok(result)
}

/// ℓ2 norm of the embedding difference normalized by √length, so the
/// identity embedding reduces to the root-mean-square voxel difference.
pub fn feature_distance(x: &Volume, y: &Volume, f: &dyn FeatureExtractor<f32>) -> Result<f64> {
    x.check_same_shape(y)?;
    let ex = f.embed(x.data());
    let ey = f.embed(y.data());
    if ex.len() != ey.len() || ex.is_empty() {
        return Err(Error::InvalidInput(format!(
            "extractor '{}' produced embeddings of lengths {} and {}",
            f.id(),
            ex.len(),
            ey.len()
        )));
    }
    let mut acc = 0.0f64;
    for (a, b) in ex.iter().zip(ey.iter()) {
        let d = *a as f64 - *b as f64;
        acc += d * d;
    }
    Ok((acc / ex.len() as f64).sqrt())
}

/// Cosine of the angle between the two embeddings.
pub fn cosine_similarity(x: &Volume, y: &Volume, f: &dyn FeatureExtractor<f32>) -> Result<f64> {
    x.check_same_shape(y)?;
    let ex = f.embed(x.data());
    let ey = f.embed(y.data());
    if ex.len() != ey.len() || ex.is_empty() {
        return Err(Error::InvalidInput(format!(
            "extractor '{}' produced embeddings of lengths {} and {}",
            f.id(),
            ex.len(),
            ey.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut nx = 0.0f64;
    let mut ny = 0.0f64;
    for (a, b) in ex.iter().zip(ey.iter()) {
        let (a, b) = (*a as f64, *b as f64);
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity undefined for a zero embedding".into(),
        ));
    }
    Ok((dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0))
}

/// Fidelity of one reconstruction against its source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub ssim: f64,
    pub ms_ssim: f64,
    pub mse: f64,
    pub feat_dist: f64,
    pub cos_sim: f64,
}

impl FidelityReport {
    pub fn validate(&self) -> Result<()> {
        let bounded = |v: f64| (-1.0..=1.0).contains(&v);
        if !bounded(self.ssim) || !bounded(self.ms_ssim) || !bounded(self.cos_sim) {
            return Err(Error::InvalidInput(
                "similarity metrics must lie in [-1, 1]".into(),
            ));
        }
        if self.mse < 0.0 || self.feat_dist < 0.0 {
            return Err(Error::InvalidInput("distances must be >= 0".into()));
        }
        Ok(())
    }
}

/// All five fidelity metrics for one (source, reconstruction) pair.
pub fn evaluate_fidelity(
    x: &Volume,
    xhat: &Volume,
    f: &dyn FeatureExtractor<f32>,
    ms_scales: usize,
) -> Result<FidelityReport> {
    let report = FidelityReport {
        ssim: ssim3d(x, xhat)?,
        ms_ssim: ms_ssim3d(x, xhat, ms_scales)?,
        mse: mse(x, xhat)?,
        feat_dist: feature_distance(x, xhat, f)?,
        cos_sim: cosine_similarity(x, xhat, f)?,
    };
    report.validate()?;
    Ok(report)
}

/// Arithmetic mean of per-volume reports.
pub fn mean_fidelity(reports: &[FidelityReport]) -> Result<FidelityReport> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no fidelity reports to average".into()));
    }
    let n = reports.len() as f64;
    Ok(FidelityReport {
        ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
        ms_ssim: reports.iter().map(|r| r.ms_ssim).sum::<f64>() / n,
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        feat_dist: reports.iter().map(|r| r.feat_dist).sum::<f64>() / n,
        cos_sim: reports.iter().map(|r| r.cos_sim).sum::<f64>() / n,
    })
}

/// One subject's fidelity row in dataset-level tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeFidelity {
    pub subject_id: String,
    #[serde(flatten)]
    pub metrics: FidelityReport,
}

pub const FIDELITY_CSV_HEADER: &str = "subject_id,ssim,ms_ssim,mse,feat_dist,cos_sim";

pub fn fidelity_csv(rows: &[VolumeFidelity]) -> String {
    let mut out = String::from(FIDELITY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let m = &r.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.subject_id, m.ssim, m.ms_ssim, m.mse, m.feat_dist, m.cos_sim
        ));
    }
    out
}

pub fn save_fidelity_csv(path: impl AsRef<Path>, rows: &[VolumeFidelity]) -> Result<()> {
    std::fs::write(path.as_ref(), fidelity_csv(rows))
        .map_err(|e| Error::io(path.as_ref(), e))
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

/// Classification quality over one evaluation set. The confusion matrix is
/// indexed `[truth][predicted]`, so row sums equal class supports. Ratios
/// with zero denominators (a class absent from truth, or truth containing
/// only one class) are reported as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_classes: usize,
    pub accuracy: f64,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub support: Vec<u64>,
}

impl MetricsReport {
    /// Header cells for dataset-level CSV tables.
    pub fn csv_header(n_classes: usize) -> Vec<String> {
        let mut h = vec!["accuracy".to_string()];
        for c in 0..n_classes {
            h.push(format!("sensitivity_{c}"));
        }
        for c in 0..n_classes {
            h.push(format!("specificity_{c}"));
        }
        h.push("auc".to_string());
        h
    }

    /// Value cells aligned with [`MetricsReport::csv_header`].
    pub fn csv_cells(&self) -> Vec<String> {
        let mut cells = vec![self.accuracy.to_string()];
        cells.extend(self.sensitivity.iter().map(|v| v.to_string()));
        cells.extend(self.specificity.iter().map(|v| v.to_string()));
        cells.push(self.auc.map(|v| v.to_string()).unwrap_or_default());
        cells
    }
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    for &y in labels {
        if y >= n_classes {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {n_classes} classes"
            )));
        }
    }
    Ok(())
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class sensitivity/specificity, and the confusion matrix.
/// AUC is left unset; attach it from [`roc_auc`] or [`macro_ovr_auc`].
pub fn confusion_metrics(preds: &[usize], truth: &[usize], n_classes: usize) -> Result<MetricsReport> {
    if preds.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions vs {} truth labels",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    if n_classes < 2 {
        return Err(Error::InvalidInput("need at least two classes".into()));
    }
    check_labels(preds, n_classes)?;
    check_labels(truth, n_classes)?;

    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(truth.iter()) {
        confusion[t][p] += 1;
    }
    let total = preds.len() as u64;
    let correct: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();

    let support: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
    let mut sensitivity = Vec::with_capacity(n_classes);
    let mut specificity = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let tp = confusion[c][c];
        let fn_ = support[c] - tp;
        let fp: u64 = (0..n_classes).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
        let tn = total - tp - fn_ - fp;
        sensitivity.push(ratio(tp, tp + fn_));
        specificity.push(ratio(tn, tn + fp));
    }

    Ok(MetricsReport {
        n_classes,
        accuracy: correct as f64 / total as f64,
        sensitivity,
        specificity,
        auc: None,
        confusion,
        support,
    })
}

/// Binary ROC-AUC as the tie-aware rank statistic
/// P(score⁺ > score⁻) + ½·P(score⁺ = score⁻), computed from average ranks.
pub fn roc_auc(scores: &[f64], truth: &[usize]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores vs {} truth labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    check_labels(truth, 2)?;
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("scores must be finite".into()));
    }
    let n = scores.len();
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "roc-auc needs both classes present in truth".into(),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite"));

    // 1-based average ranks over tie groups
    let mut rank = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for t in i..=j {
            rank[order[t]] = avg;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = (0..n).filter(|&i| truth[i] == 1).map(|i| rank[i]).sum();
    Ok((rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Per-class one-vs-rest AUCs from per-class scores (one column per class).
pub fn one_vs_rest_aucs(scores: &Array2<f64>, truth: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    if scores.nrows() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} score rows vs {} truth labels",
            scores.nrows(),
            truth.len()
        )));
    }
    if scores.ncols() != n_classes {
        return Err(Error::InvalidInput(format!(
            "{} score columns vs {n_classes} classes",
            scores.ncols()
        )));
    }
    check_labels(truth, n_classes)?;
    let mut aucs = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let binary: Vec<usize> = truth.iter().map(|&t| usize::from(t == c)).collect();
        let col: Vec<f64> = scores.column(c).to_vec();
        let auc = roc_auc(&col, &binary).map_err(|e| {
            Error::InvalidInput(format!("one-vs-rest class {c}: {e}"))
        })?;
        aucs.push(auc);
    }
    Ok(aucs)
}

/// Macro average of the one-vs-rest AUCs.
pub fn macro_ovr_auc(scores: &Array2<f64>, truth: &[usize], n_classes: usize) -> Result<f64> {
    let aucs = one_vs_rest_aucs(scores, truth, n_classes)?;
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}
