//! Training objectives: the composite reconstruction loss (L1 + perceptual +
//! adversarial + KL with its closed form), and the classifier's blended
//! weighted cross-entropy + focal loss. Each objective comes in a scalar form
//! for reporting and a value+gradient form for the optimization loops.

use ndarray::{Array, Array2, Array3, Array4, Dimension};
use serde::{Deserialize, Serialize};

use crate::adversarial::{lsgan_losses_from_logits, PatchDiscriminator};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::latent::LatentDistribution;
use crate::nn::{s, Scalar, Tensors};
use crate::volume::Volume;

// ---------------------------------------------------------------------------
// Reconstruction terms
// ---------------------------------------------------------------------------

/// Mean absolute difference.
pub fn l1<F: Scalar, D: Dimension>(x: &Array<F, D>, xhat: &Array<F, D>) -> F {
    debug_assert_eq!(x.shape(), xhat.shape());
    let n = s::<F>(x.len() as f64);
    x.iter()
        .zip(xhat.iter())
        .map(|(&a, &b)| (a - b).abs())
        .fold(F::zero(), |a, b| a + b)
        / n
}

/// ∂ mean|x̂ − x| / ∂x̂ (zero on exact ties).
pub fn l1_backward<F: Scalar, D: Dimension>(x: &Array<F, D>, xhat: &Array<F, D>) -> Array<F, D> {
    let n = s::<F>(x.len() as f64);
    let mut g = xhat.clone();
    ndarray::Zip::from(&mut g).and(x).for_each(|v, &xv| {
        *v = if *v > xv {
            F::one() / n
        } else if *v < xv {
            -F::one() / n
        } else {
            F::zero()
        };
    });
    g
}

pub fn l1_recon(x: &Volume, xhat: &Volume) -> Result<f64> {
    x.check_same_shape(xhat)?;
    let n = x.num_voxels() as f64;
    let sum: f64 = x
        .data()
        .iter()
        .zip(xhat.data().iter())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(sum / n)
}

/// 0.5·Σ(μ² + e^lv − lv − 1), the closed-form divergence from a unit normal.
pub fn kl_sum<F: Scalar, D: Dimension>(mu: &Array<F, D>, log_var: &Array<F, D>) -> F {
    debug_assert_eq!(mu.shape(), log_var.shape());
    let half = s::<F>(0.5);
    mu.iter()
        .zip(log_var.iter())
        .map(|(&m, &lv)| half * (m * m + lv.exp() - lv - F::one()))
        .fold(F::zero(), |a, b| a + b)
}

/// (∂KL/∂μ, ∂KL/∂lv) = (μ, ½(e^lv − 1)).
pub fn kl_backward<F: Scalar, D: Dimension>(
    mu: &Array<F, D>,
    log_var: &Array<F, D>,
) -> (Array<F, D>, Array<F, D>) {
    let half = s::<F>(0.5);
    (mu.clone(), log_var.mapv(|lv| half * (lv.exp() - F::one())))
}

pub fn kl_divergence(d: &LatentDistribution) -> f64 {
    d.mu()
        .iter()
        .zip(d.log_var().iter())
        .map(|(&m, &lv)| {
            let (m, lv) = (m as f64, lv as f64);
            0.5 * (m * m + lv.exp() - lv - 1.0)
        })
        .sum()
}

/// Mean over levels of the mean squared embedding difference.
pub fn perceptual<F: Scalar>(
    x: &Array3<F>,
    xhat: &Array3<F>,
    f: &dyn FeatureExtractor<F>,
) -> F {
    let ex = f.levels(x);
    let exh = f.levels(xhat);
    debug_assert_eq!(ex.len(), exh.len());
    let n_levels = s::<F>(ex.len() as f64);
    let mut total = F::zero();
    for (a, b) in ex.iter().zip(exh.iter()) {
        let n = s::<F>(a.len() as f64);
        let mse = a
            .iter()
            .zip(b.iter())
            .map(|(&u, &v)| (u - v) * (u - v))
            .fold(F::zero(), |acc, t| acc + t)
            / n;
        total = total + mse;
    }
    total / n_levels
}

/// Perceptual value and its gradient w.r.t. the reconstruction.
pub fn perceptual_grad<F: Scalar>(
    x: &Array3<F>,
    xhat: &Array3<F>,
    f: &dyn FeatureExtractor<F>,
) -> (F, Array3<F>) {
    let ex = f.levels(x);
    let exh = f.levels(xhat);
    let n_levels = s::<F>(ex.len() as f64);
    let mut total = F::zero();
    let mut cotangents = Vec::with_capacity(ex.len());
    for (a, b) in ex.iter().zip(exh.iter()) {
        let n = s::<F>(a.len() as f64);
        let mse = a
            .iter()
            .zip(b.iter())
            .map(|(&u, &v)| (u - v) * (u - v))
            .fold(F::zero(), |acc, t| acc + t)
            / n;
        total = total + mse;
        let scale = s::<F>(2.0) / (n * n_levels);
        let mut g = b.clone();
        ndarray::Zip::from(&mut g).and(a).for_each(|gv, &av| {
            *gv = (*gv - av) * scale;
        });
        cotangents.push(g);
    }
    (total / n_levels, f.backward(xhat, &cotangents))
}

pub fn perceptual_loss<F: Scalar>(
    x: &Volume,
    xhat: &Volume,
    f: &dyn FeatureExtractor<F>,
) -> Result<f64> {
    x.check_same_shape(xhat)?;
    let xa = x.data().mapv(|v| F::from_f32(v));
    let xb = xhat.data().mapv(|v| F::from_f32(v));
    Ok(perceptual(&xa, &xb, f).to_f64())
}

/// (generator loss, discriminator loss) for a (real, reconstruction) pair
/// under the least-squares patch objective.
pub fn adversarial_losses(
    x: &Volume,
    xhat: &Volume,
    disc: &PatchDiscriminator,
    disc_params: &Tensors<f32>,
) -> Result<(f64, f64)> {
    x.check_same_shape(xhat)?;
    let (h, w, d) = x.shape();
    let to4 = |v: &Volume| -> Array4<f32> {
        v.data()
            .clone()
            .into_shape_with_order((1, h, w, d))
            .expect("channel axis")
    };
    let d_real = disc.forward(disc_params, &to4(x));
    let d_fake = disc.forward(disc_params, &to4(xhat));
    let (gen, dl) = lsgan_losses_from_logits(&d_real, &d_fake);
    Ok((gen as f64, dl as f64))
}

// ---------------------------------------------------------------------------
// Composite objective
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_perc: f64,
    pub lambda_adv: f64,
    pub lambda_kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_perc: 2e-3,
            lambda_adv: 5e-3,
            lambda_kl: 1e-8,
        }
    }
}

impl From<&crate::config::ModelConfig> for LossWeights {
    fn from(cfg: &crate::config::ModelConfig) -> Self {
        LossWeights {
            lambda_perc: cfg.lambda_perc,
            lambda_adv: cfg.lambda_adv,
            lambda_kl: cfg.lambda_kl,
        }
    }
}

/// Per-step loss record. Perceptual and adversarial terms are present only
/// when their weights are nonzero, so ablation histories omit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub perc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adv_gen: Option<f64>,
    pub kl: f64,
    pub total: f64,
    pub weights: LossWeights,
}

impl LossBreakdown {
    pub fn compose(
        rec: f64,
        perc: Option<f64>,
        adv_gen: Option<f64>,
        kl: f64,
        weights: LossWeights,
    ) -> Self {
        let total = rec
            + weights.lambda_perc * perc.unwrap_or(0.0)
            + weights.lambda_adv * adv_gen.unwrap_or(0.0)
            + weights.lambda_kl * kl;
        LossBreakdown {
            rec,
            perc,
            adv_gen,
            kl,
            total,
            weights,
        }
    }

    /// total = rec + λ_perc·perc + λ_adv·adv + λ_KL·kl within relative 1e−9.
    pub fn is_consistent(&self) -> bool {
        let expect = self.rec
            + self.weights.lambda_perc * self.perc.unwrap_or(0.0)
            + self.weights.lambda_adv * self.adv_gen.unwrap_or(0.0)
            + self.weights.lambda_kl * self.kl;
        (self.total - expect).abs() <= 1e-9 * expect.abs().max(1.0)
    }
}

/// Full composite objective. The discriminator and feature extractor are
/// consulted only when their weights are nonzero; omitting one whose weight
/// is positive is an error rather than a silent zero.
pub fn vae_total_loss(
    x: &Volume,
    xhat: &Volume,
    d: &LatentDistribution,
    disc: Option<(&PatchDiscriminator, &Tensors<f32>)>,
    f: Option<&dyn FeatureExtractor<f32>>,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let rec = l1_recon(x, xhat)?;
    let kl = kl_divergence(d);
    let perc = if weights.lambda_perc > 0.0 {
        let f = f.ok_or_else(|| {
            Error::InvalidInput("lambda_perc > 0 requires a feature extractor".into())
        })?;
        Some(perceptual_loss(x, xhat, f)?)
    } else {
        None
    };
    let adv_gen = if weights.lambda_adv > 0.0 {
        let (disc, ps) = disc.ok_or_else(|| {
            Error::InvalidInput("lambda_adv > 0 requires a discriminator".into())
        })?;
        Some(adversarial_losses(x, xhat, disc, ps)?.0)
    } else {
        None
    };
    Ok(LossBreakdown::compose(rec, perc, adv_gen, kl, weights))
}

// ---------------------------------------------------------------------------
// Classification objectives
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLossConfig {
    pub gamma: f64,
    pub mix: (f64, f64),
    pub class_weights: Vec<f64>,
}

impl ClassLossConfig {
    pub fn new(class_weights: Vec<f64>) -> Self {
        ClassLossConfig {
            gamma: 2.0,
            mix: (0.7, 0.3),
            class_weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::InvalidInput("gamma must be finite and >= 0".into()));
        }
        if ((self.mix.0 + self.mix.1) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("mix components must sum to 1".into()));
        }
        if self.class_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("class weights must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut p = logits.clone();
    for mut row in p.outer_iter_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    p
}

fn check_labels<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let k = logits.ncols();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

fn ln_clamped<F: Scalar>(p: F) -> F {
    p.max(s::<F>(1e-300)).ln()
}

/// Weighted cross-entropy over a batch: Σᵢ w_{yᵢ}·(−ln p_{yᵢ}) / Σᵢ w_{yᵢ}.
/// Normalizing by the batch weight sum keeps the loss scale independent of
/// the class mix, so the blend with the focal term behaves as configured.
pub fn weighted_ce_batch<F: Scalar>(
    logits: &Array2<F>,
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(F, Array2<F>)> {
    check_labels(logits, labels)?;
    if class_weights.len() != logits.ncols() {
        return Err(Error::InvalidInput(format!(
            "{} class weights for {} classes",
            class_weights.len(),
            logits.ncols()
        )));
    }
    if class_weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidInput("class weights must be positive".into()));
    }
    let p = softmax_rows(logits);
    let w_sum: f64 = labels.iter().map(|&y| class_weights[y]).sum();
    let w_sum_f = s::<F>(w_sum);

    let mut loss = F::zero();
    let mut grad = p.clone();
    for (i, &y) in labels.iter().enumerate() {
        let w = s::<F>(class_weights[y]);
        loss = loss - w * ln_clamped(p[[i, y]]);
        let mut row = grad.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            let delta = if j == y { F::one() } else { F::zero() };
            *v = w * (*v - delta) / w_sum_f;
        }
    }
    Ok((loss / w_sum_f, grad))
}

/// Focal loss over a batch: mean of −(1−p_y)^γ·ln p_y.
pub fn focal_loss_batch<F: Scalar>(
    logits: &Array2<F>,
    labels: &[usize],
    gamma: f64,
) -> Result<(F, Array2<F>)> {
    check_labels(logits, labels)?;
    if gamma < 0.0 {
        return Err(Error::InvalidInput("gamma must be >= 0".into()));
    }
    let p = softmax_rows(logits);
    let n = s::<F>(labels.len() as f64);
    let g = s::<F>(gamma);

    let mut loss = F::zero();
    let mut grad = Array2::<F>::zeros(logits.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        let lo = s::<F>(1e-12);
        let q = p[[i, y]].max(lo).min(F::one() - lo);
        let one_minus = F::one() - q;
        loss = loss - one_minus.powf(g) * ln_clamped(q);
        // d/dq of −(1−q)^γ·ln q
        let dq = if gamma == 0.0 {
            -F::one() / q
        } else {
            g * one_minus.powf(g - F::one()) * ln_clamped(q) - one_minus.powf(g) / q
        };
        for j in 0..logits.ncols() {
            let delta = if j == y { F::one() } else { F::zero() };
            grad[[i, j]] = dq * q * (delta - p[[i, j]]) / n;
        }
    }
    Ok((loss / n, grad))
}

/// mix.0·weighted-CE + mix.1·focal.
pub fn classifier_loss_batch<F: Scalar>(
    logits: &Array2<F>,
    labels: &[usize],
    cfg: &ClassLossConfig,
) -> Result<(F, Array2<F>)> {
    cfg.validate()?;
    let (wce, g_wce) = weighted_ce_batch(logits, labels, &cfg.class_weights)?;
    let (foc, g_foc) = focal_loss_batch(logits, labels, cfg.gamma)?;
    let (a, b) = (s::<F>(cfg.mix.0), s::<F>(cfg.mix.1));
    let mut grad = g_wce;
    ndarray::Zip::from(&mut grad).and(&g_foc).for_each(|u, &v| {
        *u = a * *u + b * v;
    });
    Ok((a * wce + b * foc, grad))
}

fn one_row(logits: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, logits.len()), logits.to_vec()).expect("row shape")
}

pub fn weighted_ce(logits: &[f64], label: usize, class_weights: &[f64]) -> Result<f64> {
    weighted_ce_batch(&one_row(logits), &[label], class_weights).map(|(l, _)| l)
}

pub fn focal_loss(logits: &[f64], label: usize, gamma: f64) -> Result<f64> {
    focal_loss_batch(&one_row(logits), &[label], gamma).map(|(l, _)| l)
}

pub fn classifier_total_loss(logits: &[f64], label: usize, cfg: &ClassLossConfig) -> Result<f64> {
    classifier_loss_batch(&one_row(logits), &[label], cfg).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{ConvPyramid, IdentityExtractor};
    use ndarray::{arr2, Array3, Array4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn vol(data: Array3<f32>) -> Volume {
        Volume::new(data).unwrap()
    }

    fn random3(seed: u64, edge: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array3::zeros((edge, edge, edge));
        for v in a.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        a
    }

    #[test]
    fn l1_oracles() {
        let x = vol(Array3::zeros((4, 4, 4)));
        assert_eq!(l1_recon(&x, &x).unwrap(), 0.0);
        let half = vol(Array3::from_elem((4, 4, 4), 0.5));
        assert_eq!(l1_recon(&x, &half).unwrap(), 0.5);

        // brute-force elementwise oracle on a random pair
        let a = random3(1, 4).mapv(|v| v as f32);
        let b = random3(2, 4).mapv(|v| v as f32);
        let mut acc = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    acc += (a[[i, j, k]] as f64 - b[[i, j, k]] as f64).abs();
                }
            }
        }
        let got = l1_recon(&vol(a), &vol(b)).unwrap();
        assert!((got - acc / 64.0).abs() < 1e-12);
    }

    #[test]
    fn l1_shape_mismatch_rejected() {
        let x = vol(Array3::zeros((4, 4, 4)));
        let y = vol(Array3::zeros((4, 4, 5)));
        assert!(l1_recon(&x, &y).is_err());
    }

    #[test]
    fn l1_gradient_matches_finite_differences() {
        let x = random3(3, 3);
        let xhat = random3(4, 3);
        let g = l1_backward(&x, &xhat);
        let eps = 1e-7;
        for &idx in &[(0, 0, 0), (2, 2, 2), (1, 0, 2)] {
            let mut p = xhat.clone();
            p[idx] += eps;
            let mut m = xhat.clone();
            m[idx] -= eps;
            let fd = (l1(&x, &p) - l1(&x, &m)) / (2.0 * eps);
            assert!((g[idx] - fd).abs() < 1e-6, "{idx:?}");
        }
    }

    #[test]
    fn kl_oracles() {
        use ndarray::Array4;
        let zero = Array4::zeros((1, 1, 1, 1));
        let d = LatentDistribution::new(zero.clone(), zero.clone()).unwrap();
        assert_eq!(kl_divergence(&d), 0.0);

        let d = LatentDistribution::new(Array4::from_elem((1, 1, 1, 1), 1.0), zero.clone()).unwrap();
        assert!((kl_divergence(&d) - 0.5).abs() < 1e-9);

        let d =
            LatentDistribution::new(zero, Array4::from_elem((1, 1, 1, 1), -2.0)).unwrap();
        let expect = 0.5 * ((-2.0f64).exp() + 2.0 - 1.0);
        assert!((kl_divergence(&d) - expect).abs() < 1e-7, "{}", kl_divergence(&d));
        assert!((expect - 0.5677).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_only_at_origin(
            mu in proptest::collection::vec(-3.0f32..3.0, 8),
            lv in proptest::collection::vec(-3.0f32..3.0, 8),
        ) {
            let mu = Array4::from_shape_vec((2,2,2,1), mu).unwrap();
            let lv = Array4::from_shape_vec((2,2,2,1), lv).unwrap();
            let d = LatentDistribution::new(mu.clone(), lv.clone()).unwrap();
            let kl = kl_divergence(&d);
            prop_assert!(kl >= 0.0);
            let at_origin = mu.iter().all(|&v| v == 0.0) && lv.iter().all(|&v| v == 0.0);
            if !at_origin {
                prop_assert!(kl > 0.0);
            }
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let mu = random3(5, 2);
        let lv = random3(6, 2).mapv(|v| v - 0.5);
        let (gmu, glv) = kl_backward(&mu, &lv);
        let eps = 1e-6;
        for &idx in &[(0, 0, 0), (1, 1, 1)] {
            let mut p = mu.clone();
            p[idx] += eps;
            let mut m = mu.clone();
            m[idx] -= eps;
            let fd = (kl_sum(&p, &lv) - kl_sum(&m, &lv)) / (2.0 * eps);
            assert!((gmu[idx] - fd).abs() < 1e-6);

            let mut p = lv.clone();
            p[idx] += eps;
            let mut m = lv.clone();
            m[idx] -= eps;
            let fd = (kl_sum(&mu, &p) - kl_sum(&mu, &m)) / (2.0 * eps);
            assert!((glv[idx] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn perceptual_identity_extractor_reduces_to_mse() {
        let a = random3(7, 4);
        let b = random3(8, 4);
        let got = perceptual(&a, &b, &IdentityExtractor);
        let mse: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(&u, &v)| (u - v) * (u - v))
            .sum::<f64>()
            / 64.0;
        assert!((got - mse).abs() < 1e-12);
        assert_eq!(perceptual(&a, &a, &IdentityExtractor), 0.0);
    }

    #[test]
    fn perceptual_pyramid_is_reproducible() {
        let a = vol(random3(9, 8).mapv(|v| v as f32));
        let b = vol(random3(10, 8).mapv(|v| v as f32));
        let f1 = ConvPyramid::<f32>::seeded(&[4, 8], 0);
        let f2 = ConvPyramid::<f32>::seeded(&[4, 8], 0);
        let v1 = perceptual_loss(&a, &b, &f1).unwrap();
        let v2 = perceptual_loss(&a, &b, &f2).unwrap();
        assert_eq!(v1, v2);
        assert!(v1 > 0.0);
    }

    #[test]
    fn perceptual_gradient_matches_finite_differences() {
        let x = random3(11, 6);
        let xhat = random3(12, 6);
        let pyr = ConvPyramid::<f64>::seeded(&[2, 3], 1);
        let extractors: Vec<&dyn FeatureExtractor<f64>> = vec![&IdentityExtractor, &pyr];
        for f in extractors {
            let (_, g) = perceptual_grad(&x, &xhat, f);
            let eps = 1e-6;
            for &idx in &[(0, 0, 0), (5, 5, 5), (2, 3, 1)] {
                let mut p = xhat.clone();
                p[idx] += eps;
                let mut m = xhat.clone();
                m[idx] -= eps;
                let fd = (perceptual(&x, &p, f) - perceptual(&x, &m, f)) / (2.0 * eps);
                assert!((g[idx] - fd).abs() < 1e-7, "{}: {idx:?}", f.id());
            }
        }
    }

    #[test]
    fn composite_loss_arithmetic() {
        let w = LossWeights::default();
        let b = LossBreakdown::compose(1.0, Some(1.0), Some(1.0), 1.0, w);
        let expect = 1.0 + 2e-3 + 5e-3 + 1e-8;
        assert!((b.total - expect).abs() < 1e-15);
        assert!(b.is_consistent());

        let zero = LossBreakdown::compose(0.0, Some(0.0), Some(0.0), 0.0, w);
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn composite_loss_with_zero_adv_ignores_discriminator() {
        let x = vol(random3(13, 8).mapv(|v| v as f32));
        let xhat = vol(random3(14, 8).mapv(|v| v as f32));
        let d = LatentDistribution::new(
            Array4::from_elem((1, 1, 1, 3), 0.3),
            Array4::zeros((1, 1, 1, 3)),
        )
        .unwrap();
        let w = LossWeights {
            lambda_adv: 0.0,
            lambda_perc: 0.0,
            lambda_kl: 1e-8,
        };
        let b = vae_total_loss(&x, &xhat, &d, None, None, w).unwrap();
        assert!(b.perc.is_none() && b.adv_gen.is_none());
        assert!(b.is_consistent());
        // weight set but component missing → hard error, not silent zero
        let w_bad = LossWeights {
            lambda_adv: 5e-3,
            ..w
        };
        assert!(vae_total_loss(&x, &xhat, &d, None, None, w_bad).is_err());
    }

    #[test]
    fn adversarial_wrapper_on_rigged_discriminator() {
        let disc = PatchDiscriminator::new(&[4, 8]);
        let mut ps: Tensors<f32> = disc.init_params(0);
        ps.fill_zero();
        ps.get_mut("disc.out.b").fill(0.5);
        let x = vol(random3(15, 12).mapv(|v| v as f32));
        let xhat = vol(random3(16, 12).mapv(|v| v as f32));
        let (gen, dl) = adversarial_losses(&x, &xhat, &disc, &ps).unwrap();
        assert!((gen - 0.25).abs() < 1e-6);
        assert!((dl - 0.25).abs() < 1e-6);
    }

    #[test]
    fn weighted_ce_oracles() {
        // two classes, equal logits ⇒ p = 0.5; weight 2 on the true class
        let loss = weighted_ce(&[0.0, 0.0], 0, &[2.0, 1.0]).unwrap();
        assert!((loss - LN2).abs() < 1e-12, "{loss}");

        // uniform weights reduce to plain cross-entropy
        let logits = [0.2, -0.4, 1.1];
        let uni = weighted_ce(&logits, 2, &[1.0, 1.0, 1.0]).unwrap();
        let p = {
            let exps: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps[2] / sum
        };
        assert!((uni - (-p.ln())).abs() < 1e-12);

        // p_true → 1 ⇒ loss → 0
        let sure = weighted_ce(&[50.0, 0.0], 0, &[3.0, 1.0]).unwrap();
        assert!(sure < 1e-9);
    }

    #[test]
    fn weighted_ce_batch_normalizes_by_weight_sum() {
        // batch of two; weights (2, 1); losses w_y·(−ln p_y) summed / (2+1)
        let logits = arr2(&[[0.0, 0.0], [0.0, 0.0]]);
        let (loss, _) = weighted_ce_batch(&logits, &[0, 1], &[2.0, 1.0]).unwrap();
        let expect = (2.0 * LN2 + 1.0 * LN2) / 3.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn label_and_weight_validation() {
        assert!(weighted_ce(&[0.0, 0.0], 2, &[1.0, 1.0]).is_err());
        assert!(weighted_ce(&[0.0, 0.0], 0, &[1.0]).is_err());
        assert!(weighted_ce(&[0.0, 0.0], 0, &[0.0, 1.0]).is_err());
        assert!(focal_loss(&[0.0, 0.0], 5, 2.0).is_err());
    }

    #[test]
    fn focal_oracles() {
        // p = 0.5, γ = 2 ⇒ 0.25·ln 2
        let loss = focal_loss(&[0.0, 0.0], 1, 2.0).unwrap();
        assert!((loss - 0.25 * LN2).abs() < 1e-9, "{loss}");
        assert!((loss - 0.1733).abs() < 1e-4);

        // p → 1 ⇒ 0
        assert!(focal_loss(&[40.0, 0.0], 0, 2.0).unwrap() < 1e-9);

        // γ = 0 reduces to cross-entropy
        let logits = [0.3, -0.2, 0.9];
        let f0 = focal_loss(&logits, 1, 0.0).unwrap();
        let ce = weighted_ce(&logits, 1, &[1.0, 1.0, 1.0]).unwrap();
        assert!((f0 - ce).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn focal_never_exceeds_cross_entropy(
            logits in proptest::collection::vec(-4.0f64..4.0, 3),
            label in 0usize..3,
            gamma in 0.0f64..5.0,
        ) {
            let f = focal_loss(&logits, label, gamma).unwrap();
            let ce = weighted_ce(&logits, label, &[1.0, 1.0, 1.0]).unwrap();
            prop_assert!(f <= ce + 1e-12);
        }
    }

    #[test]
    fn classifier_total_oracles() {
        let cfg = ClassLossConfig::new(vec![1.0, 1.0]);
        let loss = classifier_total_loss(&[0.0, 0.0], 0, &cfg).unwrap();
        let expect = 0.7 * LN2 + 0.3 * 0.25 * LN2;
        assert!((loss - expect).abs() < 1e-12, "{loss}");
        assert!((loss - 0.5372).abs() < 1e-4);

        // p_true → 1 ⇒ 0
        let sure = classifier_total_loss(&[60.0, 0.0], 0, &cfg).unwrap();
        assert!(sure < 1e-9);

        // mix (1, 0) reduces to the weighted-CE term
        let pure = ClassLossConfig {
            mix: (1.0, 0.0),
            ..ClassLossConfig::new(vec![2.0, 1.0])
        };
        let logits = [0.4, -0.7];
        let a = classifier_total_loss(&logits, 0, &pure).unwrap();
        let b = weighted_ce(&logits, 0, &[2.0, 1.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn classifier_loss_is_exactly_linear_in_components() {
        let logits = arr2(&[[0.5, -0.3, 0.1], [1.0, 0.2, -0.4]]);
        let labels = [2usize, 0usize];
        let cfg = ClassLossConfig::new(vec![0.6, 2.5, 1.2]);
        let (total, _) = classifier_loss_batch(&logits, &labels, &cfg).unwrap();
        let (wce, _) = weighted_ce_batch(&logits, &labels, &cfg.class_weights).unwrap();
        let (foc, _) = focal_loss_batch(&logits, &labels, cfg.gamma).unwrap();
        assert_eq!(total, 0.7 * wce + 0.3 * foc);
    }

    #[test]
    fn classification_gradients_match_finite_differences() {
        let logits: Array2<f64> =
            arr2(&[[0.5, -0.3, 0.1], [1.0, 0.2, -0.4], [-0.2, 0.8, 0.3]]);
        let labels = [2usize, 0, 1];
        let cfg = ClassLossConfig::new(vec![0.6, 2.5, 1.2]);
        let (_, grad) = classifier_loss_batch(&logits, &labels, &cfg).unwrap();
        let eps = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut p = logits.clone();
                p[[i, j]] += eps;
                let mut m = logits.clone();
                m[[i, j]] -= eps;
                let fp = classifier_loss_batch(&p, &labels, &cfg).unwrap().0;
                let fm = classifier_loss_batch(&m, &labels, &cfg).unwrap().0;
                let fd = (fp - fm) / (2.0 * eps);
                assert!(
                    (grad[[i, j]] - fd).abs() < 1e-8,
                    "({i},{j}): {} vs {fd}",
                    grad[[i, j]]
                );
            }
        }
    }

    #[test]
    fn loss_config_validation() {
        assert!(ClassLossConfig::new(vec![1.0]).validate().is_ok());
        let bad_mix = ClassLossConfig {
            mix: (0.6, 0.3),
            ..ClassLossConfig::new(vec![1.0])
        };
        assert!(bad_mix.validate().is_err());
        let bad_gamma = ClassLossConfig {
            gamma: -1.0,
            ..ClassLossConfig::new(vec![1.0])
        };
        assert!(bad_gamma.validate().is_err());
        assert!(ClassLossConfig::new(vec![0.0]).validate().is_err());
    }
}
