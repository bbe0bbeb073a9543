//! Feature extractors for perceptual losses and embedding metrics.
//!
//! The default is a fixed, seeded, untrained convolutional pyramid — fully
//! deterministic and shippable, standing in where a pretrained 3D network
//! would otherwise provide embeddings. Externally supplied weights can be
//! loaded from a checkpoint through the same type.

use std::path::Path;

use ndarray::{Array3, Array4, ArrayD, Ix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::nn::layers::{silu, silu_backward, Conv3d};
use crate::nn::{Scalar, Tensors};

/// A multi-level embedding map with a hand-written input gradient, so
/// perceptual terms can backpropagate into the reconstruction.
pub trait FeatureExtractor<F: Scalar> {
    fn id(&self) -> &str;

    /// Feature maps, one per declared level, for a single-channel volume.
    fn levels(&self, x: &Array3<F>) -> Vec<ArrayD<F>>;

    /// ∂(levels)/∂x applied to per-level cotangents.
    fn backward(&self, x: &Array3<F>, level_grads: &[ArrayD<F>]) -> Array3<F>;

    /// All levels flattened and concatenated; the embedding used by
    /// distance/similarity metrics.
    fn embed(&self, x: &Array3<F>) -> Vec<F> {
        let mut out = Vec::new();
        for level in self.levels(x) {
            out.extend(level.iter().copied());
        }
        out
    }
}

/// Embedding = the volume itself. The reduction case every metric is
/// oracle-tested against.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl<F: Scalar> FeatureExtractor<F> for IdentityExtractor {
    fn id(&self) -> &str {
        "identity"
    }

    fn levels(&self, x: &Array3<F>) -> Vec<ArrayD<F>> {
        vec![x.clone().into_dyn()]
    }

    fn backward(&self, x: &Array3<F>, level_grads: &[ArrayD<F>]) -> Array3<F> {
        assert_eq!(level_grads.len(), 1);
        level_grads[0]
            .clone()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap_or_else(|_| panic!("identity gradient must match input rank"))
            .into_shape_with_order(x.raw_dim())
            .expect("identity gradient shape")
    }
}

/// Fixed seeded convolutional pyramid: per level a stride-2 3×3×3 convolution
/// followed by SiLU. Weights are frozen at construction.
pub struct ConvPyramid<F: Scalar> {
    convs: Vec<Conv3d>,
    params: Tensors<F>,
    id: String,
}

impl<F: Scalar> ConvPyramid<F> {
    /// `channels` gives the output width of each level; input is 1 channel.
    pub fn seeded(channels: &[usize], seed: u64) -> Self {
        assert!(!channels.is_empty(), "at least one pyramid level");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Tensors::new();
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c_out) in channels.iter().enumerate() {
            let conv = Conv3d::new(format!("pyr{i}"), c_in, c_out, 3, 2, 1);
            conv.init(&mut params, &mut rng);
            convs.push(conv);
            c_in = c_out;
        }
        ConvPyramid {
            convs,
            params,
            id: format!("conv_pyramid(seed={seed}, channels={channels:?})"),
        }
    }

    /// Desk default: three levels, (8, 16, 32) channels.
    pub fn default_seeded(seed: u64) -> Self {
        ConvPyramid::seeded(&[8, 16, 32], seed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()>
    where
        F: Scalar,
    {
        let meta = CheckpointMeta {
            kind: "feature_extractor".into(),
            config_json: serde_json::to_string(
                &self.convs.iter().map(|c| c.c_out).collect::<Vec<_>>(),
            )?,
            config_hash: String::new(),
            seed: 0,
            step: 0,
        };
        save_checkpoint(path, &meta, &self.params.cast())
    }

    /// Adapter for externally supplied (e.g. pretrained) pyramid weights.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (meta, tensors) = load_checkpoint(path)?;
        if meta.kind != "feature_extractor" {
            return Err(Error::Checkpoint(format!(
                "{}: kind {:?}, expected \"feature_extractor\"",
                path.display(),
                meta.kind
            )));
        }
        let channels: Vec<usize> = serde_json::from_str(&meta.config_json)
            .map_err(|e| Error::Checkpoint(format!("{}: bad channel list: {e}", path.display())))?;
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c_out) in channels.iter().enumerate() {
            let conv = Conv3d::new(format!("pyr{i}"), c_in, c_out, 3, 2, 1);
            if !tensors.contains(&conv.w_name()) {
                return Err(Error::Checkpoint(format!(
                    "{}: missing tensor {}",
                    path.display(),
                    conv.w_name()
                )));
            }
            convs.push(conv);
            c_in = c_out;
        }
        Ok(ConvPyramid {
            convs,
            params: tensors.cast(),
            id: format!("conv_pyramid(file={})", path.display()),
        })
    }

    fn forward_steps(&self, x: &Array3<F>) -> Vec<(Array4<F>, Array4<F>)> {
        // per level: (pre-activation, activated output)
        let mut steps = Vec::with_capacity(self.convs.len());
        let mut cur = x
            .clone()
            .into_shape_with_order((1, x.shape()[0], x.shape()[1], x.shape()[2]))
            .expect("channel axis");
        for conv in &self.convs {
            let pre = conv.forward(&self.params, &cur);
            let act = silu(&pre);
            steps.push((pre, act.clone()));
            cur = act;
        }
        steps
    }
}

impl<F: Scalar> FeatureExtractor<F> for ConvPyramid<F> {
    fn id(&self) -> &str {
        &self.id
    }

    fn levels(&self, x: &Array3<F>) -> Vec<ArrayD<F>> {
        self.forward_steps(x)
            .into_iter()
            .map(|(_, act)| act.into_dyn())
            .collect()
    }

    fn backward(&self, x: &Array3<F>, level_grads: &[ArrayD<F>]) -> Array3<F> {
        assert_eq!(level_grads.len(), self.convs.len(), "one cotangent per level");
        let steps = self.forward_steps(x);
        let mut scratch = Tensors::new(); // weight grads, discarded: weights are frozen
        let mut gx: Option<Array4<F>> = None;
        for i in (0..self.convs.len()).rev() {
            let (pre, _) = &steps[i];
            let mut g = level_grads[i]
                .clone()
                .into_dimensionality::<Ix4>()
                .unwrap_or_else(|_| panic!("level {i} gradient must be 4-d"));
            if let Some(upper) = gx.take() {
                ndarray::Zip::from(&mut g).and(&upper).for_each(|a, &b| *a = *a + b);
            }
            let g_pre = silu_backward(pre, &g);
            let below = if i == 0 {
                let xs = x.shape();
                let x4 = x
                    .clone()
                    .into_shape_with_order((1, xs[0], xs[1], xs[2]))
                    .expect("channel axis");
                self.convs[i].backward(&self.params, &x4, &g_pre, &mut scratch)
            } else {
                self.convs[i].backward(&self.params, &steps[i - 1].1, &g_pre, &mut scratch)
            };
            gx = Some(below);
        }
        let gx = gx.expect("at least one level");
        let shape = (x.shape()[0], x.shape()[1], x.shape()[2]);
        gx.into_shape_with_order(shape).expect("drop channel axis")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random3(seed: u64, edge: usize) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array3::zeros((edge, edge, edge));
        for v in a.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        a
    }

    #[test]
    fn identity_extractor_embeds_the_volume() {
        let x = random3(0, 4);
        let e = FeatureExtractor::<f64>::embed(&IdentityExtractor, &x);
        assert_eq!(e, x.iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn pyramid_is_seed_deterministic_with_halving_levels() {
        let x = random3(1, 8).mapv(|v| v as f32);
        let p1 = ConvPyramid::<f32>::seeded(&[4, 8], 3);
        let p2 = ConvPyramid::<f32>::seeded(&[4, 8], 3);
        let l1 = p1.levels(&x);
        let l2 = p2.levels(&x);
        assert_eq!(l1, l2);
        assert_eq!(l1[0].shape(), [4, 4, 4, 4]);
        assert_eq!(l1[1].shape(), [8, 2, 2, 2]);
        let p3 = ConvPyramid::<f32>::seeded(&[4, 8], 4);
        assert_ne!(p3.levels(&x), l1);
    }

    #[test]
    fn pyramid_backward_matches_finite_differences() {
        let x = random3(2, 6);
        let p = ConvPyramid::<f64>::seeded(&[2, 3], 5);
        let levels = p.levels(&x);
        // loss = Σ_levels Σ e⊙m for fixed random cotangents m
        let ms: Vec<ArrayD<f64>> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
                l.mapv(|_| rng.gen_range(-1.0..1.0))
            })
            .collect();
        let gx = p.backward(&x, &ms);
        let loss = |x: &Array3<f64>| -> f64 {
            p.levels(x)
                .iter()
                .zip(&ms)
                .map(|(l, m)| (l * m).sum())
                .sum()
        };
        let eps = 1e-6;
        for &idx in &[(0, 0, 0), (5, 5, 5), (2, 3, 4), (1, 0, 3)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!((gx[idx] - fd).abs() < 1e-7, "{idx:?}: {} vs {fd}", gx[idx]);
        }
    }

    #[test]
    fn pyramid_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pyr.ckpt");
        let p = ConvPyramid::<f32>::seeded(&[4, 8], 11);
        p.save(&path).unwrap();
        let q = ConvPyramid::<f32>::load(&path).unwrap();
        let x = random3(3, 8).mapv(|v| v as f32);
        assert_eq!(p.levels(&x), q.levels(&x));
    }
}
