//! Residual fully-connected classification head over flattened latents:
//! a 256-unit stem, hidden layers (256, 128, 64) with batch normalization,
//! rectified activations, dropout (0.4, 0.4, 0.3, 0.2), and projected
//! residual links hidden1→hidden2 and hidden2→hidden3.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::losses::softmax_rows;
use crate::nn::layers::{relu, relu_backward, BatchNorm1d, BnCache, Dropout, Linear};
use crate::nn::{Scalar, Tensors};

pub const CLASSIFIER_CHECKPOINT_KIND: &str = "classifier";

const STEM_WIDTH: usize = 256;
const HIDDEN_WIDTHS: [usize; 3] = [256, 128, 64];
const DROPOUT_RATES: [f64; 4] = [0.4, 0.4, 0.3, 0.2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub n_classes: usize,
    /// Permits n_classes > 3; such tasks are outside the supported pair of
    /// binary and 3-class heads and are surfaced by callers as an extension.
    #[serde(default)]
    pub allow_extended_classes: bool,
}

impl ClassifierConfig {
    pub fn new(input_dim: usize, n_classes: usize) -> Self {
        ClassifierConfig {
            input_dim,
            n_classes,
            allow_extended_classes: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("classifier input_dim must be >= 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be >= 2, got {}",
                self.n_classes
            )));
        }
        if self.n_classes > 3 && !self.allow_extended_classes {
            return Err(Error::Config(format!(
                "n_classes = {} exceeds the supported 2/3; set allow_extended_classes to opt in",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        format!("{:x}", h.finalize())
    }
}

// ---------------------------------------------------------------------------
// Layer blocks
// ---------------------------------------------------------------------------

/// One pre-output layer: linear → batch norm → ReLU → dropout, optionally
/// wrapped by a projected residual path from the block input.
struct Block {
    lin: Linear,
    bn: BatchNorm1d,
    drop: Dropout,
    proj: Option<Linear>,
}

struct BlockCache<F> {
    lin_in: Array2<F>,
    bn: BnCache<F>,
    bn_out: Array2<F>,
    mask: Array2<F>,
}

impl Block {
    fn new(name: &str, in_dim: usize, out_dim: usize, rate: f64, residual: bool) -> Self {
        Block {
            lin: Linear::new(name.to_string(), in_dim, out_dim),
            bn: BatchNorm1d::new(format!("{name}.bn"), out_dim),
            drop: Dropout::new(rate),
            proj: residual.then(|| Linear::new(format!("{name}.proj"), in_dim, out_dim)),
        }
    }

    fn init<F: Scalar>(&self, ps: &mut Tensors<F>, rng: &mut ChaCha8Rng) {
        self.lin.init(ps, rng);
        self.bn.init(ps);
        if let Some(p) = &self.proj {
            p.init(ps, rng);
        }
    }

    fn forward_train<F: Scalar>(
        &self,
        ps: &mut Tensors<F>,
        x: Array2<F>,
        rng: &mut ChaCha8Rng,
    ) -> (Array2<F>, BlockCache<F>) {
        let a = self.lin.forward(ps, &x);
        let (bn_out, bn) = self.bn.forward_train(ps, &a);
        let r = relu(&bn_out);
        let (dropped, mask) = self.drop.forward_train(rng, &r);
        let y = match &self.proj {
            Some(p) => p.forward(ps, &x) + &dropped,
            None => dropped,
        };
        (
            y,
            BlockCache {
                lin_in: x,
                bn,
                bn_out,
                mask,
            },
        )
    }

    fn forward_eval<F: Scalar>(&self, ps: &Tensors<F>, x: &Array2<F>) -> Array2<F> {
        let a = self.lin.forward(ps, x);
        let r = relu(&self.bn.forward_eval(ps, &a));
        match &self.proj {
            Some(p) => p.forward(ps, x) + &r,
            None => r,
        }
    }

    fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        cache: &BlockCache<F>,
        gy: &Array2<F>,
        grads: &mut Tensors<F>,
    ) -> Array2<F> {
        let g_r = self.drop.backward(&cache.mask, gy);
        let g_bn_out = relu_backward(&cache.bn_out, &g_r);
        let g_a = self.bn.backward(ps, &cache.bn, &g_bn_out, grads);
        let g_x = self.lin.backward(ps, &cache.lin_in, &g_a, grads);
        match &self.proj {
            Some(p) => g_x + p.backward(ps, &cache.lin_in, gy, grads),
            None => g_x,
        }
    }
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

pub struct ClassifierNet {
    pub cfg: ClassifierConfig,
    blocks: [Block; 4],
    out: Linear,
}

pub struct ClassifierCache<F> {
    blocks: Vec<BlockCache<F>>,
    out_in: Array2<F>,
}

impl ClassifierNet {
    pub fn new(cfg: ClassifierConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = [
            Block::new("clf.stem", cfg.input_dim, STEM_WIDTH, DROPOUT_RATES[0], false),
            Block::new("clf.h1", STEM_WIDTH, HIDDEN_WIDTHS[0], DROPOUT_RATES[1], false),
            Block::new("clf.h2", HIDDEN_WIDTHS[0], HIDDEN_WIDTHS[1], DROPOUT_RATES[2], true),
            Block::new("clf.h3", HIDDEN_WIDTHS[1], HIDDEN_WIDTHS[2], DROPOUT_RATES[3], true),
        ];
        let out = Linear::new("clf.out", HIDDEN_WIDTHS[2], cfg.n_classes);
        Ok(ClassifierNet { cfg, blocks, out })
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> Tensors<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = Tensors::new();
        for b in &self.blocks {
            b.init(&mut ps, &mut rng);
        }
        self.out.init(&mut ps, &mut rng);
        ps
    }

    fn check_width<F: Scalar>(&self, x: &Array2<F>) -> Result<()> {
        if x.ncols() != self.cfg.input_dim {
            return Err(Error::shape_mismatch(
                &[self.cfg.input_dim],
                &[x.ncols()],
            ));
        }
        Ok(())
    }

    /// Train-mode logits. Batch statistics normalize (and update the running
    /// buffers inside `ps`); dropout draws from the caller's seeded stream.
    pub fn forward_train<F: Scalar>(
        &self,
        ps: &mut Tensors<F>,
        x: &Array2<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<F>, ClassifierCache<F>)> {
        self.check_width(x)?;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(4);
        for b in &self.blocks {
            let (y, cache) = b.forward_train(ps, h, rng);
            h = y;
            caches.push(cache);
        }
        let logits = self.out.forward(ps, &h);
        Ok((
            logits,
            ClassifierCache {
                blocks: caches,
                out_in: h,
            },
        ))
    }

    /// Eval-mode logits: running statistics, no dropout — a deterministic
    /// pure function of (parameters, input).
    pub fn forward_eval<F: Scalar>(&self, ps: &Tensors<F>, x: &Array2<F>) -> Result<Array2<F>> {
        self.check_width(x)?;
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward_eval(ps, &h);
        }
        Ok(self.out.forward(ps, &h))
    }

    /// Eval-mode activations after each block — structural-audit hook.
    pub fn trace_eval<F: Scalar>(&self, ps: &Tensors<F>, x: &Array2<F>) -> Result<Vec<Array2<F>>> {
        self.check_width(x)?;
        let mut h = x.clone();
        let mut trace = Vec::with_capacity(4);
        for b in &self.blocks {
            h = b.forward_eval(ps, &h);
            trace.push(h.clone());
        }
        Ok(trace)
    }

    pub fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        cache: &ClassifierCache<F>,
        g_logits: &Array2<F>,
        grads: &mut Tensors<F>,
    ) -> Array2<F> {
        let mut g = self.out.backward(ps, &cache.out_in, g_logits, grads);
        for (b, c) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            g = b.backward(ps, c, &g, grads);
        }
        g
    }
}

// ---------------------------------------------------------------------------
// Parameter bundle
// ---------------------------------------------------------------------------

pub struct Classifier {
    net: ClassifierNet,
    pub params: Tensors<f32>,
    pub seed: u64,
    pub step: u64,
}

pub fn build_classifier(input_dim: usize, n_classes: usize, seed: u64) -> Result<Classifier> {
    Classifier::build(ClassifierConfig::new(input_dim, n_classes), seed)
}

impl Classifier {
    pub fn build(cfg: ClassifierConfig, seed: u64) -> Result<Self> {
        let net = ClassifierNet::new(cfg)?;
        let params = net.init_params::<f32>(seed);
        Ok(Classifier {
            net,
            params,
            seed,
            step: 0,
        })
    }

    pub fn net(&self) -> &ClassifierNet {
        &self.net
    }

    pub fn cfg(&self) -> &ClassifierConfig {
        &self.net.cfg
    }

    /// Eval-mode per-class probabilities for one flattened latent.
    pub fn predict_proba(&self, z_flat: &[f32]) -> Result<Vec<f32>> {
        if z_flat.len() != self.net.cfg.input_dim {
            return Err(Error::shape_mismatch(
                &[self.net.cfg.input_dim],
                &[z_flat.len()],
            ));
        }
        let x = Array2::from_shape_vec((1, z_flat.len()), z_flat.to_vec()).expect("row shape");
        let logits = self.net.forward_eval(&self.params, &x)?;
        Ok(softmax_rows(&logits).row(0).to_vec())
    }

    /// Eval-mode probabilities for a batch, one row per sample.
    pub fn predict_batch(&self, x: &Array2<f32>) -> Result<Array2<f32>> {
        let logits = self.net.forward_eval(&self.params, x)?;
        Ok(softmax_rows(&logits))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = CheckpointMeta {
            kind: CLASSIFIER_CHECKPOINT_KIND.into(),
            config_json: serde_json::to_string(&self.net.cfg)?,
            config_hash: self.net.cfg.config_hash(),
            seed: self.seed,
            step: self.step,
        };
        save_checkpoint(path, &meta, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, params) = load_checkpoint(path)?;
        if meta.kind != CLASSIFIER_CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "expected kind '{CLASSIFIER_CHECKPOINT_KIND}', found '{}'",
                meta.kind
            )));
        }
        let cfg: ClassifierConfig = serde_json::from_str(&meta.config_json)?;
        if cfg.config_hash() != meta.config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match embedded config".into(),
            ));
        }
        let net = ClassifierNet::new(cfg)?;
        let reference = net.init_params::<f32>(0);
        if reference.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                reference.len(),
                params.len()
            )));
        }
        for (name, t) in reference.iter() {
            if !params.contains(name) || params.get(name).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' missing or mis-shaped"
                )));
            }
        }
        Ok(Classifier {
            net,
            params,
            seed: meta.seed,
            step: meta.step,
        })
    }
}

// ---------------------------------------------------------------------------
// Class weights
// ---------------------------------------------------------------------------

/// Inverse-frequency class weights w_c = N/(K·n_c). The sample-weighted mean
/// is exactly 1: Σ_c n_c·w_c = N.
pub fn class_weights_from(labels: &[usize]) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("no labels given".into()));
    }
    let k = labels.iter().max().expect("nonempty") + 1;
    class_weights_with_k(labels, k)
}

/// As [`class_weights_from`] with an explicit class count; every class in
/// 0..k must appear at least once.
pub fn class_weights_with_k(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidInput("need at least two classes".into()));
    }
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return Err(Error::InvalidInput(format!(
                "label {y} out of range for {k} classes"
            )));
        }
        counts[y] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "class {empty} has no samples"
        )));
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| n / (k as f64 * c as f64))
        .collect())
}
