//! The volumetric variational autoencoder: residual convolutional encoder to
//! a (μ, log σ²) latent grid, mirrored transpose-convolution decoder back to
//! voxel space. Channel changes happen in the first residual block of each
//! stage (projection skip); resolution changes happen in the stride-2
//! transitions between stages, so a network with S stages maps edge E to
//! latent edge E / 2^(S−1).

use std::path::Path;

use ndarray::{concatenate, s, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::latent::{LatentCode, LatentDistribution};
use crate::nn::layers::{sigmoid, sigmoid_backward, silu, silu_backward, Conv3d, ConvTranspose3d, GroupNorm};
use crate::nn::{Scalar, Tensors};
use crate::volume::Volume;

pub const VAE_CHECKPOINT_KIND: &str = "vae";

/// (h, w, d, c) latent grid shape implied by a configuration.
pub fn latent_shape_for(cfg: &ModelConfig) -> Result<(usize, usize, usize, usize)> {
    cfg.validate()?;
    Ok((
        cfg.latent_edge,
        cfg.latent_edge,
        cfg.latent_edge,
        cfg.latent_channels,
    ))
}

// ---------------------------------------------------------------------------
// Residual block
// ---------------------------------------------------------------------------

/// norm → SiLU → conv → norm → SiLU → conv, added to the input (projected
/// through a 1×1×1 convolution when the channel count changes).
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub c_in: usize,
    pub c_out: usize,
    norm1: GroupNorm,
    conv1: Conv3d,
    norm2: GroupNorm,
    conv2: Conv3d,
    skip: Option<Conv3d>,
}

/// Intermediates needed to backpropagate through one block.
pub struct ResCache<F> {
    x: Array4<F>,
    n1: Array4<F>,
    a1: Array4<F>,
    c1: Array4<F>,
    n2: Array4<F>,
    a2: Array4<F>,
}

impl ResBlock {
    pub fn new(name: &str, c_in: usize, c_out: usize) -> Self {
        ResBlock {
            c_in,
            c_out,
            norm1: GroupNorm::new(format!("{name}.gn1"), c_in),
            conv1: Conv3d::new(format!("{name}.conv1"), c_in, c_out, 3, 1, 1),
            norm2: GroupNorm::new(format!("{name}.gn2"), c_out),
            conv2: Conv3d::new(format!("{name}.conv2"), c_out, c_out, 3, 1, 1),
            skip: (c_in != c_out)
                .then(|| Conv3d::new(format!("{name}.skip"), c_in, c_out, 1, 1, 0)),
        }
    }

    fn init<F: Scalar>(&self, ps: &mut Tensors<F>, rng: &mut ChaCha8Rng) {
        self.norm1.init(ps);
        self.conv1.init(ps, rng);
        self.norm2.init(ps);
        self.conv2.init(ps, rng);
        if let Some(p) = &self.skip {
            p.init(ps, rng);
        }
    }

    fn param_specs(&self, out: &mut Vec<(String, Vec<usize>)>) {
        out.push((self.norm1.gamma_name(), vec![self.c_in]));
        out.push((self.norm1.beta_name(), vec![self.c_in]));
        conv_specs(&self.conv1, out);
        out.push((self.norm2.gamma_name(), vec![self.c_out]));
        out.push((self.norm2.beta_name(), vec![self.c_out]));
        conv_specs(&self.conv2, out);
        if let Some(p) = &self.skip {
            conv_specs(p, out);
        }
    }

    fn forward<F: Scalar>(&self, ps: &Tensors<F>, x: Array4<F>) -> (Array4<F>, ResCache<F>) {
        let n1 = self.norm1.forward(ps, &x);
        let a1 = silu(&n1);
        let c1 = self.conv1.forward(ps, &a1);
        let n2 = self.norm2.forward(ps, &c1);
        let a2 = silu(&n2);
        let c2 = self.conv2.forward(ps, &a2);
        let y = match &self.skip {
            Some(p) => p.forward(ps, &x) + &c2,
            None => &x + &c2,
        };
        (
            y,
            ResCache {
                x,
                n1,
                a1,
                c1,
                n2,
                a2,
            },
        )
    }

    fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        cache: &ResCache<F>,
        gy: &Array4<F>,
        grads: &mut Tensors<F>,
    ) -> Array4<F> {
        let g_a2 = self.conv2.backward(ps, &cache.a2, gy, grads);
        let g_n2 = silu_backward(&cache.n2, &g_a2);
        let g_c1 = self.norm2.backward(ps, &cache.c1, &g_n2, grads);
        let g_a1 = self.conv1.backward(ps, &cache.a1, &g_c1, grads);
        let g_n1 = silu_backward(&cache.n1, &g_a1);
        let gx = self.norm1.backward(ps, &cache.x, &g_n1, grads);
        match &self.skip {
            Some(p) => gx + p.backward(ps, &cache.x, gy, grads),
            None => gx + gy,
        }
    }
}

fn conv_specs(c: &Conv3d, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((c.w_name(), vec![c.c_out, c.c_in * c.k.pow(3)]));
    out.push((c.b_name(), vec![c.c_out]));
}

fn convt_specs(c: &ConvTranspose3d, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((c.w_name(), vec![c.c_in, c.c_out * 27]));
    out.push((c.b_name(), vec![c.c_out]));
}

// ---------------------------------------------------------------------------
// Network structure
// ---------------------------------------------------------------------------

struct EncStage {
    blocks: Vec<ResBlock>,
    down: Option<Conv3d>,
}

struct DecStage {
    blocks: Vec<ResBlock>,
    up: Option<ConvTranspose3d>,
}

/// Layer graph for one configuration. Holds no parameters; those live in a
/// [`Tensors`] store keyed by layer path, so the same structure drives f32
/// training and f64 gradient checks.
pub struct VaeNet {
    latent_channels: usize,
    enc_in: Conv3d,
    enc_stages: Vec<EncStage>,
    enc_norm: GroupNorm,
    enc_head: Conv3d,
    dec_in: Conv3d,
    dec_stages: Vec<DecStage>,
    dec_norm: GroupNorm,
    dec_head: Conv3d,
}

pub struct EncodeCache<F> {
    x: Array4<F>,
    stages: Vec<(Vec<ResCache<F>>, Option<Array4<F>>)>,
    norm_in: Array4<F>,
    normed: Array4<F>,
    act: Array4<F>,
}

pub struct DecodeCache<F> {
    z: Array4<F>,
    stages: Vec<(Vec<ResCache<F>>, Option<Array4<F>>)>,
    norm_in: Array4<F>,
    normed: Array4<F>,
    act: Array4<F>,
    xhat: Array4<F>,
}

impl VaeNet {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let chs = &cfg.stage_channels;
        let stages = chs.len();
        let top = chs[stages - 1];

        let mut enc_stages = Vec::with_capacity(stages);
        for i in 0..stages {
            let prev = if i == 0 { chs[0] } else { chs[i - 1] };
            let blocks = (0..cfg.res_blocks_per_stage)
                .map(|b| {
                    let c_in = if b == 0 { prev } else { chs[i] };
                    ResBlock::new(&format!("enc.s{i}.b{b}"), c_in, chs[i])
                })
                .collect();
            let down = (i < stages - 1)
                .then(|| Conv3d::new(format!("enc.s{i}.down"), chs[i], chs[i], 3, 2, 1));
            enc_stages.push(EncStage { blocks, down });
        }

        // decoder stages in execution order: deepest (latent-side) first
        let mut dec_stages = Vec::with_capacity(stages);
        for i in (0..stages).rev() {
            let above = if i == stages - 1 { top } else { chs[i + 1] };
            let blocks = (0..cfg.res_blocks_per_stage)
                .map(|b| {
                    let c_in = if b == 0 { above } else { chs[i] };
                    ResBlock::new(&format!("dec.s{i}.b{b}"), c_in, chs[i])
                })
                .collect();
            let up =
                (i > 0).then(|| ConvTranspose3d::new(format!("dec.s{i}.up"), chs[i], chs[i]));
            dec_stages.push(DecStage { blocks, up });
        }

        Ok(VaeNet {
            latent_channels: cfg.latent_channels,
            enc_in: Conv3d::new("enc.in", 1, chs[0], 3, 1, 1),
            enc_stages,
            enc_norm: GroupNorm::new("enc.norm_out", top),
            enc_head: Conv3d::new("enc.head", top, 2 * cfg.latent_channels, 1, 1, 0),
            dec_in: Conv3d::new("dec.in", cfg.latent_channels, top, 3, 1, 1),
            dec_stages,
            dec_norm: GroupNorm::new("dec.norm_out", chs[0]),
            dec_head: Conv3d::new("dec.head", chs[0], 1, 3, 1, 1),
        })
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> Tensors<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = Tensors::new();
        self.enc_in.init(&mut ps, &mut rng);
        for st in &self.enc_stages {
            for b in &st.blocks {
                b.init(&mut ps, &mut rng);
            }
            if let Some(d) = &st.down {
                d.init(&mut ps, &mut rng);
            }
        }
        self.enc_norm.init(&mut ps);
        self.enc_head.init(&mut ps, &mut rng);
        self.dec_in.init(&mut ps, &mut rng);
        for st in &self.dec_stages {
            for b in &st.blocks {
                b.init(&mut ps, &mut rng);
            }
            if let Some(u) = &st.up {
                u.init(&mut ps, &mut rng);
            }
        }
        self.dec_norm.init(&mut ps);
        self.dec_head.init(&mut ps, &mut rng);
        ps
    }

    /// (name, shape) of every parameter, in initialization order. Lets a
    /// loader validate a checkpoint without allocating a reference network.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        conv_specs(&self.enc_in, &mut out);
        for st in &self.enc_stages {
            for b in &st.blocks {
                b.param_specs(&mut out);
            }
            if let Some(d) = &st.down {
                conv_specs(d, &mut out);
            }
        }
        let top = self.enc_head.c_in;
        out.push((self.enc_norm.gamma_name(), vec![top]));
        out.push((self.enc_norm.beta_name(), vec![top]));
        conv_specs(&self.enc_head, &mut out);
        conv_specs(&self.dec_in, &mut out);
        for st in &self.dec_stages {
            for b in &st.blocks {
                b.param_specs(&mut out);
            }
            if let Some(u) = &st.up {
                convt_specs(u, &mut out);
            }
        }
        let c0 = self.dec_head.c_in;
        out.push((self.dec_norm.gamma_name(), vec![c0]));
        out.push((self.dec_norm.beta_name(), vec![c0]));
        conv_specs(&self.dec_head, &mut out);
        out
    }

    fn encode_steps<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        x: Array4<F>,
        keep: bool,
    ) -> (Array4<F>, Array4<F>, Option<EncodeCache<F>>) {
        let mut h = self.enc_in.forward(ps, &x);
        let mut stage_caches = Vec::new();
        for st in &self.enc_stages {
            let mut block_caches = Vec::new();
            for b in &st.blocks {
                let (y, cache) = b.forward(ps, h);
                h = y;
                if keep {
                    block_caches.push(cache);
                }
            }
            let down_in = if let Some(d) = &st.down {
                let y = d.forward(ps, &h);
                let prev = std::mem::replace(&mut h, y);
                keep.then_some(prev)
            } else {
                None
            };
            if keep {
                stage_caches.push((block_caches, down_in));
            }
        }
        let norm_in = h;
        let normed = self.enc_norm.forward(ps, &norm_in);
        let act = silu(&normed);
        let head = self.enc_head.forward(ps, &act);
        let c = self.latent_channels;
        let mu = head.slice(s![0..c, .., .., ..]).to_owned();
        let lv = head.slice(s![c.., .., .., ..]).to_owned();
        let cache = keep.then_some(EncodeCache {
            x,
            stages: stage_caches,
            norm_in,
            normed,
            act,
        });
        (mu, lv, cache)
    }

    /// Channel-first (c, e, e, e) input → channel-first (c, l, l, l) μ and
    /// log-variance grids, keeping every intermediate for the backward pass.
    pub fn encode_train<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        x: Array4<F>,
    ) -> (Array4<F>, Array4<F>, EncodeCache<F>) {
        let (mu, lv, cache) = self.encode_steps(ps, x, true);
        (mu, lv, cache.expect("cache kept"))
    }

    pub fn encode_infer<F: Scalar>(&self, ps: &Tensors<F>, x: Array4<F>) -> (Array4<F>, Array4<F>) {
        let (mu, lv, _) = self.encode_steps(ps, x, false);
        (mu, lv)
    }

    /// Backpropagates (∂L/∂μ, ∂L/∂log_var) through the encoder, accumulating
    /// parameter gradients and returning ∂L/∂input.
    pub fn encode_backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        cache: &EncodeCache<F>,
        g_mu: &Array4<F>,
        g_lv: &Array4<F>,
        grads: &mut Tensors<F>,
    ) -> Array4<F> {
        let g_head = concatenate(Axis(0), &[g_mu.view(), g_lv.view()]).expect("matching grids");
        let g_act = self.enc_head.backward(ps, &cache.act, &g_head, grads);
        let g_normed = silu_backward(&cache.normed, &g_act);
        let mut g = self.enc_norm.backward(ps, &cache.norm_in, &g_normed, grads);
        for (st, (block_caches, down_in)) in
            self.enc_stages.iter().zip(cache.stages.iter()).rev()
        {
            if let (Some(d), Some(di)) = (&st.down, down_in) {
                g = d.backward(ps, di, &g, grads);
            }
            for (b, bc) in st.blocks.iter().zip(block_caches.iter()).rev() {
                g = b.backward(ps, bc, &g, grads);
            }
        }
        self.enc_in.backward(ps, &cache.x, &g, grads)
    }

    fn decode_steps<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        z: Array4<F>,
        keep: bool,
    ) -> (Array4<F>, Option<DecodeCache<F>>) {
        let mut h = self.dec_in.forward(ps, &z);
        let mut stage_caches = Vec::new();
        for st in &self.dec_stages {
            let mut block_caches = Vec::new();
            for b in &st.blocks {
                let (y, cache) = b.forward(ps, h);
                h = y;
                if keep {
                    block_caches.push(cache);
                }
            }
            let up_in = if let Some(u) = &st.up {
                let y = u.forward(ps, &h);
                let prev = std::mem::replace(&mut h, y);
                keep.then_some(prev)
            } else {
                None
            };
            if keep {
                stage_caches.push((block_caches, up_in));
            }
        }
        let norm_in = h;
        let normed = self.dec_norm.forward(ps, &norm_in);
        let act = silu(&normed);
        let pre = self.dec_head.forward(ps, &act);
        let xhat = sigmoid(&pre);
        let cache = keep.then(|| DecodeCache {
            z,
            stages: stage_caches,
            norm_in,
            normed,
            act,
            xhat: xhat.clone(),
        });
        (xhat, cache)
    }

    /// Channel-first (c, l, l, l) code → (1, e, e, e) reconstruction in (0,1).
    pub fn decode_train<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        z: Array4<F>,
    ) -> (Array4<F>, DecodeCache<F>) {
        let (xhat, cache) = self.decode_steps(ps, z, true);
        (xhat, cache.expect("cache kept"))
    }

    pub fn decode_infer<F: Scalar>(&self, ps: &Tensors<F>, z: Array4<F>) -> Array4<F> {
        self.decode_steps(ps, z, false).0
    }

    /// Backpropagates ∂L/∂x̂ through the decoder, returning ∂L/∂z.
    pub fn decode_backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        cache: &DecodeCache<F>,
        g_xhat: &Array4<F>,
        grads: &mut Tensors<F>,
    ) -> Array4<F> {
        let g_pre = sigmoid_backward(&cache.xhat, g_xhat);
        let g_act = self.dec_head.backward(ps, &cache.act, &g_pre, grads);
        let g_normed = silu_backward(&cache.normed, &g_act);
        let mut g = self.dec_norm.backward(ps, &cache.norm_in, &g_normed, grads);
        for (st, (block_caches, up_in)) in
            self.dec_stages.iter().zip(cache.stages.iter()).rev()
        {
            if let (Some(u), Some(ui)) = (&st.up, up_in) {
                g = u.backward(ps, ui, &g, grads);
            }
            for (b, bc) in st.blocks.iter().zip(block_caches.iter()).rev() {
                g = b.backward(ps, bc, &g, grads);
            }
        }
        self.dec_in.backward(ps, &cache.z, &g, grads)
    }
}

// ---------------------------------------------------------------------------
// Reparameterized sampling
// ---------------------------------------------------------------------------

/// z = μ + exp(0.5·log_var)·ε with ε from a seeded standard normal.
pub fn reparameterize(d: &LatentDistribution, noise_seed: u64) -> LatentCode {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut eps = Array4::<f32>::zeros(d.mu().raw_dim());
    for v in eps.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    reparameterize_with_eps(d, &eps, noise_seed).expect("eps drawn at matching shape")
}

/// Deterministic variant taking ε explicitly (ε = 0 recovers the mean).
pub fn reparameterize_with_eps(
    d: &LatentDistribution,
    eps: &Array4<f32>,
    noise_seed: u64,
) -> Result<LatentCode> {
    if eps.shape() != d.mu().shape() {
        return Err(Error::shape_mismatch(d.mu().shape(), eps.shape()));
    }
    let mut z = d.mu().clone();
    ndarray::Zip::from(&mut z)
        .and(d.log_var())
        .and(eps)
        .for_each(|zv, &lv, &e| {
            *zv += (0.5 * lv).exp() * e;
        });
    Ok(LatentCode { z, noise_seed })
}

// ---------------------------------------------------------------------------
// Parameter bundle and volume-level API
// ---------------------------------------------------------------------------

/// A configuration, its layer graph, and trained parameters, as persisted in
/// checkpoints.
pub struct Vae {
    net: VaeNet,
    pub cfg: ModelConfig,
    pub params: Tensors<f32>,
    pub seed: u64,
    pub step: u64,
}

impl std::fmt::Debug for Vae {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vae")
            .field("config_hash", &self.cfg.config_hash())
            .field("seed", &self.seed)
            .field("step", &self.step)
            .field("n_tensors", &self.params.len())
            .finish_non_exhaustive()
    }
}

pub fn build_vae(cfg: &ModelConfig, seed: u64) -> Result<Vae> {
    let net = VaeNet::new(cfg)?;
    let params = net.init_params::<f32>(seed);
    Ok(Vae {
        net,
        cfg: cfg.clone(),
        params,
        seed,
        step: 0,
    })
}

impl Vae {
    pub fn net(&self) -> &VaeNet {
        &self.net
    }

    fn check_input(&self, v: &Volume) -> Result<()> {
        let e = self.cfg.input_edge;
        if v.shape() != (e, e, e) {
            return Err(Error::shape_mismatch(&[e, e, e], {
                let (a, b, c) = v.shape();
                &[a, b, c]
            }));
        }
        Ok(())
    }

    /// Volume → (μ, log σ²) grids in (h, w, d, c) layout.
    pub fn encode(&self, v: &Volume) -> Result<LatentDistribution> {
        self.check_input(v)?;
        let e = self.cfg.input_edge;
        let x = v
            .data()
            .clone()
            .into_shape_with_order((1, e, e, e))
            .expect("channel axis");
        let (mu, lv) = self.net.encode_infer(&self.params, x);
        LatentDistribution::new(channel_last(&mu), channel_last(&lv))
    }

    /// Latent code in (h, w, d, c) layout → reconstruction volume in (0,1).
    pub fn decode(&self, code: &LatentCode) -> Result<Volume> {
        let want = (
            self.cfg.latent_edge,
            self.cfg.latent_edge,
            self.cfg.latent_edge,
            self.cfg.latent_channels,
        );
        if code.shape() != want {
            return Err(Error::shape_mismatch(
                &[want.0, want.1, want.2, want.3],
                code.z.shape(),
            ));
        }
        let z = channel_first(&code.z);
        let y = self.net.decode_infer(&self.params, z);
        let e = self.cfg.input_edge;
        let data = y
            .into_shape_with_order((e, e, e))
            .expect("single output channel");
        Volume::new(data)
    }

    /// encode → sample → decode.
    pub fn reconstruct(&self, v: &Volume, noise_seed: u64) -> Result<Volume> {
        let d = self.encode(v)?;
        self.decode(&reparameterize(&d, noise_seed))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = CheckpointMeta {
            kind: VAE_CHECKPOINT_KIND.into(),
            config_json: serde_json::to_string(&self.cfg)?,
            config_hash: self.cfg.config_hash(),
            seed: self.seed,
            step: self.step,
        };
        save_checkpoint(path, &meta, &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, params) = load_checkpoint(path)?;
        if meta.kind != VAE_CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "expected kind '{VAE_CHECKPOINT_KIND}', found '{}'",
                meta.kind
            )));
        }
        let cfg: ModelConfig = serde_json::from_str(&meta.config_json)?;
        if cfg.config_hash() != meta.config_hash {
            return Err(Error::Checkpoint(
                "config hash does not match embedded config".into(),
            ));
        }
        let net = VaeNet::new(&cfg)?;
        let specs = net.param_specs();
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape) in &specs {
            if !params.contains(name) {
                return Err(Error::Checkpoint(format!("missing parameter '{name}'")));
            }
            if params.get(name).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    params.get(name).shape(),
                    shape
                )));
            }
        }
        Ok(Vae {
            net,
            cfg,
            params,
            seed: meta.seed,
            step: meta.step,
        })
    }
}

/// (c, h, w, d) → contiguous (h, w, d, c).
pub fn channel_last(a: &Array4<f32>) -> Array4<f32> {
    a.view()
        .permuted_axes([1, 2, 3, 0])
        .as_standard_layout()
        .to_owned()
}

/// (h, w, d, c) → contiguous (c, h, w, d).
pub fn channel_first(a: &Array4<f32>) -> Array4<f32> {
    a.view()
        .permuted_axes([3, 0, 1, 2])
        .as_standard_layout()
        .to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{kl_backward, kl_sum, l1, l1_backward};
    use crate::nn::gradcheck::finite_difference_check;
    use ndarray::Array3;
    use rand::Rng;

    fn micro_cfg() -> ModelConfig {
        ModelConfig {
            input_edge: 8,
            latent_edge: 4,
            stage_channels: vec![4, 8],
            res_blocks_per_stage: 1,
            ..ModelConfig::desk_48()
        }
    }

    fn random_volume(seed: u64, edge: usize) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array3::<f32>::zeros((edge, edge, edge));
        for v in a.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        Volume::new(a).unwrap()
    }

    #[test]
    fn latent_shapes_for_all_presets() {
        assert_eq!(
            latent_shape_for(&ModelConfig::latent_24()).unwrap(),
            (24, 24, 24, 3)
        );
        assert_eq!(
            latent_shape_for(&ModelConfig::latent_12()).unwrap(),
            (12, 12, 12, 3)
        );
        assert_eq!(
            latent_shape_for(&ModelConfig::latent_3()).unwrap(),
            (3, 3, 3, 3)
        );
        assert_eq!(
            latent_shape_for(&ModelConfig::desk_48()).unwrap(),
            (6, 6, 6, 3)
        );
        // 4 stages on 64³ → 8³
        let cfg = ModelConfig {
            input_edge: 64,
            latent_edge: 8,
            ..ModelConfig::desk_48()
        };
        assert_eq!(latent_shape_for(&cfg).unwrap(), (8, 8, 8, 3));
    }

    #[test]
    fn stage_structure_matches_presets() {
        // every preset: S−1 downsampling transitions, mirrored decoder
        for cfg in [
            ModelConfig::latent_24(),
            ModelConfig::latent_12(),
            ModelConfig::latent_3(),
            ModelConfig::desk_48(),
        ] {
            let net = VaeNet::new(&cfg).unwrap();
            let downs = net.enc_stages.iter().filter(|s| s.down.is_some()).count();
            let ups = net.dec_stages.iter().filter(|s| s.up.is_some()).count();
            assert_eq!(downs, cfg.stages() - 1);
            assert_eq!(ups, cfg.stages() - 1);
            let enc_ch: Vec<usize> = net.enc_stages.iter().map(|s| s.blocks[0].c_out).collect();
            let mut dec_ch: Vec<usize> =
                net.dec_stages.iter().map(|s| s.blocks[0].c_out).collect();
            dec_ch.reverse();
            assert_eq!(enc_ch, cfg.stage_channels);
            assert_eq!(dec_ch, cfg.stage_channels);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = ModelConfig {
            latent_edge: 5,
            ..ModelConfig::desk_48()
        };
        assert!(VaeNet::new(&bad).is_err());
        assert!(build_vae(&bad, 0).is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let net = VaeNet::new(&micro_cfg()).unwrap();
        let a = net.init_params::<f32>(7);
        let b = net.init_params::<f32>(7);
        let c = net.init_params::<f32>(8);
        let a_names: Vec<&str> = a.names().collect();
        let b_names: Vec<&str> = b.names().collect();
        assert_eq!(a_names, b_names);
        for name in &a_names {
            assert_eq!(a.get(name), b.get(name), "{name}");
        }
        assert!(a_names.iter().any(|n| a.get(n) != c.get(n)));
    }

    #[test]
    fn param_specs_match_initialized_tensors() {
        let net = VaeNet::new(&micro_cfg()).unwrap();
        let ps = net.init_params::<f32>(0);
        let specs = net.param_specs();
        assert_eq!(specs.len(), ps.len());
        for (name, shape) in &specs {
            assert_eq!(ps.get(name).shape(), shape.as_slice(), "{name}");
        }
    }

    #[test]
    fn encode_decode_shapes_at_desk_scale() {
        let cfg = ModelConfig::desk_48();
        let vae = build_vae(&cfg, 1).unwrap();
        let v = random_volume(2, 48);
        let d = vae.encode(&v).unwrap();
        assert_eq!(d.shape(), (6, 6, 6, 3));
        // deterministic forward
        let d2 = vae.encode(&v).unwrap();
        assert_eq!(d.mu(), d2.mu());
        assert_eq!(d.log_var(), d2.log_var());

        let code = reparameterize(&d, 3);
        let rec = vae.decode(&code).unwrap();
        assert_eq!(rec.shape(), (48, 48, 48));
        assert!(rec.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let vae = build_vae(&ModelConfig::desk_48(), 1).unwrap();
        assert!(vae.encode(&random_volume(0, 24)).is_err());
        let bad_code = LatentCode {
            z: Array4::zeros((6, 6, 6, 2)),
            noise_seed: 0,
        };
        assert!(vae.decode(&bad_code).is_err());
    }

    #[test]
    fn reparameterize_oracles() {
        let mu = Array4::from_elem((2, 2, 2, 3), 0.7f32);
        let lv = Array4::from_elem((2, 2, 2, 3), -0.3f32);
        let d = LatentDistribution::new(mu.clone(), lv).unwrap();

        // ε = 0 → z = μ
        let eps0 = Array4::zeros((2, 2, 2, 3));
        let z = reparameterize_with_eps(&d, &eps0, 0).unwrap();
        assert_eq!(z.z, mu);

        // log_var → −∞ (approximated by −80) → z ≈ μ
        let tiny = LatentDistribution::new(mu.clone(), Array4::from_elem((2, 2, 2, 3), -80.0))
            .unwrap();
        let z = reparameterize(&tiny, 9);
        for (a, b) in z.z.iter().zip(mu.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        // μ = 0, log_var = 0, ε = 0.5 → z = 0.5
        let zero = LatentDistribution::new(Array4::zeros((2, 2, 2, 3)), Array4::zeros((2, 2, 2, 3)))
            .unwrap();
        let z = reparameterize_with_eps(&zero, &Array4::from_elem((2, 2, 2, 3), 0.5), 0).unwrap();
        assert!(z.z.iter().all(|&v| v == 0.5));

        // same seed → same draw, different seed → different draw
        let a = reparameterize(&d, 11);
        let b = reparameterize(&d, 11);
        let c = reparameterize(&d, 12);
        assert_eq!(a.z, b.z);
        assert_ne!(a.z, c.z);
    }

    #[test]
    fn decode_stays_strictly_inside_unit_interval() {
        let vae = build_vae(&micro_cfg(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut z = Array4::<f32>::zeros((4, 4, 4, 3));
        for v in z.iter_mut() {
            *v = rng.gen_range(-50.0..50.0);
        }
        let rec = vae.decode(&LatentCode { z, noise_seed: 0 }).unwrap();
        assert!(rec.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn checkpoint_round_trip_preserves_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.ckpt");
        let mut vae = build_vae(&micro_cfg(), 3).unwrap();
        vae.step = 42;
        vae.save(&path).unwrap();

        let loaded = Vae::load(&path).unwrap();
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.seed, 3);
        assert_eq!(loaded.cfg, vae.cfg);
        let v = random_volume(4, 8);
        let a = vae.encode(&v).unwrap();
        let b = loaded.encode(&v).unwrap();
        assert_eq!(a.mu(), b.mu());

        // wrong kind is rejected
        let meta = CheckpointMeta {
            kind: "classifier".into(),
            config_json: serde_json::to_string(&micro_cfg()).unwrap(),
            config_hash: micro_cfg().config_hash(),
            seed: 0,
            step: 0,
        };
        let other = dir.path().join("clf.ckpt");
        save_checkpoint(&other, &meta, &vae.params).unwrap();
        assert!(Vae::load(&other).is_err());
    }

    #[test]
    fn channel_layout_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = Array4::<f32>::zeros((3, 4, 4, 4));
        for v in a.iter_mut() {
            *v = rng.gen();
        }
        let back = channel_first(&channel_last(&a));
        assert_eq!(a, back);
        // spot-check one element's destination
        let cl = channel_last(&a);
        assert_eq!(a[[2, 1, 0, 3]], cl[[1, 0, 3, 2]]);
    }

    /// Central finite differences through the full encode → sample → decode
    /// graph on an 8³ input, sampling parameters across every layer.
    #[test]
    fn micro_vae_gradients_match_finite_differences() {
        let cfg = micro_cfg();
        let net = VaeNet::new(&cfg).unwrap();
        let params = net.init_params::<f64>(1);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = Array4::<f64>::zeros((1, 8, 8, 8));
        for v in x.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let mut eps = Array4::<f64>::zeros((3, 4, 4, 4));
        for v in eps.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let lam_kl = 0.1;

        let loss = |ps: &Tensors<f64>| -> f64 {
            let (mu, lv, _) = net.encode_steps(ps, x.clone(), false);
            let sigma = lv.mapv(|v| (0.5 * v).exp());
            let z = &mu + &(&sigma * &eps);
            let (xhat, _) = net.decode_steps(ps, z, false);
            l1(&x, &xhat) + lam_kl * kl_sum(&mu, &lv)
        };

        let mut grads = params.zeros_like();
        let (mu, lv, ecache) = net.encode_train(&params, x.clone());
        let sigma = lv.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&sigma * &eps);
        let (xhat, dcache) = net.decode_train(&params, z);
        let g_xhat = l1_backward(&x, &xhat);
        let g_z = net.decode_backward(&params, &dcache, &g_xhat, &mut grads);
        let (kl_gmu, kl_glv) = kl_backward(&mu, &lv);
        let g_mu = &g_z + &kl_gmu.mapv(|v| v * lam_kl);
        let g_lv = &(&(&g_z * &eps) * &sigma).mapv(|v| v * 0.5) + &kl_glv.mapv(|v| v * lam_kl);
        net.encode_backward(&params, &ecache, &g_mu, &g_lv, &mut grads);

        let report = finite_difference_check(&params, &grads, loss, 60, 7, 1e-5);
        assert!(report.n_checked >= 50);
        assert!(
            report.passes(1e-3),
            "worst: {:?} (max rel err {:.3e})",
            report.worst,
            report.max_rel_err
        );
    }
}
