//! Least-squares patch discriminator.
//!
//! A stack of stride-2 convolutions with leaky rectification, closed by a
//! stride-1 convolution to a single-channel map of patch logits (no output
//! nonlinearity — the least-squares objective works on raw logits).

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::layers::{leaky_relu, leaky_relu_backward, Conv3d};
use crate::nn::{s, Scalar, Tensors};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    pub channels: Vec<usize>,
    convs: Vec<Conv3d>,
    out_conv: Conv3d,
}

pub struct DiscCache<F> {
    // (pre-activation, activated) per strided layer
    steps: Vec<(Array4<F>, Array4<F>)>,
}

impl PatchDiscriminator {
    pub fn new(channels: &[usize]) -> Self {
        assert!(!channels.is_empty(), "discriminator needs at least one stage");
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c_out) in channels.iter().enumerate() {
            convs.push(Conv3d::new(format!("disc.conv{i}"), c_in, c_out, 3, 2, 1));
            c_in = c_out;
        }
        let out_conv = Conv3d::new("disc.out", c_in, 1, 3, 1, 1);
        PatchDiscriminator {
            channels: channels.to_vec(),
            convs,
            out_conv,
        }
    }

    /// Reference capacity used at full scale.
    pub fn standard() -> Self {
        PatchDiscriminator::new(&[32, 64, 128, 256])
    }

    pub fn init<F: Scalar>(&self, ps: &mut Tensors<F>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for conv in &self.convs {
            conv.init(ps, &mut rng);
        }
        self.out_conv.init(ps, &mut rng);
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> Tensors<F> {
        let mut ps = Tensors::new();
        self.init(&mut ps, seed);
        ps
    }

    /// Patch-logit map for a single-channel volume (1, H, W, D).
    pub fn forward<F: Scalar>(&self, ps: &Tensors<F>, x: &Array4<F>) -> Array4<F> {
        self.forward_cached(ps, x).0
    }

    pub fn forward_cached<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        x: &Array4<F>,
    ) -> (Array4<F>, DiscCache<F>) {
        assert_eq!(x.shape()[0], 1, "single-channel input");
        let mut steps = Vec::with_capacity(self.convs.len());
        let mut cur = x.clone();
        for conv in &self.convs {
            let pre = conv.forward(ps, &cur);
            let act = leaky_relu(&pre, LEAKY_SLOPE);
            steps.push((pre, act.clone()));
            cur = act;
        }
        let logits = self.out_conv.forward(ps, &cur);
        (logits, DiscCache { steps })
    }

    /// Backpropagate a logit-map cotangent. Parameter gradients accumulate
    /// into `grads` (pass a scratch store to treat the discriminator as
    /// frozen); returns the input gradient.
    pub fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        x: &Array4<F>,
        cache: &DiscCache<F>,
        g_logits: &Array4<F>,
        grads: &mut Tensors<F>,
    ) -> Array4<F> {
        let last_act = &cache.steps.last().expect("at least one stage").1;
        let mut g = self.out_conv.backward(ps, last_act, g_logits, grads);
        for i in (0..self.convs.len()).rev() {
            let (pre, _) = &cache.steps[i];
            let g_pre = leaky_relu_backward(pre, &g, LEAKY_SLOPE);
            let below = if i == 0 { x } else { &cache.steps[i - 1].1 };
            g = self.convs[i].backward(ps, below, &g_pre, grads);
        }
        g
    }
}

/// Least-squares objectives from raw patch-logit maps:
/// disc = ½·mean((D(x)−1)²) + ½·mean(D(x̂)²), gen = mean((D(x̂)−1)²).
pub fn lsgan_losses_from_logits<F: Scalar>(d_real: &Array4<F>, d_fake: &Array4<F>) -> (F, F) {
    let one = F::one();
    let half = s::<F>(0.5);
    let n_real = s::<F>(d_real.len() as f64);
    let n_fake = s::<F>(d_fake.len() as f64);
    let real_term = d_real.iter().map(|&v| (v - one) * (v - one)).fold(F::zero(), |a, b| a + b) / n_real;
    let fake_term = d_fake.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / n_fake;
    let gen = d_fake.iter().map(|&v| (v - one) * (v - one)).fold(F::zero(), |a, b| a + b) / n_fake;
    (gen, half * real_term + half * fake_term)
}

/// Discriminator update: accumulates parameter gradients of the LSGAN
/// discriminator loss for one (real, fake) pair; returns that loss.
pub fn disc_step_grads<F: Scalar>(
    disc: &PatchDiscriminator,
    ps: &Tensors<F>,
    x: &Array4<F>,
    xhat: &Array4<F>,
    grads: &mut Tensors<F>,
) -> F {
    let (d_real, cache_real) = disc.forward_cached(ps, x);
    let (d_fake, cache_fake) = disc.forward_cached(ps, xhat);
    let (_, disc_loss) = lsgan_losses_from_logits(&d_real, &d_fake);

    let n_real = s::<F>(d_real.len() as f64);
    let n_fake = s::<F>(d_fake.len() as f64);
    // ∂/∂D(x) of ½·mean((D(x)−1)²) and ∂/∂D(x̂) of ½·mean(D(x̂)²)
    let g_real = d_real.mapv(|v| (v - F::one()) / n_real);
    let g_fake = d_fake.mapv(|v| v / n_fake);
    disc.backward(ps, x, &cache_real, &g_real, grads);
    disc.backward(ps, xhat, &cache_fake, &g_fake, grads);
    disc_loss
}

/// Generator-side adversarial term: loss mean((D(x̂)−1)²) and its gradient
/// w.r.t. the reconstruction, with the discriminator held frozen.
pub fn gen_adv_grad<F: Scalar>(
    disc: &PatchDiscriminator,
    ps: &Tensors<F>,
    xhat: &Array4<F>,
) -> (F, Array4<F>) {
    let (d_fake, cache) = disc.forward_cached(ps, xhat);
    let n = s::<F>(d_fake.len() as f64);
    let gen_loss = d_fake
        .iter()
        .map(|&v| (v - F::one()) * (v - F::one()))
        .fold(F::zero(), |a, b| a + b)
        / n;
    let g_logits = d_fake.mapv(|v| s::<F>(2.0) * (v - F::one()) / n);
    let mut scratch = Tensors::new();
    let g_xhat = disc.backward(ps, xhat, &cache, &g_logits, &mut scratch);
    (gen_loss, g_xhat)
}
