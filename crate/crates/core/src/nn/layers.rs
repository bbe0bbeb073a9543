//! Layer descriptors. Each struct holds names and hyperparameters only; the
//! actual arrays live in a [`Tensors`] store, so layers stay `Copy`-cheap and
//! checkpointing is a plain store dump. `backward` accumulates parameter
//! gradients into a store and returns the input gradient.

use ndarray::{Array, Array1, Array2, Array4, ArrayView1, ArrayView2, Axis, Dimension, Ix1, Ix2, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv::{conv3d_backward_data, conv3d_backward_weight, conv3d_forward, conv_out_edge};
use super::{init_uniform, s, Scalar, Tensors};

fn view2<'a, F: Scalar>(ps: &'a Tensors<F>, name: &str) -> ArrayView2<'a, F> {
    ps.get(name)
        .view()
        .into_dimensionality::<Ix2>()
        .unwrap_or_else(|_| panic!("{name} is not 2-d"))
}

fn view1<'a, F: Scalar>(ps: &'a Tensors<F>, name: &str) -> ArrayView1<'a, F> {
    ps.get(name)
        .view()
        .into_dimensionality::<Ix1>()
        .unwrap_or_else(|_| panic!("{name} is not 1-d"))
}

fn view1_mut<'a, F: Scalar>(ps: &'a mut Tensors<F>, name: &str) -> ndarray::ArrayViewMut1<'a, F> {
    ps.get_mut(name)
        .view_mut()
        .into_dimensionality::<Ix1>()
        .unwrap_or_else(|_| panic!("{name} is not 1-d"))
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3d {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv3d {
            name: name.into(),
            c_in,
            c_out,
            k,
            stride,
            pad,
        }
    }

    pub fn w_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn b_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<F: Scalar>(&self, ps: &mut Tensors<F>, rng: &mut ChaCha8Rng) {
        let fan_in = self.c_in * self.k.pow(3);
        ps.insert(self.w_name(), init_uniform(rng, &[self.c_out, fan_in], fan_in));
        ps.insert(self.b_name(), init_uniform(rng, &[self.c_out], fan_in));
    }

    pub fn out_edges(&self, in_edges: [usize; 3]) -> [usize; 3] {
        in_edges.map(|e| conv_out_edge(e, self.k, self.stride, self.pad))
    }

    pub fn forward<F: Scalar>(&self, ps: &Tensors<F>, x: &Array4<F>) -> Array4<F> {
        debug_assert_eq!(x.shape()[0], self.c_in, "{}: input channels", self.name);
        let b = view1(ps, &self.b_name()).to_owned();
        conv3d_forward(x, &view2(ps, &self.w_name()), Some(&b), self.k, self.stride, self.pad)
    }

    pub fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        x: &Array4<F>,
        gy: &Array4<F>,
        grads: &mut Tensors<F>,
    ) -> Array4<F> {
        let (gw, gb) = conv3d_backward_weight(x, gy, self.k, self.stride, self.pad);
        grads.add_to(&self.w_name(), &gw.into_dyn());
        grads.add_to(&self.b_name(), &gb.into_dyn());
        let in_shape = [self.c_in, x.shape()[1], x.shape()[2], x.shape()[3]];
        conv3d_backward_data(gy, &view2(ps, &self.w_name()), self.k, self.stride, self.pad, in_shape)
    }
}

/// Upsampling transpose convolution fixed at kernel 3, stride 2, padding 1,
/// output padding 1 — the combination that exactly doubles each edge. Stored
/// as the weight of the mirrored ordinary convolution, so forward is that
/// convolution's data gradient and vice versa.
#[derive(Debug, Clone)]
pub struct ConvTranspose3d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
}

const TK: usize = 3;
const TSTRIDE: usize = 2;
const TPAD: usize = 1;

impl ConvTranspose3d {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize) -> Self {
        ConvTranspose3d {
            name: name.into(),
            c_in,
            c_out,
        }
    }

    pub fn w_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn b_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<F: Scalar>(&self, ps: &mut Tensors<F>, rng: &mut ChaCha8Rng) {
        let fan_in = self.c_in * TK.pow(3);
        // mirrored-convolution layout: (c_in, c_out·k³)
        ps.insert(
            self.w_name(),
            init_uniform(rng, &[self.c_in, self.c_out * TK.pow(3)], fan_in),
        );
        ps.insert(self.b_name(), init_uniform(rng, &[self.c_out], fan_in));
    }

    pub fn forward<F: Scalar>(&self, ps: &Tensors<F>, x: &Array4<F>) -> Array4<F> {
        debug_assert_eq!(x.shape()[0], self.c_in, "{}: input channels", self.name);
        let out_shape = [
            self.c_out,
            x.shape()[1] * TSTRIDE,
            x.shape()[2] * TSTRIDE,
            x.shape()[3] * TSTRIDE,
        ];
        let w = view2(ps, &self.w_name());
        let mut y = conv3d_backward_data(x, &w, TK, TSTRIDE, TPAD, out_shape);
        let b = view1(ps, &self.b_name());
        for (mut plane, &bv) in y.outer_iter_mut().zip(b.iter()) {
            plane.mapv_inplace(|v| v + bv);
        }
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        x: &Array4<F>,
        gy: &Array4<F>,
        grads: &mut Tensors<F>,
    ) -> Array4<F> {
        // in mirrored-convolution terms, gy is the input and x the output side
        let (gw, _) = conv3d_backward_weight(gy, x, TK, TSTRIDE, TPAD);
        grads.add_to(&self.w_name(), &gw.into_dyn());
        let gb = gy
            .view()
            .into_shape_with_order((self.c_out, gy.len() / self.c_out))
            .expect("standard layout")
            .sum_axis(Axis(1));
        grads.add_to(&self.b_name(), &gb.into_dyn());
        conv3d_forward(gy, &view2(ps, &self.w_name()), None, TK, TSTRIDE, TPAD)
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub name: String,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    /// Group count = min(32, channels), reduced until it divides `channels`.
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        let mut groups = channels.min(32);
        while channels % groups != 0 {
            groups -= 1;
        }
        GroupNorm {
            name: name.into(),
            channels,
            groups,
            eps: 1e-5,
        }
    }

    pub fn gamma_name(&self) -> String {
        format!("{}.gamma", self.name)
    }

    pub fn beta_name(&self) -> String {
        format!("{}.beta", self.name)
    }

    pub fn init<F: Scalar>(&self, ps: &mut Tensors<F>) {
        ps.insert(
            self.gamma_name(),
            ndarray::ArrayD::from_elem(ndarray::IxDyn(&[self.channels]), F::one()),
        );
        ps.insert(
            self.beta_name(),
            ndarray::ArrayD::zeros(ndarray::IxDyn(&[self.channels])),
        );
    }

    fn group_stats<F: Scalar>(&self, x: &Array4<F>) -> (Vec<F>, Vec<F>) {
        let glen = x.len() / self.groups;
        let flat = x.as_slice().expect("standard layout");
        let mut means = Vec::with_capacity(self.groups);
        let mut inv_stds = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let block = &flat[g * glen..(g + 1) * glen];
            let mean = block.iter().fold(F::zero(), |a, &v| a + v) / s(glen as f64);
            let var = block
                .iter()
                .fold(F::zero(), |a, &v| a + (v - mean) * (v - mean))
                / s(glen as f64);
            means.push(mean);
            inv_stds.push(F::one() / (var + s(self.eps)).sqrt());
        }
        (means, inv_stds)
    }

    pub fn forward<F: Scalar>(&self, ps: &Tensors<F>, x: &Array4<F>) -> Array4<F> {
        assert_eq!(x.shape()[0], self.channels, "{}: channels", self.name);
        let (means, inv_stds) = self.group_stats(x);
        let gamma = view1(ps, &self.gamma_name());
        let beta = view1(ps, &self.beta_name());
        let per_group = self.channels / self.groups;
        let spatial = x.len() / self.channels;

        let mut y = x.clone();
        let flat = y.as_slice_mut().expect("standard layout");
        for c in 0..self.channels {
            let g = c / per_group;
            let (m, is) = (means[g], inv_stds[g]);
            let (ga, be) = (gamma[c], beta[c]);
            for v in &mut flat[c * spatial..(c + 1) * spatial] {
                *v = (*v - m) * is * ga + be;
            }
        }
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        x: &Array4<F>,
        gy: &Array4<F>,
        grads: &mut Tensors<F>,
    ) -> Array4<F> {
        let (means, inv_stds) = self.group_stats(x);
        let gamma = view1(ps, &self.gamma_name());
        let per_group = self.channels / self.groups;
        let spatial = x.len() / self.channels;
        let glen = per_group * spatial;

        let xf = x.as_slice().expect("standard layout");
        let gyf = gy.as_slice().expect("standard layout");

        let mut ggamma = Array1::<F>::zeros(self.channels);
        let mut gbeta = Array1::<F>::zeros(self.channels);
        let mut gx = Array4::<F>::zeros(x.raw_dim());
        let gxf = gx.as_slice_mut().expect("standard layout");

        for g in 0..self.groups {
            let (m, is) = (means[g], inv_stds[g]);
            let base = g * glen;
            // per-group reductions over ĝ = gy·γ and ĝ·x̂
            let mut sum_gxhat = F::zero();
            let mut sum_gxhat_xhat = F::zero();
            for c_local in 0..per_group {
                let c = g * per_group + c_local;
                let ga = gamma[c];
                let mut sg = F::zero();
                let mut sgx = F::zero();
                for i in 0..spatial {
                    let idx = base + c_local * spatial + i;
                    let xhat = (xf[idx] - m) * is;
                    let gyv = gyf[idx];
                    sg = sg + gyv;
                    sgx = sgx + gyv * xhat;
                    sum_gxhat = sum_gxhat + gyv * ga;
                    sum_gxhat_xhat = sum_gxhat_xhat + gyv * ga * xhat;
                }
                gbeta[c] = gbeta[c] + sg;
                ggamma[c] = ggamma[c] + sgx;
            }
            let n = s::<F>(glen as f64);
            let mean_gxhat = sum_gxhat / n;
            let mean_gxhat_xhat = sum_gxhat_xhat / n;
            for c_local in 0..per_group {
                let c = g * per_group + c_local;
                let ga = gamma[c];
                for i in 0..spatial {
                    let idx = base + c_local * spatial + i;
                    let xhat = (xf[idx] - m) * is;
                    let gxhat = gyf[idx] * ga;
                    gxf[idx] = is * (gxhat - mean_gxhat - xhat * mean_gxhat_xhat);
                }
            }
        }
        grads.add_to(&self.gamma_name(), &ggamma.into_dyn());
        grads.add_to(&self.beta_name(), &gbeta.into_dyn());
        gx
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub name: String,
    pub dim: usize,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache<F> {
    xhat: Array2<F>,
    inv_std: Array1<F>,
}

impl BatchNorm1d {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        BatchNorm1d {
            name: name.into(),
            dim,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn gamma_name(&self) -> String {
        format!("{}.gamma", self.name)
    }

    pub fn beta_name(&self) -> String {
        format!("{}.beta", self.name)
    }

    pub fn rmean_name(&self) -> String {
        format!("{}.running_mean", self.name)
    }

    pub fn rvar_name(&self) -> String {
        format!("{}.running_var", self.name)
    }

    pub fn init<F: Scalar>(&self, ps: &mut Tensors<F>) {
        let d = ndarray::IxDyn(&[self.dim]);
        ps.insert(self.gamma_name(), ndarray::ArrayD::from_elem(d.clone(), F::one()));
        ps.insert(self.beta_name(), ndarray::ArrayD::zeros(d.clone()));
        ps.insert(self.rmean_name(), ndarray::ArrayD::zeros(d.clone()));
        ps.insert(self.rvar_name(), ndarray::ArrayD::from_elem(d, F::one()));
    }

    /// Train-mode pass: batch statistics normalize, running statistics update
    /// (unbiased variance, matching the usual deep-learning convention).
    pub fn forward_train<F: Scalar>(
        &self,
        ps: &mut Tensors<F>,
        x: &Array2<F>,
    ) -> (Array2<F>, BnCache<F>) {
        let n = x.nrows();
        assert!(n >= 1, "{}: empty batch", self.name);
        let mean = x.sum_axis(Axis(0)) / s::<F>(n as f64);
        let mut var = Array1::<F>::zeros(self.dim);
        for row in x.outer_iter() {
            Zip::from(&mut var).and(&row).and(&mean).for_each(|v, &r, &m| {
                *v = *v + (r - m) * (r - m);
            });
        }
        var.mapv_inplace(|v| v / s(n as f64));

        let mom = s::<F>(self.momentum);
        let unbias = if n > 1 {
            s::<F>(n as f64 / (n as f64 - 1.0))
        } else {
            F::one()
        };
        {
            let rm = view1_mut(ps, &self.rmean_name());
            Zip::from(rm).and(&mean).for_each(|r, &m| {
                *r = (F::one() - mom) * *r + mom * m;
            });
        }
        {
            let rv = view1_mut(ps, &self.rvar_name());
            Zip::from(rv).and(&var).for_each(|r, &v| {
                *r = (F::one() - mom) * *r + mom * v * unbias;
            });
        }

        let inv_std = var.mapv(|v| F::one() / (v + s(self.eps)).sqrt());
        let mut xhat = x.clone();
        for mut row in xhat.outer_iter_mut() {
            Zip::from(&mut row).and(&mean).and(&inv_std).for_each(|v, &m, &is| {
                *v = (*v - m) * is;
            });
        }
        let y = self.scale_shift(ps, &xhat);
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_eval<F: Scalar>(&self, ps: &Tensors<F>, x: &Array2<F>) -> Array2<F> {
        let rm = view1(ps, &self.rmean_name());
        let rv = view1(ps, &self.rvar_name());
        let gamma = view1(ps, &self.gamma_name());
        let beta = view1(ps, &self.beta_name());
        let mut y = x.clone();
        for mut row in y.outer_iter_mut() {
            for j in 0..self.dim {
                row[j] = (row[j] - rm[j]) / (rv[j] + s(self.eps)).sqrt() * gamma[j] + beta[j];
            }
        }
        y
    }

    fn scale_shift<F: Scalar>(&self, ps: &Tensors<F>, xhat: &Array2<F>) -> Array2<F> {
        let gamma = view1(ps, &self.gamma_name());
        let beta = view1(ps, &self.beta_name());
        let mut y = xhat.clone();
        for mut row in y.outer_iter_mut() {
            Zip::from(&mut row).and(&gamma).and(&beta).for_each(|v, &g, &b| {
                *v = *v * g + b;
            });
        }
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        cache: &BnCache<F>,
        gy: &Array2<F>,
        grads: &mut Tensors<F>,
    ) -> Array2<F> {
        let n = gy.nrows();
        let nf = s::<F>(n as f64);
        let gamma = view1(ps, &self.gamma_name());

        let mut ggamma = Array1::<F>::zeros(self.dim);
        let mut gbeta = Array1::<F>::zeros(self.dim);
        for (gyr, xhr) in gy.outer_iter().zip(cache.xhat.outer_iter()) {
            Zip::from(&mut ggamma).and(&gyr).and(&xhr).for_each(|a, &g, &x| {
                *a = *a + g * x;
            });
            Zip::from(&mut gbeta).and(&gyr).for_each(|a, &g| *a = *a + g);
        }

        // gx = inv_std/n · (n·ĝ − Σĝ − x̂·Σ(ĝ·x̂)) with ĝ = gy·γ
        let mut sum_g = Array1::<F>::zeros(self.dim);
        let mut sum_gx = Array1::<F>::zeros(self.dim);
        for (gyr, xhr) in gy.outer_iter().zip(cache.xhat.outer_iter()) {
            for j in 0..self.dim {
                let gh = gyr[j] * gamma[j];
                sum_g[j] = sum_g[j] + gh;
                sum_gx[j] = sum_gx[j] + gh * xhr[j];
            }
        }
        let mut gx = Array2::<F>::zeros(gy.raw_dim());
        for ((mut gxr, gyr), xhr) in gx.outer_iter_mut().zip(gy.outer_iter()).zip(cache.xhat.outer_iter()) {
            for j in 0..self.dim {
                let gh = gyr[j] * gamma[j];
                gxr[j] = cache.inv_std[j] / nf * (nf * gh - sum_g[j] - xhr[j] * sum_gx[j]);
            }
        }
        grads.add_to(&self.gamma_name(), &ggamma.into_dyn());
        grads.add_to(&self.beta_name(), &gbeta.into_dyn());
        gx
    }
}

// ---------------------------------------------------------------------------
// Dense layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn w_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn b_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn init<F: Scalar>(&self, ps: &mut Tensors<F>, rng: &mut ChaCha8Rng) {
        ps.insert(
            self.w_name(),
            init_uniform(rng, &[self.out_dim, self.in_dim], self.in_dim),
        );
        ps.insert(self.b_name(), init_uniform(rng, &[self.out_dim], self.in_dim));
    }

    pub fn forward<F: Scalar>(&self, ps: &Tensors<F>, x: &Array2<F>) -> Array2<F> {
        assert_eq!(x.ncols(), self.in_dim, "{}: input width", self.name);
        let w = view2(ps, &self.w_name());
        let b = view1(ps, &self.b_name());
        let mut y = x.dot(&w.t());
        for mut row in y.outer_iter_mut() {
            Zip::from(&mut row).and(&b).for_each(|v, &bv| *v = *v + bv);
        }
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        ps: &Tensors<F>,
        x: &Array2<F>,
        gy: &Array2<F>,
        grads: &mut Tensors<F>,
    ) -> Array2<F> {
        let gw = gy.t().dot(x);
        let gb = gy.sum_axis(Axis(0));
        grads.add_to(&self.w_name(), &gw.into_dyn());
        grads.add_to(&self.b_name(), &gb.into_dyn());
        gy.dot(&view2(ps, &self.w_name()))
    }
}

/// Inverted dropout: surviving units scale by 1/keep so eval needs no rescale.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
        Dropout { p }
    }

    pub fn forward_train<F: Scalar>(
        &self,
        rng: &mut ChaCha8Rng,
        x: &Array2<F>,
    ) -> (Array2<F>, Array2<F>) {
        let keep = 1.0 - self.p;
        let scale = s::<F>(1.0 / keep);
        let mut mask = Array2::<F>::zeros(x.raw_dim());
        for v in mask.iter_mut() {
            if rng.gen::<f64>() < keep {
                *v = scale;
            }
        }
        (x * &mask, mask)
    }

    pub fn backward<F: Scalar>(&self, mask: &Array2<F>, gy: &Array2<F>) -> Array2<F> {
        gy * mask
    }
}

// ---------------------------------------------------------------------------
// Activations (stateless, any dimensionality)
// ---------------------------------------------------------------------------

#[inline]
fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub fn silu<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| v * sigmoid_scalar(v))
}

pub fn silu_backward<F: Scalar, D: Dimension>(x: &Array<F, D>, gy: &Array<F, D>) -> Array<F, D> {
    let mut gx = gy.clone();
    Zip::from(&mut gx).and(x).for_each(|g, &v| {
        let sg = sigmoid_scalar(v);
        *g = *g * sg * (F::one() + v * (F::one() - sg));
    });
    gx
}

/// Sigmoid with outputs clamped into the open interval (0,1) so downstream
/// volume invariants hold even at float saturation.
pub fn sigmoid<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    let lo = s::<F>(1e-7);
    let hi = F::one() - lo;
    x.mapv(|v| sigmoid_scalar(v).max(lo).min(hi))
}

pub fn sigmoid_backward<F: Scalar, D: Dimension>(y: &Array<F, D>, gy: &Array<F, D>) -> Array<F, D> {
    let mut gx = gy.clone();
    Zip::from(&mut gx).and(y).for_each(|g, &yv| {
        *g = *g * yv * (F::one() - yv);
    });
    gx
}

pub fn relu<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| v.max(F::zero()))
}

pub fn relu_backward<F: Scalar, D: Dimension>(x: &Array<F, D>, gy: &Array<F, D>) -> Array<F, D> {
    let mut gx = gy.clone();
    Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= F::zero() {
            *g = F::zero();
        }
    });
    gx
}

pub fn leaky_relu<F: Scalar, D: Dimension>(x: &Array<F, D>, slope: f64) -> Array<F, D> {
    let a = s::<F>(slope);
    x.mapv(|v| if v > F::zero() { v } else { a * v })
}

pub fn leaky_relu_backward<F: Scalar, D: Dimension>(
    x: &Array<F, D>,
    gy: &Array<F, D>,
    slope: f64,
) -> Array<F, D> {
    let a = s::<F>(slope);
    let mut gx = gy.clone();
    Zip::from(&mut gx).and(x).for_each(|g, &v| {
        if v <= F::zero() {
            *g = *g * a;
        }
    });
    gx
}
