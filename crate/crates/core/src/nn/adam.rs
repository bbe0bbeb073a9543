//! Adaptive-moment optimizer with bias correction.

use super::{s, Scalar, Tensors};

pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Tensors<F>,
    v: Tensors<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Tensors::new(),
            v: Tensors::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter that has a gradient entry. Parameters
    /// without gradients (running statistics and other buffers) are skipped.
    pub fn step(&mut self, params: &mut Tensors<F>, grads: &Tensors<F>) {
        self.t += 1;
        let b1 = s::<F>(self.beta1);
        let b2 = s::<F>(self.beta2);
        let one = F::one();
        let bc1 = s::<F>(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = s::<F>(1.0 - self.beta2.powi(self.t as i32));
        let lr = s::<F>(self.lr);
        let eps = s::<F>(self.eps);

        let names: Vec<String> = params
            .names()
            .filter(|n| grads.contains(n))
            .map(String::from)
            .collect();
        for name in &names {
            let g = grads.get(name);
            if !self.m.contains(name) {
                self.m.insert(name.clone(), ndarray::ArrayD::zeros(g.raw_dim()));
                self.v.insert(name.clone(), ndarray::ArrayD::zeros(g.raw_dim()));
            }
            let m = self.m.get_mut(name);
            ndarray::Zip::from(&mut *m)
                .and(g)
                .for_each(|m, &g| *m = b1 * *m + (one - b1) * g);
            let v = self.v.get_mut(name);
            ndarray::Zip::from(&mut *v)
                .and(g)
                .for_each(|v, &g| *v = b2 * *v + (one - b2) * g * g);

            let m = self.m.get(name);
            let v = self.v.get(name);
            let p = params.get_mut(name);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}
