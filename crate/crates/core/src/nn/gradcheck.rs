//! Central finite-difference verification of analytic gradients.
//!
//! The engine has no autograd, so every backward pass is hand-written; this
//! module is the standing defense against sign and indexing mistakes. Checks
//! run in f64 where central differences resolve ~1e−10.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensors;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.n_checked > 0 && self.max_rel_err <= tol
    }
}

/// Compare `analytic` gradients against central differences of `loss` at
/// `n_samples` randomly chosen parameter elements (uniform over elements,
/// so large tensors get proportionally more probes).
pub fn finite_difference_check(
    params: &Tensors<f64>,
    analytic: &Tensors<f64>,
    loss: impl Fn(&Tensors<f64>) -> f64,
    n_samples: usize,
    seed: u64,
    eps: f64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checkable: Vec<(String, usize)> = params
        .iter()
        .filter(|(n, _)| analytic.contains(n))
        .map(|(n, t)| (n.to_string(), t.len()))
        .collect();
    let total: usize = checkable.iter().map(|(_, l)| l).sum();
    assert!(total > 0, "no gradients to check");

    let mut report = GradCheckReport {
        n_checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for _ in 0..n_samples {
        let mut pick = rng.gen_range(0..total);
        let (name, idx) = {
            let mut found = None;
            for (n, l) in &checkable {
                if pick < *l {
                    found = Some((n.clone(), pick));
                    break;
                }
                pick -= l;
            }
            found.expect("pick within total")
        };

        let mut pp = params.clone();
        pp.get_mut(&name).as_slice_mut().expect("contiguous")[idx] += eps;
        let mut pm = params.clone();
        pm.get_mut(&name).as_slice_mut().expect("contiguous")[idx] -= eps;
        let fd = (loss(&pp) - loss(&pm)) / (2.0 * eps);
        let a = analytic.get(&name).as_slice().expect("contiguous")[idx];

        let denom = a.abs().max(fd.abs()).max(1e-6);
        let rel = (a - fd).abs() / denom;
        report.n_checked += 1;
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = Some((name, idx, a, fd));
        }
    }
    report
}
