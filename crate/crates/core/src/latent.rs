//! Latent grids: per-voxel (μ, log σ²) distributions and sampled codes.
//!
//! σ is stored as log-variance so positivity holds by construction;
//! σ = exp(0.5·log_var).

use ndarray::Array4;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDistribution {
    mu: Array4<f32>,
    log_var: Array4<f32>,
}

impl LatentDistribution {
    pub fn new(mu: Array4<f32>, log_var: Array4<f32>) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::shape_mismatch(mu.shape(), log_var.shape()));
        }
        if mu.iter().any(|v| !v.is_finite()) || log_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "latent distribution contains non-finite values".into(),
            ));
        }
        Ok(LatentDistribution { mu, log_var })
    }

    pub fn mu(&self) -> &Array4<f32> {
        &self.mu
    }

    pub fn log_var(&self) -> &Array4<f32> {
        &self.log_var
    }

    /// (h, w, d, c)
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let s = self.mu.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn num_elements(&self) -> usize {
        self.mu.len()
    }

    /// μ flattened channel-last row-major: index = ((h·W + w)·D + d)·C + c.
    /// This is the classifier input layout; fixed so checkpoints stay portable.
    pub fn mu_flat(&self) -> Vec<f32> {
        self.mu.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Array4<f32>,
    pub noise_seed: u64,
}

impl LatentCode {
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let s = self.z.shape();
        (s[0], s[1], s[2], s[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn mismatched_shapes_rejected() {
        let mu = Array4::zeros((2, 2, 2, 3));
        let lv = Array4::zeros((2, 2, 2, 2));
        assert!(LatentDistribution::new(mu, lv).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let mu = Array4::from_elem((1, 1, 1, 3), f32::NAN);
        let lv = Array4::zeros((1, 1, 1, 3));
        assert!(LatentDistribution::new(mu, lv).is_err());
    }

    #[test]
    fn flatten_order_is_channel_last_row_major() {
        let mut mu = Array4::zeros((1, 1, 2, 3));
        for d in 0..2 {
            for c in 0..3 {
                mu[[0, 0, d, c]] = (d * 3 + c) as f32;
            }
        }
        let d = LatentDistribution::new(mu, Array4::zeros((1, 1, 2, 3))).unwrap();
        assert_eq!(d.mu_flat(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
