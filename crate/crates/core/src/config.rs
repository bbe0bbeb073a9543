//! Model configuration: architecture and optimization hyperparameters for one
//! VAE + classifier pipeline instance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_edge: usize,
    pub latent_edge: usize,
    pub stage_channels: Vec<usize>,
    pub res_blocks_per_stage: usize,
    pub latent_channels: usize,
    pub lambda_perc: f64,
    pub lambda_adv: f64,
    pub lambda_kl: f64,
    pub lr_vae: f64,
    pub lr_clf: f64,
    pub epochs_vae: usize,
    pub epochs_clf: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::latent_24()
    }
}

impl ModelConfig {
    /// 192³ input compressed to a 24×24×24×3 latent grid.
    pub fn latent_24() -> Self {
        ModelConfig {
            input_edge: 192,
            latent_edge: 24,
            stage_channels: vec![32, 64, 128, 128],
            res_blocks_per_stage: 2,
            latent_channels: 3,
            lambda_perc: 2e-3,
            lambda_adv: 5e-3,
            lambda_kl: 1e-8,
            lr_vae: 5e-5,
            lr_clf: 1e-4,
            epochs_vae: 1000,
            epochs_clf: 50,
            batch_size: 2,
            seed: 0,
        }
    }

    /// 192³ input compressed to a 12×12×12×3 latent grid.
    pub fn latent_12() -> Self {
        ModelConfig {
            latent_edge: 12,
            stage_channels: vec![32, 64, 128, 256, 512],
            ..ModelConfig::latent_24()
        }
    }

    /// 192³ input compressed to a 3×3×3×3 latent grid.
    pub fn latent_3() -> Self {
        ModelConfig {
            latent_edge: 3,
            stage_channels: vec![32, 64, 128, 256, 512, 512, 1024],
            ..ModelConfig::latent_24()
        }
    }

    /// Desk-scale configuration: 48³ phantoms down to a 6×6×6×3 latent grid.
    /// Small channel counts and a higher learning rate keep CPU runs short.
    pub fn desk_48() -> Self {
        ModelConfig {
            input_edge: 48,
            latent_edge: 6,
            stage_channels: vec![8, 16, 32, 32],
            res_blocks_per_stage: 1,
            lr_vae: 1e-3,
            lr_clf: 1e-3,
            epochs_vae: 12,
            batch_size: 8,
            ..ModelConfig::latent_24()
        }
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_edge.pow(3) * self.latent_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(Error::Config("stage_channels must be non-empty".into()));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("stage channels must be positive".into()));
        }
        let halvings = self.stages() - 1;
        let divisor = 1usize
            .checked_shl(halvings as u32)
            .ok_or_else(|| Error::Config("too many stages".into()))?;
        if self.input_edge % divisor != 0 || self.input_edge / divisor != self.latent_edge {
            return Err(Error::Config(format!(
                "input_edge {} with {} stages yields latent edge {}, config declares {}",
                self.input_edge,
                self.stages(),
                self.input_edge / divisor,
                self.latent_edge
            )));
        }
        if self.latent_edge == 0 {
            return Err(Error::Config("latent_edge must be positive".into()));
        }
        if self.latent_channels == 0 {
            return Err(Error::Config("latent_channels must be positive".into()));
        }
        if self.res_blocks_per_stage == 0 {
            return Err(Error::Config("res_blocks_per_stage must be positive".into()));
        }
        for (name, v) in [
            ("lambda_perc", self.lambda_perc),
            ("lambda_adv", self.lambda_adv),
            ("lambda_kl", self.lambda_kl),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, v) in [("lr_vae", self.lr_vae), ("lr_clf", self.lr_clf)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and > 0")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Stable digest of the configuration; checkpoints embed it so loads
    /// against a different architecture fail fast.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_sha256(json.as_bytes())
    }

    /// Digest of the fields that determine the trained encoder and hence the
    /// latents it emits — everything except the classifier's own
    /// hyperparameters. Latent stores carry this hash, so classifier settings
    /// may vary against a fixed store while any change to the VAE is refused.
    pub fn encoder_hash(&self) -> String {
        let identity = (
            self.input_edge,
            self.latent_edge,
            &self.stage_channels,
            self.res_blocks_per_stage,
            self.latent_channels,
            self.lambda_perc.to_bits(),
            self.lambda_adv.to_bits(),
            self.lambda_kl.to_bits(),
            self.lr_vae.to_bits(),
            self.epochs_vae,
            self.batch_size,
            self.seed,
        );
        let json = serde_json::to_string(&identity).expect("identity serializes");
        hex_sha256(json.as_bytes())
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
