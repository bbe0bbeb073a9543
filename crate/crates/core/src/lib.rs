//! Latent representation learning for 3D volumetric scans.
//!
//! A family of convolutional variational autoencoders compresses volumes to
//! small (μ, log σ²) latent grids; downstream modules classify diagnoses from
//! those latents, score reconstruction fidelity, and analyze the latent space
//! with PCA. Synthetic phantom cohorts make the whole pipeline testable at
//! desk scale.

pub mod adversarial;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod error;
pub mod features;
pub mod latent;
pub mod latent_analysis;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod nifti;
pub mod nn;
pub mod preprocess;
pub mod synthdata;
pub mod trainer;
pub mod vae;
pub mod volume;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use classifier::{build_classifier, class_weights_from, Classifier, ClassifierConfig};
pub use config::ModelConfig;
pub use error::{Error, Result};
pub use latent::{LatentCode, LatentDistribution};
pub use latent_analysis::{export_scatter, fit_pca, project, PcaModel, ScatterPoint};
pub use losses::{LossBreakdown, LossWeights};
pub use manifest::{load_manifest, save_manifest, AdLabel, Group, IdLabel, Manifest, SubjectRecord};
pub use metrics::{
    confusion_metrics, evaluate_fidelity, macro_ovr_auc, mse, ms_ssim3d, roc_auc, ssim3d,
    FidelityReport, MetricsReport,
};
pub use synthdata::{generate_cohort, generate_phantom, plan_cohort, CohortSpec, PhantomSpec};
pub use trainer::{
    encode_dataset, kfold_split, run_cv, train_vae, CVReport, FoldPlan, LatentStore, Task,
    VaeTrainOptions,
};
pub use vae::{build_vae, latent_shape_for, reparameterize, Vae, VaeNet};
pub use volume::{load_volume, save_volume, Volume};
