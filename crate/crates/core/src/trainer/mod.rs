//! Training orchestration: task definitions, stratified folds, latent
//! encoding, the VAE optimization loop, and cross-validated classification.

pub mod cv;
pub mod folds;
pub mod store;
pub mod tasks;
pub mod vae_loop;

pub use cv::{
    run_cv, train_classifier, CVReport, FoldOutcome, MetricsSummary, PcaSummary,
    PredictionRecord, TrainedFold,
};
pub use folds::{kfold_split, Fold, FoldPlan};
pub use store::{encode_dataset, LatentStore};
pub use tasks::Task;
pub use vae_loop::{mean_recon_l1, train_vae, HistoryRecord, TrainVaeOutcome, VaeTrainOptions};
