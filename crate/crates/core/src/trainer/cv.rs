//! Per-fold classifier training and k-fold cross-validated evaluation over
//! encoded latents.
//!
//! One VAE encodes the whole dataset once; cross-validation splits only the
//! classifiers. Everything derived from training data — class weights and
//! the optional PCA basis — is fit per fold on that fold's training split.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{class_weights_with_k, Classifier, ClassifierConfig, ClassifierNet};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::latent_analysis::{fit_pca, project, PcaModel};
use crate::losses::{classifier_loss_batch, ClassLossConfig};
use crate::manifest::Manifest;
use crate::metrics::{confusion_metrics, macro_ovr_auc, roc_auc, MetricsReport};
use crate::nn::Adam;

use super::folds::FoldPlan;
use super::store::LatentStore;
use super::tasks::Task;

/// Mean or standard deviation of fold metrics; sensitivity/specificity are
/// per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub sensitivity: Vec<f64>,
    pub specificity: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
}

/// Fingerprint of a per-fold PCA fit; enough to re-verify that the basis was
/// fit on the fold's training split alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub n_components: usize,
    pub mean_norm: f64,
    pub explained_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Class weights computed from the training split only.
    pub class_weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pca: Option<PcaSummary>,
    pub train_accuracy: f64,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub subject_id: String,
    pub fold: usize,
    pub truth: usize,
    pub pred: usize,
    pub proba: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub task: Task,
    pub class_names: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub config_json: String,
    pub config_hash: String,
    /// Classifier input width: flattened latent dim, or PCA components.
    pub input_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pca_components: Option<usize>,
    pub folds: Vec<FoldOutcome>,
    pub mean: MetricsSummary,
    pub std: MetricsSummary,
    /// Test-fold predictions pooled over folds, sorted by subject id.
    pub predictions: Vec<PredictionRecord>,
}

impl CVReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// Checks that `mean` and `std` match a recomputation from the folds to
    /// 1e−12.
    pub fn verify_aggregates(&self) -> Result<()> {
        let (mean, std) = summarize(&self.folds)?;
        for (name, got, want) in [("mean", &self.mean, &mean), ("std", &self.std, &std)] {
            let mut pairs = vec![(got.accuracy, want.accuracy)];
            pairs.extend(got.sensitivity.iter().copied().zip(want.sensitivity.iter().copied()));
            pairs.extend(got.specificity.iter().copied().zip(want.specificity.iter().copied()));
            match (got.auc, want.auc) {
                (Some(a), Some(b)) => pairs.push((a, b)),
                (None, None) => {}
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "{name}: auc presence differs from recomputation"
                    )))
                }
            }
            if got.sensitivity.len() != want.sensitivity.len()
                || got.specificity.len() != want.specificity.len()
            {
                return Err(Error::InvalidInput(format!(
                    "{name}: per-class metric count differs from recomputation"
                )));
            }
            for (g, w) in pairs {
                if (g - w).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "{name} drifts from fold recomputation: {g} vs {w}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A classifier trained on one fold's training split, with everything fit
/// alongside it.
pub struct TrainedFold {
    pub classifier: Classifier,
    pub pca: Option<PcaModel>,
    pub class_weights: Vec<f64>,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
    pub train_accuracy: f64,
}

/// Classifier batch size; training splits smaller than this use one batch.
const CLF_BATCH: usize = 16;

/// Distinct RNG stream per (task, fold) so folds are independent but jointly
/// reproducible from the config seed.
fn fold_rng(seed: u64, task: Task, fold: usize) -> ChaCha8Rng {
    let t = Task::ALL.iter().position(|x| *x == task).expect("task in table") as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + t * 4096 + fold as u64);
    rng
}

fn labels_for(manifest: &Manifest, task: Task, ids: &[String]) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            let rec = manifest
                .record(id)
                .ok_or_else(|| Error::InvalidInput(format!("subject {id} not in manifest")))?;
            task.label_for(rec).ok_or_else(|| {
                Error::InvalidInput(format!("subject {id} is not eligible for task {task}"))
            })
        })
        .collect()
}

fn argmax_rows(proba: &Array2<f32>) -> Vec<usize> {
    proba
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Trains one fold's classifier on latents from `store`.
///
/// Class weights and the optional PCA basis are computed from the training
/// split only. Returns per-epoch mean training loss as history.
pub fn train_classifier(
    store: &LatentStore,
    manifest: &Manifest,
    task: Task,
    fold_index: usize,
    plan: &FoldPlan,
    cfg: &ModelConfig,
    pca_components: Option<usize>,
) -> Result<TrainedFold> {
    check_store(store, cfg)?;
    if plan.task != task {
        return Err(Error::InvalidInput(format!(
            "fold plan was built for task {}, not {task}",
            plan.task
        )));
    }
    plan.audit(manifest)?;
    let fold = plan.folds.get(fold_index).ok_or_else(|| {
        Error::InvalidInput(format!(
            "fold {fold_index} out of range for k={}",
            plan.k
        ))
    })?;
    let n_classes = task.n_classes();
    let train_labels = labels_for(manifest, task, &fold.train)?;
    let class_weights = class_weights_with_k(&train_labels, n_classes)?;

    let x_train_raw = store.mu_matrix(&fold.train)?;
    let pca = match pca_components {
        Some(p) => Some(fit_pca(&x_train_raw, p)?),
        None => None,
    };
    let x_train_f64 = match &pca {
        Some(m) => project(m, &x_train_raw)?,
        None => x_train_raw,
    };
    let x_train = x_train_f64.mapv(|v| v as f32);
    let input_dim = x_train.ncols();

    let mut rng = fold_rng(cfg.seed, task, fold_index);
    let init_seed: u64 = rng.gen();
    let clf_cfg = ClassifierConfig::new(input_dim, n_classes);
    let net = ClassifierNet::new(clf_cfg.clone())?;
    let mut params = net.init_params::<f32>(init_seed);
    let mut grads = params.zeros_like();
    let mut opt = Adam::<f32>::new(cfg.lr_clf);
    let loss_cfg = ClassLossConfig::new(class_weights.clone());

    let n_train = x_train.nrows();
    let batch = CLF_BATCH.min(n_train);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = Vec::with_capacity(cfg.epochs_clf);
    let mut steps = 0u64;
    for _ in 0..cfg.epochs_clf {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let mut xb = Array2::<f32>::zeros((chunk.len(), input_dim));
            let mut yb = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                xb.row_mut(r).assign(&x_train.row(i));
                yb.push(train_labels[i]);
            }
            let (logits, cache) = net.forward_train(&mut params, &xb, &mut rng)?;
            let (loss, g_logits) = classifier_loss_batch(&logits, &yb, &loss_cfg)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step: steps as usize + 1,
                    term: "classifier".into(),
                });
            }
            grads.fill_zero();
            net.backward(&params, &cache, &g_logits, &mut grads);
            opt.step(&mut params, &grads);
            steps += 1;
            epoch_loss += loss as f64;
            batches += 1;
        }
        history.push(epoch_loss / batches as f64);
    }

    let mut classifier = Classifier::build(clf_cfg, init_seed)?;
    classifier.params = params;
    classifier.step = steps;

    let proba = classifier.predict_batch(&x_train)?;
    let preds = argmax_rows(&proba);
    let correct = preds
        .iter()
        .zip(&train_labels)
        .filter(|(p, y)| p == y)
        .count();
    let train_accuracy = correct as f64 / n_train as f64;

    Ok(TrainedFold {
        classifier,
        pca,
        class_weights,
        history,
        train_accuracy,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

fn summarize(folds: &[FoldOutcome]) -> Result<(MetricsSummary, MetricsSummary)> {
    if folds.is_empty() {
        return Err(Error::InvalidInput("no folds to summarize".into()));
    }
    let n_classes = folds[0].metrics.n_classes;
    let pick = |f: fn(&MetricsReport) -> f64| -> Vec<f64> {
        folds.iter().map(|o| f(&o.metrics)).collect()
    };
    let (acc_mean, acc_std) = mean_std(&pick(|m| m.accuracy));
    let mut sens = (Vec::new(), Vec::new());
    let mut spec = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let per_fold: Vec<f64> = folds.iter().map(|o| o.metrics.sensitivity[c]).collect();
        let (m, s) = mean_std(&per_fold);
        sens.0.push(m);
        sens.1.push(s);
        let per_fold: Vec<f64> = folds.iter().map(|o| o.metrics.specificity[c]).collect();
        let (m, s) = mean_std(&per_fold);
        spec.0.push(m);
        spec.1.push(s);
    }
    let auc = if folds.iter().all(|o| o.metrics.auc.is_some()) {
        let per_fold: Vec<f64> = folds.iter().map(|o| o.metrics.auc.unwrap()).collect();
        Some(mean_std(&per_fold))
    } else {
        None
    };
    Ok((
        MetricsSummary {
            accuracy: acc_mean,
            sensitivity: sens.0,
            specificity: spec.0,
            auc: auc.map(|a| a.0),
        },
        MetricsSummary {
            accuracy: acc_std,
            sensitivity: sens.1,
            specificity: spec.1,
            auc: auc.map(|a| a.1),
        },
    ))
}

/// The store must carry the config's encoder hash: latents from a different
/// VAE (architecture, objective weights, schedule, or seed) are refused,
/// while classifier-only settings may differ.
fn check_store(store: &LatentStore, cfg: &ModelConfig) -> Result<()> {
    if store.config_hash() != cfg.encoder_hash() {
        return Err(Error::InvalidInput(format!(
            "latent store was encoded under config {}, current config is {}",
            &store.config_hash()[..12.min(store.config_hash().len())],
            &cfg.encoder_hash()[..12]
        )));
    }
    let want_shape = (
        cfg.latent_edge,
        cfg.latent_edge,
        cfg.latent_edge,
        cfg.latent_channels,
    );
    if store.latent_shape() != want_shape {
        return Err(Error::shape_mismatch(
            &[want_shape.0, want_shape.1, want_shape.2, want_shape.3],
            {
                let (a, b, c, d) = store.latent_shape();
                [a, b, c, d]
            },
        ));
    }
    Ok(())
}

/// Cross-validates classifiers for `task` over pre-encoded latents.
///
/// The latent store must match the config's encoder identity — latents
/// encoded under a different VAE are refused. With `pca_components` set, a
/// PCA basis is fit per fold on the training split and both splits are
/// projected before classification.
pub fn run_cv(
    store: &LatentStore,
    manifest: &Manifest,
    task: Task,
    plan: &FoldPlan,
    cfg: &ModelConfig,
    pca_components: Option<usize>,
) -> Result<CVReport> {
    cfg.validate()?;
    check_store(store, cfg)?;
    if plan.task != task {
        return Err(Error::InvalidInput(format!(
            "fold plan was built for task {}, not {task}",
            plan.task
        )));
    }
    plan.audit(manifest)?;

    let n_classes = task.n_classes();
    let mut folds = Vec::with_capacity(plan.k);
    let mut predictions = Vec::new();
    for (fold_index, fold) in plan.folds.iter().enumerate() {
        let trained =
            train_classifier(store, manifest, task, fold_index, plan, cfg, pca_components)?;

        let test_labels = labels_for(manifest, task, &fold.test)?;
        let x_test_raw = store.mu_matrix(&fold.test)?;
        let x_test_f64 = match &trained.pca {
            Some(m) => project(m, &x_test_raw)?,
            None => x_test_raw,
        };
        let x_test = x_test_f64.mapv(|v| v as f32);
        let proba = trained.classifier.predict_batch(&x_test)?;
        let preds = argmax_rows(&proba);

        let mut metrics = confusion_metrics(&preds, &test_labels, n_classes)?;
        let proba_f64 = proba.mapv(|v| v as f64);
        metrics.auc = Some(if n_classes == 2 {
            roc_auc(&proba_f64.column(1).to_vec(), &test_labels)?
        } else {
            macro_ovr_auc(&proba_f64, &test_labels, n_classes)?
        });

        for (i, id) in fold.test.iter().enumerate() {
            predictions.push(PredictionRecord {
                subject_id: id.clone(),
                fold: fold_index,
                truth: test_labels[i],
                pred: preds[i],
                proba: proba_f64.row(i).to_vec(),
            });
        }
        folds.push(FoldOutcome {
            fold: fold_index,
            train_ids: fold.train.clone(),
            test_ids: fold.test.clone(),
            class_weights: trained.class_weights,
            pca: trained.pca.as_ref().map(|m| PcaSummary {
                n_components: m.n_components(),
                mean_norm: m.mean.iter().map(|v| v * v).sum::<f64>().sqrt(),
                explained_variance: m.explained_variance.clone(),
            }),
            train_accuracy: trained.train_accuracy,
            history: trained.history,
            metrics,
        });
    }

    let (mean, std) = summarize(&folds)?;
    predictions.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(CVReport {
        task,
        class_names: task.class_names().iter().map(|s| s.to_string()).collect(),
        k: plan.k,
        seed: plan.seed,
        config_json: serde_json::to_string(cfg)?,
        config_hash: cfg.config_hash(),
        input_dim: pca_components.unwrap_or_else(|| store.latent_dim()),
        pca_components,
        folds,
        mean,
        std,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::LatentDistribution;
    use crate::manifest::{AdLabel, Group, SubjectRecord};
    use crate::trainer::folds::kfold_split;
    use ndarray::Array4;
    use rand_distr::{Distribution, Normal};

    /// Config consistent with a fabricated (1, 1, 1, 4) latent store.
    fn micro_cfg() -> ModelConfig {
        ModelConfig {
            input_edge: 2,
            latent_edge: 1,
            latent_channels: 4,
            stage_channels: vec![4, 4],
            res_blocks_per_stage: 1,
            epochs_clf: 200,
            lr_clf: 1e-3,
            seed: 0,
            ..ModelConfig::desk_48()
        }
    }

    /// Store + manifest whose class-0/class-1 latents sit in well-separated
    /// blobs (±2 per coordinate, unit noise).
    fn separable_fixture(
        cfg: &ModelConfig,
        n_per_class: usize,
    ) -> (LatentStore, Manifest) {
        let mut store = LatentStore::new(cfg.encoder_hash(), (1, 1, 1, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0f32, 1.0).unwrap();
        let mut records = Vec::new();
        for class in 0..2usize {
            let center = if class == 0 { 2.0f32 } else { -2.0 };
            for i in 0..n_per_class {
                let id = if class == 0 {
                    format!("eu_{i:03}")
                } else {
                    format!("ds_{i:03}")
                };
                let mu = Array4::from_shape_simple_fn((1, 1, 1, 4), || {
                    center + noise.sample(&mut rng)
                });
                let lv = Array4::from_elem((1, 1, 1, 4), -2.0);
                store.insert(&id, LatentDistribution::new(mu, lv).unwrap()).unwrap();
                records.push(SubjectRecord {
                    subject_id: id.clone(),
                    volume_path: format!("{id}.raw"),
                    group: if class == 0 { Group::Eu } else { Group::Ds },
                    ad_label: None,
                    id_label: None,
                    source_dataset: "test".into(),
                });
            }
        }
        (store, Manifest::new(records, "/tmp").unwrap())
    }

    #[test]
    fn separable_latents_cross_validate_cleanly() {
        let cfg = micro_cfg();
        let (store, manifest) = separable_fixture(&cfg, 12);
        let plan = kfold_split(&manifest, Task::EuVsDs, 3, 1).unwrap();
        let report = run_cv(&store, &manifest, Task::EuVsDs, &plan, &cfg, None).unwrap();

        assert_eq!(report.folds.len(), 3);
        for fold in &report.folds {
            assert_eq!(fold.test_ids.len(), 8);
            assert!(fold.train_accuracy >= 0.99, "train acc {}", fold.train_accuracy);
            assert!(fold.metrics.accuracy >= 0.99, "test acc {}", fold.metrics.accuracy);
            assert!(fold.metrics.auc.unwrap() >= 0.99);
            assert_eq!(fold.history.len(), cfg.epochs_clf);
            let early: f64 = fold.history[..10].iter().sum();
            let late: f64 = fold.history[cfg.epochs_clf - 10..].iter().sum();
            assert!(late < early, "loss did not decrease: {early} vs {late}");
        }
        assert!(report.mean.accuracy >= 0.99);
        report.verify_aggregates().unwrap();
        assert_eq!(report.predictions.len(), 24);
        let ids: Vec<&str> = report.predictions.iter().map(|p| p.subject_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn reruns_serialize_identically() {
        let cfg = micro_cfg();
        let (store, manifest) = separable_fixture(&cfg, 6);
        let plan = kfold_split(&manifest, Task::EuVsDs, 2, 7).unwrap();
        let a = run_cv(&store, &manifest, Task::EuVsDs, &plan, &cfg, None).unwrap();
        let b = run_cv(&store, &manifest, Task::EuVsDs, &plan, &cfg, None).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.json"), dir.path().join("b.json"));
        a.save(&pa).unwrap();
        b.save(&pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        let back = CVReport::load(&pa).unwrap();
        assert_eq!(back, a);
        back.verify_aggregates().unwrap();
    }

    #[test]
    fn pca_projection_keeps_separable_problem_separable() {
        let cfg = micro_cfg();
        let (store, manifest) = separable_fixture(&cfg, 8);
        let plan = kfold_split(&manifest, Task::EuVsDs, 2, 3).unwrap();
        let report = run_cv(&store, &manifest, Task::EuVsDs, &plan, &cfg, Some(2)).unwrap();
        assert_eq!(report.input_dim, 2);
        assert_eq!(report.pca_components, Some(2));
        for fold in &report.folds {
            let pca = fold.pca.as_ref().expect("pca summary recorded");
            assert_eq!(pca.n_components, 2);
            assert_eq!(pca.explained_variance.len(), 2);
            // The class split dominates the variance, so PC1 keeps it.
            assert!(pca.explained_variance[0] > pca.explained_variance[1]);
            assert!(fold.metrics.accuracy >= 0.9, "acc {}", fold.metrics.accuracy);
        }
    }

    #[test]
    fn three_class_report_has_full_schema() {
        let cfg = ModelConfig {
            epochs_clf: 120,
            ..micro_cfg()
        };
        let mut store = LatentStore::new(cfg.encoder_hash(), (1, 1, 1, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0f32, 0.5).unwrap();
        let mut records = Vec::new();
        for class in 0..3usize {
            let ad = [AdLabel::NoDet, AdLabel::ProdromalAd, AdLabel::Ad][class];
            let center = [-3.0f32, 0.0, 3.0][class];
            for i in 0..6 {
                let id = format!("ds_{class}{i:02}");
                let mu = Array4::from_shape_simple_fn((1, 1, 1, 4), || {
                    center + noise.sample(&mut rng)
                });
                let lv = Array4::from_elem((1, 1, 1, 4), -2.0);
                store.insert(&id, LatentDistribution::new(mu, lv).unwrap()).unwrap();
                records.push(SubjectRecord {
                    subject_id: id.clone(),
                    volume_path: format!("{id}.raw"),
                    group: Group::Ds,
                    ad_label: Some(ad),
                    id_label: None,
                    source_dataset: "test".into(),
                });
            }
        }
        let manifest = Manifest::new(records, "/tmp").unwrap();
        let plan = kfold_split(&manifest, Task::Ad3Class, 2, 5).unwrap();
        let report = run_cv(&store, &manifest, Task::Ad3Class, &plan, &cfg, None).unwrap();
        assert_eq!(report.class_names, ["no_ad", "prodromal_ad", "ad"]);
        for fold in &report.folds {
            assert_eq!(fold.metrics.n_classes, 3);
            assert_eq!(fold.metrics.sensitivity.len(), 3);
            assert_eq!(fold.metrics.specificity.len(), 3);
            assert_eq!(fold.metrics.confusion.len(), 3);
            assert!(fold.metrics.auc.is_some());
            assert_eq!(fold.class_weights.len(), 3);
        }
        assert_eq!(report.mean.sensitivity.len(), 3);
        report.verify_aggregates().unwrap();
    }

    #[test]
    fn recorded_class_weights_come_from_training_split_only() {
        let cfg = micro_cfg();
        let (store, manifest) = separable_fixture(&cfg, 6);
        let plan = kfold_split(&manifest, Task::EuVsDs, 2, 2).unwrap();
        let report = run_cv(&store, &manifest, Task::EuVsDs, &plan, &cfg, None).unwrap();
        for fold in &report.folds {
            let train_labels = labels_for(&manifest, Task::EuVsDs, &fold.train_ids).unwrap();
            let expect = class_weights_with_k(&train_labels, 2).unwrap();
            assert_eq!(fold.class_weights, expect);
            let overlap = fold
                .train_ids
                .iter()
                .any(|id| fold.test_ids.contains(id));
            assert!(!overlap);
        }
    }

    #[test]
    fn stale_latents_and_tampered_plans_are_refused() {
        let cfg = micro_cfg();
        let (store, manifest) = separable_fixture(&cfg, 6);
        let plan = kfold_split(&manifest, Task::EuVsDs, 2, 2).unwrap();

        let mut stale = LatentStore::new("somebody-else", (1, 1, 1, 4));
        for id in store.ids() {
            let d = store.get(id).unwrap();
            stale
                .insert(id, LatentDistribution::new(d.mu().clone(), d.log_var().clone()).unwrap())
                .unwrap();
        }
        let err = run_cv(&stale, &manifest, Task::EuVsDs, &plan, &cfg, None).unwrap_err();
        assert!(err.to_string().contains("encoded under"), "{err}");

        let mut leaky = plan.clone();
        let id = leaky.folds[0].test[0].clone();
        leaky.folds[0].train.push(id);
        assert!(run_cv(&store, &manifest, Task::EuVsDs, &leaky, &cfg, None).is_err());

        assert!(run_cv(&store, &manifest, Task::AdBinary, &plan, &cfg, None).is_err());
    }

    #[test]
    fn verify_aggregates_catches_drift() {
        let cfg = micro_cfg();
        let (store, manifest) = separable_fixture(&cfg, 6);
        let plan = kfold_split(&manifest, Task::EuVsDs, 2, 2).unwrap();
        let mut report = run_cv(&store, &manifest, Task::EuVsDs, &plan, &cfg, None).unwrap();
        report.mean.accuracy += 1e-9;
        assert!(report.verify_aggregates().is_err());
    }
}
