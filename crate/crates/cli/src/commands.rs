//! Subcommand implementations.
//!
//! Shared conventions: the output directory is created first, then the
//! resolved configuration snapshot (`<command>.run.json`) and the log file
//! (`<command>.log`) are written before any heavy work starts, so a crashed
//! run still documents what it was asked to do.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Result;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::json;
use voxvae::features::ConvPyramid;
use voxvae::latent::LatentCode;
use voxvae::latent_analysis::ScatterPoint;
use voxvae::metrics::mean_fidelity;
use voxvae::trainer::vae_loop::VaeTrainOptions;
use voxvae::trainer::FoldPlan;
use voxvae::{
    encode_dataset, evaluate_fidelity, export_scatter, fit_pca, generate_cohort, kfold_split,
    load_manifest, load_volume, preprocess, project, save_manifest, save_volume, CohortSpec,
    Error, FidelityReport, LatentStore, Manifest, Task, Vae, Volume,
};

use crate::{
    EncodeArgs, EvalFidelityArgs, PcaArgs, PreprocessArgs, RunCvArgs, SynthArgs, TrainClfArgs,
    TrainVaeArgs,
};

pub const SCRATCH_ENV: &str = "VOXVAE_SCRATCH";

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

pub struct RunLog {
    w: BufWriter<File>,
}

impl RunLog {
    pub fn create(dir: &Path, command: &str) -> Result<Self> {
        let path = dir.join(format!("{command}.log"));
        let file = File::create(&path).map_err(|e| Error::io(path, e))?;
        Ok(RunLog {
            w: BufWriter::new(file),
        })
    }

    pub fn line(&mut self, msg: impl AsRef<str>) -> Result<()> {
        writeln!(self.w, "{}", msg.as_ref())?;
        self.w.flush()?;
        Ok(())
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

pub fn write_snapshot(dir: &Path, command: &str, payload: &serde_json::Value) -> Result<()> {
    let path = dir.join(format!("{command}.run.json"));
    let mut text = serde_json::to_string_pretty(payload)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e).into())
}

/// A store flag may name the file itself or a directory holding latents.bin.
pub fn resolve_store_path(p: &Path) -> PathBuf {
    if p.is_dir() || p.to_string_lossy().ends_with('/') {
        p.join("latents.bin")
    } else {
        p.to_path_buf()
    }
}

pub fn check_device(device: &str) -> Result<()> {
    if device == "cpu" {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "unknown device '{device}'; this build supports only 'cpu'"
        ))
        .into())
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e).into())
}

pub(crate) fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Row argmax with first-index tie-breaking, matching the evaluator.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn load_store(path: &Path) -> Result<LatentStore> {
    Ok(LatentStore::load(resolve_store_path(path))?)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut spec: CohortSpec = match (&args.spec, args.preset) {
        (Some(path), _) => toml::from_str(&read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        (None, Some(crate::CohortPreset::SeparableDesk)) => CohortSpec::separable_desk(),
        (None, None) => unreachable!("clap requires a recipe"),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;

    ensure_dir(&args.out)?;
    write_snapshot(
        &args.out,
        "synth",
        &json!({
            "command": "synth",
            "out": display(&args.out),
            "spec": spec,
        }),
    )?;
    let recipe = toml::to_string_pretty(&spec)
        .map_err(|e| Error::Config(format!("serialize cohort recipe: {e}")))?;
    let recipe_path = args.out.join("cohort.toml");
    fs::write(&recipe_path, recipe).map_err(|e| Error::io(recipe_path, e))?;
    let mut log = RunLog::create(&args.out, "synth")?;
    log.line(format!(
        "recipe: {} subjects ({} EU / {} DS) at edge {}, seed {}",
        spec.len(),
        spec.n_eu,
        spec.n_ds(),
        spec.edge,
        spec.seed
    ))?;

    let manifest = generate_cohort(&spec, &args.out)?;
    log.line(format!("wrote {} volumes + manifest.csv", manifest.len()))?;
    println!(
        "cohort: {} subjects at {}³ in {}",
        manifest.len(),
        spec.edge,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

/// Fields a preprocessing TOML may set; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreprocessPatch {
    clip_percentile: Option<f64>,
    target_shape: Option<[usize; 3]>,
    external_steps: Option<Vec<preprocess::ExternalStepSpec>>,
    scratch_dir: Option<PathBuf>,
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let file_patch = match &args.config {
        Some(path) => toml::from_str::<PreprocessPatch>(&read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => PreprocessPatch::default(),
    };

    let target_shape = args
        .target
        .map(|e| [e, e, e])
        .or(file_patch.target_shape)
        .ok_or_else(|| {
            Error::InvalidInput(
                "no target shape; pass --target or set target_shape in --config".into(),
            )
        })?;
    let mut cfg = preprocess::PreprocessConfig::new(target_shape);
    if let Some(c) = file_patch.clip_percentile {
        cfg.clip_percentile = c;
    }
    if let Some(steps) = file_patch.external_steps {
        cfg.external_steps = steps;
    }
    cfg.scratch_dir = args
        .scratch
        .clone()
        .or(file_patch.scratch_dir)
        .or_else(|| std::env::var_os(SCRATCH_ENV).map(PathBuf::from));
    if let Some(c) = args.clip {
        cfg.clip_percentile = c;
    }
    cfg.validate()?;

    let manifest = load_manifest(&args.manifest)?;
    ensure_dir(&args.out)?;
    let prov_dir = args.out.join("provenance");
    ensure_dir(&prov_dir)?;
    write_snapshot(
        &args.out,
        "preprocess",
        &json!({
            "command": "preprocess",
            "manifest": display(&args.manifest),
            "out": display(&args.out),
            "config": cfg,
        }),
    )?;
    let mut log = RunLog::create(&args.out, "preprocess")?;
    log.line(format!(
        "{} subjects → target {:?}, clip {}",
        manifest.len(),
        cfg.target_shape,
        cfg.clip_percentile
    ))?;

    let mut records = Vec::with_capacity(manifest.len());
    for (i, r) in manifest.records.iter().enumerate() {
        let volume = load_volume(manifest.volume_path(r))?;
        let (processed, provenance) = preprocess::preprocess_pipeline(&volume, &cfg)
            .map_err(|e| Error::InvalidInput(format!("subject {}: {e}", r.subject_id)))?;
        let file = format!("{}.raw", r.subject_id);
        save_volume(&processed, args.out.join(&file))?;
        preprocess::write_provenance(
            prov_dir.join(format!("{}.jsonl", r.subject_id)),
            &provenance,
        )?;
        let mut out_record = r.clone();
        out_record.volume_path = file;
        records.push(out_record);
        if (i + 1) % 20 == 0 {
            eprintln!("processed {}/{}", i + 1, manifest.len());
        }
    }
    let out_manifest = Manifest::new(records, &args.out)?;
    save_manifest(&out_manifest, args.out.join("manifest.csv"))?;
    log.line(format!("wrote {} volumes + manifest.csv", out_manifest.len()))?;
    println!(
        "preprocessed {} volumes to {:?} in {}",
        out_manifest.len(),
        cfg.target_shape,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-vae
// ---------------------------------------------------------------------------

pub fn train_vae(args: TrainVaeArgs) -> Result<()> {
    check_device(&args.device)?;
    let mut cfg = args.model.resolve()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let manifest = load_manifest(&args.manifest)?;
    if manifest.is_empty() {
        return Err(Error::InvalidInput("manifest has no records".into()).into());
    }

    ensure_dir(&args.out)?;
    write_snapshot(
        &args.out,
        "train-vae",
        &json!({
            "command": "train-vae",
            "manifest": display(&args.manifest),
            "out": display(&args.out),
            "max_steps": args.max_steps,
            "checkpoint_every": args.checkpoint_every,
            "early_stop_l1": args.early_stop_l1,
            "log_every": args.log_every,
            "resume": args.resume.as_deref().map(display),
            "config": cfg,
        }),
    )?;
    let mut log = RunLog::create(&args.out, "train-vae")?;

    let mut volumes = Vec::with_capacity(manifest.len());
    for r in &manifest.records {
        volumes.push(load_volume(manifest.volume_path(r))?);
    }
    log.line(format!(
        "loaded {} volumes from {}",
        volumes.len(),
        args.manifest.display()
    ))?;

    let opts = VaeTrainOptions {
        run_dir: Some(args.out.clone()),
        max_steps: args.max_steps,
        checkpoint_every: args.checkpoint_every,
        early_stop_l1: args.early_stop_l1,
        log_every: args.log_every,
        resume: args.resume.as_deref().map(Vae::load).transpose()?,
    };
    let outcome = voxvae::train_vae(&volumes, &cfg, opts)?;

    log.line(format!(
        "finished at step {}; best L1 {} at step {}",
        outcome.steps_run, outcome.best_l1, outcome.best_step
    ))?;
    if let Some(l1) = outcome.final_l1 {
        log.line(format!("early stop: full-set mean L1 {l1}"))?;
    }
    println!(
        "trained {} steps; best L1 {:.6} at step {}; run dir {}",
        outcome.steps_run,
        outcome.best_l1,
        outcome.best_step,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// encode
// ---------------------------------------------------------------------------

pub fn encode(args: EncodeArgs) -> Result<()> {
    check_device(&args.device)?;
    let vae = Vae::load(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    let out_file = resolve_store_path(&args.out);
    let out_dir = out_file
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out_dir)?;
    write_snapshot(
        &out_dir,
        "encode",
        &json!({
            "command": "encode",
            "checkpoint": display(&args.checkpoint),
            "manifest": display(&args.manifest),
            "out": display(&out_file),
            "config": vae.cfg,
        }),
    )?;
    let mut log = RunLog::create(&out_dir, "encode")?;

    let store = encode_dataset(&vae, &manifest)?;
    store.save(&out_file)?;
    let (h, w, d, c) = store.latent_shape();
    log.line(format!(
        "encoded {} subjects to ({h}, {w}, {d}, {c}) latents",
        store.len()
    ))?;
    println!(
        "encoded {} subjects to ({h}, {w}, {d}, {c}) latents in {}",
        store.len(),
        out_file.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train-clf
// ---------------------------------------------------------------------------

fn load_or_split_plan(
    folds: Option<&Path>,
    manifest: &Manifest,
    task: Task,
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    match folds {
        Some(path) => Ok(FoldPlan::load(path)?),
        None => Ok(kfold_split(manifest, task, k, seed)?),
    }
}

/// Test-split class probabilities and argmax labels, one row per subject.
fn write_predictions(
    path: &Path,
    ids: &[String],
    proba: &Array2<f32>,
    class_names: &[&str],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest(e.to_string()))?;
    let mut header = vec!["subject_id".to_string()];
    header.extend(class_names.iter().map(|n| format!("p_{n}")));
    header.push("pred".into());
    w.write_record(&header)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for (i, id) in ids.iter().enumerate() {
        let row: Vec<f32> = proba.row(i).to_vec();
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|p| format!("{p}")));
        rec.push(class_names[argmax(&row)].to_string());
        w.write_record(&rec)
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Manifest(e.to_string()))?;
    Ok(())
}

pub fn train_clf(args: TrainClfArgs) -> Result<()> {
    check_device(&args.device)?;
    let cfg = args.model.resolve()?;
    let task: Task = args.task.into();
    let manifest = load_manifest(&args.manifest)?;
    let store = load_store(&args.latents)?;
    let plan = load_or_split_plan(args.folds.as_deref(), &manifest, task, args.k, args.seed)?;

    ensure_dir(&args.out)?;
    write_snapshot(
        &args.out,
        "train-clf",
        &json!({
            "command": "train-clf",
            "latents": display(&args.latents),
            "manifest": display(&args.manifest),
            "task": task,
            "folds_source": args.folds.as_deref().map(display),
            "k": plan.k,
            "seed": plan.seed,
            "fold": args.fold,
            "pca": args.pca,
            "config": cfg,
        }),
    )?;
    plan.save(args.out.join("folds.json"))?;
    let mut log = RunLog::create(&args.out, "train-clf")?;
    log.line(format!(
        "task {task}, fold {} of {}, {} train / {} test subjects",
        args.fold,
        plan.k,
        plan.folds.get(args.fold).map_or(0, |f| f.train.len()),
        plan.folds.get(args.fold).map_or(0, |f| f.test.len()),
    ))?;

    let trained =
        voxvae::trainer::train_classifier(&store, &manifest, task, args.fold, &plan, &cfg, args.pca)?;
    trained.classifier.save(args.out.join("classifier.ckpt"))?;
    if let Some(pca) = &trained.pca {
        pca.save(args.out.join("pca.json"))?;
    }

    let test_ids = &plan.folds[args.fold].test;
    let x = store.mu_matrix(test_ids)?;
    let x = match &trained.pca {
        Some(pca) => project(pca, &x)?,
        None => x,
    };
    let xf: Array2<f32> = x.mapv(|v| v as f32);
    let proba = trained.classifier.predict_batch(&xf)?;
    write_predictions(
        &args.out.join("predictions.csv"),
        test_ids,
        &proba,
        task.class_names(),
    )?;

    log.line(format!(
        "train accuracy {} over {} epochs; final epoch loss {}",
        trained.train_accuracy,
        trained.history.len(),
        trained.history.last().copied().unwrap_or(f64::NAN)
    ))?;
    println!(
        "fold {} of {}: train accuracy {:.4}; artifacts in {}",
        args.fold,
        plan.k,
        trained.train_accuracy,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// run-cv
// ---------------------------------------------------------------------------

fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

pub fn run_cv(args: RunCvArgs) -> Result<()> {
    check_device(&args.device)?;
    let cfg = args.model.resolve()?;
    let task: Task = args.task.into();
    let manifest = load_manifest(&args.manifest)?;
    let store = load_store(&args.latents)?;
    let plan = load_or_split_plan(args.folds.as_deref(), &manifest, task, args.k, args.seed)?;

    ensure_dir(&args.out)?;
    write_snapshot(
        &args.out,
        "run-cv",
        &json!({
            "command": "run-cv",
            "latents": display(&args.latents),
            "manifest": display(&args.manifest),
            "task": task,
            "folds_source": args.folds.as_deref().map(display),
            "k": plan.k,
            "seed": plan.seed,
            "pca": args.pca,
            "config": cfg,
        }),
    )?;
    plan.save(args.out.join("folds.json"))?;
    let mut log = RunLog::create(&args.out, "run-cv")?;
    log.line(format!("task {task}, k={}, plan seed {}", plan.k, plan.seed))?;

    let report = voxvae::run_cv(&store, &manifest, task, &plan, &cfg, args.pca)?;
    report.save(args.out.join("report.json"))?;

    for fold in &report.folds {
        let line = format!(
            "fold {}: accuracy={:.4}, auc={}",
            fold.fold,
            fold.metrics.accuracy,
            fmt_auc(fold.metrics.auc)
        );
        log.line(&line)?;
        println!("{line}");
    }
    let summary = format!(
        "mean accuracy {:.4} ± {:.4}, mean auc {} ± {}",
        report.mean.accuracy,
        report.std.accuracy,
        fmt_auc(report.mean.auc),
        fmt_auc(report.std.auc)
    );
    log.line(&summary)?;
    println!("{summary}");
    println!("report: {}", args.out.join("report.json").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-fidelity
// ---------------------------------------------------------------------------

/// One subject's fidelity scores; `fidelity.json` holds all of them plus
/// their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityEntry {
    pub subject_id: String,
    #[serde(flatten)]
    pub report: FidelityReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityFile {
    pub per_subject: Vec<FidelityEntry>,
    pub mean: FidelityReport,
}

pub const FIDELITY_CSV_HEADER: [&str; 6] =
    ["subject_id", "ssim", "ms_ssim", "mse", "feat_dist", "cos_sim"];

pub fn fidelity_row(label: &str, r: &FidelityReport) -> Vec<String> {
    vec![
        label.to_string(),
        format!("{}", r.ssim),
        format!("{}", r.ms_ssim),
        format!("{}", r.mse),
        format!("{}", r.feat_dist),
        format!("{}", r.cos_sim),
    ]
}

pub fn eval_fidelity(args: EvalFidelityArgs) -> Result<()> {
    check_device(&args.device)?;
    let vae = Vae::load(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    if manifest.is_empty() {
        return Err(Error::InvalidInput("manifest has no records".into()).into());
    }
    ensure_dir(&args.out)?;
    write_snapshot(
        &args.out,
        "eval-fidelity",
        &json!({
            "command": "eval-fidelity",
            "checkpoint": display(&args.checkpoint),
            "manifest": display(&args.manifest),
            "ms_scales": args.ms_scales,
            "extractor_seed": args.extractor_seed,
            "sample_seed": args.sample_seed,
            "config": vae.cfg,
        }),
    )?;
    let mut log = RunLog::create(&args.out, "eval-fidelity")?;

    let extractor = ConvPyramid::<f32>::default_seeded(args.extractor_seed);
    let mut records: Vec<_> = manifest.records.iter().collect();
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));

    let mut entries = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let x = load_volume(manifest.volume_path(r))?;
        let xhat = reconstruct_for_eval(&vae, &x, args.sample_seed, i as u64)?;
        let report = evaluate_fidelity(&x, &xhat, &extractor, args.ms_scales)
            .map_err(|e| Error::InvalidInput(format!("subject {}: {e}", r.subject_id)))?;
        entries.push(FidelityEntry {
            subject_id: r.subject_id.clone(),
            report,
        });
        if (i + 1) % 20 == 0 {
            eprintln!("scored {}/{}", i + 1, records.len());
        }
    }
    let reports: Vec<FidelityReport> = entries.iter().map(|e| e.report.clone()).collect();
    let mean = mean_fidelity(&reports)?;
    let file = FidelityFile {
        per_subject: entries,
        mean: mean.clone(),
    };

    let json_path = args.out.join("fidelity.json");
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(json_path, e))?;

    let csv_path = args.out.join("fidelity.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::Manifest(e.to_string()))?;
    w.write_record(FIDELITY_CSV_HEADER)
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for e in &file.per_subject {
        w.write_record(fidelity_row(&e.subject_id, &e.report))
            .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    w.write_record(fidelity_row("mean", &mean))
        .map_err(|e| Error::Manifest(e.to_string()))?;
    w.flush().map_err(|e| Error::Manifest(e.to_string()))?;

    log.line(format!(
        "scored {} subjects; mean ssim {}, ms_ssim {}, mse {}",
        file.per_subject.len(),
        mean.ssim,
        mean.ms_ssim,
        mean.mse
    ))?;
    println!(
        "mean fidelity over {} subjects: ssim {:.4}, ms_ssim {:.4}, mse {:.6}, feat_dist {:.4}, cos_sim {:.4}",
        file.per_subject.len(),
        mean.ssim,
        mean.ms_ssim,
        mean.mse,
        mean.feat_dist,
        mean.cos_sim
    );
    Ok(())
}

/// Mean-path reconstruction by default; with a sample seed, each subject
/// decodes one z drawn with seed + its rank in subject-id order.
fn reconstruct_for_eval(
    vae: &Vae,
    x: &Volume,
    sample_seed: Option<u64>,
    rank: u64,
) -> Result<Volume> {
    match sample_seed {
        Some(seed) => Ok(vae.reconstruct(x, seed.wrapping_add(rank))?),
        None => {
            let d = vae.encode(x)?;
            let code = LatentCode {
                z: d.mu().clone(),
                noise_seed: 0,
            };
            Ok(vae.decode(&code)?)
        }
    }
}

// ---------------------------------------------------------------------------
// pca
// ---------------------------------------------------------------------------

pub fn pca(args: PcaArgs) -> Result<()> {
    if args.components < 2 {
        return Err(Error::InvalidInput(format!(
            "the scatter needs at least 2 components, got {}",
            args.components
        ))
        .into());
    }
    let manifest = load_manifest(&args.manifest)?;
    let store = load_store(&args.latents)?;
    let task: Option<Task> = args.task.map(Into::into);

    // Store order (subject-id sorted when written by `encode`), filtered to
    // subjects the labeling covers.
    let mut ids = Vec::new();
    let mut groups = Vec::new();
    for id in store.ids() {
        let record = manifest
            .records
            .iter()
            .find(|r| r.subject_id == id)
            .ok_or_else(|| {
                Error::InvalidInput(format!("subject {id} is in the store but not the manifest"))
            })?;
        let group = match task {
            Some(t) => match t.label_for(record) {
                Some(label) => t.class_names()[label].to_string(),
                None => continue,
            },
            None => record.group.as_str().to_string(),
        };
        ids.push(id.to_string());
        groups.push(group);
    }
    if ids.is_empty() {
        return Err(Error::InvalidInput("no labeled subjects to project".into()).into());
    }

    ensure_dir(&args.out)?;
    write_snapshot(
        &args.out,
        "pca",
        &json!({
            "command": "pca",
            "latents": display(&args.latents),
            "manifest": display(&args.manifest),
            "task": task,
            "components": args.components,
            "subjects": ids.len(),
        }),
    )?;
    let mut log = RunLog::create(&args.out, "pca")?;

    let x = store.mu_matrix(&ids)?;
    let model = fit_pca(&x, args.components)?;
    let coords = project(&model, &x)?;
    let points: Vec<ScatterPoint> = ids
        .iter()
        .zip(&groups)
        .enumerate()
        .map(|(i, (id, group))| ScatterPoint {
            subject_id: id.clone(),
            pc1: coords[[i, 0]],
            pc2: coords[[i, 1]],
            group: group.clone(),
        })
        .collect();

    model.save(args.out.join("pca.json"))?;
    export_scatter(
        &points,
        args.out.join("scatter.csv"),
        args.out.join("scatter.svg"),
    )?;

    let ev: Vec<String> = model
        .explained_variance
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect();
    log.line(format!(
        "fit {} components on {} subjects; explained variance [{}]",
        args.components,
        ids.len(),
        ev.join(", ")
    ))?;
    println!(
        "pca: {} subjects, explained variance [{}]; artifacts in {}",
        ids.len(),
        ev.join(", "),
        args.out.display()
    );
    Ok(())
}
