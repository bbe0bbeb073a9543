//! `report`: render CSV tables and static plots from run directories.
//!
//! Sources are discovered per run directory: `report.json` (cross-validation
//! results), `fidelity.json` (reconstruction scores), and `scatter.csv`
//! (PCA projections, re-rendered as SVG). Column layouts keep one fold or
//! subject per row so the tables diff cleanly across runs.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use anyhow::Result;
use serde_json::json;
use voxvae::latent_analysis::{scatter_svg, ScatterPoint};
use voxvae::trainer::MetricsSummary;
use voxvae::{CVReport, Error};

use crate::commands::{
    display, ensure_dir, fidelity_row, write_snapshot, FidelityFile, RunLog, FIDELITY_CSV_HEADER,
};
use crate::ReportArgs;

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Manifest(e.to_string()).into())
}

fn write_row<W: std::io::Write>(w: &mut csv::Writer<W>, row: &[String]) -> Result<()> {
    w.write_record(row)
        .map_err(|e| Error::Manifest(e.to_string()).into())
}

fn finish<W: std::io::Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::Manifest(e.to_string()))?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

/// Directory basename, deduplicated across the requested runs.
fn unique_run_id(dir: &Path, used: &mut HashSet<String>) -> String {
    let base: String = dir
        .file_name()
        .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let mut id = base.clone();
    let mut n = 1;
    while !used.insert(id.clone()) {
        n += 1;
        id = format!("{base}_{n}");
    }
    id
}

fn summary_row(id: &str, r: &CVReport) -> Vec<String> {
    vec![
        id.to_string(),
        r.task.to_string(),
        r.k.to_string(),
        r.seed.to_string(),
        r.input_dim.to_string(),
        r.pca_components.map_or_else(String::new, |n| n.to_string()),
        r.folds.len().to_string(),
        format!("{}", r.mean.accuracy),
        format!("{}", r.std.accuracy),
        fmt_opt(r.mean.auc),
        fmt_opt(r.std.auc),
    ]
}

fn metrics_row(label: &str, m: &MetricsSummary) -> Vec<String> {
    let mut row = vec![label.to_string(), format!("{}", m.accuracy), fmt_opt(m.auc)];
    row.extend(m.sensitivity.iter().map(|v| format!("{v}")));
    row.extend(m.specificity.iter().map(|v| format!("{v}")));
    row.push(String::new());
    row
}

/// One row per fold plus aggregate rows, with per-class sensitivity and
/// specificity columns.
fn write_folds_csv(path: &Path, r: &CVReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["fold".to_string(), "accuracy".into(), "auc".into()];
    header.extend(r.class_names.iter().map(|c| format!("sensitivity_{c}")));
    header.extend(r.class_names.iter().map(|c| format!("specificity_{c}")));
    header.push("train_accuracy".into());
    write_row(&mut w, &header)?;
    for fold in &r.folds {
        let m = &fold.metrics;
        let mut row = vec![
            fold.fold.to_string(),
            format!("{}", m.accuracy),
            fmt_opt(m.auc),
        ];
        row.extend(m.sensitivity.iter().map(|v| format!("{v}")));
        row.extend(m.specificity.iter().map(|v| format!("{v}")));
        row.push(format!("{}", fold.train_accuracy));
        write_row(&mut w, &row)?;
    }
    write_row(&mut w, &metrics_row("mean", &r.mean))?;
    write_row(&mut w, &metrics_row("std", &r.std))?;
    finish(w)
}

/// Pooled test-fold predictions: truth, argmax, and class probabilities.
fn write_predictions_csv(path: &Path, r: &CVReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec![
        "subject_id".to_string(),
        "fold".into(),
        "truth".into(),
        "pred".into(),
    ];
    header.extend(r.class_names.iter().map(|c| format!("p_{c}")));
    write_row(&mut w, &header)?;
    for p in &r.predictions {
        let mut row = vec![
            p.subject_id.clone(),
            p.fold.to_string(),
            r.class_names[p.truth].clone(),
            r.class_names[p.pred].clone(),
        ];
        row.extend(p.proba.iter().map(|v| format!("{v}")));
        write_row(&mut w, &row)?;
    }
    finish(w)
}

pub fn report(args: ReportArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    write_snapshot(
        &args.out,
        "report",
        &json!({
            "command": "report",
            "runs": args.runs.iter().map(|p| display(p)).collect::<Vec<_>>(),
            "out": display(&args.out),
        }),
    )?;
    let mut log = RunLog::create(&args.out, "report")?;

    let mut used = HashSet::new();
    let mut summary_rows = Vec::new();
    let mut fidelity_rows: Vec<Vec<String>> = Vec::new();
    let mut artifacts = 0usize;

    for dir in &args.runs {
        let id = unique_run_id(dir, &mut used);

        let cv_path = dir.join("report.json");
        if cv_path.is_file() {
            let report = CVReport::load(&cv_path)?;
            summary_rows.push(summary_row(&id, &report));
            write_folds_csv(&args.out.join(format!("{id}_folds.csv")), &report)?;
            write_predictions_csv(&args.out.join(format!("{id}_predictions.csv")), &report)?;
            log.line(format!("{id}: {} folds of task {}", report.folds.len(), report.task))?;
            artifacts += 1;
        }

        let fid_path = dir.join("fidelity.json");
        if fid_path.is_file() {
            let text = fs::read_to_string(&fid_path).map_err(|e| Error::io(&fid_path, e))?;
            let file: FidelityFile = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", fid_path.display())))?;
            for entry in &file.per_subject {
                let mut row = vec![id.clone()];
                row.extend(fidelity_row(&entry.subject_id, &entry.report));
                fidelity_rows.push(row);
            }
            let mut row = vec![id.clone()];
            row.extend(fidelity_row("mean", &file.mean));
            fidelity_rows.push(row);
            log.line(format!("{id}: fidelity over {} subjects", file.per_subject.len()))?;
            artifacts += 1;
        }

        let scatter_path = dir.join("scatter.csv");
        if scatter_path.is_file() {
            let mut reader = csv::Reader::from_path(&scatter_path)
                .map_err(|e| Error::Config(format!("{}: {e}", scatter_path.display())))?;
            let points: Vec<ScatterPoint> = reader
                .deserialize()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("{}: {e}", scatter_path.display())))?;
            let svg_path = args.out.join(format!("{id}_scatter.svg"));
            fs::write(&svg_path, scatter_svg(&points)).map_err(|e| Error::io(&svg_path, e))?;
            log.line(format!("{id}: scatter with {} points", points.len()))?;
            artifacts += 1;
        }
    }

    if artifacts == 0 {
        return Err(Error::InvalidInput(
            "no report.json, fidelity.json, or scatter.csv in the given run directories".into(),
        )
        .into());
    }

    if !summary_rows.is_empty() {
        let mut w = csv_writer(&args.out.join("summary.csv"))?;
        let header: Vec<String> = [
            "run",
            "task",
            "k",
            "seed",
            "input_dim",
            "pca_components",
            "folds",
            "accuracy_mean",
            "accuracy_std",
            "auc_mean",
            "auc_std",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        write_row(&mut w, &header)?;
        for row in &summary_rows {
            write_row(&mut w, row)?;
        }
        finish(w)?;
    }

    if !fidelity_rows.is_empty() {
        let mut w = csv_writer(&args.out.join("fidelity.csv"))?;
        let mut header = vec!["run".to_string()];
        header.extend(FIDELITY_CSV_HEADER.iter().map(|s| s.to_string()));
        write_row(&mut w, &header)?;
        for row in &fidelity_rows {
            write_row(&mut w, row)?;
        }
        finish(w)?;
    }

    println!(
        "rendered {} artifacts from {} run directories into {}",
        artifacts,
        args.runs.len(),
        args.out.display()
    );
    Ok(())
}
