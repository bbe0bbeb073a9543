//! Preprocessing: percentile-clipped intensity normalization and center
//! crop/pad, plus a subprocess adapter for the external steps (bias
//! correction, registration, skull-stripping) that are delegated to
//! third-party tools rather than reimplemented.

use std::fmt;
use std::fs;

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{load_volume, save_volume, Volume};

// ---------------------------------------------------------------------------
// Intensity normalization
// ---------------------------------------------------------------------------

/// clip(v, 0, P) / P where P is the `clip_percentile` intensity over nonzero
/// voxels (linear-interpolated percentile). Zero voxels stay zero, negative
/// values clamp to zero, and the top tail saturates at exactly 1.
pub fn normalize_intensity(v: &Volume, clip_percentile: f64) -> Result<Volume> {
    if !(clip_percentile > 50.0 && clip_percentile <= 100.0) {
        return Err(Error::InvalidInput(format!(
            "clip percentile must be in (50, 100], got {clip_percentile}"
        )));
    }
    let mut nonzero: Vec<f32> = v.data().iter().copied().filter(|&x| x != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::InvalidInput(
            "cannot normalize an all-zero volume".into(),
        ));
    }
    nonzero.sort_by(|a, b| a.partial_cmp(b).expect("finite intensities"));
    let p = percentile_sorted(&nonzero, clip_percentile);
    if !(p > 0.0) {
        return Err(Error::InvalidInput(format!(
            "clip threshold must be positive, got {p} at percentile {clip_percentile}"
        )));
    }
    let data = v.data().mapv(|x| x.clamp(0.0, p) / p);
    Ok(Volume::new(data)?
        .with_spacing(v.spacing())
        .with_intensity_range([0.0, 1.0]))
}

/// Linear-interpolated percentile of an ascending slice.
fn percentile_sorted(sorted: &[f32], pct: f64) -> f32 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * pct / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = (pos - lo as f64) as f32;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

// ---------------------------------------------------------------------------
// Crop / pad
// ---------------------------------------------------------------------------

/// Center-aligned crop and/or zero-pad to `target`, axis by axis. Total
/// function; cropping then padding back restores the overlap region exactly.
pub fn crop_or_pad(v: &Volume, target: [usize; 3]) -> Volume {
    let shape = v.data().dim();
    let in_dims = [shape.0, shape.1, shape.2];
    if in_dims == target {
        return v.clone();
    }
    let mut out = Array3::<f32>::zeros((target[0], target[1], target[2]));
    let m: Vec<usize> = (0..3).map(|a| in_dims[a].min(target[a])).collect();
    let src: Vec<usize> = (0..3).map(|a| (in_dims[a] - m[a]) / 2).collect();
    let dst: Vec<usize> = (0..3).map(|a| (target[a] - m[a]) / 2).collect();
    out.slice_mut(s![
        dst[0]..dst[0] + m[0],
        dst[1]..dst[1] + m[1],
        dst[2]..dst[2] + m[2]
    ])
    .assign(&v.data().slice(s![
        src[0]..src[0] + m[0],
        src[1]..src[1] + m[1],
        src[2]..src[2] + m[2]
    ]));
    Volume::new(out)
        .expect("crop/pad of a finite volume is finite")
        .with_spacing(v.spacing())
        .with_intensity_range(v.intensity_range())
}

// ---------------------------------------------------------------------------
// External tool adapter
// ---------------------------------------------------------------------------

/// The four delegated pipeline steps, in their fixed execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalStepName {
    BiasCorrection,
    AffineHeadRegistration,
    SkullStrip,
    AffineBrainRegistration,
}

impl fmt::Display for ExternalStepName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExternalStepName::BiasCorrection => "bias_correction",
            ExternalStepName::AffineHeadRegistration => "affine_head_registration",
            ExternalStepName::SkullStrip => "skull_strip",
            ExternalStepName::AffineBrainRegistration => "affine_brain_registration",
        };
        f.write_str(s)
    }
}

/// A subprocess invocation contract: the command template receives `{in}`
/// and `{out}` file paths and must write the transformed volume to `{out}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalStepSpec {
    pub name: ExternalStepName,
    pub command_template: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub enabled: bool,
    /// When the tool is missing (command not found), pass the volume through
    /// unchanged and record a provenance warning instead of failing.
    #[serde(default)]
    pub allow_identity: bool,
}

fn default_timeout() -> u64 {
    600
}

impl ExternalStepSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.command_template.contains("{in}") || !self.command_template.contains("{out}") {
            return Err(Error::InvalidInput(format!(
                "step {}: command template must contain {{in}} and {{out}}",
                self.name
            )));
        }
        if self.timeout_secs == 0 {
            return Err(Error::InvalidInput(format!(
                "step {}: timeout must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

/// One line of the per-subject provenance log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub step: ExternalStepName,
    pub duration_ms: u64,
    pub exit_status: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

pub fn write_provenance(path: impl AsRef<Path>, records: &[ProvenanceRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_provenance(path: impl AsRef<Path>) -> Result<Vec<ProvenanceRecord>> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Writes the volume to a scratch file, substitutes `{in}`/`{out}` into the
/// template, runs it through `sh -c` with a timeout, and loads the result.
/// Exit code 127 (command not found) with `allow_identity` set passes the
/// input through with a warning.
pub fn run_external_step(
    v: &Volume,
    step: &ExternalStepSpec,
    scratch: &Path,
) -> Result<(Volume, ProvenanceRecord)> {
    step.validate()?;
    let dir = tempfile::Builder::new()
        .prefix(&format!("{}-", step.name))
        .tempdir_in(scratch)
        .map_err(|e| Error::io(scratch, e))?;
    let in_path = dir.path().join("in.nii.gz");
    let out_path = dir.path().join("out.nii.gz");
    save_volume(v, &in_path)?;

    let command = step
        .command_template
        .replace("{in}", &in_path.to_string_lossy())
        .replace("{out}", &out_path.to_string_lossy());

    // spool output to files: bounded pipes could deadlock a chatty tool
    let stdout_path = dir.path().join("stdout");
    let stderr_path = dir.path().join("stderr");
    let stdout_file = fs::File::create(&stdout_path).map_err(|e| Error::io(&stdout_path, e))?;
    let stderr_file = fs::File::create(&stderr_path).map_err(|e| Error::io(&stderr_path, e))?;

    let started = Instant::now();
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .stdin(Stdio::null())
        .stdout(stdout_file)
        .stderr(stderr_file)
        .spawn()
        .map_err(|e| Error::ExternalStep {
            step: step.name.to_string(),
            reason: format!("failed to spawn shell: {e}"),
        })?;

    let deadline = started + Duration::from_secs(step.timeout_secs);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::ExternalStep {
                        step: step.name.to_string(),
                        reason: format!("timed out after {} s", step.timeout_secs),
                    });
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => {
                return Err(Error::ExternalStep {
                    step: step.name.to_string(),
                    reason: format!("wait failed: {e}"),
                })
            }
        }
    };
    let duration_ms = started.elapsed().as_millis() as u64;

    if status.code() == Some(127) && step.allow_identity {
        let warning = format!("tool unavailable (exit 127); passed volume through: {command}");
        return Ok((
            v.clone(),
            ProvenanceRecord {
                step: step.name,
                duration_ms,
                exit_status: status.code(),
                warning: Some(warning),
            },
        ));
    }
    if !status.success() {
        let tail = |p: &Path| -> String {
            fs::read_to_string(p)
                .unwrap_or_default()
                .chars()
                .rev()
                .take(500)
                .collect::<String>()
                .chars()
                .rev()
                .collect()
        };
        return Err(Error::ExternalStep {
            step: step.name.to_string(),
            reason: format!(
                "exit status {:?}; stdout: {:?}; stderr: {:?}",
                status.code(),
                tail(&stdout_path),
                tail(&stderr_path)
            ),
        });
    }
    let result = load_volume(&out_path).map_err(|e| Error::ExternalStep {
        step: step.name.to_string(),
        reason: format!("output volume unreadable: {e}"),
    })?;
    Ok((
        result,
        ProvenanceRecord {
            step: step.name,
            duration_ms,
            exit_status: status.code(),
            warning: None,
        },
    ))
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    #[serde(default = "default_clip_percentile")]
    pub clip_percentile: f64,
    pub target_shape: [usize; 3],
    #[serde(default)]
    pub external_steps: Vec<ExternalStepSpec>,
    /// Scratch directory for external-step temp files; system temp when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scratch_dir: Option<PathBuf>,
}

fn default_clip_percentile() -> f64 {
    99.5
}

impl PreprocessConfig {
    pub fn new(target_shape: [usize; 3]) -> Self {
        PreprocessConfig {
            clip_percentile: default_clip_percentile(),
            target_shape,
            external_steps: Vec::new(),
            scratch_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_percentile > 50.0 && self.clip_percentile <= 100.0) {
            return Err(Error::InvalidInput(format!(
                "clip percentile must be in (50, 100], got {}",
                self.clip_percentile
            )));
        }
        if self.target_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput("target shape has a zero axis".into()));
        }
        let mut seen = Vec::new();
        for step in &self.external_steps {
            step.validate()?;
            if seen.contains(&step.name) {
                return Err(Error::InvalidInput(format!(
                    "duplicate external step {}",
                    step.name
                )));
            }
            seen.push(step.name);
        }
        Ok(())
    }

    fn scratch(&self) -> PathBuf {
        self.scratch_dir
            .clone()
            .unwrap_or_else(std::env::temp_dir)
    }
}

/// Enabled external steps in their fixed order, then intensity
/// normalization, then center crop/pad to the target shape.
pub fn preprocess_pipeline(
    v: &Volume,
    cfg: &PreprocessConfig,
) -> Result<(Volume, Vec<ProvenanceRecord>)> {
    cfg.validate()?;
    let mut steps: Vec<&ExternalStepSpec> =
        cfg.external_steps.iter().filter(|st| st.enabled).collect();
    steps.sort_by_key(|st| st.name);

    let mut cur = v.clone();
    let mut provenance = Vec::new();
    let scratch = cfg.scratch();
    for step in steps {
        let (next, record) = run_external_step(&cur, step, &scratch)?;
        cur = next;
        provenance.push(record);
    }
    let normalized = normalize_intensity(&cur, cfg.clip_percentile)?;
    Ok((crop_or_pad(&normalized, cfg.target_shape), provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vol_from_fn(shape: (usize, usize, usize), f: impl Fn(usize, usize, usize) -> f32) -> Volume {
        let mut a = Array3::<f32>::zeros(shape);
        for ((i, j, k), v) in a.indexed_iter_mut() {
            *v = f(i, j, k);
        }
        Volume::new(a).unwrap()
    }

    #[test]
    fn constant_volume_normalizes_to_one() {
        let v = vol_from_fn((4, 4, 4), |_, _, _| 5.0);
        let n = normalize_intensity(&v, 99.5).unwrap();
        assert!(n.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn unit_range_volume_with_clip_100_is_unchanged() {
        let v = vol_from_fn((4, 4, 4), |i, j, k| ((i + j + k) as f32) / 9.0);
        assert_eq!(*v.data().iter().reduce(|a, b| if a > b { a } else { b }).unwrap(), 1.0);
        let n = normalize_intensity(&v, 100.0).unwrap();
        assert_eq!(n.data(), v.data());
    }

    #[test]
    fn ramp_saturates_exactly_the_top_half_percent() {
        // 1..=1000 over a 10³ grid: the 99.5th percentile is 995.005, so the
        // five values 996..=1000 clip to 1.0
        let v = vol_from_fn((10, 10, 10), |i, j, k| (i * 100 + j * 10 + k + 1) as f32);
        let n = normalize_intensity(&v, 99.5).unwrap();
        let ones = n.data().iter().filter(|&&x| x == 1.0).count();
        assert_eq!(ones, 5);
        assert!(n.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        let below = n.data().iter().filter(|&&x| x < 1.0).count();
        assert_eq!(below, 995);
    }

    #[test]
    fn zero_voxels_stay_zero_and_negatives_clamp() {
        let v = vol_from_fn((4, 4, 4), |i, j, k| {
            if (i, j, k) == (0, 0, 0) {
                0.0
            } else if (i, j, k) == (1, 1, 1) {
                -3.0
            } else {
                (i + j + k) as f32
            }
        });
        let n = normalize_intensity(&v, 99.5).unwrap();
        assert_eq!(n.data()[[0, 0, 0]], 0.0);
        assert_eq!(n.data()[[1, 1, 1]], 0.0);
        assert!(n.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn all_zero_volume_is_rejected() {
        let v = vol_from_fn((4, 4, 4), |_, _, _| 0.0);
        assert!(normalize_intensity(&v, 99.5).is_err());
    }

    #[test]
    fn out_of_range_percentile_is_rejected() {
        let v = vol_from_fn((2, 2, 2), |_, _, _| 1.0);
        assert!(normalize_intensity(&v, 50.0).is_err());
        assert!(normalize_intensity(&v, 100.5).is_err());
    }

    #[test]
    fn crop_identity_when_shapes_match() {
        let v = vol_from_fn((6, 6, 6), |i, j, k| (i * 36 + j * 6 + k) as f32);
        let out = crop_or_pad(&v, [6, 6, 6]);
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn center_crop_matches_index_oracle() {
        let v = vol_from_fn((20, 20, 20), |i, j, k| (i * 400 + j * 20 + k) as f32);
        let out = crop_or_pad(&v, [16, 16, 16]);
        assert_eq!(out.shape(), (16, 16, 16));
        for i in 0..16 {
            for j in 0..16 {
                for k in 0..16 {
                    assert_eq!(out.data()[[i, j, k]], v.data()[[i + 2, j + 2, k + 2]]);
                }
            }
        }
    }

    #[test]
    fn pad_zero_border_and_exact_inverse() {
        let v = vol_from_fn((12, 12, 12), |i, j, k| (i + j + k + 1) as f32);
        let out = crop_or_pad(&v, [16, 16, 16]);
        assert_eq!(out.shape(), (16, 16, 16));
        // border of 2 each side is zero
        let total: f32 = out.data().iter().sum();
        let center: f32 = out.data().slice(s![2..14, 2..14, 2..14]).iter().sum();
        let orig: f32 = v.data().iter().sum();
        assert_eq!(total, center);
        assert_eq!(center, orig);
        // padding then cropping back restores the volume exactly
        let back = crop_or_pad(&out, [12, 12, 12]);
        assert_eq!(back.data(), v.data());
    }

    #[test]
    fn mixed_crop_and_pad_axes() {
        let v = vol_from_fn((10, 20, 16), |i, j, k| (i * 320 + j * 16 + k) as f32);
        let out = crop_or_pad(&v, [16, 16, 16]);
        assert_eq!(out.shape(), (16, 16, 16));
        // axis 0 pads by 3 each side; axis 1 crops 2 each side; axis 2 unchanged
        for i in 0..16usize {
            for j in 0..16usize {
                for k in 0..16usize {
                    let expect = if (3..13).contains(&i) {
                        v.data()[[i - 3, j + 2, k]]
                    } else {
                        0.0
                    };
                    assert_eq!(out.data()[[i, j, k]], expect, "({i},{j},{k})");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn crop_or_pad_shape_and_overlap_round_trip(
            in_dims in proptest::collection::vec(1usize..10, 3),
            target in proptest::collection::vec(1usize..10, 3),
        ) {
            let shape = (in_dims[0], in_dims[1], in_dims[2]);
            let v = vol_from_fn(shape, |i, j, k| (i * 100 + j * 10 + k + 1) as f32);
            let t = [target[0], target[1], target[2]];
            let out = crop_or_pad(&v, t);
            prop_assert_eq!(out.shape(), (t[0], t[1], t[2]));
            // round trip restores the overlap region
            let back = crop_or_pad(&out, [shape.0, shape.1, shape.2]);
            for a in 0..3 {
                prop_assert_eq!(back.data().shape()[a], v.data().shape()[a]);
            }
            let m: Vec<usize> = (0..3).map(|a| v.data().shape()[a].min(t[a])).collect();
            let src: Vec<usize> = (0..3).map(|a| (v.data().shape()[a] - m[a]) / 2).collect();
            for i in 0..m[0] {
                for j in 0..m[1] {
                    for k in 0..m[2] {
                        let idx = [src[0] + i, src[1] + j, src[2] + k];
                        prop_assert_eq!(back.data()[idx], v.data()[idx]);
                    }
                }
            }
        }
    }

    fn identity_step() -> ExternalStepSpec {
        ExternalStepSpec {
            name: ExternalStepName::SkullStrip,
            command_template: "cp {in} {out}".into(),
            timeout_secs: 30,
            enabled: true,
            allow_identity: false,
        }
    }

    #[test]
    fn identity_external_step_round_trips_volume() {
        let v = vol_from_fn((6, 6, 6), |i, j, k| (i + 2 * j + 3 * k) as f32 * 0.25);
        let dir = tempfile::tempdir().unwrap();
        let (out, record) = run_external_step(&v, &identity_step(), dir.path()).unwrap();
        assert_eq!(out.data(), v.data());
        assert_eq!(record.exit_status, Some(0));
        assert!(record.warning.is_none());
    }

    #[test]
    fn failing_external_step_reports_output() {
        let step = ExternalStepSpec {
            command_template: "echo boom >&2; true {in} {out}; exit 3".into(),
            ..identity_step()
        };
        let v = vol_from_fn((4, 4, 4), |_, _, _| 1.0);
        let dir = tempfile::tempdir().unwrap();
        let err = run_external_step(&v, &step, dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("skull_strip"), "{msg}");
        assert!(msg.contains("boom"), "{msg}");
    }

    #[test]
    fn missing_tool_with_allow_identity_passes_through() {
        let step = ExternalStepSpec {
            command_template: "definitely_not_a_real_tool_xyz {in} {out}".into(),
            allow_identity: true,
            ..identity_step()
        };
        let v = vol_from_fn((4, 4, 4), |i, _, _| (i + 1) as f32);
        let dir = tempfile::tempdir().unwrap();
        let (out, record) = run_external_step(&v, &step, dir.path()).unwrap();
        assert_eq!(out.data(), v.data());
        assert_eq!(record.exit_status, Some(127));
        assert!(record.warning.is_some());

        // without allow_identity the same failure is an error
        let strict = ExternalStepSpec {
            allow_identity: false,
            ..step
        };
        assert!(run_external_step(&v, &strict, dir.path()).is_err());
    }

    #[test]
    fn hanging_external_step_times_out() {
        let step = ExternalStepSpec {
            command_template: "sleep 30; cp {in} {out}".into(),
            timeout_secs: 1,
            ..identity_step()
        };
        let v = vol_from_fn((2, 2, 2), |_, _, _| 1.0);
        let dir = tempfile::tempdir().unwrap();
        let err = run_external_step(&v, &step, dir.path()).unwrap_err();
        assert!(err.to_string().contains("timed out"), "{err}");
    }

    #[test]
    fn step_template_without_placeholders_is_rejected() {
        let step = ExternalStepSpec {
            command_template: "cp a b".into(),
            ..identity_step()
        };
        assert!(step.validate().is_err());
        let cfg = PreprocessConfig {
            external_steps: vec![step],
            ..PreprocessConfig::new([8, 8, 8])
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn duplicate_steps_are_rejected() {
        let cfg = PreprocessConfig {
            external_steps: vec![identity_step(), identity_step()],
            ..PreprocessConfig::new([8, 8, 8])
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn pipeline_normalizes_and_pads_deterministically() {
        let v = vol_from_fn((12, 12, 12), |i, j, k| (i * 144 + j * 12 + k) as f32);
        let cfg = PreprocessConfig::new([16, 16, 16]);
        let (out, provenance) = preprocess_pipeline(&v, &cfg).unwrap();
        assert!(provenance.is_empty());
        assert_eq!(out.shape(), (16, 16, 16));
        assert!(out.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        // zero border from padding
        assert_eq!(out.data()[[0, 0, 0]], 0.0);
        assert_eq!(out.data()[[15, 15, 15]], 0.0);

        let (again, _) = preprocess_pipeline(&v, &cfg).unwrap();
        assert_eq!(out.data(), again.data());
    }

    #[test]
    fn pipeline_runs_enabled_steps_in_fixed_order() {
        // two identity steps listed out of order; provenance shows canonical order
        let mk = |name, enabled| ExternalStepSpec {
            name,
            enabled,
            ..identity_step()
        };
        let dir = tempfile::tempdir().unwrap();
        let cfg = PreprocessConfig {
            external_steps: vec![
                mk(ExternalStepName::SkullStrip, true),
                mk(ExternalStepName::BiasCorrection, true),
                mk(ExternalStepName::AffineBrainRegistration, false),
            ],
            scratch_dir: Some(dir.path().to_path_buf()),
            ..PreprocessConfig::new([8, 8, 8])
        };
        let v = vol_from_fn((8, 8, 8), |i, j, k| (i + j + k + 1) as f32);
        let (_, provenance) = preprocess_pipeline(&v, &cfg).unwrap();
        let order: Vec<ExternalStepName> = provenance.iter().map(|r| r.step).collect();
        assert_eq!(
            order,
            vec![
                ExternalStepName::BiasCorrection,
                ExternalStepName::SkullStrip
            ]
        );
    }

    #[test]
    fn pipeline_propagates_all_zero_error() {
        let v = vol_from_fn((8, 8, 8), |_, _, _| 0.0);
        let cfg = PreprocessConfig::new([8, 8, 8]);
        assert!(preprocess_pipeline(&v, &cfg).is_err());
    }

    #[test]
    fn provenance_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("provenance.jsonl");
        let records = vec![
            ProvenanceRecord {
                step: ExternalStepName::BiasCorrection,
                duration_ms: 12,
                exit_status: Some(0),
                warning: None,
            },
            ProvenanceRecord {
                step: ExternalStepName::SkullStrip,
                duration_ms: 0,
                exit_status: Some(127),
                warning: Some("tool unavailable".into()),
            },
        ];
        write_provenance(&path, &records).unwrap();
        assert_eq!(read_provenance(&path).unwrap(), records);
    }
}
