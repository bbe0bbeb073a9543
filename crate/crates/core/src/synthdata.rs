//! Deterministic phantom-cohort generation. Each subject is a smooth
//! ellipsoid with an internal cavity; group membership shifts overall size
//! and cavity scale, so cohorts carry a known-separable morphological
//! signal that calibrates every downstream accuracy threshold.

use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{save_manifest, AdLabel, Group, IdLabel, Manifest, SubjectRecord};
use crate::volume::{save_volume, Volume};

/// Fully resolved per-subject phantom geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub edge: usize,
    /// Ellipsoid semi-axes in voxels.
    pub semi_axes: (f64, f64, f64),
    /// Cavity semi-axes as a fraction of the body's; 0 disables the cavity.
    pub cavity_scale: f64,
    pub noise_sd: f64,
    /// Softness of the body/cavity boundaries, in voxels.
    pub smooth_radius: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.edge < 8 {
            return Err(Error::InvalidInput(format!(
                "phantom edge must be >= 8, got {}",
                self.edge
            )));
        }
        let (a, b, c) = self.semi_axes;
        let half = (self.edge - 1) as f64 / 2.0;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::InvalidInput("semi-axes must be positive".into()));
        }
        if a > half || b > half || c > half {
            return Err(Error::InvalidInput(format!(
                "semi-axes {:?} do not fit inside an edge-{} volume",
                self.semi_axes, self.edge
            )));
        }
        if !(0.0..1.0).contains(&self.cavity_scale) {
            return Err(Error::InvalidInput(format!(
                "cavity scale must lie in [0, 1), got {}",
                self.cavity_scale
            )));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::InvalidInput("noise_sd must be >= 0".into()));
        }
        if self.smooth_radius <= 0.0 {
            return Err(Error::InvalidInput("smooth radius must be > 0".into()));
        }
        Ok(())
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Render one phantom: body minus cavity, plus seeded Gaussian noise,
/// clamped to [0, 1]. Bit-identical for equal (spec, seed).
pub fn generate_phantom(spec: &PhantomSpec, subject_seed: u64) -> Result<Volume> {
    spec.validate()?;
    let e = spec.edge;
    let center = (e - 1) as f64 / 2.0;
    let (a, b, c) = spec.semi_axes;
    let min_axis = a.min(b).min(c);
    // boundary width expressed in normalized-radius units
    let w_body = spec.smooth_radius / min_axis;
    let w_cavity = spec.smooth_radius / (min_axis * spec.cavity_scale.max(1e-6));

    let mut data = Array3::<f32>::zeros((e, e, e));
    for ((i, j, k), v) in data.indexed_iter_mut() {
        let dx = (i as f64 - center) / a;
        let dy = (j as f64 - center) / b;
        let dz = (k as f64 - center) / c;
        let r = (dx * dx + dy * dy + dz * dz).sqrt();
        let body = logistic((1.0 - r) / w_body);
        let cavity = if spec.cavity_scale > 0.0 {
            logistic((1.0 - r / spec.cavity_scale) / w_cavity)
        } else {
            0.0
        };
        *v = (body * (1.0 - cavity)) as f32;
    }

    if spec.noise_sd > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
        for v in data.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v = (*v as f64 + spec.noise_sd * n).clamp(0.0, 1.0) as f32;
        }
    }

    Ok(Volume::new(data)?
        .with_spacing([1.0, 1.0, 1.0])
        .with_intensity_range([0.0, 1.0]))
}

/// Cohort recipe: group sizes, morphology deltas, jitter magnitudes.
/// The whole cohort is a pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub edge: usize,
    pub n_eu: usize,
    /// DS subjects per progression stage (no_det, prodromal_ad, ad);
    /// their sum is the DS group size.
    pub ad_counts: (usize, usize, usize),
    pub base_semi_axes: (f64, f64, f64),
    /// Cavity fraction for the EU group.
    pub base_cavity: f64,
    /// Multiplies every DS semi-axis (global volume reduction).
    pub ds_axis_factor: f64,
    /// Cavity fraction at the middle (prodromal) stage; stages step
    /// down/up from it by `ad_cavity_step`.
    pub ds_cavity: f64,
    pub ad_cavity_step: f64,
    /// Uniform per-subject cavity jitter (absolute, ±). Values comparable
    /// to `ad_cavity_step` make neighboring stages overlap, which is what
    /// keeps the middle stage genuinely hard.
    pub cavity_jitter: f64,
    /// Uniform per-subject, per-axis relative jitter (±).
    pub axis_jitter: f64,
    /// Extra shrink of the second semi-axis per intellectual-disability
    /// tier (mild ×1, moderate ×(1−s), severe ×(1−2s)).
    pub id_axis_step: f64,
    pub noise_sd: f64,
    pub smooth_radius: f64,
    pub seed: u64,
}

impl CohortSpec {
    /// Desk-scale 80-subject cohort (40 EU / 40 DS) whose group signal is
    /// comfortably linearly separable.
    pub fn separable_desk() -> Self {
        CohortSpec {
            edge: 48,
            n_eu: 40,
            ad_counts: (20, 10, 10),
            base_semi_axes: (18.0, 15.0, 13.0),
            base_cavity: 0.12,
            ds_axis_factor: 0.92,
            ds_cavity: 0.30,
            ad_cavity_step: 0.06,
            cavity_jitter: 0.04,
            axis_jitter: 0.02,
            id_axis_step: 0.03,
            noise_sd: 0.02,
            smooth_radius: 1.5,
            seed: 7,
        }
    }

    pub fn n_ds(&self) -> usize {
        self.ad_counts.0 + self.ad_counts.1 + self.ad_counts.2
    }

    pub fn len(&self) -> usize {
        self.n_eu + self.n_ds()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_eu == 0 || self.n_ds() == 0 {
            return Err(Error::InvalidInput(
                "cohort needs at least one subject per group".into(),
            ));
        }
        if !(self.ds_axis_factor > 0.0 && self.ds_axis_factor <= 1.5) {
            return Err(Error::InvalidInput("ds axis factor out of range".into()));
        }
        if self.cavity_jitter < 0.0 || self.axis_jitter < 0.0 || self.ad_cavity_step < 0.0 {
            return Err(Error::InvalidInput("jitters and steps must be >= 0".into()));
        }
        if self.id_axis_step < 0.0 || self.id_axis_step >= 0.5 {
            return Err(Error::InvalidInput("id axis step out of range".into()));
        }
        // the most extreme subject must still be a valid phantom
        self.probe_spec()?.validate()
    }

    /// Largest-axes spec any subject can reach under positive jitter.
    fn probe_spec(&self) -> Result<PhantomSpec> {
        let (a, b, c) = self.base_semi_axes;
        let grow = 1.0 + self.axis_jitter;
        let cavity =
            (self.ds_cavity + self.ad_cavity_step + self.cavity_jitter).max(self.base_cavity);
        if cavity >= 1.0 {
            return Err(Error::InvalidInput(
                "cavity scale reaches 1.0 under jitter".into(),
            ));
        }
        Ok(PhantomSpec {
            edge: self.edge,
            semi_axes: (a * grow, b * grow, c * grow),
            cavity_scale: cavity,
            noise_sd: self.noise_sd,
            smooth_radius: self.smooth_radius,
        })
    }
}

/// One subject's resolved identity, labels, and render inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPlan {
    pub subject_id: String,
    pub group: Group,
    pub ad_label: Option<AdLabel>,
    pub id_label: Option<IdLabel>,
    pub phantom: PhantomSpec,
    pub noise_seed: u64,
}

const ID_TIERS: [IdLabel; 3] = [IdLabel::Mild, IdLabel::Moderate, IdLabel::Severe];

/// Expand a cohort spec into per-subject plans. Deterministic: jitters and
/// noise seeds come from a single stream seeded by `spec.seed`.
pub fn plan_cohort(spec: &CohortSpec) -> Result<Vec<SubjectPlan>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut plans = Vec::with_capacity(spec.len());

    let mut push = |rng: &mut ChaCha8Rng,
                    subject_id: String,
                    group: Group,
                    ad_label: Option<AdLabel>,
                    id_label: Option<IdLabel>| {
        let (a, b, c) = spec.base_semi_axes;
        let (axis_factor, id_factor, cavity_mid) = match group {
            Group::Eu => (1.0, 1.0, spec.base_cavity),
            Group::Ds => {
                let stage = match ad_label.expect("ds has a stage") {
                    AdLabel::NoDet => -1.0,
                    AdLabel::ProdromalAd => 0.0,
                    AdLabel::Ad => 1.0,
                };
                let tier = ID_TIERS
                    .iter()
                    .position(|t| Some(*t) == id_label)
                    .expect("ds has a tier") as f64;
                (
                    spec.ds_axis_factor,
                    1.0 - spec.id_axis_step * tier,
                    spec.ds_cavity + stage * spec.ad_cavity_step,
                )
            }
        };
        let jit = |rng: &mut ChaCha8Rng, j: f64| {
            if j > 0.0 {
                rng.gen_range(-j..=j)
            } else {
                0.0
            }
        };
        let semi_axes = (
            a * axis_factor * (1.0 + jit(rng, spec.axis_jitter)),
            b * axis_factor * id_factor * (1.0 + jit(rng, spec.axis_jitter)),
            c * axis_factor * (1.0 + jit(rng, spec.axis_jitter)),
        );
        let cavity_scale = (cavity_mid + jit(rng, spec.cavity_jitter)).max(0.0);
        let noise_seed = rng.gen::<u64>();
        plans.push(SubjectPlan {
            subject_id,
            group,
            ad_label,
            id_label,
            phantom: PhantomSpec {
                edge: spec.edge,
                semi_axes,
                cavity_scale,
                noise_sd: spec.noise_sd,
                smooth_radius: spec.smooth_radius,
            },
            noise_seed,
        });
    };

    for i in 0..spec.n_eu {
        push(&mut rng, format!("eu_{i:03}"), Group::Eu, None, None);
    }
    let stages = [
        (AdLabel::NoDet, spec.ad_counts.0),
        (AdLabel::ProdromalAd, spec.ad_counts.1),
        (AdLabel::Ad, spec.ad_counts.2),
    ];
    let mut ds_index = 0usize;
    for (stage, count) in stages {
        for _ in 0..count {
            push(
                &mut rng,
                format!("ds_{ds_index:03}"),
                Group::Ds,
                Some(stage),
                Some(ID_TIERS[ds_index % 3]),
            );
            ds_index += 1;
        }
    }

    for p in &plans {
        p.phantom.validate()?;
    }
    Ok(plans)
}

/// Render every planned subject into `dir` as raw volumes plus
/// `manifest.csv`; returns the manifest.
pub fn generate_cohort(spec: &CohortSpec, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let plans = plan_cohort(spec)?;
    let mut records = Vec::with_capacity(plans.len());
    for plan in &plans {
        let volume = generate_phantom(&plan.phantom, plan.noise_seed)?;
        let file = format!("{}.raw", plan.subject_id);
        save_volume(&volume, dir.join(&file))?;
        records.push(SubjectRecord {
            subject_id: plan.subject_id.clone(),
            volume_path: file,
            group: plan.group,
            ad_label: plan.ad_label,
            id_label: plan.id_label,
            source_dataset: "synthetic".into(),
        });
    }
    let manifest = Manifest::new(records, dir)?;
    save_manifest(&manifest, dir.join("manifest.csv"))?;
    Ok(manifest)
}
