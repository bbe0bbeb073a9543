//! The VAE optimization loop: composite objective, alternating
//! generator/discriminator updates, history logging, checkpointing, and the
//! divergence guard.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adversarial::{disc_step_grads, gen_adv_grad, PatchDiscriminator};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{ConvPyramid, FeatureExtractor};
use crate::losses::{
    kl_backward, kl_sum, l1, l1_backward, l1_recon, perceptual_grad, LossBreakdown, LossWeights,
};
use crate::nn::{Adam, Tensors};
use crate::vae::{build_vae, reparameterize_with_eps, Vae};
use crate::volume::Volume;

/// Knobs beyond [`ModelConfig`] that shape one training run but not the
/// model itself (paths, cadences, stopping rules).
#[derive(Debug, Default)]
pub struct VaeTrainOptions {
    /// When set, receives config.json, history.jsonl, and checkpoints/.
    pub run_dir: Option<PathBuf>,
    /// Caps the run at this many optimization steps (an epoch schedule is
    /// still derived from the config; the cap applies on top of it).
    pub max_steps: Option<usize>,
    /// Writes checkpoints/vae_{step}.ckpt every this many steps.
    pub checkpoint_every: Option<usize>,
    /// After any batch whose reconstruction term falls below this threshold,
    /// evaluates mean-path L1 over the full training set and stops once that
    /// also falls below it.
    pub early_stop_l1: Option<f64>,
    /// Progress line to stderr every this many steps; 0 silences.
    pub log_every: usize,
    /// Continue from existing parameters instead of a fresh initialization.
    /// The data and noise schedules restart from the configured seed.
    pub resume: Option<Vae>,
}

/// One step of the training history, as persisted to history.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: u64,
    pub loss: LossBreakdown,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub disc_loss: Option<f64>,
}

#[derive(Debug)]
pub struct TrainVaeOutcome {
    pub vae: Vae,
    /// Optimization steps executed in this call (excludes resumed steps).
    pub steps_run: usize,
    pub history: Vec<HistoryRecord>,
    /// Best per-batch reconstruction term seen, and the step that achieved it.
    pub best_l1: f64,
    pub best_step: u64,
    /// Mean reconstruction term over consecutive complete 50-step windows.
    pub window_l1: Vec<f64>,
    /// Mean-path L1 over the full training set, measured whenever the early
    /// stopping rule was consulted (left as the last measurement taken).
    pub final_l1: Option<f64>,
}

/// Mean over `volumes` of the deterministic (z = μ) reconstruction L1.
pub fn mean_recon_l1(vae: &Vae, volumes: &[Volume]) -> Result<f64> {
    if volumes.is_empty() {
        return Err(Error::InvalidInput("no volumes to evaluate".into()));
    }
    let mut total = 0.0;
    for v in volumes {
        let d = vae.encode(v)?;
        let zeros = Array4::zeros(d.mu().raw_dim());
        let code = reparameterize_with_eps(&d, &zeros, 0)?;
        let xhat = vae.decode(&code)?;
        total += l1_recon(v, &xhat)?;
    }
    Ok(total / volumes.len() as f64)
}

fn scale_tensors(t: &mut Tensors<f32>, factor: f32) {
    for (_, a) in t.iter_mut() {
        a.mapv_inplace(|v| v * factor);
    }
}

/// Trains a VAE on `volumes` under the composite objective.
///
/// Per batch: one generator step (reconstruction + perceptual + adversarial
/// + KL, gradients averaged over the batch), then one discriminator step on
/// the same reconstructions. The perceptual extractor and discriminator are
/// built only when their loss weights are nonzero. Aborts with
/// [`Error::Divergence`] the first time any loss term is non-finite.
///
/// Deterministic: all randomness (initialization, batch order, latent noise)
/// derives from `cfg.seed`.
pub fn train_vae(
    volumes: &[Volume],
    cfg: &ModelConfig,
    opts: VaeTrainOptions,
) -> Result<TrainVaeOutcome> {
    cfg.validate()?;
    if volumes.is_empty() {
        return Err(Error::InvalidInput("no training volumes".into()));
    }
    let e = cfg.input_edge;
    for (i, v) in volumes.iter().enumerate() {
        if v.shape() != (e, e, e) {
            return Err(Error::shape_mismatch(&[e, e, e], {
                let (a, b, c) = v.shape();
                [a, b, c]
            }));
        }
        if !v.is_unit_range() {
            return Err(Error::InvalidInput(format!(
                "training volume {i} has values outside [0, 1]; preprocess first"
            )));
        }
    }

    // Fixed derivation order keeps every stream reproducible from cfg.seed.
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vae_seed: u64 = master.gen();
    let disc_seed: u64 = master.gen();
    let extract_seed: u64 = master.gen();
    let shuffle_seed: u64 = master.gen();
    let noise_seed: u64 = master.gen();

    let mut vae = match opts.resume {
        Some(v) => {
            if v.cfg.config_hash() != cfg.config_hash() {
                return Err(Error::Checkpoint(
                    "resume parameters were built for a different config".into(),
                ));
            }
            v
        }
        None => build_vae(cfg, vae_seed)?,
    };

    let weights = LossWeights::from(cfg);
    let disc = (weights.lambda_adv > 0.0).then(PatchDiscriminator::standard);
    let mut disc_params = disc.as_ref().map(|d| d.init_params::<f32>(disc_seed));
    let extractor =
        (weights.lambda_perc > 0.0).then(|| ConvPyramid::<f32>::default_seeded(extract_seed));

    let mut opt_gen = Adam::<f32>::new(cfg.lr_vae);
    let mut opt_disc = Adam::<f32>::new(cfg.lr_vae);
    let mut gen_grads = vae.params.zeros_like();
    let mut disc_grads = disc_params.as_ref().map(Tensors::zeros_like);

    let n = volumes.len();
    let batch = cfg.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let planned = cfg.epochs_vae * steps_per_epoch;
    let total_steps = opts.max_steps.map_or(planned, |m| m.min(planned));

    let mut hist_file = match &opts.run_dir {
        Some(dir) => {
            fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
            let cfg_path = dir.join("config.json");
            fs::write(&cfg_path, serde_json::to_string_pretty(cfg)?)
                .map_err(|e| Error::io(&cfg_path, e))?;
            let hist_path = dir.join("history.jsonl");
            let file = fs::File::create(&hist_path).map_err(|e| Error::io(&hist_path, e))?;
            Some((BufWriter::new(file), hist_path))
        }
        None => None,
    };
    let write_record = |rec: &HistoryRecord,
                            hist: &mut Option<(BufWriter<fs::File>, PathBuf)>|
     -> Result<()> {
        if let Some((w, path)) = hist {
            let line = serde_json::to_string(rec)?;
            writeln!(w, "{line}").map_err(|e| Error::io(&*path, e))?;
        }
        Ok(())
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut history: Vec<HistoryRecord> = Vec::with_capacity(total_steps);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut best_l1, mut best_step) = (f64::INFINITY, vae.step);
    let mut final_l1 = None;
    let mut steps_run = 0usize;
    let lp = weights.lambda_perc as f32;
    let la = weights.lambda_adv as f32;
    let lk = weights.lambda_kl as f32;

    'training: while steps_run < total_steps {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(batch) {
            if steps_run == total_steps {
                break;
            }
            steps_run += 1;
            vae.step += 1;

            gen_grads.fill_zero();
            let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64); // rec, perc, adv, kl
            let mut batch_pairs: Vec<(Array4<f32>, Array4<f32>)> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let x4: Array4<f32> = volumes[i]
                    .data()
                    .clone()
                    .into_shape_with_order((1, e, e, e))
                    .expect("channel axis");
                let (mu, lv, enc_cache) = vae.net().encode_train(&vae.params, x4.clone());
                let eps = Array4::from_shape_simple_fn(mu.raw_dim(), || -> f32 {
                    StandardNormal.sample(&mut noise_rng)
                });
                let sigma = lv.mapv(|v: f32| (0.5 * v).exp());
                let z = &mu + &(&sigma * &eps);
                let (xhat, dec_cache) = vae.net().decode_train(&vae.params, z);

                sums.0 += l1(&x4, &xhat) as f64;
                let mut g_xhat = l1_backward(&x4, &xhat);
                if let Some(f) = &extractor {
                    let x3 = x4.index_axis(Axis(0), 0).to_owned();
                    let xhat3 = xhat.index_axis(Axis(0), 0).to_owned();
                    let (p, g_p) = perceptual_grad(&x3, &xhat3, f as &dyn FeatureExtractor<f32>);
                    sums.1 += p as f64;
                    let g_p4 = g_p.insert_axis(Axis(0));
                    ndarray::Zip::from(&mut g_xhat)
                        .and(&g_p4)
                        .for_each(|g, &v| *g += lp * v);
                }
                if let (Some(d), Some(dp)) = (&disc, &disc_params) {
                    let (a, g_a) = gen_adv_grad(d, dp, &xhat);
                    sums.2 += a as f64;
                    ndarray::Zip::from(&mut g_xhat)
                        .and(&g_a)
                        .for_each(|g, &v| *g += la * v);
                }
                sums.3 += kl_sum(&mu, &lv) as f64;

                let g_z = vae
                    .net()
                    .decode_backward(&vae.params, &dec_cache, &g_xhat, &mut gen_grads);
                // z = μ + σ·ε: ∂z/∂μ = 1, ∂z/∂lv = ½·σ·ε.
                let mut g_mu = g_z.clone();
                let mut g_lv = sigma;
                ndarray::Zip::from(&mut g_lv)
                    .and(&g_z)
                    .and(&eps)
                    .for_each(|s, &gz, &ep| *s = gz * 0.5 * *s * ep);
                if weights.lambda_kl > 0.0 {
                    let (g_mu_kl, g_lv_kl) = kl_backward(&mu, &lv);
                    ndarray::Zip::from(&mut g_mu)
                        .and(&g_mu_kl)
                        .for_each(|g, &v| *g += lk * v);
                    ndarray::Zip::from(&mut g_lv)
                        .and(&g_lv_kl)
                        .for_each(|g, &v| *g += lk * v);
                }
                vae.net()
                    .encode_backward(&vae.params, &enc_cache, &g_mu, &g_lv, &mut gen_grads);
                batch_pairs.push((x4, xhat));
            }
            let inv = 1.0 / chunk.len() as f64;
            scale_tensors(&mut gen_grads, inv as f32);

            let loss = LossBreakdown::compose(
                sums.0 * inv,
                extractor.as_ref().map(|_| sums.1 * inv),
                disc.as_ref().map(|_| sums.2 * inv),
                sums.3 * inv,
                weights,
            );
            for (term, value) in [
                ("rec", loss.rec),
                ("perc", loss.perc.unwrap_or(0.0)),
                ("adv_gen", loss.adv_gen.unwrap_or(0.0)),
                ("kl", loss.kl),
            ] {
                if !value.is_finite() {
                    if let Some((w, path)) = &mut hist_file {
                        w.flush().map_err(|e| Error::io(&*path, e))?;
                    }
                    return Err(Error::Divergence {
                        step: vae.step as usize,
                        term: term.into(),
                    });
                }
            }
            opt_gen.step(&mut vae.params, &gen_grads);

            let mut disc_loss = None;
            if let (Some(d), Some(dp), Some(dg)) =
                (&disc, &mut disc_params, &mut disc_grads)
            {
                dg.fill_zero();
                let mut sum = 0.0f64;
                for (x4, xhat) in &batch_pairs {
                    sum += disc_step_grads(d, dp, x4, xhat, dg) as f64;
                }
                scale_tensors(dg, inv as f32);
                let mean = sum * inv;
                if !mean.is_finite() {
                    if let Some((w, path)) = &mut hist_file {
                        w.flush().map_err(|e| Error::io(&*path, e))?;
                    }
                    return Err(Error::Divergence {
                        step: vae.step as usize,
                        term: "disc".into(),
                    });
                }
                opt_disc.step(dp, dg);
                disc_loss = Some(mean);
            }

            let record = HistoryRecord {
                step: vae.step,
                loss,
                disc_loss,
            };
            write_record(&record, &mut hist_file)?;
            if opts.log_every > 0 && steps_run % opts.log_every == 0 {
                eprintln!(
                    "step {}/{total_steps}: rec {:.5} total {:.5}",
                    steps_run, record.loss.rec, record.loss.total
                );
            }

            if record.loss.rec < best_l1 {
                best_l1 = record.loss.rec;
                best_step = vae.step;
                if let Some(dir) = &opts.run_dir {
                    vae.save(dir.join("checkpoints").join("vae_best.ckpt"))?;
                }
            }
            if let (Some(every), Some(dir)) = (opts.checkpoint_every, &opts.run_dir) {
                if every > 0 && steps_run % every == 0 {
                    let name = format!("vae_{:06}.ckpt", vae.step);
                    vae.save(dir.join("checkpoints").join(name))?;
                }
            }
            history.push(record);

            if let Some(threshold) = opts.early_stop_l1 {
                if history.last().expect("just pushed").loss.rec < threshold {
                    let full = mean_recon_l1(&vae, volumes)?;
                    final_l1 = Some(full);
                    if full < threshold {
                        break 'training;
                    }
                }
            }
        }
    }

    if let Some((w, path)) = &mut hist_file {
        w.flush().map_err(|e| Error::io(&*path, e))?;
    }
    if let Some(dir) = &opts.run_dir {
        vae.save(dir.join("checkpoints").join("vae_final.ckpt"))?;
    }

    let window_l1 = history
        .chunks_exact(50)
        .map(|w| w.iter().map(|r| r.loss.rec).sum::<f64>() / w.len() as f64)
        .collect();

    Ok(TrainVaeOutcome {
        vae,
        steps_run,
        history,
        best_l1,
        best_step,
        window_l1,
        final_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn micro_cfg() -> ModelConfig {
        ModelConfig {
            input_edge: 8,
            latent_edge: 4,
            latent_channels: 2,
            stage_channels: vec![4, 8],
            res_blocks_per_stage: 1,
            epochs_vae: 3,
            batch_size: 2,
            lr_vae: 1e-3,
            seed: 0,
            ..ModelConfig::desk_48()
        }
    }

    fn micro_volumes(n: usize) -> Vec<Volume> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..n)
            .map(|_| {
                let center = (
                    rng.gen_range(2.0f32..6.0),
                    rng.gen_range(2.0f32..6.0),
                    rng.gen_range(2.0f32..6.0),
                );
                Volume::new(Array3::from_shape_fn((8, 8, 8), |(a, b, c)| {
                    let d2 = (a as f32 - center.0).powi(2)
                        + (b as f32 - center.1).powi(2)
                        + (c as f32 - center.2).powi(2);
                    (-d2 / 8.0).exp()
                }))
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn records_every_step_with_consistent_totals() {
        let cfg = micro_cfg();
        let vols = micro_volumes(4);
        // 4 volumes, batch 2, 3 epochs → 6 steps.
        let out = train_vae(&vols, &cfg, VaeTrainOptions::default()).unwrap();
        assert_eq!(out.steps_run, 6);
        assert_eq!(out.history.len(), 6);
        assert_eq!(out.vae.step, 6);
        for (i, rec) in out.history.iter().enumerate() {
            assert_eq!(rec.step, i as u64 + 1);
            assert!(rec.loss.is_consistent(), "step {i}: {:?}", rec.loss);
            assert!(rec.loss.perc.is_some() && rec.loss.adv_gen.is_some());
            assert!(rec.disc_loss.is_some());
        }
        assert_eq!(
            out.best_l1,
            out.history.iter().map(|r| r.loss.rec).fold(f64::INFINITY, f64::min)
        );
    }

    #[test]
    fn ablation_run_omits_adversarial_and_perceptual_terms() {
        let cfg = ModelConfig {
            lambda_adv: 0.0,
            lambda_perc: 0.0,
            ..micro_cfg()
        };
        let vols = micro_volumes(2);
        let out = train_vae(&vols, &cfg, VaeTrainOptions::default()).unwrap();
        for rec in &out.history {
            assert!(rec.loss.perc.is_none() && rec.loss.adv_gen.is_none());
            assert!(rec.disc_loss.is_none());
            // Weight fields like lambda_perc stay; the term keys must not.
            let line = serde_json::to_string(rec).unwrap();
            assert!(!line.contains("\"perc\"") && !line.contains("\"adv_gen\""));
            assert!(!line.contains("\"disc_loss\""));
        }
    }

    #[test]
    fn reruns_are_bitwise_identical() {
        let cfg = micro_cfg();
        let vols = micro_volumes(3);
        let dir = tempfile::tempdir().unwrap();
        let a = train_vae(&vols, &cfg, VaeTrainOptions::default()).unwrap();
        let b = train_vae(&vols, &cfg, VaeTrainOptions::default()).unwrap();
        assert_eq!(a.history, b.history);
        let pa = dir.path().join("a.ckpt");
        let pb = dir.path().join("b.ckpt");
        a.vae.save(&pa).unwrap();
        b.vae.save(&pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }

    #[test]
    fn reconstruction_halves_on_small_fixed_set() {
        let cfg = ModelConfig {
            epochs_vae: 200,
            batch_size: 4,
            ..micro_cfg()
        };
        let vols = micro_volumes(4);
        let opts = VaeTrainOptions {
            max_steps: Some(200),
            ..Default::default()
        };
        let out = train_vae(&vols, &cfg, opts).unwrap();
        assert_eq!(out.steps_run, 200);
        let initial = out.history[0].loss.rec;
        let last_window = *out.window_l1.last().unwrap();
        assert!(
            last_window < 0.5 * initial,
            "initial {initial}, final window {last_window}"
        );
        assert_eq!(out.window_l1.len(), 4);
    }

    #[test]
    fn poisoned_parameters_trigger_divergence_guard() {
        let cfg = micro_cfg();
        let vols = micro_volumes(2);
        let mut vae = build_vae(&cfg, 1).unwrap();
        let name = vae.params.names().next().unwrap().to_string();
        vae.params.get_mut(&name).mapv_inplace(|_| f32::NAN);
        let opts = VaeTrainOptions {
            resume: Some(vae),
            ..Default::default()
        };
        match train_vae(&vols, &cfg, opts) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn resume_rejects_mismatched_config() {
        let cfg = micro_cfg();
        let other = ModelConfig {
            latent_channels: 3,
            ..micro_cfg()
        };
        let vae = build_vae(&other, 0).unwrap();
        let opts = VaeTrainOptions {
            resume: Some(vae),
            ..Default::default()
        };
        assert!(train_vae(&micro_volumes(2), &cfg, opts).is_err());
    }

    #[test]
    fn run_dir_gets_config_history_and_checkpoints() {
        let cfg = micro_cfg();
        let vols = micro_volumes(4);
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let opts = VaeTrainOptions {
            run_dir: Some(run.clone()),
            checkpoint_every: Some(2),
            max_steps: Some(4),
            ..Default::default()
        };
        let out = train_vae(&vols, &cfg, opts).unwrap();
        assert_eq!(out.steps_run, 4);

        let cfg_back: ModelConfig =
            serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap())
                .unwrap();
        assert_eq!(cfg_back, cfg);

        let hist = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
        let lines: Vec<&str> = hist.lines().collect();
        assert_eq!(lines.len(), 4);
        for (line, rec) in lines.iter().zip(&out.history) {
            assert_eq!(&serde_json::from_str::<HistoryRecord>(line).unwrap(), rec);
        }

        for name in ["vae_best.ckpt", "vae_final.ckpt", "vae_000002.ckpt", "vae_000004.ckpt"] {
            assert!(run.join("checkpoints").join(name).exists(), "missing {name}");
        }
        let final_vae = Vae::load(run.join("checkpoints").join("vae_final.ckpt")).unwrap();
        assert_eq!(final_vae.step, 4);
        assert_eq!(final_vae.cfg.config_hash(), cfg.config_hash());
    }

    #[test]
    fn early_stop_measures_full_train_set() {
        let cfg = micro_cfg();
        let vols = micro_volumes(4);
        let opts = VaeTrainOptions {
            early_stop_l1: Some(0.9),
            ..Default::default()
        };
        // Random-init reconstructions already beat an L1 of 0.9 on [0,1] data.
        let out = train_vae(&vols, &cfg, opts).unwrap();
        assert_eq!(out.steps_run, 1);
        let measured = out.final_l1.expect("early stop evaluated");
        assert!(measured < 0.9);
        let recheck = mean_recon_l1(&out.vae, &vols).unwrap();
        assert!((measured - recheck).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let cfg = micro_cfg();
        assert!(train_vae(&[], &cfg, VaeTrainOptions::default()).is_err());

        let wrong = Volume::new(Array3::from_elem((4, 4, 4), 0.5)).unwrap();
        assert!(train_vae(&[wrong], &cfg, VaeTrainOptions::default()).is_err());

        let out_of_range = Volume::new(Array3::from_elem((8, 8, 8), 1.5)).unwrap();
        let err = train_vae(&[out_of_range], &cfg, VaeTrainOptions::default()).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }
}
