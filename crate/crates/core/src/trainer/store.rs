//! Persistent store for encoded latent distributions.
//!
//! One file holds the (μ, log σ²) grids of every encoded subject together
//! with the encoder-identity hash of the configuration that produced them
//! ([`crate::ModelConfig::encoder_hash`]), so a downstream run can refuse
//! latents from a different VAE while classifier settings stay free to vary.
//!
//! Layout: `VOXLATS1` magic, version and header length as little-endian u32,
//! a JSON header listing the config hash, grid shape, and subject order, then
//! for each subject the μ grid followed by the log-variance grid as f32
//! little-endian in row-major (h, w, d, c) order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentDistribution;
use crate::manifest::Manifest;
use crate::vae::Vae;
use crate::volume::load_volume;

const STORE_MAGIC: &[u8; 8] = b"VOXLATS1";
const STORE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    config_hash: String,
    latent_shape: [usize; 4],
    subjects: Vec<String>,
}

/// Encoded latents for a set of subjects, keyed by subject id.
pub struct LatentStore {
    config_hash: String,
    shape: (usize, usize, usize, usize),
    entries: IndexMap<String, LatentDistribution>,
}

impl std::fmt::Debug for LatentStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatentStore")
            .field("config_hash", &self.config_hash)
            .field("shape", &self.shape)
            .field("subjects", &self.entries.len())
            .finish()
    }
}

impl LatentStore {
    /// `shape` is the per-subject grid shape (h, w, d, c).
    pub fn new(config_hash: impl Into<String>, shape: (usize, usize, usize, usize)) -> Self {
        LatentStore {
            config_hash: config_hash.into(),
            shape,
            entries: IndexMap::new(),
        }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn latent_shape(&self) -> (usize, usize, usize, usize) {
        self.shape
    }

    /// Flattened per-subject feature width (h·w·d·c).
    pub fn latent_dim(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2 * self.shape.3
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, subject_id: &str) -> Option<&LatentDistribution> {
        self.entries.get(subject_id)
    }

    pub fn insert(&mut self, subject_id: impl Into<String>, d: LatentDistribution) -> Result<()> {
        let subject_id = subject_id.into();
        if d.shape() != self.shape {
            return Err(Error::shape_mismatch(
                &[self.shape.0, self.shape.1, self.shape.2, self.shape.3],
                d.mu().shape(),
            ));
        }
        if self.entries.contains_key(&subject_id) {
            return Err(Error::InvalidInput(format!(
                "subject {subject_id} already in latent store"
            )));
        }
        self.entries.insert(subject_id, d);
        Ok(())
    }

    /// Rows of flattened μ vectors for `ids`, in the given order. Errors on
    /// the first id not present in the store.
    pub fn mu_matrix(&self, ids: &[String]) -> Result<Array2<f64>> {
        let dim = self.latent_dim();
        let mut out = Array2::<f64>::zeros((ids.len(), dim));
        for (i, id) in ids.iter().enumerate() {
            let d = self
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("subject {id} not in latent store")))?;
            for (o, v) in out.row_mut(i).iter_mut().zip(d.mu_flat()) {
                *o = v as f64;
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);

        let header = StoreHeader {
            config_hash: self.config_hash.clone(),
            latent_shape: [self.shape.0, self.shape.1, self.shape.2, self.shape.3],
            subjects: self.entries.keys().cloned().collect(),
        };
        let header_json = serde_json::to_vec(&header)?;
        w.write_all(STORE_MAGIC).map_err(io)?;
        w.write_all(&STORE_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header_json.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&header_json).map_err(io)?;
        for d in self.entries.values() {
            for grid in [d.mu(), d.log_var()] {
                for &v in grid.iter() {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != STORE_MAGIC {
            return Err(Error::Checkpoint("not a latent store file".into()));
        }
        let mut u32_buf = [0u8; 4];
        r.read_exact(&mut u32_buf).map_err(io)?;
        let version = u32::from_le_bytes(u32_buf);
        if version != STORE_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported latent store version {version}"
            )));
        }
        r.read_exact(&mut u32_buf).map_err(io)?;
        let header_len = u32::from_le_bytes(u32_buf) as usize;
        let mut header_json = vec![0u8; header_len];
        r.read_exact(&mut header_json).map_err(io)?;
        let header: StoreHeader = serde_json::from_slice(&header_json)?;

        let [h, wd, d, c] = header.latent_shape;
        let grid_len = h * wd * d * c;
        if grid_len == 0 {
            return Err(Error::Checkpoint(format!(
                "degenerate latent shape {:?}",
                header.latent_shape
            )));
        }
        let mut store = LatentStore::new(header.config_hash, (h, wd, d, c));
        let mut payload = vec![0u8; grid_len * 4];
        for id in header.subjects {
            let mut grids = Vec::with_capacity(2);
            for _ in 0..2 {
                r.read_exact(&mut payload).map_err(io)?;
                let vals: Vec<f32> = payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                grids.push(
                    Array4::from_shape_vec((h, wd, d, c), vals).expect("length checked"),
                );
            }
            let lv = grids.pop().expect("two grids");
            let mu = grids.pop().expect("two grids");
            store.insert(id, LatentDistribution::new(mu, lv)?)?;
        }
        let mut extra = [0u8; 1];
        match r.read(&mut extra) {
            Ok(0) => Ok(store),
            Ok(_) => Err(Error::Checkpoint(
                "trailing bytes after latent store payload".into(),
            )),
            Err(e) => Err(io(e)),
        }
    }
}

/// Encodes every manifest subject with `vae`, in subject-id order.
///
/// Deterministic: the inference path draws no noise, so re-encoding the same
/// volumes with the same parameters reproduces the store byte for byte.
pub fn encode_dataset(vae: &Vae, manifest: &Manifest) -> Result<LatentStore> {
    let e = vae.cfg.latent_edge;
    let mut store = LatentStore::new(vae.cfg.encoder_hash(), (e, e, e, vae.cfg.latent_channels));
    let mut records: Vec<_> = manifest.records.iter().collect();
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    for rec in records {
        let path = manifest.volume_path(rec);
        let volume = load_volume(&path).map_err(|e| {
            Error::InvalidInput(format!("subject {}: {e}", rec.subject_id))
        })?;
        let dist = vae.encode(&volume).map_err(|e| {
            Error::InvalidInput(format!("subject {}: {e}", rec.subject_id))
        })?;
        store.insert(&rec.subject_id, dist)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_dist(seed: u64, shape: (usize, usize, usize, usize)) -> LatentDistribution {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mu = Array4::from_shape_simple_fn(shape, || rng.gen_range(-2.0f32..2.0));
        let lv = Array4::from_shape_simple_fn(shape, || rng.gen_range(-3.0f32..0.5));
        LatentDistribution::new(mu, lv).unwrap()
    }

    #[test]
    fn insert_rejects_bad_shape_and_duplicates() {
        let mut store = LatentStore::new("h", (2, 2, 2, 3));
        store.insert("a", toy_dist(0, (2, 2, 2, 3))).unwrap();
        assert!(store.insert("a", toy_dist(1, (2, 2, 2, 3))).is_err());
        assert!(store.insert("b", toy_dist(2, (2, 2, 2, 4))).is_err());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn round_trips_and_reruns_are_byte_identical() {
        let mut store = LatentStore::new("cfg-hash", (2, 3, 2, 4));
        for i in 0..5 {
            store.insert(format!("s_{i}"), toy_dist(i, (2, 3, 2, 4))).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.lat");
        let p2 = dir.path().join("b.lat");
        store.save(&p1).unwrap();
        store.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        let back = LatentStore::load(&p1).unwrap();
        assert_eq!(back.config_hash(), "cfg-hash");
        assert_eq!(back.latent_shape(), (2, 3, 2, 4));
        assert_eq!(back.ids().collect::<Vec<_>>(), store.ids().collect::<Vec<_>>());
        for id in store.ids() {
            assert_eq!(back.get(id).unwrap().mu(), store.get(id).unwrap().mu());
            assert_eq!(back.get(id).unwrap().log_var(), store.get(id).unwrap().log_var());
        }
        let p3 = dir.path().join("c.lat");
        back.save(&p3).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p3).unwrap());
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut store = LatentStore::new("h", (1, 1, 1, 2));
        store.insert("a", toy_dist(3, (1, 1, 1, 2))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.lat");
        store.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        let err = LatentStore::load(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut store = LatentStore::new("h", (1, 1, 1, 2));
        store.insert("a", toy_dist(3, (1, 1, 1, 2))).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.lat");
        store.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, bytes).unwrap();
        assert!(LatentStore::load(&path).is_err());
    }

    #[test]
    fn mu_matrix_follows_requested_order_and_names_missing_subjects() {
        let mut store = LatentStore::new("h", (1, 2, 1, 2));
        store.insert("a", toy_dist(0, (1, 2, 1, 2))).unwrap();
        store.insert("b", toy_dist(1, (1, 2, 1, 2))).unwrap();
        let ids = vec!["b".to_string(), "a".to_string()];
        let m = store.mu_matrix(&ids).unwrap();
        assert_eq!(m.nrows(), 2);
        let b_flat = store.get("b").unwrap().mu_flat();
        for (got, want) in m.row(0).iter().zip(&b_flat) {
            assert_eq!(*got, *want as f64);
        }
        let err = store.mu_matrix(&["ghost".to_string()]).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn encode_dataset_orders_by_id_and_names_missing_files() {
        use crate::config::ModelConfig;
        use crate::manifest::{Group, SubjectRecord};
        use crate::vae::build_vae;
        use crate::volume::{save_volume, Volume};
        use ndarray::Array3;

        let cfg = ModelConfig {
            input_edge: 8,
            latent_edge: 4,
            latent_channels: 2,
            stage_channels: vec![4, 8],
            res_blocks_per_stage: 1,
            ..ModelConfig::desk_48()
        };
        cfg.validate().unwrap();
        let vae = build_vae(&cfg, 0).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut records = Vec::new();
        // Manifest deliberately out of id order.
        for id in ["s_2", "s_0", "s_1"] {
            let v = Volume::new(Array3::from_shape_simple_fn((8, 8, 8), || {
                rng.gen_range(0.0f32..1.0)
            }))
            .unwrap();
            save_volume(&v, dir.path().join(format!("{id}.raw"))).unwrap();
            records.push(SubjectRecord {
                subject_id: id.into(),
                volume_path: format!("{id}.raw"),
                group: Group::Eu,
                ad_label: None,
                id_label: None,
                source_dataset: "test".into(),
            });
        }
        let manifest = Manifest::new(records, dir.path()).unwrap();
        let store = encode_dataset(&vae, &manifest).unwrap();
        assert_eq!(store.ids().collect::<Vec<_>>(), ["s_0", "s_1", "s_2"]);
        assert_eq!(store.latent_shape(), (4, 4, 4, 2));
        assert_eq!(store.config_hash(), cfg.encoder_hash());

        // Classifier settings are not part of the encoder identity.
        let mut clf_tweak = cfg.clone();
        clf_tweak.epochs_clf += 7;
        clf_tweak.lr_clf *= 10.0;
        assert_eq!(store.config_hash(), clf_tweak.encoder_hash());
        let mut vae_tweak = cfg.clone();
        vae_tweak.seed += 1;
        assert_ne!(store.config_hash(), vae_tweak.encoder_hash());

        // Same volumes, same parameters: identical bytes on re-encode.
        let p1 = dir.path().join("a.lat");
        let p2 = dir.path().join("b.lat");
        store.save(&p1).unwrap();
        encode_dataset(&vae, &manifest).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

        std::fs::remove_file(dir.path().join("s_1.raw")).unwrap();
        let err = encode_dataset(&vae, &manifest).unwrap_err();
        assert!(err.to_string().contains("s_1"), "{err}");
    }
}
