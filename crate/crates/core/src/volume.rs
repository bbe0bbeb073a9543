//! 3D scalar volumes and their lossless raw-file persistence.
//!
//! The raw sidecar format is bit-exact by construction: 8-byte magic
//! `VOL3DRAW`, three little-endian `u32` shape fields (H, W, D), then the
//! float32 payload in row-major order (D varies fastest). Spacing is not
//! part of the raw format; it defaults to 1 mm isotropic on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 8] = b"VOL3DRAW";

/// A 3D scalar grid with spatial metadata. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f32>,
    spacing: [f32; 3],
    intensity_range: [f32; 2],
}

impl Volume {
    /// Builds a volume, validating that every voxel is finite and the shape
    /// is non-degenerate. The declared intensity range is set to the actual
    /// data range.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let shape = data.dim();
        if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
            return Err(Error::InvalidInput(format!(
                "volume shape components must be >= 1, got {shape:?}"
            )));
        }
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in data.iter() {
            if !v.is_finite() {
                return Err(Error::InvalidInput(
                    "volume contains non-finite intensities".into(),
                ));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok(Volume {
            data,
            spacing: [1.0, 1.0, 1.0],
            intensity_range: [lo, hi],
        })
    }

    pub fn with_spacing(mut self, spacing: [f32; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn with_intensity_range(mut self, range: [f32; 2]) -> Self {
        self.intensity_range = range;
        self
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn intensity_range(&self) -> [f32; 2] {
        self.intensity_range
    }

    pub fn num_voxels(&self) -> usize {
        self.data.len()
    }

    /// True when every voxel lies in [0, 1], the post-preprocessing contract.
    pub fn is_unit_range(&self) -> bool {
        self.data.iter().all(|&v| (0.0..=1.0).contains(&v))
    }

    /// Checks that `other` has the same shape; used by the pairwise metrics.
    pub fn check_same_shape(&self, other: &Volume) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape_mismatch(self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// Loads a volume, dispatching on extension: `.nii`/`.nii.gz` go through the
/// NIfTI reader, everything else through the raw format.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        crate::nifti::load_nifti(path)
    } else {
        load_raw(path)
    }
}

/// Saves a volume, dispatching on extension like [`load_volume`].
pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        crate::nifti::save_nifti(v, path)
    } else {
        save_raw(v, path)
    }
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != RAW_MAGIC {
        return Err(Error::BadVolume {
            path: path.into(),
            reason: "bad magic bytes".into(),
        });
    }
    let mut dims = [0u32; 3];
    for d in dims.iter_mut() {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        *d = u32::from_le_bytes(buf);
    }
    let (h, w, d) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::BadVolume {
            path: path.into(),
            reason: format!("zero-sized shape {dims:?}"),
        });
    }
    let n = h * w * d;
    let mut payload = vec![0u8; n * 4];
    r.read_exact(&mut payload).map_err(|e| Error::io(path, e))?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::BadVolume {
            path: path.into(),
            reason: "trailing bytes after payload".into(),
        });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = Array3::from_shape_vec((h, w, d), values)
        .expect("payload length checked against shape");
    Volume::new(data)
}

pub fn save_raw(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(RAW_MAGIC).map_err(|e| Error::io(path, e))?;
    let (sh, sw, sd) = v.shape();
    for d in [sh, sw, sd] {
        w.write_all(&(d as u32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    // The array is standard-layout by construction everywhere in this crate,
    // but go through an owned standard copy if a caller handed us a view.
    let data = v.data();
    if let Some(slice) = data.as_slice() {
        for &x in slice {
            w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    } else {
        for &x in data.iter() {
            w.write_all(&x.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    fn random_volume(edge: usize, seed: u64) -> Volume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = Array3::from_shape_simple_fn((edge, edge, edge), || rng.gen::<f32>());
        Volume::new(data).unwrap()
    }

    #[test]
    fn raw_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vol");
        let v = random_volume(16, 7);
        save_raw(&v, &path).unwrap();
        let loaded = load_raw(&path).unwrap();
        assert_eq!(v.data(), loaded.data());

        // save -> load -> save produces identical bytes
        let path2 = dir.path().join("v2.vol");
        save_raw(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn constant_zero_volume_payload_is_all_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.vol");
        let v = Volume::new(Array3::zeros((4, 4, 4))).unwrap();
        save_raw(&v, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes[8 + 12..].iter().all(|&b| b == 0));
    }

    #[test]
    fn save_to_unwritable_dir_fails() {
        let v = random_volume(4, 1);
        let err = save_raw(&v, "/nonexistent-dir/v.vol").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn missing_file_fails() {
        assert!(matches!(load_raw("/no/such/file.vol"), Err(Error::Io { .. })));
    }

    #[test]
    fn non_finite_volume_rejected() {
        let mut data = Array3::zeros((2, 2, 2));
        data[[0, 0, 0]] = f32::NAN;
        assert!(Volume::new(data).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.vol");
        let v = random_volume(4, 3);
        save_raw(&v, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_raw(&path).is_err());
    }
}
