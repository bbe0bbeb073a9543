//! Minimal NIfTI-1 volume IO.
//!
//! Reads single-file `.nii` / `.nii.gz` with the common scalar datatypes
//! (uint8, int8, int16, uint16, int32, float32, float64), applying
//! `scl_slope`/`scl_inter` when set. Writes float32 volumes. Orientation
//! codes are preserved only as voxel spacing; this crate operates on
//! already-registered grids.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use ndarray::{Array3, ShapeBuilder};

use crate::error::{Error, Result};
use crate::volume::Volume;

const HDR_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;

struct Field<'a> {
    bytes: &'a [u8],
    swap: bool,
}

impl<'a> Field<'a> {
    fn i16_at(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        let v = i16::from_le_bytes(b);
        if self.swap {
            v.swap_bytes()
        } else {
            v
        }
    }

    fn f32_at(&self, off: usize) -> f32 {
        let b = [
            self.bytes[off],
            self.bytes[off + 1],
            self.bytes[off + 2],
            self.bytes[off + 3],
        ];
        if self.swap {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
    let mut bytes = Vec::new();
    if name.ends_with(".gz") {
        MultiGzDecoder::new(BufReader::new(file))
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    if bytes.len() < HDR_SIZE {
        return Err(Error::BadVolume {
            path: path.into(),
            reason: "file shorter than NIfTI-1 header".into(),
        });
    }

    // sizeof_hdr doubles as the endianness probe.
    let sizeof_hdr = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let swap = match sizeof_hdr {
        348 => false,
        _ if sizeof_hdr.swap_bytes() == 348 => true,
        _ => {
            return Err(Error::BadVolume {
                path: path.into(),
                reason: format!("bad sizeof_hdr {sizeof_hdr}"),
            })
        }
    };
    if &bytes[344..347] != b"n+1" {
        return Err(Error::BadVolume {
            path: path.into(),
            reason: "unsupported magic (expected single-file n+1)".into(),
        });
    }
    let f = Field {
        bytes: &bytes,
        swap,
    };

    let ndim = f.i16_at(40) as usize;
    let mut dims = [1usize; 7];
    for (i, d) in dims.iter_mut().enumerate().take(7) {
        let v = f.i16_at(40 + 2 * (i + 1));
        *d = if i < ndim { v.max(1) as usize } else { 1 };
    }
    // Accept 3D payloads, or higher-rank headers whose trailing dims are 1.
    let effective_ndim = (0..7).rev().find(|&i| dims[i] > 1).map_or(1, |i| i + 1);
    if effective_ndim != 3 {
        return Err(Error::NonVolumetric {
            path: path.into(),
            ndim: effective_ndim,
        });
    }
    let (n1, n2, n3) = (dims[0], dims[1], dims[2]);
    let nvox = n1 * n2 * n3;

    let datatype = f.i16_at(70);
    let spacing = [f.f32_at(80), f.f32_at(84), f.f32_at(88)];
    let vox_offset = f.f32_at(108) as usize;
    let scl_slope = f.f32_at(112);
    let scl_inter = f.f32_at(116);
    let rescale = scl_slope != 0.0 && !(scl_slope == 1.0 && scl_inter == 0.0);

    let elem = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        _ => {
            return Err(Error::BadVolume {
                path: path.into(),
                reason: format!("unsupported datatype {datatype}"),
            })
        }
    };
    let off = vox_offset.max(HDR_SIZE);
    if bytes.len() < off + nvox * elem {
        return Err(Error::BadVolume {
            path: path.into(),
            reason: "payload shorter than header dimensions imply".into(),
        });
    }
    let raw = &bytes[off..off + nvox * elem];

    let mut values = Vec::with_capacity(nvox);
    let rd16 = |c: &[u8]| {
        let v = i16::from_le_bytes([c[0], c[1]]);
        if swap {
            v.swap_bytes()
        } else {
            v
        }
    };
    match datatype {
        DT_UINT8 => values.extend(raw.iter().map(|&b| b as f32)),
        DT_INT8 => values.extend(raw.iter().map(|&b| b as i8 as f32)),
        DT_INT16 => values.extend(raw.chunks_exact(2).map(|c| rd16(c) as f32)),
        DT_UINT16 => values.extend(raw.chunks_exact(2).map(|c| rd16(c) as u16 as f32)),
        DT_INT32 => values.extend(raw.chunks_exact(4).map(|c| {
            let v = i32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            (if swap { v.swap_bytes() } else { v }) as f32
        })),
        DT_FLOAT32 => values.extend(raw.chunks_exact(4).map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if swap {
                f32::from_be_bytes(b)
            } else {
                f32::from_le_bytes(b)
            }
        })),
        DT_FLOAT64 => values.extend(raw.chunks_exact(8).map(|c| {
            let b = [c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]];
            (if swap {
                f64::from_be_bytes(b)
            } else {
                f64::from_le_bytes(b)
            }) as f32
        })),
        _ => unreachable!(),
    }
    if rescale {
        for v in values.iter_mut() {
            *v = *v * scl_slope + scl_inter;
        }
    }

    // NIfTI stores the first dimension fastest; rebuild in standard layout.
    let fortran = Array3::from_shape_vec((n1, n2, n3).f(), values)
        .expect("length checked against dims");
    let data = fortran.as_standard_layout().to_owned();
    Ok(Volume::new(data)?.with_spacing(spacing))
}

pub fn save_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut hdr = [0u8; VOX_OFFSET];
    let put_i32 = |h: &mut [u8], off: usize, v: i32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    let put_i16 = |h: &mut [u8], off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut [u8], off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    let (n1, n2, n3) = v.shape();
    let sp = v.spacing();
    put_i32(&mut hdr, 0, 348);
    hdr[39] = b'r'; // "regular" flag, conventional
    put_i16(&mut hdr, 40, 3);
    put_i16(&mut hdr, 42, n1 as i16);
    put_i16(&mut hdr, 44, n2 as i16);
    put_i16(&mut hdr, 46, n3 as i16);
    for i in 4..8 {
        put_i16(&mut hdr, 40 + 2 * i, 1);
    }
    put_i16(&mut hdr, 70, DT_FLOAT32);
    put_i16(&mut hdr, 72, 32); // bitpix
    put_f32(&mut hdr, 76, 1.0); // qfac
    put_f32(&mut hdr, 80, sp[0]);
    put_f32(&mut hdr, 84, sp[1]);
    put_f32(&mut hdr, 88, sp[2]);
    put_f32(&mut hdr, 108, VOX_OFFSET as f32);
    put_f32(&mut hdr, 112, 1.0); // scl_slope
    let descrip = b"voxvae";
    hdr[148..148 + descrip.len()].copy_from_slice(descrip);
    // sform: diagonal spacing, origin at zero
    put_i16(&mut hdr, 254, 1);
    put_f32(&mut hdr, 280, sp[0]);
    put_f32(&mut hdr, 296 + 4, sp[1]);
    put_f32(&mut hdr, 312 + 8, sp[2]);
    hdr[344..348].copy_from_slice(b"n+1\0");

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
    let mut out: Box<dyn Write> = if name.ends_with(".gz") {
        Box::new(GzEncoder::new(BufWriter::new(file), flate2::Compression::new(6)))
    } else {
        Box::new(BufWriter::new(file))
    };
    out.write_all(&hdr).map_err(|e| Error::io(path, e))?;
    // first dimension fastest on disk
    let fortran_view = v.data().view().permuted_axes([2, 1, 0]);
    for &x in fortran_view.iter() {
        out.write_all(&x.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn nifti_round_trip_preserves_header_and_data() {
        let dir = tempfile::tempdir().unwrap();
        let data = Array3::from_shape_fn((5, 6, 7), |(i, j, k)| (i * 100 + j * 10 + k) as f32 / 500.0);
        let v = Volume::new(data).unwrap().with_spacing([1.5, 2.0, 2.5]);
        for name in ["t.nii", "t.nii.gz"] {
            let path = dir.path().join(name);
            save_nifti(&v, &path).unwrap();
            let loaded = load_nifti(&path).unwrap();
            assert_eq!(loaded.shape(), (5, 6, 7));
            assert_eq!(loaded.spacing(), [1.5, 2.0, 2.5]);
            assert_eq!(loaded.data(), v.data());
        }
    }

    #[test]
    fn two_dimensional_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nii");
        let data = Array3::zeros((4, 5, 6));
        let v = Volume::new(data).unwrap();
        save_nifti(&v, &path).unwrap();
        // patch the header down to 2 dimensions
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40..42].copy_from_slice(&2i16.to_le_bytes());
        bytes[46..48].copy_from_slice(&1i16.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_nifti(&path) {
            Err(Error::NonVolumetric { ndim, .. }) => assert_eq!(ndim, 2),
            other => panic!("expected NonVolumetric, got {other:?}"),
        }
    }

    #[test]
    fn truncated_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nii");
        std::fs::write(&path, [0u8; 100]).unwrap();
        assert!(matches!(load_nifti(&path), Err(Error::BadVolume { .. })));
    }

    #[test]
    fn scl_slope_rescaling_applies() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nii");
        let v = Volume::new(Array3::from_elem((2, 2, 2), 2.0f32)).unwrap();
        save_nifti(&v, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[112..116].copy_from_slice(&3.0f32.to_le_bytes()); // scl_slope
        bytes[116..120].copy_from_slice(&0.5f32.to_le_bytes()); // scl_inter
        std::fs::write(&path, &bytes).unwrap();
        let loaded = load_nifti(&path).unwrap();
        assert!(loaded.data().iter().all(|&x| (x - 6.5).abs() < 1e-6));
    }
}
