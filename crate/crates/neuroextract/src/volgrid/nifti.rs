//! NIfTI-1 single-file reader and writer.
//!
//! Reads .nii and .nii.gz (gzip detected by magic bytes, not extension) with
//! datatypes uint8, int16, and float32; values are converted to f32 with
//! sclimage scaling applied. The affine comes from the sform when valid, else
//! the qform, else a diagonal built from pixdim. Writing always emits
//! little-endian float32 with the sform set.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Volume;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const MAGIC_NIP1: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    let bytes = if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    parse_nifti(&bytes)
}

/// Parse an in-memory uncompressed NIfTI-1 byte stream.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file too small for a NIfTI-1 header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[344..348] != MAGIC_NIP1 {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"n+1\\0\"",
            &bytes[344..348]
        )));
    }
    let sizeof_hdr = LittleEndian::read_i32(&bytes[0..4]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::Format(format!(
            "sizeof_hdr = {sizeof_hdr}, expected 348 (big-endian files are not supported)"
        )));
    }

    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = LittleEndian::read_i16(&bytes[40 + 2 * i..]);
    }
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim} out of range")));
    }
    // Squeeze trailing singleton dimensions beyond the third; pad missing ones.
    let mut dims = [1usize; 3];
    for i in 0..ndim as usize {
        let d = dim[1 + i];
        if d < 1 {
            return Err(Error::Format(format!("dim[{}] = {d} invalid", i + 1)));
        }
        if i < 3 {
            dims[i] = d as usize;
        } else if d != 1 {
            return Err(Error::Dimension(format!(
                "volume has {ndim} dimensions and dim[{}] = {d}; only 3D data is supported",
                i + 1
            )));
        }
    }

    let datatype = LittleEndian::read_i16(&bytes[70..]);
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = LittleEndian::read_f32(&bytes[76 + 4 * i..]);
    }
    let vox_offset = LittleEndian::read_f32(&bytes[108..]) as usize;
    let scl_slope = LittleEndian::read_f32(&bytes[112..]);
    let scl_inter = LittleEndian::read_f32(&bytes[116..]);
    let qform_code = LittleEndian::read_i16(&bytes[252..]);
    let sform_code = LittleEndian::read_i16(&bytes[254..]);

    let mut spacing = [0f64; 3];
    for i in 0..3 {
        let p = f64::from(pixdim[1 + i]).abs();
        if !(p > 0.0) {
            return Err(Error::Format(format!("pixdim[{}] = {p} must be positive", i + 1)));
        }
        spacing[i] = p;
    }

    let affine = if sform_code > 0 {
        let mut a = [[0f64; 4]; 4];
        for r in 0..3 {
            for c in 0..4 {
                a[r][c] = f64::from(LittleEndian::read_f32(&bytes[280 + 16 * r + 4 * c..]));
            }
        }
        a[3] = [0.0, 0.0, 0.0, 1.0];
        a
    } else if qform_code > 0 {
        qform_affine(&bytes[..HEADER_SIZE], &pixdim, spacing)
    } else {
        super::diag_affine(spacing)
    };

    let n = dims[0] * dims[1] * dims[2];
    let voxel_bytes = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => {
            return Err(Error::Unsupported(format!(
                "NIfTI datatype {other}; supported: uint8 (2), int16 (4), float32 (16)"
            )))
        }
    };
    let offset = vox_offset.max(HEADER_SIZE);
    if bytes.len() < offset + n * voxel_bytes {
        return Err(Error::Format(format!(
            "data truncated: need {} bytes at offset {offset}, have {}",
            n * voxel_bytes,
            bytes.len().saturating_sub(offset)
        )));
    }
    let body = &bytes[offset..offset + n * voxel_bytes];
    let slope = if scl_slope == 0.0 { 1.0 } else { scl_slope };
    let raw_values: Box<dyn Iterator<Item = f32> + '_> = match datatype {
        DT_UINT8 => Box::new(body.iter().map(|&b| f32::from(b))),
        DT_INT16 => Box::new(
            body.chunks_exact(2)
                .map(LittleEndian::read_i16)
                .map(f32::from),
        ),
        _ => Box::new(body.chunks_exact(4).map(LittleEndian::read_f32)),
    };
    let data: Vec<f32> = if slope == 1.0 && scl_inter == 0.0 {
        raw_values.collect()
    } else {
        raw_values.map(|v| v * slope + scl_inter).collect()
    };

    Volume::new(dims, spacing, affine, data)
}

fn qform_affine(hdr: &[u8], pixdim: &[f32; 8], spacing: [f64; 3]) -> [[f64; 4]; 4] {
    let b = f64::from(LittleEndian::read_f32(&hdr[256..]));
    let c = f64::from(LittleEndian::read_f32(&hdr[260..]));
    let d = f64::from(LittleEndian::read_f32(&hdr[264..]));
    let a = (1.0 - b * b - c * c - d * d).max(0.0).sqrt();
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let r = [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - b * b - c * c,
        ],
    ];
    let offsets = [
        f64::from(LittleEndian::read_f32(&hdr[268..])),
        f64::from(LittleEndian::read_f32(&hdr[272..])),
        f64::from(LittleEndian::read_f32(&hdr[276..])),
    ];
    let mut aff = [[0f64; 4]; 4];
    for i in 0..3 {
        aff[i][0] = r[i][0] * spacing[0];
        aff[i][1] = r[i][1] * spacing[1];
        aff[i][2] = r[i][2] * spacing[2] * qfac;
        aff[i][3] = offsets[i];
    }
    aff[3] = [0.0, 0.0, 0.0, 1.0];
    aff
}

pub fn write_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_nifti_with_descrip(v, path, "")
}

/// Write with an annotation in the header `descrip` field (truncated to 79 bytes).
pub fn write_nifti_with_descrip(v: &Volume, path: impl AsRef<Path>, descrip: &str) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_nifti(v, descrip);
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let result = if gz {
        File::create(path).and_then(|f| {
            let mut enc = GzEncoder::new(f, Compression::fast());
            enc.write_all(&bytes)?;
            enc.finish().map(|_| ())
        })
    } else {
        File::create(path).and_then(|mut f| f.write_all(&bytes))
    };
    result.map_err(|e| Error::io(path, e))
}

/// Encode as uncompressed NIfTI-1 bytes: 348-byte header, 4 pad bytes, f32 data.
pub fn encode_nifti(v: &Volume, descrip: &str) -> Vec<u8> {
    let dims = v.dims();
    let n = v.len();
    let mut hdr = vec![0u8; HEADER_SIZE + 4];
    LittleEndian::write_i32(&mut hdr[0..], HEADER_SIZE as i32);
    LittleEndian::write_i16(&mut hdr[40..], 3);
    for i in 0..3 {
        LittleEndian::write_i16(&mut hdr[42 + 2 * i..], dims[i] as i16);
    }
    for i in 4..8 {
        LittleEndian::write_i16(&mut hdr[40 + 2 * i..], 1);
    }
    LittleEndian::write_i16(&mut hdr[70..], DT_FLOAT32);
    LittleEndian::write_i16(&mut hdr[72..], 32); // bitpix
    LittleEndian::write_f32(&mut hdr[76..], 1.0); // pixdim[0] = qfac
    for i in 0..3 {
        LittleEndian::write_f32(&mut hdr[80 + 4 * i..], v.spacing()[i] as f32);
    }
    LittleEndian::write_f32(&mut hdr[108..], (HEADER_SIZE + 4) as f32); // vox_offset
    LittleEndian::write_f32(&mut hdr[112..], 1.0); // scl_slope
    let desc = descrip.as_bytes();
    let len = desc.len().min(79);
    hdr[148..148 + len].copy_from_slice(&desc[..len]);
    LittleEndian::write_i16(&mut hdr[254..], 1); // sform_code
    for r in 0..3 {
        for c in 0..4 {
            LittleEndian::write_f32(&mut hdr[280 + 16 * r + 4 * c..], v.affine()[r][c] as f32);
        }
    }
    hdr[344..348].copy_from_slice(MAGIC_NIP1);

    let mut out = hdr;
    out.reserve(n * 4);
    let mut buf = [0u8; 4];
    for &x in v.data() {
        LittleEndian::write_f32(&mut buf, x);
        out.extend_from_slice(&buf);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::diag_affine;
    use proptest::prelude::*;

    #[test]
    fn roundtrip_small_float_volume() {
        let v = Volume::from_spacing([2, 2, 1], [0.5, 0.5, 2.0], vec![1.0, -2.5, 3.25, 4.75]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.nii");
        write_nifti(&v, &p).unwrap();
        let r = read_nifti(&p).unwrap();
        assert_eq!(r.data(), v.data());
        assert_eq!(r.dims(), v.dims());
        for i in 0..3 {
            assert!((r.spacing()[i] - v.spacing()[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn roundtrip_gzip() {
        let v = Volume::from_spacing([3, 2, 2], [1.0; 3], (0..12).map(|i| i as f32).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.nii.gz");
        write_nifti(&v, &p).unwrap();
        let r = read_nifti(&p).unwrap();
        assert_eq!(r.data(), v.data());
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let v = Volume::filled([2, 2, 2], [1.0; 3], 1.0).unwrap();
        let mut bytes = encode_nifti(&v, "");
        bytes[344..348].copy_from_slice(b"ni0\0");
        assert!(matches!(parse_nifti(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn expected_byte_layout() {
        // 348 header + 4 pad (vox_offset 352) + 8 voxels * 4 bytes
        let v = Volume::filled([2, 2, 2], [1.0; 3], 1.0).unwrap();
        let bytes = encode_nifti(&v, "");
        assert_eq!(bytes.len(), 352 + 32);
        assert_eq!(LittleEndian::read_f32(&bytes[108..]), 352.0);
    }

    #[test]
    fn unsupported_datatype() {
        let v = Volume::filled([2, 2, 2], [1.0; 3], 1.0).unwrap();
        let mut bytes = encode_nifti(&v, "");
        LittleEndian::write_i16(&mut bytes[70..], 64); // float64
        assert!(matches!(parse_nifti(&bytes), Err(Error::Unsupported(_))));
    }

    #[test]
    fn int16_with_scaling() {
        // Hand-built int16 file: raw voxel 3 with scl_slope=2, scl_inter=1 -> 7.0.
        // Expected values cross-checked against the nibabel reference reader.
        let mut hdr = vec![0u8; 352];
        LittleEndian::write_i32(&mut hdr[0..], 348);
        LittleEndian::write_i16(&mut hdr[40..], 3);
        LittleEndian::write_i16(&mut hdr[42..], 2);
        LittleEndian::write_i16(&mut hdr[44..], 1);
        LittleEndian::write_i16(&mut hdr[46..], 1);
        LittleEndian::write_i16(&mut hdr[70..], 4); // int16
        LittleEndian::write_i16(&mut hdr[72..], 16);
        for i in 0..4 {
            LittleEndian::write_f32(&mut hdr[76 + 4 * i..], 1.0);
        }
        LittleEndian::write_f32(&mut hdr[108..], 352.0);
        LittleEndian::write_f32(&mut hdr[112..], 2.0);
        LittleEndian::write_f32(&mut hdr[116..], 1.0);
        hdr[344..348].copy_from_slice(b"n+1\0");
        let mut bytes = hdr;
        for raw in [3i16, -2] {
            let mut b = [0u8; 2];
            LittleEndian::write_i16(&mut b, raw);
            bytes.extend_from_slice(&b);
        }
        let v = parse_nifti(&bytes).unwrap();
        assert_eq!(v.dims(), [2, 1, 1]);
        assert_eq!(v.data(), &[7.0, -3.0]);
    }

    #[test]
    fn squeezes_trailing_singletons() {
        let v = Volume::filled([2, 3, 4], [1.0; 3], 0.5).unwrap();
        let mut bytes = encode_nifti(&v, "");
        LittleEndian::write_i16(&mut bytes[40..], 4);
        LittleEndian::write_i16(&mut bytes[48..], 1); // dim[4] = 1
        let r = parse_nifti(&bytes).unwrap();
        assert_eq!(r.dims(), [2, 3, 4]);

        LittleEndian::write_i16(&mut bytes[48..], 2); // dim[4] = 2: not squeezable
        assert!(matches!(parse_nifti(&bytes), Err(Error::Dimension(_))));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let v = Volume::filled([1, 1, 1], [1.0; 3], 0.0).unwrap();
        assert!(matches!(
            write_nifti(&v, "/nonexistent-dir/x.nii"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn qform_fallback_diagonal() {
        // sform_code 0, qform_code 1 with identity quaternion: affine = diag(spacing) + offset.
        let v = Volume::from_spacing([2, 2, 1], [2.0, 3.0, 4.0], vec![0.0; 4]).unwrap();
        let mut bytes = encode_nifti(&v, "");
        LittleEndian::write_i16(&mut bytes[254..], 0);
        LittleEndian::write_i16(&mut bytes[252..], 1);
        LittleEndian::write_f32(&mut bytes[268..], 10.0);
        let r = parse_nifti(&bytes).unwrap();
        assert_eq!(r.affine()[0][0], 2.0);
        assert_eq!(r.affine()[1][1], 3.0);
        assert_eq!(r.affine()[2][2], 4.0);
        assert_eq!(r.affine()[0][3], 10.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip_is_bit_exact(
            nx in 1usize..5, ny in 1usize..5, nz in 1usize..5,
            seed in any::<u64>(),
        ) {
            use rand::{RngExt, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = nx * ny * nz;
            let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1e6f32..1e6)).collect();
            let v = Volume::new([nx, ny, nz], [0.15, 0.15, 0.5], diag_affine([0.15, 0.15, 0.5]), data).unwrap();
            let bytes = encode_nifti(&v, "");
            let r = parse_nifti(&bytes).unwrap();
            prop_assert_eq!(r.data(), v.data());
            for i in 0..3 {
                for j in 0..4 {
                    prop_assert!((r.affine()[i][j] - v.affine()[i][j]).abs() <= 1e-5);
                }
            }
        }
    }
}
