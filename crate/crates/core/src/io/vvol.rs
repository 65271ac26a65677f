//! VVOL: a minimal single-volume container.
//!
//! Layout (little-endian): magic `VVOL`, version `u16`, dtype `u8`
//! (0 = f32 intensities, 1 = u8 labels), rank `u8` (always 3), extents
//! `D, H, W` as `u32`, spacing in mm as three `f32`, then the row-major
//! payload.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::bytes::{put_f32s, Reader};
use crate::io::{atomic_write, read_file};
use crate::volume::{LabelVolume, Volume};

pub const VVOL_MAGIC: [u8; 4] = *b"VVOL";
pub const VVOL_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_U8: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum VvolData {
    Intensity(Volume),
    Labels(LabelVolume),
}

impl VvolData {
    pub fn dtype_name(&self) -> &'static str {
        match self {
            VvolData::Intensity(_) => "f32",
            VvolData::Labels(_) => "u8",
        }
    }
}

fn header(out: &mut Vec<u8>, dtype: u8, dims: [usize; 3], spacing: [f32; 3]) -> Result<()> {
    out.extend_from_slice(&VVOL_MAGIC);
    out.extend_from_slice(&VVOL_VERSION.to_le_bytes());
    out.push(dtype);
    out.push(3);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(())
}

pub fn encode_vvol(v: &VvolData) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match v {
        VvolData::Intensity(vol) => {
            header(&mut out, DTYPE_F32, vol.dims(), vol.spacing())?;
            put_f32s(&mut out, vol.data());
        }
        VvolData::Labels(lab) => {
            header(&mut out, DTYPE_U8, lab.dims(), lab.spacing())?;
            out.extend_from_slice(lab.labels());
        }
    }
    Ok(out)
}

pub fn decode_vvol(bytes: &[u8]) -> Result<VvolData> {
    let mut r = Reader::new(bytes, "vvol");
    let magic = r.array::<4>()?;
    if magic != VVOL_MAGIC {
        return Err(Error::BadMagic {
            expected: VVOL_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != VVOL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = r.u8()?;
    let rank = r.u8()?;
    if rank != 3 {
        return Err(Error::Corrupt(format!("rank {rank}, expected 3")));
    }
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let spacing = [r.f32()?, r.f32()?, r.f32()?];
    let n = dims
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| Error::Corrupt(format!("extent overflow {dims:?}")))?;
    let data = match dtype {
        DTYPE_F32 => VvolData::Intensity(
            Volume::new(dims, spacing, r.f32s(n)?).map_err(|e| Error::Corrupt(e.to_string()))?,
        ),
        DTYPE_U8 => VvolData::Labels(
            LabelVolume::new(dims, spacing, r.take(n)?.to_vec())
                .map_err(|e| Error::Corrupt(e.to_string()))?,
        ),
        other => return Err(Error::Corrupt(format!("unknown dtype code {other}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok(data)
}

pub fn read_vvol(path: &Path) -> Result<VvolData> {
    decode_vvol(&read_file(path)?)
}

pub fn write_vvol(path: &Path, v: &VvolData) -> Result<()> {
    atomic_write(path, &encode_vvol(v)?)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match read_vvol(path)? {
        VvolData::Intensity(v) => Ok(v),
        other => Err(Error::DtypeMismatch {
            expected: "f32",
            found: other.dtype_name(),
        }),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    match read_vvol(path)? {
        VvolData::Labels(v) => Ok(v),
        other => Err(Error::DtypeMismatch {
            expected: "u8",
            found: other.dtype_name(),
        }),
    }
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    write_vvol(path, &VvolData::Intensity(v.clone()))
}

pub fn write_labels(path: &Path, v: &LabelVolume) -> Result<()> {
    write_vvol(path, &VvolData::Labels(v.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol() -> Volume {
        let data = (0..24).map(|i| i as f32 * -0.37 + f32::MIN_POSITIVE).collect();
        Volume::new([2, 3, 4], [0.5, 1.0, 1.25], data).unwrap()
    }

    #[test]
    fn both_dtypes_round_trip_bit_exact() {
        let v = VvolData::Intensity(vol());
        let l = VvolData::Labels(LabelVolume::new([1, 2, 3], [1.0; 3], vec![0, 1, 2, 3, 2, 1]).unwrap());
        for x in [v, l] {
            let bytes = encode_vvol(&x).unwrap();
            assert_eq!(decode_vvol(&bytes).unwrap(), x);
            assert_eq!(encode_vvol(&decode_vvol(&bytes).unwrap()).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_vvol(&VvolData::Intensity(vol())).unwrap();
        assert_eq!(&bytes[..4], b"VVOL");
        assert_eq!(bytes[6], DTYPE_F32);
        assert_eq!(bytes[7], 3);
        assert_eq!(bytes.len(), 4 + 2 + 2 + 12 + 12 + 24 * 4);
    }

    #[test]
    fn malformed_files_rejected() {
        let bytes = encode_vvol(&VvolData::Intensity(vol())).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_vvol(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_vvol(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(matches!(decode_vvol(&v2), Err(Error::UnsupportedVersion(9))));
        let mut rank = bytes.clone();
        rank[7] = 2;
        assert!(decode_vvol(&rank).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_vvol(&extra).is_err());
    }

    #[test]
    fn dtype_checked_on_typed_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.vvol");
        write_volume(&p, &vol()).unwrap();
        assert_eq!(read_volume(&p).unwrap(), vol());
        assert!(matches!(read_labels(&p), Err(Error::DtypeMismatch { .. })));
    }

    #[test]
    fn out_of_range_label_is_corrupt() {
        let mut bytes = encode_vvol(&VvolData::Labels(LabelVolume::new([1, 1, 2], [1.0; 3], vec![0, 1]).unwrap())).unwrap();
        *bytes.last_mut().unwrap() = 7;
        assert!(matches!(decode_vvol(&bytes), Err(Error::Corrupt(_))));
    }
}
