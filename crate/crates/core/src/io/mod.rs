//! VVOL volume files, dataset manifests and synthetic phantoms.

pub(crate) mod bytes;
mod manifest;
mod phantom;
mod vvol;

pub use manifest::{
    load_dataset, load_entry, manifest_text, parse_manifest, read_manifest, ManifestEntry,
    MANIFEST_HEADER,
};
pub use phantom::{gen_phantom, write_phantom_dataset, MIN_PHANTOM_DIM, T1_LEVELS, T2_LEVELS};
pub use vvol::{
    decode_vvol, encode_vvol, read_labels, read_volume, read_vvol, write_labels, write_volume,
    write_vvol, VvolData, DTYPE_F32, DTYPE_U8, VVOL_MAGIC, VVOL_VERSION,
};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        let err = atomic_write(Path::new("/nonexistent/dir/x"), b"x").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
