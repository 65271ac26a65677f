//! Dataset manifests: one `sample_id, t1_path, t2_path, labels_path` line
//! per sample.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::read_file;
use crate::io::vvol::{read_labels, read_volume};
use crate::volume::Sample;

pub const MANIFEST_HEADER: &str = "sample_id,t1_path,t2_path,labels_path";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub t1: PathBuf,
    pub t2: PathBuf,
    pub labels: PathBuf,
}

/// Parses manifest text. Blank lines and `#` comments are skipped, as is a
/// leading header line. Relative paths are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out: Vec<ManifestEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if out.is_empty() && fields.first() == Some(&"sample_id") {
            continue;
        }
        let err = |message: String| Error::Manifest { line: i + 1, message };
        let [id, t1, t2, labels] = fields[..] else {
            return Err(err(format!("expected 4 comma-separated fields, found {}", fields.len())));
        };
        if [id, t1, t2, labels].iter().any(|f| f.is_empty()) {
            return Err(err("empty field".into()));
        }
        if out.iter().any(|e| e.sample_id == id) {
            return Err(err(format!("duplicate sample id '{id}'")));
        }
        out.push(ManifestEntry {
            sample_id: id.to_string(),
            t1: base.join(t1),
            t2: base.join(t2),
            labels: base.join(labels),
        });
    }
    if out.is_empty() {
        return Err(Error::Manifest {
            line: 0,
            message: "no samples listed".into(),
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::Manifest {
        line: 0,
        message: "not UTF-8".into(),
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn load_entry(e: &ManifestEntry) -> Result<Sample> {
    let t1 = read_volume(&e.t1)?;
    let t2 = read_volume(&e.t2)?;
    let labels = read_labels(&e.labels)?;
    Sample::new(vec![t1, t2], labels)
        .map_err(|err| Error::invalid(format!("sample '{}': {err}", e.sample_id)))
}

/// Reads every sample named in a manifest file.
pub fn load_dataset(path: &Path) -> Result<Vec<(String, Sample)>> {
    read_manifest(path)?
        .iter()
        .map(|e| Ok((e.sample_id.clone(), load_entry(e)?)))
        .collect()
}

pub fn manifest_text(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{},{}\n",
            e.sample_id,
            e.t1.display(),
            e.t2.display(),
            e.labels.display()
        ));
    }
    s
}
