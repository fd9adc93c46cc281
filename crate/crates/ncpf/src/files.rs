//! COO tensors, JSON and CSV on disk.
//!
//! COO text: one entry per line as `i,j,k,value` (commas or whitespace),
//! zero-based indices, `#` starts a comment, and an optional
//! `# dims I J K` line fixes the extents. LF or CRLF line endings.

use std::fs;
use std::path::{Path, PathBuf};

use ncpf_core::{Dims, Split, SplitFractions, SparseTensor3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a COO file. `dims` overrides any header; without either, extents
/// are the per-mode maximum index plus one.
pub fn load_coo(path: &Path, dims: Option<Dims>) -> Result<SparseTensor3> {
    let text = read_text(path)?;
    ncpf_core::parse_coo(&text, dims).map_err(|e| Error::in_file(path, e))
}

pub fn write_coo(path: &Path, t: &SparseTensor3) -> Result<()> {
    write_text(path, &t.to_coo_string())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

/// Writes `rows` as a CSV table with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |e| Error::Csv { path: path.into(), source: e };
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    write_text(path, &String::from_utf8_lossy(&bytes))
}

/// JSON sidecar of an exported split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub seed: u64,
    pub fractions: SplitFractions,
    pub dims: Dims,
    pub counts: Counts,
    pub files: SplitFiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: String,
    pub validation: String,
    pub test: String,
}

pub const SPLIT_FORMAT: &str = "ncpf-split/1";

/// Writes `train.coo`, `validation.coo`, `test.coo` and `split.json` into `dir`.
pub fn export_split(dir: &Path, split: &Split, fractions: SplitFractions) -> Result<SplitManifest> {
    let files = SplitFiles { train: "train.coo".into(), validation: "validation.coo".into(), test: "test.coo".into() };
    write_coo(&dir.join(&files.train), &split.train)?;
    write_coo(&dir.join(&files.validation), &split.validation)?;
    write_coo(&dir.join(&files.test), &split.test)?;
    let manifest = SplitManifest {
        format: SPLIT_FORMAT.into(),
        seed: split.seed,
        fractions,
        dims: split.train.dims(),
        counts: Counts { train: split.train.len(), validation: split.validation.len(), test: split.test.len() },
        files,
    };
    write_json(&dir.join("split.json"), &manifest)?;
    Ok(manifest)
}

/// Reads a split written by [`export_split`] back from its sidecar.
pub fn import_split(manifest_path: &Path) -> Result<(Split, SplitManifest)> {
    let m: SplitManifest = read_json(manifest_path)?;
    if m.format != SPLIT_FORMAT {
        return Err(Error::config(format!("{}: unknown split format {:?}", manifest_path.display(), m.format)));
    }
    let dir: PathBuf = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let load = |f: &str| load_coo(&dir.join(f), Some(m.dims));
    let split = Split { train: load(&m.files.train)?, validation: load(&m.files.validation)?, test: load(&m.files.test)?, seed: m.seed };
    Ok((split, m))
}
