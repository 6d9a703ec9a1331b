use std::fs;
use std::path::{Path, PathBuf};

use seqcontrast::{read_nifti, BrainMask, Error, Intent, ParamGrid, Result, SequenceKind, ThetaSet, TissueTable, Volume};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn name(path: &Path) -> String {
    path.display().to_string()
}

/// Read a volume and force its intent, for files written by other tools.
pub fn read_as(path: &Path, intent: Intent) -> Result<Volume> {
    let v = read_nifti(path)?;
    if v.intent() == intent {
        return Ok(v);
    }
    let data = v.data().to_vec();
    v.with_data(data, intent)
}

pub fn read_mask(path: &Path) -> Result<BrainMask> {
    Ok(BrainMask::from_positive(&read_nifti(path)?))
}

pub fn kind(s: &str, flag: &str) -> Result<SequenceKind> {
    s.parse()
        .map_err(|_| Error::Usage(format!("{flag}: unknown sequence kind `{s}` (FLASH, SPGR, MPRAGE, T2SPACE)")))
}

pub fn tissue_table(path: Option<&PathBuf>, flag: &str) -> Result<TissueTable> {
    let path = path.ok_or_else(|| Error::Usage(format!("{flag} is required")))?;
    TissueTable::parse(&read_text(path)?, &name(path))
}

pub fn thetas(path: &Path) -> Result<Vec<ThetaSet>> {
    ThetaSet::parse_all(&read_text(path)?, &name(path))
}

pub fn grid(path: &Path) -> Result<ParamGrid> {
    ParamGrid::parse(&read_text(path)?, &name(path))
}

/// Non-comment lines of a tab-separated manifest, split into exactly `n`
/// fields, with their 1-based line numbers.
pub fn manifest(path: &Path, n: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(|f| f.trim().to_string()).collect();
        if fields.len() != n {
            return Err(Error::Parse {
                source_name: name(path),
                line: i + 1,
                message: format!("expected {n} tab-separated fields, got {}", fields.len()),
            });
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

/// Manifest paths are relative to the manifest's directory.
pub fn resolve(manifest: &Path, field: &str) -> PathBuf {
    let p = Path::new(field);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}
