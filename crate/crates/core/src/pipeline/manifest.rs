use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Color,
    Classification,
    Counting,
}

/// One line of the JSON-lines manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub caption: String,
    pub task: TaskKind,
    #[serde(default)]
    pub deceptive_texts: Vec<String>,
    /// Captions the retrieval oracle competes against the true caption;
    /// falls back to `deceptive_texts`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoys: Option<Vec<String>>,
}

impl ManifestEntry {
    pub fn oracle_decoys(&self) -> &[String] {
        match &self.decoys {
            Some(d) if !d.is_empty() => d,
            _ => &self.deceptive_texts,
        }
    }
}

/// Parses a JSON-lines manifest. Blank lines are skipped; relative paths are
/// resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&text, base)
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Manifest { line, message };
        let mut entry: ManifestEntry = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if entry.id.is_empty()
            || entry.id.contains(['/', '\\'])
            || entry.id == "."
            || entry.id == ".."
        {
            return Err(err(format!("id {:?} is not usable as a file name", entry.id)));
        }
        if entry.caption.trim().is_empty() {
            return Err(err("caption is empty".into()));
        }
        if !seen.insert(entry.id.clone()) {
            return Err(err(format!("duplicate id {:?}", entry.id)));
        }
        for p in [&mut entry.image_path, &mut entry.mask_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}
