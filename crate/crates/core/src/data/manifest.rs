use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "manifest.json";

fn default_true() -> bool {
    true
}

/// Geometry, splits and file layout of an EEGPACK container.
///
/// Split lists hold global record ids. Row `i` of `<split>.labels.csv` describes
/// the `i`-th record of `<split>.f32`, and its `record_index` column carries
/// the same id as position `i` of the split list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub channels: usize,
    pub timesteps: usize,
    pub num_classes: usize,
    pub splits: BTreeMap<String, Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Per-record, per-channel z-normalization over time at load.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// False when the label column holds placeholders rather than classes.
    #[serde(default = "default_true")]
    pub labeled: bool,
}

impl DatasetManifest {
    pub fn record_len(&self) -> usize {
        self.channels * self.timesteps
    }

    pub fn total_records(&self) -> usize {
        self.splits.values().map(Vec::len).sum()
    }

    /// Checks the invariants that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.channels == 0 || self.timesteps == 0 || self.num_classes == 0 {
            return Err(Error::Geometry(format!(
                "channels ({}), timesteps ({}) and num_classes ({}) must be positive",
                self.channels, self.timesteps, self.num_classes
            )));
        }
        let mut owner: HashMap<u64, &str> = HashMap::new();
        for (split, ids) in &self.splits {
            if split.is_empty() || split.contains(['/', '\\', '.']) {
                return Err(Error::Data(format!("invalid split name `{split}`")));
            }
            for &id in ids {
                if let Some(first) = owner.insert(id, split) {
                    return Err(Error::OverlappingSplits {
                        record: id,
                        first: first.to_string(),
                        second: split.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn blob_path(root: &Path, split: &str) -> PathBuf {
        root.join(format!("{split}.f32"))
    }

    pub fn labels_path(root: &Path, split: &str) -> PathBuf {
        root.join(format!("{split}.labels.csv"))
    }

    pub fn image_dir(&self, root: &Path) -> Option<PathBuf> {
        self.image_root.as_ref().map(|r| root.join(r))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Resolves either a container directory or its `manifest.json`.
pub(crate) fn container_root(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

pub(crate) fn manifest_path(root: &Path) -> PathBuf {
    root.join(MANIFEST_FILE)
}

pub(crate) fn read_manifest_unchecked(root: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(root);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads and validates a manifest, checking every referenced blob and label
/// table against the declared geometry.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let root = container_root(path);
    let manifest = read_manifest_unchecked(&root)?;
    manifest.validate()?;
    for (split, ids) in &manifest.splits {
        super::container::check_split_files(&root, &manifest, split, ids)?;
    }
    Ok(manifest)
}
