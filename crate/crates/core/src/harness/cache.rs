//! On-disk feature cache keyed by file content and extractor version.
//!
//! Each image gets `<dir>/<sha256>.json`, where the hash covers the file
//! bytes followed by the extractor version. Records are written to a
//! temporary file and renamed into place, so concurrent readers never see a
//! partial record and concurrent writers of the same key are harmless.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector, EXTRACTOR_VERSION};
use crate::image::load_image;

#[derive(Serialize, Deserialize)]
struct Record {
    extractor_version: u32,
    source: String,
    features: FeatureVector,
}

/// A cache rooted at a directory, or a pass-through when disabled.
#[derive(Clone, Debug, Default)]
pub struct FeatureCache {
    dir: Option<PathBuf>,
}

impl FeatureCache {
    pub fn disabled() -> Self {
        Self { dir: None }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::from(e).context(format!("creating cache {}", dir.display())))?;
        Ok(Self { dir: Some(dir) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn key(bytes: &[u8]) -> String {
        let mut h = Sha256::new();
        h.update(bytes);
        h.update(EXTRACTOR_VERSION.to_le_bytes());
        hex::encode(h.finalize())
    }

    /// Cached features for `path`, extracting and storing them on a miss.
    /// Unreadable or stale records count as misses.
    pub fn features(&self, path: &Path) -> Result<FeatureVector> {
        let Some(dir) = &self.dir else {
            return extract_features(&load_image(path)?);
        };
        let bytes = std::fs::read(path).map_err(|e| Error::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let record_path = dir.join(format!("{}.json", Self::key(&bytes)));
        if let Some(f) = Self::read_record(&record_path) {
            return Ok(f);
        }
        let features = extract_features(&load_image(path)?)?;
        let record = Record {
            extractor_version: EXTRACTOR_VERSION,
            source: path.display().to_string(),
            features,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&mut tmp, &record)?;
        tmp.flush()?;
        tmp.persist(&record_path).map_err(|e| Error::Io(e.error))?;
        Ok(record.features)
    }

    fn read_record(path: &Path) -> Option<FeatureVector> {
        let text = std::fs::read_to_string(path).ok()?;
        let r: Record = serde_json::from_str(&text).ok()?;
        (r.extractor_version == EXTRACTOR_VERSION && r.features.validate().is_ok()).then_some(r.features)
    }
}
