//! Dataset manifests: one CSV row per SR image with its perceptual score.
//!
//! ```text
//! image_path,ref_id,method,s,sigma,score
//! sr/baby_a_x4.png,baby,a,4,1.2,6.35
//! ```
//!
//! Relative image paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SCORE_MAX, SCORE_MIN};
use crate::stats::aggregate_perceptual;

pub const MANIFEST_HEADER: [&str; 6] = ["image_path", "ref_id", "method", "s", "sigma", "score"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: PathBuf,
    pub ref_id: String,
    pub method: String,
    pub s: u32,
    pub sigma: f64,
    pub score: f64,
}

impl ManifestEntry {
    pub fn key(&self) -> (&str, &str, u32) {
        (&self.ref_id, &self.method, self.s)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.image_path.as_os_str().is_empty() {
            return Err("empty image_path".into());
        }
        if self.ref_id.is_empty() || self.method.is_empty() {
            return Err("empty ref_id or method".into());
        }
        if self.s < 2 {
            return Err(format!("scale factor {} is below 2", self.s));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(format!("sigma {} must be positive", self.sigma));
        }
        if !(SCORE_MIN..=SCORE_MAX).contains(&self.score) {
            return Err(format!("score {} outside [0, 10]", self.score));
        }
        Ok(())
    }
}

/// An image listed in a manifest that does not exist on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct MissingFile {
    pub line: usize,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub missing: Vec<MissingFile>,
}

impl Manifest {
    /// Fails listing every missing image, if any.
    pub fn require_files(&self) -> Result<()> {
        if self.missing.is_empty() {
            return Ok(());
        }
        let list: Vec<String> = self
            .missing
            .iter()
            .map(|m| format!("line {}: {}", m.line, m.path.display()))
            .collect();
        Err(Error::InsufficientData(format!(
            "{} manifest image(s) missing: {}",
            list.len(),
            list.join("; ")
        )))
    }
}

fn check_header(headers: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    let found: Vec<&str> = headers.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header {}, found {}", expected.join(","), found.join(",")),
        });
    }
    Ok(())
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader)
}

/// Parses a manifest from any reader. `base` resolves relative image paths
/// and `path` only labels errors.
pub fn parse_manifest<R: Read>(reader: R, base: &Path, path: &Path) -> Result<Manifest> {
    let mut rdr = csv_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    check_header(&headers, &MANIFEST_HEADER, path)?;
    let mut entries = Vec::new();
    let mut missing = Vec::new();
    let mut seen = HashSet::new();
    for record in rdr.records() {
        let (line, parsed) = match record {
            Ok(r) => (
                r.position().map_or(0, |p| p.line() as usize),
                r.deserialize::<ManifestEntry>(Some(&headers)),
            ),
            Err(e) => (e.position().map_or(0, |p| p.line() as usize), Err(e)),
        };
        let fail = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut entry = parsed.map_err(|e| fail(e.to_string()))?;
        entry.check().map_err(fail)?;
        let key = (entry.ref_id.clone(), entry.method.clone(), entry.s);
        if !seen.insert(key) {
            return Err(fail(format!(
                "duplicate entry for ref_id {}, method {}, s {}",
                entry.ref_id, entry.method, entry.s
            )));
        }
        if entry.image_path.is_relative() {
            entry.image_path = base.join(&entry.image_path);
        }
        if !entry.image_path.is_file() {
            missing.push(MissingFile {
                line,
                path: entry.image_path.clone(),
            });
        }
        entries.push(entry);
    }
    Ok(Manifest { entries, missing })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(file, base, path)
}

/// Writes entries; image paths are made relative to the manifest directory
/// where possible.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for e in entries {
        let mut e = e.clone();
        if let Ok(rel) = e.image_path.strip_prefix(base) {
            e.image_path = rel.to_path_buf();
        }
        w.serialize(e).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("{other:?}")),
    }
}

pub const RATINGS_HEADER: [&str; 6] = ["image_path", "ref_id", "method", "s", "sigma", "rating"];

#[derive(Deserialize)]
struct Rating {
    image_path: PathBuf,
    ref_id: String,
    method: String,
    s: u32,
    sigma: f64,
    rating: f64,
}

/// Collapses long-form subject ratings (one row per rating) into manifest
/// entries scored by the trimmed mean. Output is sorted by key.
pub fn aggregate_ratings<R: Read>(reader: R, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    check_header(&headers, &RATINGS_HEADER, path)?;
    let mut groups: BTreeMap<(String, String, u32), (PathBuf, f64, Vec<f64>, usize)> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<Rating>().enumerate() {
        let line = i + 2;
        let fail = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let r = row.map_err(|e| fail(e.to_string()))?;
        if !r.rating.is_finite() {
            return Err(fail("non-finite rating".into()));
        }
        let g = groups
            .entry((r.ref_id, r.method, r.s))
            .or_insert_with(|| (r.image_path.clone(), r.sigma, Vec::new(), line));
        if g.0 != r.image_path || g.1 != r.sigma {
            return Err(fail("image_path or sigma disagrees with earlier ratings of this image".into()));
        }
        g.2.push(r.rating);
    }
    groups
        .into_iter()
        .map(|((ref_id, method, s), (image_path, sigma, ratings, first_line))| {
            let score = aggregate_perceptual(&ratings).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: first_line,
                reason: format!("{ref_id}/{method}/x{s}: {e}"),
            })?;
            let entry = ManifestEntry {
                image_path,
                ref_id,
                method,
                s,
                sigma,
                score,
            };
            entry.check().map_err(|reason| Error::Manifest {
                path: path.to_path_buf(),
                line: first_line,
                reason,
            })?;
            Ok(entry)
        })
        .collect()
}
