//! The full 138-dimensional descriptor: local (18) + global (45) + spatial (75).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global::{global_features, GLOBAL_DIM};
use crate::image::GrayImage;
use crate::local::{local_features, LOCAL_DIM};
use crate::spatial::{spatial_features, SPATIAL_DIM};
use crate::steerable::MIN_SIDE;

pub const FEATURE_DIM: usize = LOCAL_DIM + GLOBAL_DIM + SPATIAL_DIM;

/// Bumped whenever any extractor changes its output; cached features keyed
/// on an older value are recomputed.
pub const EXTRACTOR_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Local,
    Global,
    Spatial,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 3] = [FeatureGroup::Local, FeatureGroup::Global, FeatureGroup::Spatial];

    pub fn dim(self) -> usize {
        match self {
            FeatureGroup::Local => LOCAL_DIM,
            FeatureGroup::Global => GLOBAL_DIM,
            FeatureGroup::Spatial => SPATIAL_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Local => "local",
            FeatureGroup::Global => "global",
            FeatureGroup::Spatial => "spatial",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    local: Vec<f64>,
    global: Vec<f64>,
    spatial: Vec<f64>,
}

impl FeatureVector {
    pub fn new(local: Vec<f64>, global: Vec<f64>, spatial: Vec<f64>) -> Result<Self> {
        let v = Self { local, global, spatial };
        v.validate()?;
        Ok(v)
    }

    /// Splits a flat 138-vector in concatenation order.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::DimensionMismatch {
                expected: FEATURE_DIM,
                actual: values.len(),
            });
        }
        let (l, rest) = values.split_at(LOCAL_DIM);
        let (g, s) = rest.split_at(GLOBAL_DIM);
        Self::new(l.to_vec(), g.to_vec(), s.to_vec())
    }

    /// Checks block lengths and finiteness; needed after deserializing.
    pub fn validate(&self) -> Result<()> {
        for g in FeatureGroup::ALL {
            let block = self.group(g);
            if block.len() != g.dim() {
                return Err(Error::DimensionMismatch {
                    expected: g.dim(),
                    actual: block.len(),
                });
            }
            if let Some(i) = block.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{} feature {i}", g.name())));
            }
        }
        Ok(())
    }

    pub fn group(&self, g: FeatureGroup) -> &[f64] {
        match g {
            FeatureGroup::Local => &self.local,
            FeatureGroup::Global => &self.global,
            FeatureGroup::Spatial => &self.spatial,
        }
    }

    pub fn local(&self) -> &[f64] {
        &self.local
    }

    pub fn global(&self) -> &[f64] {
        &self.global
    }

    pub fn spatial(&self) -> &[f64] {
        &self.spatial
    }

    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.extend_from_slice(&self.local);
        v.extend_from_slice(&self.global);
        v.extend_from_slice(&self.spatial);
        v
    }

    /// Column names matching [`as_vec`](Self::as_vec), e.g. `global_07`.
    pub fn names() -> Vec<String> {
        FeatureGroup::ALL
            .iter()
            .flat_map(|g| (0..g.dim()).map(move |i| format!("{}_{i:02}", g.name())))
            .collect()
    }
}

/// Extracts all three feature groups. Images must be at least 32x32.
pub fn extract_features(image: &GrayImage) -> Result<FeatureVector> {
    if image.width() < MIN_SIDE || image.height() < MIN_SIDE {
        return Err(Error::TooSmall(format!(
            "{}x{} image; features need at least {MIN_SIDE}x{MIN_SIDE}",
            image.width(),
            image.height()
        )));
    }
    let (local, (global, spatial)) = rayon::join(
        || local_features(image),
        || rayon::join(|| global_features(image), || spatial_features(image)),
    );
    FeatureVector::new(
        local?.as_slice().to_vec(),
        global?.as_slice().to_vec(),
        spatial?.as_slice().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_match_layout() {
        let n = FeatureVector::names();
        assert_eq!(n.len(), 138);
        assert_eq!(n[0], "local_00");
        assert_eq!(n[18], "global_00");
        assert_eq!(n[137], "spatial_74");
    }

    #[test]
    fn tiny_image_is_rejected() {
        let img = GrayImage::constant(8, 8, 0.5).unwrap();
        assert!(matches!(extract_features(&img), Err(Error::TooSmall(_))));
        let img = GrayImage::constant(64, 31, 0.5).unwrap();
        assert!(matches!(extract_features(&img), Err(Error::TooSmall(_))));
    }

    #[test]
    fn flat_round_trip() {
        let v: Vec<f64> = (0..138).map(|i| i as f64 * 0.5).collect();
        let f = FeatureVector::from_slice(&v).unwrap();
        assert_eq!(f.as_vec(), v);
        assert_eq!(f.global()[0], 9.0);
        assert!(FeatureVector::from_slice(&v[..137]).is_err());
        let mut bad = v.clone();
        bad[100] = f64::NAN;
        assert!(matches!(FeatureVector::from_slice(&bad), Err(Error::NonFinite(_))));
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(serde_json::from_str::<FeatureVector>(&json).unwrap(), f);
    }

    #[test]
    fn minimum_size_works() {
        let img = GrayImage::from_fn(32, 32, |x, y| ((x * 7 + y * 13) % 17) as f64 / 16.0).unwrap();
        let f = extract_features(&img).unwrap();
        assert_eq!(f.as_vec().len(), FEATURE_DIM);
    }
}
