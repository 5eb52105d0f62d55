//! Spatial-discontinuity features: the eigenvalue spectrum of the 5x5 patch
//! covariance at each of three pyramid levels.
//!
//! Sharp content spreads energy over many principal directions; smooth
//! content concentrates it in a few, so the normalized spectrum decays
//! faster.

use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::image::{build_pyramid, extract_patches, GrayImage, Plane, PYRAMID_LEVELS};

pub const PATCH: usize = 5;
pub const PATCH_DIM: usize = PATCH * PATCH;
pub const SPATIAL_DIM: usize = PYRAMID_LEVELS * PATCH_DIM;
const ZERO_SPECTRUM: f64 = 1e-15;

type Cov = SMatrix<f64, PATCH_DIM, PATCH_DIM>;

/// 75 values: per level, 25 singular values in descending order divided by
/// the largest.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFeatures(pub [f64; SPATIAL_DIM]);

impl SpatialFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn level(&self, l: usize) -> &[f64] {
        &self.0[l * PATCH_DIM..(l + 1) * PATCH_DIM]
    }
}

/// Covariance of all stride-1 5x5 patches around the mean patch. The upper
/// triangle is accumulated and mirrored, so the result is exactly symmetric.
pub fn patch_covariance(level: &Plane) -> Result<[[f64; PATCH_DIM]; PATCH_DIM]> {
    let patches = extract_patches(level, PATCH, 1)?;
    let n = patches.rows() as f64;
    let mut mean = [0.0; PATCH_DIM];
    for p in patches.iter() {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = [[0.0; PATCH_DIM]; PATCH_DIM];
    let mut centered = [0.0; PATCH_DIM];
    for p in patches.iter() {
        for i in 0..PATCH_DIM {
            centered[i] = p[i] - mean[i];
        }
        for i in 0..PATCH_DIM {
            let ci = centered[i];
            let row = &mut cov[i];
            for j in i..PATCH_DIM {
                row[j] += ci * centered[j];
            }
        }
    }
    for i in 0..PATCH_DIM {
        for j in i..PATCH_DIM {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }
    Ok(cov)
}

/// Normalized descending spectrum of one level's patch covariance.
pub fn level_spectrum(level: &Plane) -> Result<[f64; PATCH_DIM]> {
    let cov = patch_covariance(level)?;
    let m = Cov::from_fn(|i, j| cov[i][j]);
    let mut eig: Vec<f64> = m
        .symmetric_eigenvalues()
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let mut out = [0.0; PATCH_DIM];
    let top = eig[0];
    if top >= ZERO_SPECTRUM {
        for (o, v) in out.iter_mut().zip(&eig) {
            *o = (v / top).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Sum of the `count` smallest normalized values of a spectrum.
pub fn tail_mass(spectrum: &[f64], count: usize) -> f64 {
    spectrum[spectrum.len() - count..].iter().sum()
}

pub fn spatial_features(image: &GrayImage) -> Result<SpatialFeatures> {
    let pyramid = build_pyramid(image, PYRAMID_LEVELS)?;
    let mut out = [0.0; SPATIAL_DIM];
    for (l, level) in pyramid.levels().iter().enumerate() {
        if level.width() < PATCH || level.height() < PATCH {
            return Err(Error::TooSmall(format!("pyramid level {l} is smaller than a patch")));
        }
        out[l * PATCH_DIM..(l + 1) * PATCH_DIM].copy_from_slice(&level_spectrum(level.as_plane())?);
    }
    Ok(SpatialFeatures(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{gaussian_blur, load_image};

    fn fixture(name: &str) -> GrayImage {
        load_image(format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    #[test]
    fn constant_image_is_all_zero() {
        let f = spatial_features(&GrayImage::constant(40, 40, 0.7).unwrap()).unwrap();
        assert_eq!(f.as_slice().len(), 75);
        assert!(f.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spectra_are_sorted_normalized_and_scale_free() {
        let img = fixture("coffee.png");
        let f = spatial_features(&img).unwrap();
        for l in 0..3 {
            let s = f.level(l);
            assert_eq!(s[0], 1.0);
            assert!(s.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let g = spatial_features(&img.scaled(0.35).unwrap()).unwrap();
        for (a, b) in f.as_slice().iter().zip(g.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn covariance_is_exactly_symmetric() {
        let img = fixture("brick.png");
        let c = patch_covariance(img.as_plane()).unwrap();
        for i in 0..PATCH_DIM {
            for j in 0..PATCH_DIM {
                assert_eq!(c[i][j].to_bits(), c[j][i].to_bits());
            }
        }
    }

    #[test]
    fn blur_shrinks_tail() {
        let img = fixture("astronaut.png");
        let sharp = spatial_features(&img).unwrap();
        let soft = spatial_features(&gaussian_blur(&img, 2.0).unwrap()).unwrap();
        assert!(tail_mass(soft.level(0), 15) < tail_mass(sharp.level(0), 15));
    }

    #[test]
    fn single_patch_level_has_zero_covariance() {
        let img = GrayImage::from_fn(5, 5, |x, y| (x * y) as f64 / 16.0).unwrap();
        assert_eq!(level_spectrum(img.as_plane()).unwrap(), [0.0; 25]);
        assert!(level_spectrum(&Plane::zeros(4, 8)).is_err());
    }
}
