//! A small synthetic SR study for end-to-end checks without the real dataset.
//!
//! Every source image is degraded at three (s, sigma) pairs, brought back to
//! full size by three upsamplers of increasing sharpness, and given a
//! pseudo-perceptual score
//!
//! ```text
//! clamp(2 + 2 q + (4 - s) + u, 0, 10),   u ~ U(-0.25, 0.25)
//! ```
//!
//! where `q` is 0 for nearest, 1 for bilinear and 2 for back-projected
//! bicubic.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{write_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::image::{crop_to_multiple, downsample, GrayImage, Plane};

/// Scale factors with their blur widths.
pub const DESK_DEGRADATIONS: [(usize, f64); 3] = [(2, 0.8), (3, 1.0), (4, 1.2)];
const BACK_PROJECTION_STEPS: usize = 5;
const SCORE_NOISE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsampler {
    Nearest,
    Bilinear,
    /// Bicubic followed by iterative back-projection.
    BackProjection,
}

impl Upsampler {
    pub const ALL: [Upsampler; 3] = [Upsampler::Nearest, Upsampler::Bilinear, Upsampler::BackProjection];

    pub fn label(self) -> &'static str {
        match self {
            Upsampler::Nearest => "nearest",
            Upsampler::Bilinear => "bilinear",
            Upsampler::BackProjection => "bicubic-bp",
        }
    }

    pub fn sharpness(self) -> f64 {
        match self {
            Upsampler::Nearest => 0.0,
            Upsampler::Bilinear => 1.0,
            Upsampler::BackProjection => 2.0,
        }
    }
}

pub fn desk_score(s: usize, upsampler: Upsampler, noise: f64) -> f64 {
    (2.0 + 2.0 * upsampler.sharpness() + (4.0 - s as f64) + noise).clamp(0.0, 10.0)
}

fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// `(index, weight)` taps reading low-resolution samples for output
/// position `x`. Low-resolution sample `u` sits at high-resolution `s * u`.
fn taps(x: usize, s: usize, n: usize, kind: Upsampler) -> Vec<(usize, f64)> {
    let pos = x as f64 / s as f64;
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    match kind {
        Upsampler::Nearest => vec![(clamp(pos.round() as isize), 1.0)],
        Upsampler::Bilinear => {
            let u = pos.floor();
            let t = pos - u;
            vec![(clamp(u as isize), 1.0 - t), (clamp(u as isize + 1), t)]
        }
        Upsampler::BackProjection => {
            let u = pos.floor() as isize;
            let t = pos - pos.floor();
            (-1..=2).map(|k| (clamp(u + k), cubic(t - k as f64))).collect()
        }
    }
}

/// Separable resampling of `plane` by an integer factor; back-projection
/// here means plain bicubic.
pub fn upsample_plane(plane: &Plane, s: usize, kind: Upsampler) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    let (ow, oh) = (w * s, h * s);
    let xt: Vec<_> = (0..ow).map(|x| taps(x, s, w, kind)).collect();
    let yt: Vec<_> = (0..oh).map(|y| taps(y, s, h, kind)).collect();
    let rows = Plane::from_fn(ow, h, |x, v| xt[x].iter().map(|&(u, c)| c * plane.get(u, v)).sum());
    Plane::from_fn(ow, oh, |x, y| yt[y].iter().map(|&(v, c)| c * rows.get(x, v)).sum())
}

/// Upsamples a low-resolution image `lr` produced by `downsample(_, s, sigma)`.
pub fn upsample(lr: &GrayImage, s: usize, sigma: f64, kind: Upsampler) -> Result<GrayImage> {
    let first = match kind {
        Upsampler::BackProjection => upsample_plane(lr.as_plane(), s, kind),
        _ => return Ok(GrayImage::from_plane_clamped(upsample_plane(lr.as_plane(), s, kind))),
    };
    let mut est = GrayImage::from_plane_clamped(first);
    for _ in 0..BACK_PROJECTION_STEPS {
        let sim = downsample(&est, s, sigma)?;
        let err = Plane::from_fn(lr.width(), lr.height(), |x, y| lr.get(x, y) - sim.get(x, y));
        let corr = upsample_plane(&err, s, Upsampler::BackProjection);
        let next = Plane::from_fn(est.width(), est.height(), |x, y| est.get(x, y) + corr.get(x, y));
        est = GrayImage::from_plane_clamped(next);
    }
    Ok(est)
}

/// Writes `images/<ref>_<method>_x<s>.png` and `manifest.csv` under `out`.
/// Entries come back with absolute paths in a fixed order.
pub fn build_desk_study(sources: &[(String, GrayImage)], out: &Path, seed: u64) -> Result<Vec<ManifestEntry>> {
    if sources.is_empty() {
        return Err(Error::InsufficientData("desk study needs at least one source image".into()));
    }
    std::fs::create_dir_all(out.join("images"))?;
    let out = out.canonicalize()?;
    let img_dir = out.join("images");
    let jobs: Vec<(usize, usize, f64, Upsampler)> = (0..sources.len())
        .flat_map(|i| {
            DESK_DEGRADATIONS
                .iter()
                .flat_map(move |&(s, sigma)| Upsampler::ALL.into_iter().map(move |u| (i, s, sigma, u)))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = jobs.iter().map(|_| rng.random_range(-SCORE_NOISE..=SCORE_NOISE)).collect();
    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .zip(&noise)
        .map(|(&(i, s, sigma, u), &n)| {
            let (name, hr) = &sources[i];
            let hr = crop_to_multiple(hr, s)?;
            let sr = upsample(&downsample(&hr, s, sigma)?, s, sigma, u)?;
            let path = img_dir.join(format!("{name}_{}_x{s}.png", u.label()));
            sr.save_png(&path)?;
            Ok(ManifestEntry {
                image_path: path,
                ref_id: name.clone(),
                method: u.label().to_string(),
                s: s as u32,
                sigma,
                score: desk_score(s, u, n),
            })
        })
        .collect::<Result<_>>()?;
    write_manifest(out.join("manifest.csv"), &entries)?;
    Ok(entries)
}
