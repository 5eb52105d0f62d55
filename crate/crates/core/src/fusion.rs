//! Perception-guided fusion of several SR results of the same scene.
//!
//! The frame is cut into a `g x g` grid. Each cell, widened by `overlap`
//! pixels, is scored for every candidate; the best candidate supplies the
//! cell, and neighbouring cells are cross-faded with linear ramps across
//! their overlap. Blend weights are normalized, so every output pixel is a
//! convex combination of candidate pixels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::extract_features;
use crate::image::{GrayImage, Plane, RgbImage};
use crate::model::Predictor;

/// Smallest cell side the feature extractors are run on.
pub const MIN_CELL: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionParams {
    pub grid: usize,
    pub overlap: usize,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self { grid: 3, overlap: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub row: usize,
    pub col: usize,
    /// Cell bounds before widening, half-open.
    pub x: [usize; 2],
    pub y: [usize; 2],
    pub winner: usize,
    /// Raw score of the winner.
    pub score: f64,
    pub candidate_scores: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScoreMap {
    pub grid: usize,
    pub overlap: usize,
    pub width: usize,
    pub height: usize,
    pub candidates: usize,
    /// Row-major.
    pub cells: Vec<CellScore>,
}

impl RegionScoreMap {
    pub fn winners(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.winner).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Half-open `[start, end)` of cell `i` of `g` along a side of length `n`.
fn bounds(i: usize, g: usize, n: usize) -> [usize; 2] {
    let edge = |k: usize| ((k * n) as f64 / g as f64).round() as usize;
    [edge(i), edge(i + 1)]
}

/// Blend weight of a cell along one axis: 1 over the core, ramping down to
/// `1 / (o + 1)` at the far end of the widened range; no ramp at the frame
/// border. Zero outside the widened range.
fn ramp(x: usize, core: [usize; 2], n: usize, o: usize) -> f64 {
    let lo = core[0].saturating_sub(o);
    let hi = (core[1] + o).min(n);
    if x < lo || x >= hi {
        return 0.0;
    }
    let step = 1.0 / (o + 1) as f64;
    let left = if core[0] == 0 { 1.0 } else { (x - lo + 1) as f64 * step };
    let right = if core[1] == n { 1.0 } else { (hi - x) as f64 * step };
    left.min(right).min(1.0)
}

fn check(dims: &[(usize, usize)], params: &FusionParams) -> Result<(usize, usize)> {
    if dims.len() < 2 {
        return Err(Error::InvalidParameter("fusion needs at least two candidates".into()));
    }
    if params.grid == 0 {
        return Err(Error::InvalidParameter("grid size must be at least 1".into()));
    }
    let (w, h) = dims[0];
    if let Some(i) = dims.iter().position(|&d| d != (w, h)) {
        return Err(Error::InvalidDimensions(format!(
            "candidate {i} is {}x{}, candidate 0 is {w}x{h}",
            dims[i].0, dims[i].1
        )));
    }
    let (cw, ch) = (w / params.grid, h / params.grid);
    if cw < MIN_CELL || ch < MIN_CELL {
        return Err(Error::TooSmall(format!(
            "{w}x{h} frame on a {g}x{g} grid gives cells under {MIN_CELL}x{MIN_CELL}",
            g = params.grid
        )));
    }
    Ok((w, h))
}

fn score_cells<P: Predictor>(lumas: &[GrayImage], scorer: &P, params: &FusionParams) -> Result<RegionScoreMap> {
    let (w, h) = (lumas[0].width(), lumas[0].height());
    let g = params.grid;
    let o = params.overlap;
    let cells: Vec<(usize, usize)> = (0..g).flat_map(|r| (0..g).map(move |c| (r, c))).collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|k| (0..lumas.len()).map(move |i| (k, i)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let (r, c) = cells[k];
            let (bx, by) = (bounds(c, g, w), bounds(r, g, h));
            let x0 = bx[0].saturating_sub(o);
            let y0 = by[0].saturating_sub(o);
            let x1 = (bx[1] + o).min(w);
            let y1 = (by[1] + o).min(h);
            let patch = lumas[i].crop(x0, y0, x1 - x0, y1 - y0)?;
            let f = extract_features(&patch)?;
            scorer
                .predict_raw(&f)
                .map_err(|e| e.context(format!("scoring candidate {i}, cell ({r}, {c})")))
        })
        .collect::<Result<_>>()?;
    let n = lumas.len();
    let cells = cells
        .iter()
        .enumerate()
        .map(|(k, &(r, c))| {
            let s = &scores[k * n..(k + 1) * n];
            // strict comparison keeps the lowest index on ties
            let winner = (1..n).fold(0, |best, i| if s[i] > s[best] { i } else { best });
            CellScore {
                row: r,
                col: c,
                x: bounds(c, g, w),
                y: bounds(r, g, h),
                winner,
                score: s[winner],
                candidate_scores: s.to_vec(),
            }
        })
        .collect();
    Ok(RegionScoreMap {
        grid: g,
        overlap: o,
        width: w,
        height: h,
        candidates: n,
        cells,
    })
}

/// Feathered composite of one channel given per-candidate planes.
fn blend(planes: &[&Plane], map: &RegionScoreMap) -> Plane {
    let (w, h, o) = (map.width, map.height, map.overlap);
    let wx: Vec<Vec<f64>> = (0..map.grid)
        .map(|c| (0..w).map(|x| ramp(x, bounds(c, map.grid, w), w, o)).collect())
        .collect();
    let wy: Vec<Vec<f64>> = (0..map.grid)
        .map(|r| (0..h).map(|y| ramp(y, bounds(r, map.grid, h), h, o)).collect())
        .collect();
    Plane::from_fn(w, h, |x, y| {
        let (mut num, mut den) = (0.0, 0.0);
        for cell in &map.cells {
            let wt = wx[cell.col][x] * wy[cell.row][y];
            if wt > 0.0 {
                num += wt * planes[cell.winner].get(x, y);
                den += wt;
            }
        }
        num / den
    })
}

pub fn grid_fuse<P: Predictor>(
    candidates: &[GrayImage],
    scorer: &P,
    params: &FusionParams,
) -> Result<(GrayImage, RegionScoreMap)> {
    let dims: Vec<_> = candidates.iter().map(|c| (c.width(), c.height())).collect();
    check(&dims, params)?;
    let map = score_cells(candidates, scorer, params)?;
    let planes: Vec<&Plane> = candidates.iter().map(|c| c.as_plane()).collect();
    Ok((GrayImage::from_plane_clamped(blend(&planes, &map)), map))
}

/// Color variant: cells are scored on luma, all channels blended alike.
pub fn grid_fuse_rgb<P: Predictor>(
    candidates: &[RgbImage],
    scorer: &P,
    params: &FusionParams,
) -> Result<(RgbImage, RegionScoreMap)> {
    let dims: Vec<_> = candidates.iter().map(|c| (c.width(), c.height())).collect();
    check(&dims, params)?;
    let lumas: Vec<GrayImage> = candidates.iter().map(|c| c.luma()).collect();
    let map = score_cells(&lumas, scorer, params)?;
    let channels: Vec<[Plane; 3]> = candidates
        .iter()
        .map(|c| [c.channel(0), c.channel(1), c.channel(2)])
        .collect();
    let fused = [0, 1, 2].map(|k| {
        let planes: Vec<&Plane> = channels.iter().map(|ch| &ch[k]).collect();
        blend(&planes, &map)
    });
    Ok((RgbImage::from_channels_clamped(fused), map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::image::{gaussian_blur, load_any, load_image, LoadedImage};
    use proptest::prelude::*;

    /// Prefers sharp content: the level-0 spatial tail mass.
    struct Sharpness;

    impl Predictor for Sharpness {
        fn predict_raw(&self, f: &FeatureVector) -> Result<f64> {
            Ok(f.spatial()[10..25].iter().sum())
        }
    }

    /// Scores every cell the same.
    struct Flat;

    impl Predictor for Flat {
        fn predict_raw(&self, _: &FeatureVector) -> Result<f64> {
            Ok(5.0)
        }
    }

    fn fixture(name: &str) -> GrayImage {
        load_image(format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    #[test]
    fn weights_cover_the_frame() {
        for (n, g, o) in [(192, 3, 16), (200, 3, 5), (130, 2, 0), (64, 1, 16)] {
            for x in 0..n {
                let total: f64 = (0..g).map(|c| ramp(x, bounds(c, g, n), n, o)).sum();
                assert!(total >= 1.0, "{n} {g} {o} {x}");
            }
        }
        assert_eq!(bounds(2, 3, 200), [133, 200]);
    }

    #[test]
    fn identical_candidates_reproduce_input() {
        let a = fixture("camera.png");
        let (out, map) = grid_fuse(&[a.clone(), a.clone(), a.clone()], &Sharpness, &FusionParams::default()).unwrap();
        assert!(map.winners().iter().all(|&w| w == 0));
        for (p, q) in out.data().iter().zip(a.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn sharp_candidate_wins_everywhere() {
        let a = fixture("astronaut.png");
        let b = gaussian_blur(&a, 3.0).unwrap();
        let (out, map) = grid_fuse(&[b.clone(), a.clone()], &Sharpness, &FusionParams::default()).unwrap();
        assert_eq!(map.winners(), vec![1; 9]);
        assert!(out.data().iter().zip(a.data()).all(|(p, q)| (p - q).abs() < 1e-12));
        // appending a candidate that never wins changes nothing
        let c = gaussian_blur(&a, 4.0).unwrap();
        let (_, map2) = grid_fuse(&[b, a, c], &Sharpness, &FusionParams::default()).unwrap();
        assert_eq!(map2.winners(), map.winners());
    }

    #[test]
    fn single_cell_picks_best_whole_image() {
        let a = fixture("coffee.png");
        let b = gaussian_blur(&a, 1.5).unwrap();
        let p = FusionParams { grid: 1, overlap: 16 };
        let (out, map) = grid_fuse(&[b.clone(), a.clone()], &Sharpness, &p).unwrap();
        let best = [&b, &a]
            .iter()
            .map(|i| Sharpness.predict_raw(&extract_features(i).unwrap()).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(map.cells[0].score, best);
        assert_eq!(out, a);
    }

    #[test]
    fn ties_go_to_the_first_candidate() {
        let a = fixture("rocket.png");
        let b = fixture("hubble.png");
        let (out, map) = grid_fuse(&[b.clone(), a], &Flat, &FusionParams::default()).unwrap();
        assert!(map.winners().iter().all(|&w| w == 0));
        assert!(out.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() < 1e-12));
        assert!(map.to_json().unwrap().contains("candidate_scores"));
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = fixture("camera.png");
        let p = FusionParams::default();
        assert!(matches!(grid_fuse(&[a.clone()], &Flat, &p), Err(Error::InvalidParameter(_))));
        let small = a.crop(0, 0, 100, 192).unwrap();
        assert!(matches!(grid_fuse(&[a.clone(), small], &Flat, &p), Err(Error::InvalidDimensions(_))));
        let g = fixture("gravel.png");
        assert!(matches!(grid_fuse(&[g.clone(), g], &Flat, &p), Err(Error::TooSmall(_))));
    }

    #[test]
    fn color_fusion() {
        let LoadedImage::Rgb(rgb) = load_any(format!("{}/tests/data/astronaut_rgb.png", env!("CARGO_MANIFEST_DIR"))).unwrap() else {
            panic!("expected color fixture");
        };
        let p = FusionParams { grid: 1, overlap: 0 };
        let (out, map) = grid_fuse_rgb(&[rgb.clone(), rgb.clone()], &Sharpness, &p).unwrap();
        assert_eq!(map.cells.len(), 1);
        assert_eq!(out, rgb);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn fused_pixels_stay_within_candidates(seed in 0u64..1000, overlap in 0usize..20) {
            let a = fixture("chelsea.png");
            let shift = (seed % 7) as f64 / 10.0;
            let b = GrayImage::from_fn(192, 192, |x, y| (x as f64 * 0.05 + y as f64 * 0.03 + shift).sin() * 0.5 + 0.5).unwrap();
            let c = gaussian_blur(&a, 1.0 + (seed % 3) as f64).unwrap();
            let cands = [a, b, c];
            let (out, _) = grid_fuse(&cands, &Sharpness, &FusionParams { grid: 3, overlap }).unwrap();
            for i in 0..out.data().len() {
                let vals = cands.iter().map(|c| c.data()[i]);
                let lo = vals.clone().fold(f64::INFINITY, f64::min);
                let hi = vals.fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.data()[i] >= lo - 1e-12 && out.data()[i] <= hi + 1e-12);
            }
        }
    }
}
