//! Local-frequency features from 7x7 block DCTs on a three-level pyramid.
//!
//! Per block: the generalized-Gaussian shape of the 48 AC coefficients, the
//! coefficient of variation of their magnitudes, and the spread of that
//! coefficient of variation across three radial frequency bands. Per level
//! these are pooled into a mean and a tail-decile mean, giving
//! 3 levels x 6 = 18 values.

use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{build_pyramid, GrayImage, Plane, PYRAMID_LEVELS};
use crate::stats::{fit_ggd, mean, std_dev};

pub const BLOCK: usize = 7;
pub const LOCAL_DIM: usize = 18;
const ZERO_MEAN: f64 = 1e-12;

fn dct_matrix() -> &'static [[f64; BLOCK]; BLOCK] {
    static M: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    M.get_or_init(|| {
        let n = BLOCK as f64;
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (k, row) in m.iter_mut().enumerate() {
            let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (i, c) in row.iter_mut().enumerate() {
                *c = alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * n)).cos();
            }
        }
        m
    })
}

/// Orthonormal 2-D DCT-II of a row-major 7x7 block. Output index
/// `v * 7 + u` holds horizontal frequency `u` and vertical frequency `v`.
pub fn block_dct(block: &[f64]) -> Result<[f64; BLOCK * BLOCK]> {
    if block.len() != BLOCK * BLOCK {
        return Err(Error::DimensionMismatch {
            expected: BLOCK * BLOCK,
            actual: block.len(),
        });
    }
    let c = dct_matrix();
    // rows first, then columns
    let mut tmp = [0.0; BLOCK * BLOCK];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for x in 0..BLOCK {
                acc += c[u][x] * block[y * BLOCK + x];
            }
            tmp[y * BLOCK + u] = acc;
        }
    }
    let mut out = [0.0; BLOCK * BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for y in 0..BLOCK {
                acc += c[v][y] * tmp[y * BLOCK + u];
            }
            out[v * BLOCK + u] = acc;
        }
    }
    Ok(out)
}

/// Radial frequency band of an AC coefficient, by index sum `d = u + v`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrequencySet {
    /// `1 <= d <= 3`, 9 coefficients.
    Low,
    /// `4 <= d <= 6`, 18 coefficients.
    Mid,
    /// `7 <= d <= 12`, 21 coefficients.
    High,
}

impl FrequencySet {
    /// `None` for the DC coefficient.
    pub fn of(u: usize, v: usize) -> Option<FrequencySet> {
        match u + v {
            0 => None,
            1..=3 => Some(FrequencySet::Low),
            4..=6 => Some(FrequencySet::Mid),
            _ => Some(FrequencySet::High),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Splits the AC coefficients into low, mid and high sets.
pub fn group_coefficients(coeffs: &[f64; BLOCK * BLOCK]) -> [Vec<f64>; 3] {
    let mut sets = [Vec::with_capacity(9), Vec::with_capacity(18), Vec::with_capacity(21)];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            if let Some(set) = FrequencySet::of(u, v) {
                sets[set.index()].push(coeffs[v * BLOCK + u]);
            }
        }
    }
    sets
}

/// Per-block statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DctBlockStats {
    /// GGD shape of the 48 AC coefficients, in `[0.1, 10]`.
    pub gamma: f64,
    /// Standard deviation over mean of the AC magnitudes.
    pub sigma_bar: f64,
    /// Standard deviation of the three per-set `sigma_bar` values.
    pub sigma_spread: f64,
}

fn magnitude_variation(values: &[f64]) -> f64 {
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let m = mean(&mags);
    if m < ZERO_MEAN {
        0.0
    } else {
        std_dev(&mags) / m
    }
}

pub fn block_stats(coeffs: &[f64; BLOCK * BLOCK]) -> Result<DctBlockStats> {
    let ac: Vec<f64> = coeffs[1..].to_vec();
    let gamma = fit_ggd(&ac)?.params.gamma;
    let sets = group_coefficients(coeffs);
    let per_set = sets.map(|s| magnitude_variation(&s));
    Ok(DctBlockStats {
        gamma,
        sigma_bar: magnitude_variation(&ac),
        sigma_spread: std_dev(&per_set),
    })
}

/// The 18 pooled local-frequency values, level-major:
/// `(mean gamma, lowest-decile gamma, mean sigma_bar, highest-decile
/// sigma_bar, mean spread, highest-decile spread)` per level.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalFeatures(pub [f64; LOCAL_DIM]);

impl LocalFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Statistics of every complete 7x7 block, row-major by block.
pub fn level_block_stats(level: &Plane) -> Result<Vec<DctBlockStats>> {
    let (bx, by) = (level.width() / BLOCK, level.height() / BLOCK);
    if bx == 0 || by == 0 {
        return Err(Error::TooSmall(format!(
            "{}x{} level holds no complete {BLOCK}x{BLOCK} block",
            level.width(),
            level.height()
        )));
    }
    (0..bx * by)
        .into_par_iter()
        .map(|i| {
            let (x0, y0) = ((i % bx) * BLOCK, (i / bx) * BLOCK);
            let mut block = [0.0; BLOCK * BLOCK];
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    block[y * BLOCK + x] = level.get(x0 + x, y0 + y);
                }
            }
            block_stats(&block_dct(&block)?)
        })
        .collect()
}

/// Mean of the smallest (or largest) tenth of the values, at least one.
fn decile_mean(values: &[f64], largest: bool) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (sorted.len() / 10).max(1);
    let tail = if largest {
        &sorted[sorted.len() - k..]
    } else {
        &sorted[..k]
    };
    mean(tail)
}

pub fn local_features(image: &GrayImage) -> Result<LocalFeatures> {
    let pyramid = build_pyramid(image, PYRAMID_LEVELS)?;
    let mut out = [0.0; LOCAL_DIM];
    for (l, level) in pyramid.levels().iter().enumerate() {
        let stats = level_block_stats(level.as_plane())?;
        let gamma: Vec<f64> = stats.iter().map(|s| s.gamma).collect();
        let bar: Vec<f64> = stats.iter().map(|s| s.sigma_bar).collect();
        let spread: Vec<f64> = stats.iter().map(|s| s.sigma_spread).collect();
        out[l * 6..(l + 1) * 6].copy_from_slice(&[
            mean(&gamma),
            decile_mean(&gamma, false),
            mean(&bar),
            decile_mean(&bar, true),
            mean(&spread),
            decile_mean(&spread, true),
        ]);
    }
    Ok(LocalFeatures(out))
}
