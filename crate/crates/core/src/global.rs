//! Global-frequency features from the complex steerable pyramid.
//!
//! Each oriented band is divisively normalized by a Gaussian-scale-mixture
//! mixer estimated from a 15-coefficient neighbourhood, then summarized by
//! generalized-Gaussian shapes. Structural correlations relate the
//! high-pass residual to every band (across scale) and the finest-scale
//! orientations to each other (across band).
//!
//! Output layout (45 values):
//!
//! | range   | content                                                        |
//! |---------|----------------------------------------------------------------|
//! | 0..12   | shape of each normalized band, scale-major, 0..150 degrees     |
//! | 12..18  | shape of each orientation with both scales concatenated        |
//! | 18..30  | high-pass vs band magnitude correlation, scale-major           |
//! | 30..45  | finest-scale orientation magnitude pairs `(i, j)`, `i < j`     |

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Plane};
use crate::stats::{correlation_from_moments, fit_ggd, CorrelationWindow, LocalMoments, GAMMA_MAX};
use crate::steerable::{decompose, SteerableDecomposition, ORIENTATIONS, SCALES};

/// Neighbourhood size: 3x3 in the band, 5 in the next orientation, 1 parent.
pub const NEIGHBORS: usize = 15;
pub const GLOBAL_DIM: usize = 45;
const ZHAT_FLOOR: f64 = 1e-12;
const RIDGE: f64 = 1e-6;

/// Offsets of the five positions taken from the adjacent-orientation band:
/// center, up, down, left, right.
pub const ADJACENT_OFFSETS: [(isize, isize); 5] = [(0, 0), (0, -1), (0, 1), (-1, 0), (1, 0)];

/// One 15-vector per band position, row-major over the band.
///
/// Slots `0..9` hold the 3x3 window of the band (row-major, center at 4),
/// slots `9..14` the [`ADJACENT_OFFSETS`] positions of the band one
/// orientation step further (wrapping), and slot 14 the parent: the
/// same orientation one scale coarser at `(x/2, y/2)`, or the low-pass
/// residual for the coarsest scale. Real parts are used throughout and
/// positions outside a band are mirror-extended.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhoods {
    width: usize,
    height: usize,
    vectors: Vec<[f64; NEIGHBORS]>,
}

impl Neighborhoods {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vectors(&self) -> &[[f64; NEIGHBORS]] {
        &self.vectors
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64; NEIGHBORS] {
        &self.vectors[y * self.width + x]
    }
}

pub fn build_neighborhoods(
    decomp: &SteerableDecomposition,
    scale: usize,
    orientation: usize,
) -> Result<Neighborhoods> {
    if scale >= SCALES || orientation >= ORIENTATIONS {
        return Err(Error::InvalidParameter(format!(
            "no band at scale {scale}, orientation {orientation}"
        )));
    }
    let band = decomp.band(scale, orientation).real_part();
    let adjacent = decomp.band(scale, (orientation + 1) % ORIENTATIONS).real_part();
    let parent = if scale + 1 < SCALES {
        decomp.band(scale + 1, orientation).real_part()
    } else {
        decomp.lowpass().clone()
    };
    let (w, h) = (band.width(), band.height());
    let mut vectors = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let mut v = [0.0; NEIGHBORS];
            let mut k = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    v[k] = band.get_mirrored(xi + dx, yi + dy);
                    k += 1;
                }
            }
            for &(dx, dy) in &ADJACENT_OFFSETS {
                v[k] = adjacent.get_mirrored(xi + dx, yi + dy);
                k += 1;
            }
            v[k] = parent.get_mirrored(xi / 2, yi / 2);
            vectors.push(v);
        }
    }
    Ok(Neighborhoods {
        width: w,
        height: h,
        vectors,
    })
}

pub type Covariance = [[f64; NEIGHBORS]; NEIGHBORS];

/// Second-moment matrix `E[Y Y^T]` of the neighbourhood vectors (the GSM
/// Gaussian component is zero-mean, so no centering).
pub fn estimate_covariance(n: &Neighborhoods) -> Result<Covariance> {
    let mut q = [[0.0; NEIGHBORS]; NEIGHBORS];
    for v in &n.vectors {
        for i in 0..NEIGHBORS {
            for j in i..NEIGHBORS {
                q[i][j] += v[i] * v[j];
            }
        }
    }
    let count = n.vectors.len() as f64;
    for i in 0..NEIGHBORS {
        for j in i..NEIGHBORS {
            q[i][j] /= count;
            q[j][i] = q[i][j];
        }
    }
    if q.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("neighbourhood covariance".into()));
    }
    Ok(q)
}

/// A band divided by its per-position mixer estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct GsmNormalizedBand {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// `sqrt(Y^T Q^-1 Y / N)` per position.
    pub zhat: Vec<f64>,
}

/// Normalizes each coefficient by `zhat = sqrt(Y^T Q^-1 Y / 15)`, with `Q`
/// ridge-regularized by `1e-6 * trace(Q) / 15`.
pub fn divisive_normalize(
    band: &Plane,
    neighborhoods: &Neighborhoods,
    q: &Covariance,
) -> Result<GsmNormalizedBand> {
    if band.width() != neighborhoods.width || band.height() != neighborhoods.height {
        return Err(Error::InvalidDimensions(
            "band and neighbourhoods differ in shape".into(),
        ));
    }
    let (lo, hi) = band.min_max();
    let scale = lo.abs().max(hi.abs());
    if hi - lo <= 1e-12 * scale || scale == 0.0 {
        return Err(Error::Degenerate("band has no variation".into()));
    }
    let trace: f64 = (0..NEIGHBORS).map(|i| q[i][i]).sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::Degenerate("zero neighbourhood covariance".into()));
    }
    let eps = RIDGE * trace / NEIGHBORS as f64;
    let m = SMatrix::<f64, NEIGHBORS, NEIGHBORS>::from_fn(|i, j| {
        q[i][j] + if i == j { eps } else { 0.0 }
    });
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Degenerate("covariance not positive definite".into()))?;
    let l = chol.l();
    let mut values = Vec::with_capacity(neighborhoods.vectors.len());
    let mut zhat = Vec::with_capacity(neighborhoods.vectors.len());
    for (i, y) in neighborhoods.vectors.iter().enumerate() {
        let y = SVector::<f64, NEIGHBORS>::from_column_slice(y);
        let w = l
            .solve_lower_triangular(&y)
            .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
        let z = (w.norm_squared() / NEIGHBORS as f64).sqrt();
        zhat.push(z);
        values.push(band.data()[i] / z.max(ZHAT_FLOOR));
    }
    Ok(GsmNormalizedBand {
        width: band.width(),
        height: band.height(),
        values,
        zhat,
    })
}

/// Normalizes one band of a decomposition end to end.
pub fn normalize_band(
    decomp: &SteerableDecomposition,
    scale: usize,
    orientation: usize,
) -> Result<GsmNormalizedBand> {
    let n = build_neighborhoods(decomp, scale, orientation)?;
    let q = estimate_covariance(&n)?;
    divisive_normalize(&decomp.band(scale, orientation).real_part(), &n, &q)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalFeatures(pub [f64; GLOBAL_DIM]);

impl GlobalFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn shape_or_default(values: &[f64]) -> f64 {
    match fit_ggd(values) {
        Ok(fit) => fit.params.gamma,
        Err(_) => GAMMA_MAX,
    }
}

pub fn global_features(image: &GrayImage) -> Result<GlobalFeatures> {
    let decomp = decompose(image)?;
    global_features_from(&decomp)
}

/// Degenerate bands contribute shape 10 and correlation 0.
pub fn global_features_from(decomp: &SteerableDecomposition) -> Result<GlobalFeatures> {
    let band_ids: Vec<(usize, usize)> = (0..SCALES)
        .flat_map(|s| (0..ORIENTATIONS).map(move |o| (s, o)))
        .collect();
    let normalized: Vec<Option<GsmNormalizedBand>> = band_ids
        .par_iter()
        .map(|&(s, o)| match normalize_band(decomp, s, o) {
            Ok(n) => Ok(Some(n)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let mut out = [0.0; GLOBAL_DIM];
    for (i, n) in normalized.iter().enumerate() {
        out[i] = n.as_ref().map_or(GAMMA_MAX, |n| shape_or_default(&n.values));
    }
    for o in 0..ORIENTATIONS {
        let joined: Vec<f64> = (0..SCALES)
            .filter_map(|s| normalized[s * ORIENTATIONS + o].as_ref())
            .flat_map(|n| n.values.iter().copied())
            .collect();
        out[12 + o] = shape_or_default(&joined);
    }

    let window = CorrelationWindow::default();
    let hp = decomp.highpass();
    let (w, h) = (hp.width(), hp.height());
    let magnitudes: Vec<Plane> = band_ids
        .iter()
        .map(|&(s, o)| {
            let m = decomp.band(s, o).magnitude();
            if (m.width(), m.height()) == (w, h) {
                m
            } else {
                m.resize_nearest(w, h)
            }
        })
        .collect();
    let hp_moments = LocalMoments::new(hp, &window);
    let moments: Vec<LocalMoments> = magnitudes
        .par_iter()
        .map(|m| LocalMoments::new(m, &window))
        .collect();

    let mut pairs: Vec<(Option<usize>, usize)> = (0..band_ids.len()).map(|i| (None, i)).collect();
    for i in 0..ORIENTATIONS {
        for j in i + 1..ORIENTATIONS {
            pairs.push((Some(i), j));
        }
    }
    let correlations: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (pa, ma) = match a {
                None => (hp, &hp_moments),
                Some(i) => (&magnitudes[i], &moments[i]),
            };
            match correlation_from_moments(pa, ma, &magnitudes[b], &moments[b], &window) {
                Ok(rho) => Ok(rho),
                Err(Error::Degenerate(_)) => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    out[18..].copy_from_slice(&correlations);
    Ok(GlobalFeatures(out))
}
