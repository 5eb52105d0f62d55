//! Estimators shared by the feature extractors and the evaluation harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{convolve_separable, Plane};

/// Smallest shape the estimator reports.
pub const GAMMA_MIN: f64 = 0.1;
/// Largest shape the estimator reports; also the value for degenerate input.
pub const GAMMA_MAX: f64 = 10.0;
const GAMMA_TOL: f64 = 1e-4;
pub const GGD_MIN_SAMPLES: usize = 30;
/// Standard deviations at or below this are treated as zero.
const ZERO_STD: f64 = 1e-12;

/// Generalized Gaussian: density proportional to `exp(-(|x - mu| / beta)^gamma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GgdParams {
    pub mu: f64,
    pub gamma: f64,
    /// Zero for degenerate fits.
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GgdFit {
    pub params: GgdParams,
    /// Set when the samples had (numerically) zero spread; `gamma` is then
    /// [`GAMMA_MAX`].
    pub degenerate: bool,
}

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `Gamma(1/g) Gamma(3/g) / Gamma(2/g)^2`, the ratio `E[x^2] / E[|x|]^2` of a
/// zero-mean generalized Gaussian with shape `g`. Strictly decreasing in `g`.
pub fn ggd_moment_ratio(gamma: f64) -> f64 {
    (ln_gamma(1.0 / gamma) + ln_gamma(3.0 / gamma) - 2.0 * ln_gamma(2.0 / gamma)).exp()
}

/// Moment-matching fit: bisection on the shape so the model ratio matches
/// `mean((x-mu)^2) / mean(|x-mu|)^2`.
pub fn fit_ggd(samples: &[f64]) -> Result<GgdFit> {
    if samples.len() < GGD_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "GGD fit needs at least {GGD_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GGD sample".into()));
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let (mut m1, mut m2) = (0.0, 0.0);
    for &x in samples {
        let d = x - mu;
        m1 += d.abs();
        m2 += d * d;
    }
    m1 /= n;
    m2 /= n;
    if m2.sqrt() <= ZERO_STD {
        return Ok(GgdFit {
            params: GgdParams {
                mu,
                gamma: GAMMA_MAX,
                beta: 0.0,
            },
            degenerate: true,
        });
    }
    let gamma = solve_shape(m2 / (m1 * m1));
    let beta = (m2 * (ln_gamma(1.0 / gamma) - ln_gamma(3.0 / gamma)).exp()).sqrt();
    Ok(GgdFit {
        params: GgdParams { mu, gamma, beta },
        degenerate: false,
    })
}

fn solve_shape(target: f64) -> f64 {
    let (mut lo, mut hi) = (GAMMA_MIN, GAMMA_MAX);
    if target >= ggd_moment_ratio(lo) {
        return lo;
    }
    if target <= ggd_moment_ratio(hi) {
        return hi;
    }
    while hi - lo > GAMMA_TOL {
        let mid = 0.5 * (lo + hi);
        if ggd_moment_ratio(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gaussian window for local moments: 15x15, sigma 1.5 by default.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationWindow {
    size: usize,
    sigma: f64,
    taps: Vec<f64>,
}

impl Default for CorrelationWindow {
    fn default() -> Self {
        Self::new(15, 1.5).expect("default window is valid")
    }
}

impl CorrelationWindow {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size < 3 || size % 2 == 0 || !(sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "correlation window needs odd size >= 3 and sigma > 0, got {size}, {sigma}"
            )));
        }
        let r = (size / 2) as isize;
        let mut taps: Vec<f64> = (-r..=r)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let z: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= z);
        Ok(Self { size, sigma, taps })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Separable 1-D taps; the 2-D window is their outer product.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
}

/// Stabilization constant as a fraction of the squared joint dynamic range.
pub const C0_FRACTION: f64 = 1e-4;

/// Gaussian-weighted local mean and variance of one band.
pub(crate) struct LocalMoments {
    mean: Plane,
    var: Plane,
    min: f64,
    max: f64,
}

impl LocalMoments {
    pub(crate) fn new(band: &Plane, w: &CorrelationWindow) -> Self {
        let mean = convolve_separable(band, w.taps());
        let second = convolve_separable(&band.map(|v| v * v), w.taps());
        let var_data = second
            .data()
            .iter()
            .zip(mean.data())
            .map(|(&e2, &m)| e2 - m * m)
            .collect();
        let var = Plane::new(band.width(), band.height(), var_data).expect("same shape");
        let (min, max) = band.min_max();
        Self {
            mean,
            var,
            min,
            max,
        }
    }
}

fn check_pair(a: &Plane, b: &Plane, w: &CorrelationWindow) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::InvalidDimensions(format!(
            "band shapes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.width() < w.size() || a.height() < w.size() {
        return Err(Error::TooSmall(format!(
            "{}x{} band is smaller than the {}x{} window",
            a.width(),
            a.height(),
            w.size(),
            w.size()
        )));
    }
    Ok(())
}

pub(crate) fn correlation_from_moments(
    a: &Plane,
    ma: &LocalMoments,
    b: &Plane,
    mb: &LocalMoments,
    w: &CorrelationWindow,
) -> Result<f64> {
    check_pair(a, b, w)?;
    let range = ma.max.max(mb.max) - ma.min.min(mb.min);
    if !(range > 0.0) {
        return Err(Error::Degenerate(
            "both bands are the same constant; correlation undefined".into(),
        ));
    }
    let c0 = C0_FRACTION * range * range;
    let prod = Plane::new(
        a.width(),
        a.height(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )?;
    let cross = convolve_separable(&prod, w.taps());
    let mut total = 0.0;
    for i in 0..cross.data().len() {
        let cov = cross.data()[i] - ma.mean.data()[i] * mb.mean.data()[i];
        let num = 2.0 * cov + c0;
        let den = ma.var.data()[i] + mb.var.data()[i] + c0;
        total += num / den;
    }
    let rho = total / cross.data().len() as f64;
    if !rho.is_finite() {
        return Err(Error::NonFinite("structural correlation".into()));
    }
    Ok(rho.clamp(-1.0, 1.0))
}

/// Mean over all pixels of `(2 s_xy + c0) / (s_x^2 + s_y^2 + c0)` with
/// windowed moments, mirror boundaries and `c0 = 1e-4 * range^2`, where the
/// range is taken over both bands together.
pub fn structural_correlation(a: &Plane, b: &Plane, w: &CorrelationWindow) -> Result<f64> {
    check_pair(a, b, w)?;
    let ma = LocalMoments::new(a, w);
    let mb = LocalMoments::new(b, w);
    correlation_from_moments(a, &ma, b, &mb, w)
}

/// Average ranks (1-based); tied values share the mean of their ranks.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData("correlation needs at least 2 pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant input has no rank variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of fractional ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    pearson(&fractional_ranks(x), &fractional_ranks(y))
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("rmse of empty input".into()));
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Trimmed mean of subject ratings: drop `round(10%)` of the scores at each
/// end, average the rest. For 50 raters this is the mean of the middle 40.
pub fn aggregate_perceptual(scores: &[f64]) -> Result<f64> {
    if scores.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "score aggregation needs at least 10 ratings, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rating".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let trim = (0.1 * sorted.len() as f64).round() as usize;
    let kept = &sorted[trim..sorted.len() - trim];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Non-excess kurtosis `m4 / m2^2`.
pub fn kurtosis(samples: &[f64]) -> Result<f64> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData("kurtosis needs at least 4 samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in samples {
        let d2 = (x - mean) * (x - mean);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    if !(m2 > 0.0) {
        return Err(Error::Degenerate("kurtosis of zero-variance samples".into()));
    }
    Ok(m4 / (m2 * m2))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub(crate) fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}
