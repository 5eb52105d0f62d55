//! Complex steerable pyramid built in the frequency domain.
//!
//! Radial profiles are raised-cosine (in log2 frequency) high/low pairs with
//! `hi^2 + lo^2 = 1`; angular profiles are `cos^(K-1)(theta - theta_k)` with
//! the normalization that makes the squared orientation responses sum to one.
//! Complex bands keep only the half-plane around each orientation (doubled),
//! so the real part of every complex band equals the corresponding band of
//! the real pyramid and the real parts form a tight frame.
//!
//! Frequencies are normalized per axis so that `+-1` is the Nyquist rate.
//! Input sides are mirror-padded up to a multiple of `2^scales`; all bands
//! are stored on the padded grid and [`reconstruct`] crops back.

use std::f64::consts::{FRAC_PI_2, PI};

pub use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{bin_of, signed_freq, Fft2};
use crate::image::{GrayImage, Plane};

pub const SCALES: usize = 2;
pub const ORIENTATIONS: usize = 6;
pub const MIN_SIDE: usize = 32;

/// A complex-valued band, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexBand {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

impl ComplexBand {
    pub fn new(width: usize, height: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    pub fn real_part(&self) -> Plane {
        Plane::new(self.width, self.height, self.data.iter().map(|c| c.re).collect())
            .expect("shape preserved")
    }

    pub fn magnitude(&self) -> Plane {
        Plane::new(self.width, self.height, self.data.iter().map(|c| c.norm()).collect())
            .expect("shape preserved")
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteerableDecomposition {
    width: usize,
    height: usize,
    highpass: Plane,
    /// Scale-major: index `scale * ORIENTATIONS + orientation`.
    bands: Vec<ComplexBand>,
    lowpass: Plane,
}

impl SteerableDecomposition {
    /// Assembles a decomposition from parts; shapes must be consistent.
    pub fn from_parts(
        width: usize,
        height: usize,
        highpass: Plane,
        bands: Vec<ComplexBand>,
        lowpass: Plane,
    ) -> Result<Self> {
        let (pw, ph) = (padded(width), padded(height));
        let bad = |what: String| Err(Error::InvalidDimensions(what));
        if highpass.width() != pw || highpass.height() != ph {
            return bad(format!("high-pass band must be {pw}x{ph}"));
        }
        if bands.len() != SCALES * ORIENTATIONS {
            return bad(format!("expected {} bands, got {}", SCALES * ORIENTATIONS, bands.len()));
        }
        for (i, b) in bands.iter().enumerate() {
            let s = i / ORIENTATIONS;
            if b.width() != pw >> s || b.height() != ph >> s {
                return bad(format!("band {i} must be {}x{}", pw >> s, ph >> s));
            }
        }
        if lowpass.width() != pw >> SCALES || lowpass.height() != ph >> SCALES {
            return bad(format!("low-pass band must be {}x{}", pw >> SCALES, ph >> SCALES));
        }
        Ok(Self {
            width,
            height,
            highpass,
            bands,
            lowpass,
        })
    }

    /// Width of the decomposed image (before padding).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn highpass(&self) -> &Plane {
        &self.highpass
    }

    pub fn lowpass(&self) -> &Plane {
        &self.lowpass
    }

    /// Band at `scale` (0 = finest) and `orientation` (`k * 30` degrees).
    pub fn band(&self, scale: usize, orientation: usize) -> &ComplexBand {
        &self.bands[scale * ORIENTATIONS + orientation]
    }

    pub fn bands(&self) -> &[ComplexBand] {
        &self.bands
    }

    pub fn bands_mut(&mut self) -> &mut [ComplexBand] {
        &mut self.bands
    }

    pub fn highpass_mut(&mut self) -> &mut Plane {
        &mut self.highpass
    }

    pub fn lowpass_mut(&mut self) -> &mut Plane {
        &mut self.lowpass
    }
}

fn padded(n: usize) -> usize {
    n.div_ceil(1 << SCALES) << SCALES
}

/// `u` runs from 0 at `edge / 2` to 1 at `edge` on a log2 axis.
fn transition(r: f64, edge: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    ((r / edge).log2() + 1.0).clamp(0.0, 1.0)
}

fn hi_radial(r: f64, edge: f64) -> f64 {
    (FRAC_PI_2 * transition(r, edge)).sin()
}

fn lo_radial(r: f64, edge: f64) -> f64 {
    (FRAC_PI_2 * transition(r, edge)).cos()
}

const ORDER: i32 = ORIENTATIONS as i32 - 1;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Makes `sum_k c cos^(2 order)(theta - theta_k)` identically one.
fn angular_norm() -> f64 {
    let n = ORDER as u32;
    let num = 2f64.powi(2 * ORDER) * factorial(n).powi(2);
    num / (ORIENTATIONS as f64 * factorial(2 * n))
}

fn orientation_angle(k: usize) -> f64 {
    PI * k as f64 / ORIENTATIONS as f64
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// `(-i)^order` phase so real-configuration filters give real outputs.
fn order_phase() -> Complex64 {
    Complex64::new(0.0, -1.0).powi(ORDER)
}

/// Real-configuration orientation filter (without radial part).
fn angular_real(theta: f64, k: usize) -> f64 {
    angular_norm().sqrt() * (theta - orientation_angle(k)).cos().powi(ORDER)
}

/// Analytic (one-sided) orientation filter.
fn angular_analytic(theta: f64, k: usize) -> f64 {
    let d = wrap_angle(theta - orientation_angle(k));
    if d.abs() < FRAC_PI_2 {
        2.0 * angular_real(theta, k)
    } else {
        0.0
    }
}

struct Grid {
    radius: Vec<f64>,
    angle: Vec<f64>,
}

impl Grid {
    fn new(width: usize, height: usize) -> Self {
        let mut radius = Vec::with_capacity(width * height);
        let mut angle = Vec::with_capacity(width * height);
        for j in 0..height {
            let fy = 2.0 * signed_freq(j, height) as f64 / height as f64;
            for i in 0..width {
                let fx = 2.0 * signed_freq(i, width) as f64 / width as f64;
                radius.push(fx.hypot(fy));
                angle.push(fy.atan2(fx));
            }
        }
        Self { radius, angle }
    }
}

fn to_complex(plane: &Plane) -> Vec<Complex64> {
    plane.data().iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

fn real_plane(width: usize, height: usize, buf: &[Complex64]) -> Plane {
    Plane::new(width, height, buf.iter().map(|c| c.re).collect()).expect("shape")
}

/// Keeps the centered half-size block of a spectrum, scaled to preserve
/// spatial amplitude.
fn shrink_spectrum(spec: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(nw * nh);
    for j in 0..nh {
        let sj = bin_of(signed_freq(j, nh), h);
        for i in 0..nw {
            let si = bin_of(signed_freq(i, nw), w);
            out.push(spec[sj * w + si] * 0.25);
        }
    }
    out
}

fn grow_spectrum(spec: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = vec![Complex64::new(0.0, 0.0); w * h];
    for j in 0..nh {
        let dj = bin_of(signed_freq(j, nh), h);
        for i in 0..nw {
            let di = bin_of(signed_freq(i, nw), w);
            out[dj * w + di] = spec[j * nw + i] * 4.0;
        }
    }
    out
}

/// Decomposes an image into a high-pass residual, `2 x 6` complex
/// oriented bands and a low-pass residual.
pub fn decompose(image: &GrayImage) -> Result<SteerableDecomposition> {
    decompose_plane(image.as_plane())
}

/// As [`decompose`] for an arbitrary real plane.
pub fn decompose_plane(plane: &Plane) -> Result<SteerableDecomposition> {
    let (w0, h0) = (plane.width(), plane.height());
    if w0 < MIN_SIDE || h0 < MIN_SIDE {
        return Err(Error::TooSmall(format!(
            "{w0}x{h0} image is below the {MIN_SIDE}x{MIN_SIDE} minimum for the steerable pyramid"
        )));
    }
    let (mut w, mut h) = (padded(w0), padded(h0));
    let src = if (w, h) == (w0, h0) {
        plane.clone()
    } else {
        plane.pad_mirrored(w, h)
    };

    let fft = Fft2::new(w, h);
    let mut spec = to_complex(&src);
    fft.forward(&mut spec);

    let grid = Grid::new(w, h);
    let mut hi_spec: Vec<Complex64> = spec
        .iter()
        .zip(&grid.radius)
        .map(|(&f, &r)| f * hi_radial(r, 1.0))
        .collect();
    fft.inverse(&mut hi_spec);
    let highpass = real_plane(w, h, &hi_spec);

    let mut low: Vec<Complex64> = spec
        .iter()
        .zip(&grid.radius)
        .map(|(&f, &r)| f * lo_radial(r, 1.0))
        .collect();

    let phase = order_phase();
    let mut bands = Vec::with_capacity(SCALES * ORIENTATIONS);
    for _ in 0..SCALES {
        let grid = Grid::new(w, h);
        let fft = Fft2::new(w, h);
        for k in 0..ORIENTATIONS {
            let mut buf: Vec<Complex64> = (0..w * h)
                .map(|i| {
                    let gain = hi_radial(grid.radius[i], 0.5) * angular_analytic(grid.angle[i], k);
                    low[i] * phase * gain
                })
                .collect();
            fft.inverse(&mut buf);
            bands.push(ComplexBand {
                width: w,
                height: h,
                data: buf,
            });
        }
        for (v, &r) in low.iter_mut().zip(&grid.radius) {
            *v *= lo_radial(r, 0.5);
        }
        low = shrink_spectrum(&low, w, h);
        w /= 2;
        h /= 2;
    }
    Fft2::new(w, h).inverse(&mut low);
    let lowpass = real_plane(w, h, &low);

    Ok(SteerableDecomposition {
        width: w0,
        height: h0,
        highpass,
        bands,
        lowpass,
    })
}

/// Synthesis from the real parts of the bands through the conjugate
/// real-configuration filters, cropped to the original size.
pub fn reconstruct(decomp: &SteerableDecomposition) -> Result<GrayImage> {
    let plane = reconstruct_plane(decomp)?;
    Ok(GrayImage::from_plane_clamped(plane))
}

/// As [`reconstruct`] without clamping to `[0, 1]`.
pub fn reconstruct_plane(decomp: &SteerableDecomposition) -> Result<Plane> {
    // re-validate in case the parts were mutated
    let d = SteerableDecomposition::from_parts(
        decomp.width,
        decomp.height,
        decomp.highpass.clone(),
        decomp.bands.clone(),
        decomp.lowpass.clone(),
    )?;
    let (pw, ph) = (padded(d.width), padded(d.height));
    let (mut w, mut h) = (pw >> SCALES, ph >> SCALES);
    let mut low = to_complex(&d.lowpass);
    Fft2::new(w, h).forward(&mut low);
    let phase = order_phase().conj();
    for s in (0..SCALES).rev() {
        w *= 2;
        h *= 2;
        let grid = Grid::new(w, h);
        let fft = Fft2::new(w, h);
        let mut acc = grow_spectrum(&low, w, h);
        for (v, &r) in acc.iter_mut().zip(&grid.radius) {
            *v *= lo_radial(r, 0.5);
        }
        for k in 0..ORIENTATIONS {
            let mut band = to_complex(&d.band(s, k).real_part());
            fft.forward(&mut band);
            for (i, v) in acc.iter_mut().enumerate() {
                let gain = hi_radial(grid.radius[i], 0.5) * angular_real(grid.angle[i], k);
                *v += band[i] * phase * gain;
            }
        }
        low = acc;
    }
    let grid = Grid::new(pw, ph);
    let fft = Fft2::new(pw, ph);
    let mut hi = to_complex(&d.highpass);
    fft.forward(&mut hi);
    let mut full: Vec<Complex64> = (0..pw * ph)
        .map(|i| low[i] * lo_radial(grid.radius[i], 1.0) + hi[i] * hi_radial(grid.radius[i], 1.0))
        .collect();
    fft.inverse(&mut full);
    real_plane(pw, ph, &full).crop(0, 0, d.width, d.height)
}

/// Sum over every real-configuration filter of its squared magnitude
/// response, evaluated on the DFT grid of a `width x height` image. Equals
/// one at every frequency for a tight frame.
pub fn filter_energy(width: usize, height: usize) -> Plane {
    let grid = Grid::new(width, height);
    let a = angular_norm();
    let data = grid
        .radius
        .iter()
        .zip(&grid.angle)
        .map(|(&r, &theta)| {
            let mut passthrough = 1.0;
            let mut total = hi_radial(r, 1.0).powi(2);
            passthrough *= lo_radial(r, 1.0).powi(2);
            let mut rr = r;
            for _ in 0..SCALES {
                let orient: f64 = (0..ORIENTATIONS)
                    .map(|k| a * (theta - orientation_angle(k)).cos().powi(2 * ORDER))
                    .sum();
                total += passthrough * hi_radial(rr, 0.5).powi(2) * orient;
                passthrough *= lo_radial(rr, 0.5).powi(2);
                rr *= 2.0;
            }
            total + passthrough
        })
        .collect();
    Plane::new(width, height, data).expect("grid shape")
}
