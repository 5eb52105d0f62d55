//! Image ingestion, luminance conversion, Gaussian filtering, the
//! low-resolution synthesis operator, pyramids and patch extraction.
//!
//! Every spatial operator in the crate uses half-sample symmetric (mirror)
//! extension at the borders: index `-1` maps to `0`, index `n` maps to
//! `n - 1`.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// Maps a possibly out-of-range index onto `0..n` by mirror extension.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    if m >= n {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

/// A dense row-major 2-D field of reals with no range restriction.
///
/// Wavelet bands, local moment maps and intermediate filter outputs live
/// here; [`GrayImage`] wraps a plane whose values are known to lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(format!(
                "{width}x{height} plane has no pixels"
            )));
        }
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

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Reads a pixel with mirror extension outside the plane.
    #[inline]
    pub fn get_mirrored(&self, x: isize, y: isize) -> f64 {
        self.get(
            mirror_index(x, self.width),
            mirror_index(y, self.height),
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Copies the `width x height` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Plane> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidDimensions(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} plane",
                self.width, self.height
            )));
        }
        Ok(Plane::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Extends the plane by mirroring to at least the given size.
    pub fn pad_mirrored(&self, width: usize, height: usize) -> Plane {
        Plane::from_fn(width, height, |x, y| {
            self.get_mirrored(x as isize, y as isize)
        })
    }

    /// Nearest-neighbour resampling to the requested size.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Plane {
        Plane::from_fn(width, height, |x, y| {
            let sx = (x * self.width / width).min(self.width - 1);
            let sy = (y * self.height / height).min(self.height - 1);
            self.get(sx, sy)
        })
    }
}

/// Luminance image with every value finite and in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage(Plane);

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let plane = Plane::new(width, height, data)?;
        Self::from_plane(plane)
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        if let Some(bad) = plane
            .data
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidParameter(format!(
                "pixel {bad} has value {} outside [0, 1]",
                plane.data[bad]
            )));
        }
        Ok(Self(plane))
    }

    /// Builds an image from an operator output that is mathematically in
    /// range, clamping round-off excursions.
    pub(crate) fn from_plane_clamped(mut plane: Plane) -> Self {
        for v in &mut plane.data {
            *v = v.clamp(0.0, 1.0);
        }
        Self(plane)
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::from_plane(Plane::from_fn(width, height, f))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_fn(width, height, |_, _| value)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.0.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.0.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn as_plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }

    /// Multiplies every pixel by `alpha`, which must keep values in range.
    pub fn scaled(&self, alpha: f64) -> Result<GrayImage> {
        GrayImage::from_plane(self.0.map(|v| v * alpha))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<GrayImage> {
        Ok(GrayImage(self.0.crop(x0, y0, width, height)?))
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data().iter().map(|&v| to_u8(v)).collect();
        let buf = image::GrayImage::from_raw(self.width() as u32, self.height() as u32, bytes)
            .expect("buffer length matches dimensions");
        save_dynamic(DynamicImage::ImageLuma8(buf), path.as_ref())
    }
}

/// Three-channel image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions("image has no pixels".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if data
            .iter()
            .flatten()
            .any(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidParameter(
                "channel value outside [0, 1]".into(),
            ));
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

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn luma(&self) -> GrayImage {
        let data = self.data.iter().map(|&[r, g, b]| to_luma(r, g, b)).collect();
        GrayImage::from_plane_clamped(Plane {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p[c]).collect(),
        }
    }

    pub(crate) fn from_channels_clamped(channels: [Plane; 3]) -> Self {
        let [r, g, b] = channels;
        let data = r
            .data
            .iter()
            .zip(&g.data)
            .zip(&b.data)
            .map(|((&r, &g), &b)| [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)])
            .collect();
        Self {
            width: r.width,
            height: r.height,
            data,
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().flatten().map(|&v| to_u8(v)).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions");
        save_dynamic(DynamicImage::ImageRgb8(buf), path.as_ref())
    }
}

/// An image as decoded from disk, before any channel reduction.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl LoadedImage {
    pub fn width(&self) -> usize {
        match self {
            LoadedImage::Gray(g) => g.width(),
            LoadedImage::Rgb(c) => c.width(),
        }
    }

    pub fn height(&self) -> usize {
        match self {
            LoadedImage::Gray(g) => g.height(),
            LoadedImage::Rgb(c) => c.height(),
        }
    }

    pub fn luma(&self) -> GrayImage {
        match self {
            LoadedImage::Gray(g) => g.clone(),
            LoadedImage::Rgb(c) => c.luma(),
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_dynamic(img: DynamicImage, path: &Path) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

/// ITU-R BT.601 luma, `0.299 r + 0.587 g + 0.114 b`.
///
/// Evaluated around the green channel so gray inputs map to themselves
/// exactly.
#[inline]
pub fn to_luma(r: f64, g: f64, b: f64) -> f64 {
    (g + 0.299 * (r - g) + 0.114 * (b - g)).clamp(0.0, 1.0)
}

/// Decodes a PNG or binary PGM/PPM file, keeping color if present.
pub fn load_any(path: impl AsRef<Path>) -> Result<LoadedImage> {
    let path = path.as_ref();
    let unreadable = |reason: String| Error::UnreadableFile {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| unreadable(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| unreadable(e.to_string()))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: {other:?}",
                path.display()
            )))
        }
        None => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: unrecognized file signature",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| unreadable(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidDimensions(format!(
            "{}: zero-dimension image",
            path.display()
        )));
    }
    let gray = |data: Vec<f64>| GrayImage::from_plane_clamped(Plane { width: w, height: h, data });
    let rgb = |data: Vec<[f64; 3]>| RgbImage { width: w, height: h, data };
    Ok(match decoded {
        DynamicImage::ImageLuma8(b) => {
            LoadedImage::Gray(gray(b.pixels().map(|p| p.0[0] as f64 / 255.0).collect()))
        }
        DynamicImage::ImageLumaA8(b) => {
            LoadedImage::Gray(gray(b.pixels().map(|p| p.0[0] as f64 / 255.0).collect()))
        }
        DynamicImage::ImageLuma16(b) => {
            LoadedImage::Gray(gray(b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()))
        }
        DynamicImage::ImageLumaA16(b) => {
            LoadedImage::Gray(gray(b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()))
        }
        DynamicImage::ImageRgb8(b) => LoadedImage::Rgb(rgb(b
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 255.0))
            .collect())),
        DynamicImage::ImageRgba8(b) => LoadedImage::Rgb(rgb(b
            .pixels()
            .map(|p| [p.0[0], p.0[1], p.0[2]].map(|c| c as f64 / 255.0))
            .collect())),
        other => {
            let f = other.to_rgb32f();
            LoadedImage::Rgb(rgb(f
                .pixels()
                .map(|p| p.0.map(|c| (c as f64).clamp(0.0, 1.0)))
                .collect()))
        }
    })
}

/// Loads an image as luminance; color inputs go through [`to_luma`].
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    Ok(load_any(path)?.luma())
}

/// Normalized, truncated 2-D Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// Row-major `size x size` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the center.
    pub fn weight(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius() as isize;
        self.weights[((dy + r) as usize) * self.size + (dx + r) as usize]
    }
}

pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<GaussianKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "kernel sigma must be positive, got {sigma}"
        )));
    }
    if size < 3 || size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "kernel size must be odd and at least 3, got {size}"
        )));
    }
    let r = (size / 2) as isize;
    let two_s2 = 2.0 * sigma * sigma;
    let mut weights = Vec::with_capacity(size * size);
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dx * dx + dy * dy) as f64) / two_s2).exp());
        }
    }
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    Ok(GaussianKernel {
        size,
        sigma,
        weights,
    })
}

/// Support `2 * ceil(3 sigma) + 1` used by the LR synthesis operator.
pub fn kernel_size_for(sigma: f64) -> usize {
    2 * (3.0 * sigma).ceil() as usize + 1
}

/// Normalized 1-D Gaussian taps for separable filtering.
fn gaussian_taps(sigma: f64, size: usize) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= z);
    taps
}

/// Separable convolution with a symmetric kernel, mirror boundaries.
pub fn convolve_separable(plane: &Plane, taps: &[f64]) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    let r = (taps.len() / 2) as isize;
    let mut tmp = Plane::zeros(w, h);
    for y in 0..h {
        let row = &plane.data()[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * row[mirror_index(x as isize + k as isize - r, w)];
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for (k, &t) in taps.iter().enumerate() {
            let sy = mirror_index(y as isize + k as isize - r, h);
            let src = &tmp.data[sy * w..(sy + 1) * w];
            let dst = &mut out.data[y * w..(y + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    out
}

/// Gaussian blur of a plane with the given width and odd support.
pub fn gaussian_blur_plane(plane: &Plane, sigma: f64, size: usize) -> Result<Plane> {
    // validates the parameters
    gaussian_kernel(sigma, size)?;
    Ok(convolve_separable(plane, &gaussian_taps(sigma, size)))
}

/// Gaussian blur with support `2 * ceil(3 sigma) + 1`.
pub fn gaussian_blur(image: &GrayImage, sigma: f64) -> Result<GrayImage> {
    let out = gaussian_blur_plane(image.as_plane(), sigma, kernel_size_for(sigma))?;
    Ok(GrayImage::from_plane_clamped(out))
}

/// Center-crops so both dimensions are multiples of `s`.
pub fn crop_to_multiple(image: &GrayImage, s: usize) -> Result<GrayImage> {
    let (w, h) = (image.width() / s * s, image.height() / s * s);
    if w == 0 || h == 0 {
        return Err(Error::TooSmall(format!(
            "{}x{} image is smaller than scale factor {s}",
            image.width(),
            image.height()
        )));
    }
    image.crop((image.width() - w) / 2, (image.height() - h) / 2, w, h)
}

/// Synthesizes a low-resolution image: Gaussian blur with width `sigma`
/// followed by sampling every `s`-th pixel, the kernel centered on the
/// retained pixel.
///
/// Dimensions not divisible by `s` are center-cropped first.
pub fn downsample(image: &GrayImage, s: usize, sigma: f64) -> Result<GrayImage> {
    if s < 2 {
        return Err(Error::InvalidParameter(format!(
            "scale factor must be at least 2, got {s}"
        )));
    }
    let kernel = gaussian_kernel(sigma, kernel_size_for(sigma))?;
    let src = crop_to_multiple(image, s)?;
    let (w, h) = (src.width() / s, src.height() / s);
    let r = kernel.radius() as isize;
    let plane = src.as_plane();
    let out = Plane::from_fn(w, h, |u, v| {
        let (cx, cy) = ((s * u) as isize, (s * v) as isize);
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                acc += kernel.weight(dx, dy) * plane.get_mirrored(cx + dx, cy + dy);
            }
        }
        acc
    });
    Ok(GrayImage::from_plane_clamped(out))
}

/// Multi-resolution stack; level 0 is the input.
#[derive(Clone, Debug)]
pub struct Pyramid {
    levels: Vec<GrayImage>,
}

impl Pyramid {
    pub fn levels(&self) -> &[GrayImage] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &GrayImage {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

pub const PYRAMID_LEVELS: usize = 3;
const PYRAMID_SIGMA: f64 = 1.0;
const PYRAMID_KERNEL: usize = 5;

/// Blurs (sigma 1, 5 taps) and keeps even-indexed pixels at each step.
pub fn build_pyramid(image: &GrayImage, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::InvalidParameter("pyramid needs at least one level".into()));
    }
    let need = (1usize << (levels - 1)) * 7;
    if image.width().min(image.height()) < need {
        return Err(Error::TooSmall(format!(
            "{}x{} image cannot hold a {levels}-level pyramid (min side {need})",
            image.width(),
            image.height()
        )));
    }
    let taps = gaussian_taps(PYRAMID_SIGMA, PYRAMID_KERNEL);
    let mut out = vec![image.clone()];
    for _ in 1..levels {
        let prev = out.last().unwrap().as_plane();
        let blurred = convolve_separable(prev, &taps);
        let (w, h) = (prev.width().div_ceil(2), prev.height().div_ceil(2));
        let next = Plane::from_fn(w, h, |x, y| blurred.get(2 * x, 2 * y));
        out.push(GrayImage::from_plane_clamped(next));
    }
    Ok(Pyramid { levels: out })
}

/// Row-major matrix of vectorized square patches.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMatrix {
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl PatchMatrix {
    /// Length of each patch vector (`size * size`).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// All fully contained `size x size` patches visited with the given stride,
/// patches ordered row-major by their top-left corner.
pub fn extract_patches(plane: &Plane, size: usize, stride: usize) -> Result<PatchMatrix> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidParameter("patch size and stride must be positive".into()));
    }
    if plane.width() < size || plane.height() < size {
        return Err(Error::TooSmall(format!(
            "{}x{} plane is smaller than a {size}x{size} patch",
            plane.width(),
            plane.height()
        )));
    }
    let nx = (plane.width() - size) / stride + 1;
    let ny = (plane.height() - size) / stride + 1;
    let dim = size * size;
    let mut data = Vec::with_capacity(nx * ny * dim);
    for py in 0..ny {
        for px in 0..nx {
            let (x0, y0) = (px * stride, py * stride);
            for y in y0..y0 + size {
                data.extend_from_slice(&plane.data()[y * plane.width() + x0..y * plane.width() + x0 + size]);
            }
        }
    }
    Ok(PatchMatrix {
        dim,
        rows: nx * ny,
        data,
    })
}
