//! No-reference quality assessment for super-resolved images.
//!
//! Three statistical feature families are extracted from a luminance image:
//!
//! * [`local`]: block-DCT coefficient statistics (18 values),
//! * [`global`]: divisively normalized steerable-pyramid statistics (45),
//! * [`spatial`]: patch-covariance spectra (75).
//!
//! A regression forest is trained per family and the three forest outputs
//! are combined linearly ([`model`]). The [`harness`] module runs the
//! cross-validation protocols and [`fusion`] stitches the best-scoring
//! regions of several candidate reconstructions.

pub mod error;
pub mod features;
mod fft;
pub mod forest;
pub mod fusion;
pub mod global;
pub mod harness;
pub mod image;
pub mod local;
pub mod model;
pub mod spatial;
pub mod stats;
pub mod steerable;

pub use error::{Error, Result};
pub use features::{extract_features, FeatureVector};
pub use image::{GrayImage, Plane, RgbImage};
pub use model::TwoStageModel;
