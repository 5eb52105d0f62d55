//! The two-stage quality model: one forest per feature group, combined by
//! least-squares weights fitted on out-of-bag predictions.
//!
//! # Model file
//!
//! A single JSON object:
//!
//! ```text
//! {
//!   "format": "srqa-model",
//!   "version": 1,
//!   "lambda": [l_local, l_global, l_spatial],
//!   "intercept": c,
//!   "rank_deficient": false,
//!   "meta": { "params": {...}, "seed": 7, "n_train": 120, "extractor_version": 1 },
//!   "forests": [
//!     { "feature_dim": 18, "trees": [ { "nodes": [ {"kind": "split", "feature": 3,
//!        "threshold": 0.41, "left": 1, "right": 2}, {"kind": "leaf", "value": 6.2}, ... ] } ] },
//!     { "feature_dim": 45, ... },
//!     { "feature_dim": 75, ... }
//!   ]
//! }
//! ```
//!
//! Nodes of a tree are listed root first, and a child index is always larger
//! than its parent's. Floats are written in shortest round-trip form, so a
//! loaded model predicts bit-identically.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureGroup, FeatureVector, EXTRACTOR_VERSION};
use crate::forest::{train_forest_oob, Forest, ForestParams};

pub const MODEL_FORMAT: &str = "srqa-model";
pub const MODEL_VERSION: u32 = 1;
pub const SCORE_MIN: f64 = 0.0;
pub const SCORE_MAX: f64 = 10.0;
const RIDGE: f64 = 1e-6;
const RANK_TOL: f64 = 1e-10;

/// Least-squares solution, with a flag set when the design matrix was
/// rank-deficient and the ridge fallback was used.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub rank_deficient: bool,
}

/// Minimizes `|A c - y|^2`. Full-rank systems are solved by SVD; otherwise
/// `(A^T A + 1e-6 I) c = A^T y`.
pub fn least_squares(a: &DMatrix<f64>, y: &[f64]) -> Result<LeastSquares> {
    if a.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: y.len(),
        });
    }
    if a.nrows() < a.ncols() {
        return Err(Error::InsufficientData(format!(
            "{} rows for {} unknowns",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares system".into()));
    }
    let rhs = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let rank_deficient = !(smax > 0.0) || smin <= RANK_TOL * smax;
    let c = if rank_deficient {
        let ata = a.transpose() * a + DMatrix::identity(a.ncols(), a.ncols()) * RIDGE;
        ata.cholesky()
            .ok_or_else(|| Error::Degenerate("ridge system not positive definite".into()))?
            .solve(&(a.transpose() * &rhs))
    } else {
        svd.solve(&rhs, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?
    };
    Ok(LeastSquares {
        coefficients: c.iter().copied().collect(),
        rank_deficient,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaFit {
    pub lambda: [f64; 3],
    pub intercept: f64,
    pub rank_deficient: bool,
}

impl LambdaFit {
    pub fn combine(&self, yhat: [f64; 3]) -> f64 {
        self.intercept + self.lambda.iter().zip(&yhat).map(|(l, p)| l * p).sum::<f64>()
    }
}

fn design(yhat: &[[f64; 3]], intercept: bool) -> DMatrix<f64> {
    let cols = if intercept { 4 } else { 3 };
    DMatrix::from_fn(yhat.len(), cols, |i, j| if j < 3 { yhat[i][j] } else { 1.0 })
}

/// Weights without an intercept.
pub fn fit_lambda(yhat: &[[f64; 3]], y: &[f64]) -> Result<LambdaFit> {
    let ls = least_squares(&design(yhat, false), y)?;
    let c = &ls.coefficients;
    Ok(LambdaFit {
        lambda: [c[0], c[1], c[2]],
        intercept: 0.0,
        rank_deficient: ls.rank_deficient,
    })
}

/// Weights plus a constant term; affine changes of any column are absorbed
/// exactly.
pub fn fit_lambda_with_intercept(yhat: &[[f64; 3]], y: &[f64]) -> Result<LambdaFit> {
    let ls = least_squares(&design(yhat, true), y)?;
    let c = &ls.coefficients;
    Ok(LambdaFit {
        lambda: [c[0], c[1], c[2]],
        intercept: c[3],
        rank_deficient: ls.rank_deficient,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub params: ForestParams,
    pub seed: u64,
    pub n_train: usize,
    pub extractor_version: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub raw: f64,
    /// `raw` clamped to `[0, 10]`.
    pub score: f64,
}

impl QualityScore {
    pub fn from_raw(raw: f64) -> Self {
        Self {
            raw,
            score: raw.clamp(SCORE_MIN, SCORE_MAX),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStageModel {
    format: String,
    version: u32,
    lambda: [f64; 3],
    intercept: f64,
    rank_deficient: bool,
    meta: TrainMeta,
    forests: [Forest; 3],
}

impl TwoStageModel {
    /// Assembles a model from parts, checking forest dimensions.
    pub fn from_parts(forests: [Forest; 3], fit: LambdaFit, meta: TrainMeta) -> Result<Self> {
        let m = Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            lambda: fit.lambda,
            intercept: fit.intercept,
            rank_deficient: fit.rank_deficient,
            meta,
            forests,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for (f, g) in self.forests.iter().zip(FeatureGroup::ALL) {
            if f.feature_dim() != g.dim() {
                return Err(Error::CorruptModel(format!(
                    "{} forest expects {} features, not {}",
                    g.name(),
                    g.dim(),
                    f.feature_dim()
                )));
            }
        }
        if self.lambda.iter().chain([&self.intercept]).any(|v| !v.is_finite()) {
            return Err(Error::CorruptModel("non-finite combination weights".into()));
        }
        Ok(())
    }

    pub fn forests(&self) -> &[Forest; 3] {
        &self.forests
    }

    pub fn lambda(&self) -> [f64; 3] {
        self.lambda
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    pub fn meta(&self) -> &TrainMeta {
        &self.meta
    }

    /// Per-group forest outputs.
    pub fn predict_components(&self, f: &FeatureVector) -> Result<[f64; 3]> {
        f.validate()?;
        let mut out = [0.0; 3];
        for ((o, forest), g) in out.iter_mut().zip(&self.forests).zip(FeatureGroup::ALL) {
            *o = forest.predict(f.group(g))?;
        }
        Ok(out)
    }

    pub fn predict(&self, f: &FeatureVector) -> Result<QualityScore> {
        let c = self.predict_components(f)?;
        let fit = LambdaFit {
            lambda: self.lambda,
            intercept: self.intercept,
            rank_deficient: self.rank_deficient,
        };
        Ok(QualityScore::from_raw(fit.combine(c)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::CorruptModel(format!("not a model file: {e}")))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(MODEL_FORMAT) {
            return Err(Error::CorruptModel("missing model format tag".into()));
        }
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptModel("missing version".into()))?;
        if version != u64::from(MODEL_VERSION) {
            return Err(Error::VersionMismatch {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: MODEL_VERSION,
            });
        }
        let raw: TwoStageModel =
            serde_json::from_value(value).map_err(|e| Error::CorruptModel(e.to_string()))?;
        let forests = raw
            .forests
            .iter()
            .map(|f| Forest::new(f.trees().to_vec(), f.feature_dim()))
            .collect::<Result<Vec<_>>>()?;
        let forests: [Forest; 3] = forests.try_into().expect("three forests");
        Self::from_parts(
            forests,
            LambdaFit {
                lambda: raw.lambda,
                intercept: raw.intercept,
                rank_deficient: raw.rank_deficient,
            },
            raw.meta,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::from(e).context(format!("writing model {}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).context(format!("reading model {}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.context(format!("loading model {}", path.display())))
    }
}

/// Anything that maps a feature vector to an unclamped quality score.
pub trait Predictor: Send + Sync {
    fn predict_raw(&self, features: &FeatureVector) -> Result<f64>;
}

impl Predictor for TwoStageModel {
    fn predict_raw(&self, features: &FeatureVector) -> Result<f64> {
        Ok(self.predict(features)?.raw)
    }
}

pub fn predict_quality(model: &TwoStageModel, features: &FeatureVector) -> Result<QualityScore> {
    model.predict(features)
}

pub fn save_model(model: &TwoStageModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TwoStageModel> {
    TwoStageModel::load(path)
}

/// Trains the three forests and fits the combination on their out-of-bag
/// predictions. Targets must lie in `[0, 10]`.
pub fn train_model(
    features: &[FeatureVector],
    scores: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<TwoStageModel> {
    if features.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            actual: scores.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !(SCORE_MIN..=SCORE_MAX).contains(*s)) {
        return Err(Error::InvalidParameter(format!("score {s} outside [0, 10]")));
    }
    if features.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} training images; at least 4 are needed",
            features.len()
        )));
    }
    features.iter().try_for_each(|f| f.validate())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = [rng.next_u64(), rng.next_u64(), rng.next_u64()];
    let mut forests = Vec::with_capacity(3);
    let mut oob = vec![[0.0; 3]; features.len()];
    for (k, g) in FeatureGroup::ALL.into_iter().enumerate() {
        let x: Vec<Vec<f64>> = features.iter().map(|f| f.group(g).to_vec()).collect();
        let trained = train_forest_oob(&x, scores, params, seeds[k])
            .map_err(|e| e.context(format!("training the {} forest", g.name())))?;
        for (row, p) in oob.iter_mut().zip(trained.oob_or_in_sample(&x)) {
            row[k] = p;
        }
        forests.push(trained.forest);
    }
    let fit = fit_lambda_with_intercept(&oob, scores)?;
    let meta = TrainMeta {
        params: params.clone(),
        seed,
        n_train: features.len(),
        extractor_version: EXTRACTOR_VERSION,
    };
    TwoStageModel::from_parts(forests.try_into().expect("three forests"), fit, meta)
}
