//! Protocol execution: train on each split's training side, predict its test
//! side, repeat with fresh model seeds and average per image.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::cache::FeatureCache;
use super::manifest::ManifestEntry;
use super::report::EvaluationReport;
use super::split::Split;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::forest::ForestParams;
pub use crate::model::Predictor;
use crate::model::{train_model, TwoStageModel};

pub trait Regressor: Sync {
    type Model: Predictor;
    fn fit(&self, features: &[FeatureVector], scores: &[f64], seed: u64) -> Result<Self::Model>;
}

/// The two-stage forest model with fixed hyperparameters.
#[derive(Clone, Debug, Default)]
pub struct ForestRegressor {
    pub params: ForestParams,
}

impl Regressor for ForestRegressor {
    type Model = TwoStageModel;

    fn fit(&self, features: &[FeatureVector], scores: &[f64], seed: u64) -> Result<TwoStageModel> {
        train_model(features, scores, &self.params, seed)
    }
}

fn describe(e: &ManifestEntry) -> String {
    format!("{}/{}/x{} ({})", e.ref_id, e.method, e.s, e.image_path.display())
}

/// Features for every entry, in order, computed in parallel through `cache`.
pub fn extract_all(entries: &[ManifestEntry], cache: &FeatureCache) -> Result<Vec<FeatureVector>> {
    entries
        .par_iter()
        .map(|e| cache.features(&e.image_path).map_err(|err| err.context(describe(e))))
        .collect()
}

/// Seed for one (repetition, split) task; independent of scheduling.
pub fn task_seed(seed: u64, repetition: usize, split: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((repetition as u64) << 32) | split as u64);
    rng.next_u64()
}

/// Runs every split `repetitions` times. Folds stay fixed; only the model
/// seed changes between repetitions. Each image's prediction is the mean of
/// its test-side predictions.
pub fn run_protocol<R: Regressor>(
    entries: &[ManifestEntry],
    features: &[FeatureVector],
    splits: &[Split],
    regressor: &R,
    repetitions: usize,
    seed: u64,
    protocol: &str,
) -> Result<EvaluationReport> {
    if entries.len() != features.len() {
        return Err(Error::DimensionMismatch {
            expected: entries.len(),
            actual: features.len(),
        });
    }
    if repetitions == 0 {
        return Err(Error::InvalidParameter("repetitions must be at least 1".into()));
    }
    if splits.is_empty() {
        return Err(Error::InvalidParameter("no splits to run".into()));
    }
    let tasks: Vec<(usize, usize)> = (0..repetitions)
        .flat_map(|r| (0..splits.len()).map(move |s| (r, s)))
        .collect();
    let results: Vec<Vec<(usize, f64)>> = tasks
        .par_iter()
        .map(|&(rep, si)| {
            let split = &splits[si];
            let x: Vec<FeatureVector> = split.train.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<f64> = split.train.iter().map(|&i| entries[i].score).collect();
            let model = regressor
                .fit(&x, &y, task_seed(seed, rep, si))
                .map_err(|e| e.context(format!("repetition {rep}, split {si}")))?;
            split
                .test
                .iter()
                .map(|&i| {
                    model
                        .predict_raw(&features[i])
                        .map(|p| (i, p))
                        .map_err(|e| e.context(describe(&entries[i])))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    // running mean, so repeated identical predictions average exactly
    let mut means = vec![0.0; entries.len()];
    let mut counts = vec![0usize; entries.len()];
    for (i, p) in results.into_iter().flatten() {
        counts[i] += 1;
        means[i] += (p - means[i]) / counts[i] as f64;
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidParameter(format!(
            "entry {} is never in a test set",
            describe(&entries[i])
        )));
    }
    EvaluationReport::build(entries, &means, protocol, repetitions)
}
