//! Dataset ingestion, validation protocols and reporting.

pub mod cache;
pub mod desk;
pub mod manifest;
pub mod protocol;
pub mod report;
pub mod split;

pub use cache::FeatureCache;
pub use manifest::{load_manifest, Manifest, ManifestEntry};
pub use protocol::{extract_all, run_protocol, ForestRegressor, Predictor, Regressor};
pub use report::EvaluationReport;
pub use split::{kfold_split, leave_image_out_split, leave_method_out_split, Protocol, Split};
