//! Scoring, cross-validation and the benchmark studies.
//!
//! A flip is predicted when its probability is strictly above the detection
//! level α. Aggregates are reduced sequentially in a fixed order so results
//! do not depend on the thread count.

pub mod bench;
pub mod cv;
pub mod reversals;
pub mod roc;
pub mod studies;

pub use bench::{
    artificial_benchmark, noise_ratio_study, reconstruction_error, sign_cross_correlation, ArtificialResult,
    CouplingSource, LagCorrelation, NoiseStudy,
};
pub use cv::{
    cross_validate, cross_validate_model, train_model, CurvePoint, CvModel, CvResult, CvSummary, EntityScore, FoldPlan,
    FoldResult,
};
pub use reversals::{
    fit_exact_ml, kl_divergence, kl_divergence_smoothed, multi_information_fraction, reversal_count_distributions,
    CountDistributions, MultiInformation, SmoothedKl,
};
pub use roc::{
    confusion_at, mann_whitney, predict_bins, predict_panel, roc, Confusion, PredictionRecord, PredictionRun, RocResult,
};
pub use studies::{
    accuracy_vs_block_distance, accuracy_vs_subset_size, accuracy_vs_test_length, daily_accuracy_distribution,
    AlphaSource, DailyAccuracy, DistanceStudy, LengthStudy, SubsetStudy,
};

/// Version of every JSON and CSV document written by the tools.
pub const SCHEMA_VERSION: u32 = 1;

/// Arithmetic mean; NaN for an empty input.
pub(crate) fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Sample standard deviation (`n - 1` denominator); zero below two values.
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}
