//! Synthetic data, metrics, cross-validation and the experiment runner
//! behind the `bench` command.

pub mod cv;
pub mod experiment;
pub mod methods;
pub mod metrics;
pub mod synthetic;

pub use cv::{cross_validate, CVConfig, CvOutcome, CvScore};
pub use experiment::{run_experiment, CellStats, ExperimentConfig, ExperimentResult, Table};
pub use methods::{fit_feature_method, fit_sample_method, Method, MethodParams};
pub use metrics::{metric_mse_samples, weight_error};
pub use synthetic::{
    generate_feature_clustered, generate_sample_clustered, FeatureClusteredData, SampleClusteredData,
    SyntheticSpecFeatures, SyntheticSpecSamples,
};

/// Ordered map, parallel when the `parallel` feature is on.
pub(crate) fn ordered_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
