//! Synthetic problems with a known clustering.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Partition};

/// Samples drawn from `q` linear regression tasks, padded with pure-noise
/// features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpecSamples {
    pub n_train: usize,
    pub n_test: usize,
    /// Informative features.
    pub d: usize,
    /// Appended noise features.
    pub d_noise: usize,
    pub q: usize,
    pub sigma_y: f64,
    /// Standard deviation of the noise features.
    pub sigma_d: f64,
    /// Standard deviation of the expert coefficients.
    pub expert_scale: f64,
    /// Append a constant feature after the informative ones.
    pub bias: bool,
    pub seed: u64,
}

impl Default for SyntheticSpecSamples {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_test: 100,
            d: 8,
            d_noise: 0,
            q: 3,
            sigma_y: 0.1,
            sigma_d: 1.0,
            expert_scale: 10.0,
            bias: true,
            seed: 0,
        }
    }
}

impl SyntheticSpecSamples {
    /// Noise features needed for a proportion `p = d_n / (d + d_n)`.
    pub fn noise_dims_for(d: usize, p: f64) -> Result<usize> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("noise proportion must lie in [0, 1), got {p}")));
        }
        Ok((p * d as f64 / (1.0 - p)).round() as usize)
    }

    /// Total number of columns of the generated design.
    pub fn dim(&self) -> usize {
        self.d + usize::from(self.bias) + self.d_noise
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleClusteredData {
    pub train: Dataset,
    pub test: Dataset,
    /// `dim x q` true experts, zero on the noise features.
    pub experts: DMatrix<f64>,
    pub train_partition: Partition,
    pub test_partition: Partition,
}

fn sample_block(spec: &SyntheticSpecSamples, n: usize, experts: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> (Dataset, Partition) {
    let dim = spec.dim();
    let informative = spec.d + usize::from(spec.bias);
    let labels: Vec<usize> = (0..n).map(|i| i % spec.q).collect();
    let mut x = DMatrix::zeros(n, dim);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        for j in 0..spec.d {
            x[(i, j)] = rng.sample(StandardNormal);
        }
        if spec.bias {
            x[(i, spec.d)] = 1.0;
        }
        for j in informative..dim {
            x[(i, j)] = spec.sigma_d * rng.sample::<f64, _>(StandardNormal);
        }
        let clean: f64 = (0..informative).map(|j| x[(i, j)] * experts[(j, labels[i])]).sum();
        y[i] = clean + spec.sigma_y * rng.sample::<f64, _>(StandardNormal);
    }
    let data = Dataset::regression(x, y).expect("consistent shapes");
    (data, Partition::from_labels(&labels))
}

/// Balanced groups (`i mod q`), Gaussian informative features, experts with
/// i.i.d. `N(0, expert_scale^2)` coefficients.
pub fn generate_sample_clustered(spec: &SyntheticSpecSamples) -> Result<SampleClusteredData> {
    if spec.q == 0 || spec.n_train < spec.q || spec.n_test < spec.q {
        return Err(Error::InvalidInput(format!(
            "need at least Q = {} train and test samples",
            spec.q
        )));
    }
    if !(spec.sigma_y >= 0.0 && spec.sigma_d >= 0.0) {
        return Err(Error::InvalidInput("noise levels must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let informative = spec.d + usize::from(spec.bias);
    let mut experts = DMatrix::zeros(spec.dim(), spec.q);
    for q in 0..spec.q {
        for j in 0..informative {
            experts[(j, q)] = spec.expert_scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let (train, train_partition) = sample_block(spec, spec.n_train, &experts, &mut rng);
    let (test, test_partition) = sample_block(spec, spec.n_test, &experts, &mut rng);
    Ok(SampleClusteredData {
        train,
        test,
        experts,
        train_partition,
        test_partition,
    })
}

/// A regression whose weights take `q` distinct values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpecFeatures {
    pub n: usize,
    pub d: usize,
    pub q: usize,
    pub sigma: f64,
    /// Values are drawn from `Uniform(-value_range, value_range)`.
    pub value_range: f64,
    /// Smallest allowed gap between two values; redrawn until met.
    pub min_gap: f64,
    pub seed: u64,
}

impl Default for SyntheticSpecFeatures {
    fn default() -> Self {
        Self {
            n: 150,
            d: 100,
            q: 5,
            sigma: 0.5,
            value_range: 1.0,
            min_gap: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClusteredData {
    pub data: Dataset,
    pub w_star: DVector<f64>,
    pub partition: Partition,
    pub values: Vec<f64>,
}

/// `y = X w* + eta` with standard normal `X` and feature `j` in group
/// `j mod q`.
pub fn generate_feature_clustered(spec: &SyntheticSpecFeatures) -> Result<FeatureClusteredData> {
    if spec.q == 0 || spec.q > spec.d || spec.n == 0 {
        return Err(Error::InvalidInput(format!(
            "need n >= 1 and 1 <= Q <= d, got n={} d={} Q={}",
            spec.n, spec.d, spec.q
        )));
    }
    if spec.q > 1 && spec.min_gap * (spec.q - 1) as f64 > 2.0 * spec.value_range {
        return Err(Error::InvalidInput("the value range cannot hold Q values this far apart".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = loop {
        let v: Vec<f64> = (0..spec.q)
            .map(|_| rng.random_range(-spec.value_range..spec.value_range))
            .collect();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[1] - w[0] >= spec.min_gap) {
            break v;
        }
    };
    let labels: Vec<usize> = (0..spec.d).map(|j| j % spec.q).collect();
    let w_star = DVector::from_fn(spec.d, |j, _| values[labels[j]]);
    let x = DMatrix::from_fn(spec.n, spec.d, |_, _| rng.sample(StandardNormal));
    let noise = DVector::from_fn(spec.n, |_, _| spec.sigma * rng.sample::<f64, _>(StandardNormal));
    let y = &x * &w_star + noise;
    Ok(FeatureClusteredData {
        data: Dataset::regression(x, y)?,
        w_star,
        partition: Partition::from_labels(&labels),
        values,
    })
}
