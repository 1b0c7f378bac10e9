//! K-fold cross-validation over hyperparameter grids.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::methods::{fit_feature_method, fit_sample_method, Method, MethodParams};
use super::metrics::{half_mse, metric_mse_samples};
use super::ordered_map;
use crate::error::{Error, Result};
use crate::model::Dataset;

/// What is being clustered, which fixes the validation metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Validation half-MSE of the weight vector.
    Features,
    /// Best-of-experts validation error.
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVConfig {
    pub folds: usize,
    pub lambdas: Vec<f64>,
    pub qs: Vec<usize>,
    pub ks: Vec<Option<usize>>,
    pub task: Task,
    pub max_iter: usize,
    pub cg_max_iter: usize,
}

impl Default for CVConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            lambdas: log_grid(-6, 0),
            qs: vec![3],
            ks: vec![None],
            task: Task::Features,
            max_iter: 500,
            cg_max_iter: 100,
        }
    }
}

/// `10^lo, 10^(lo+1), ..., 10^hi`.
pub fn log_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub lambda: f64,
    pub q: usize,
    pub k: Option<usize>,
    /// Mean validation metric; NaN when a fold failed.
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub best: MethodParams,
    pub scores: Vec<CvScore>,
}

/// Shuffled fold labels; fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

fn grid(cfg: &CVConfig) -> Vec<(f64, usize, Option<usize>)> {
    let mut lambdas = cfg.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut qs = cfg.qs.clone();
    qs.sort_unstable();
    qs.dedup();
    let mut ks = cfg.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut out = Vec::new();
    for &l in &lambdas {
        for &q in &qs {
            for &k in &ks {
                out.push((l, q, k));
            }
        }
    }
    out
}

fn validate(method: Method, task: Task, train: &Dataset, test: &Dataset, p: &MethodParams) -> Result<f64> {
    match task {
        Task::Features => half_mse(test, &fit_feature_method(method, train, p, None)?),
        Task::Samples => metric_mse_samples(test, &fit_sample_method(method, train, p, None)?),
    }
}

/// Picks the grid point with the smallest mean validation metric. Ties go to
/// the smallest lambda, then Q, then k. Failed fits score NaN.
pub fn cross_validate(data: &Dataset, method: Method, cfg: &CVConfig, seed: u64) -> Result<CvOutcome> {
    let n = data.n();
    if cfg.folds < 2 || cfg.folds > n {
        return Err(Error::InvalidInput(format!("need 2 <= folds <= n, got {} folds for n = {n}", cfg.folds)));
    }
    if cfg.lambdas.is_empty() || cfg.qs.is_empty() || cfg.ks.is_empty() {
        return Err(Error::InvalidInput("cross-validation grids must be nonempty".into()));
    }
    if method == Method::Oracle {
        return Err(Error::UnsupportedMode("the oracle is not cross-validated".into()));
    }
    let fold = fold_assignment(n, cfg.folds, seed);
    let splits: Vec<(Dataset, Dataset)> = (0..cfg.folds)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            (data.subset(&train), data.subset(&test))
        })
        .collect();
    let params: Vec<MethodParams> = grid(cfg)
        .into_iter()
        .map(|(lambda, q, k)| MethodParams {
            k,
            seed,
            max_iter: cfg.max_iter,
            cg_max_iter: cfg.cg_max_iter,
            ..MethodParams::new(q, lambda)
        })
        .collect();
    let scores: Vec<CvScore> = ordered_map(&params, |p| {
        let vals: Vec<f64> = splits
            .iter()
            .map(|(tr, te)| validate(method, cfg.task, tr, te, p).unwrap_or(f64::NAN))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        CvScore {
            lambda: p.lambda,
            q: p.q,
            k: p.k,
            mean,
            std: var.sqrt(),
        }
    });
    let best = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mean.is_finite())
        .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
            Some((_, m)) if m <= s.mean => acc,
            _ => Some((i, s.mean)),
        })
        .ok_or_else(|| Error::CvFailed {
            method: method.to_string(),
        })?;
    Ok(CvOutcome {
        best: params[best.0].clone(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::{generate_feature_clustered, SyntheticSpecFeatures};

    fn data(seed: u64) -> Dataset {
        generate_feature_clustered(&SyntheticSpecFeatures {
            n: 60,
            d: 20,
            sigma: 1.0,
            seed,
            ..Default::default()
        })
        .unwrap()
        .data
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let f = fold_assignment(23, 5, 1);
        let mut counts = [0; 5];
        for &x in &f {
            counts[x] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
        assert_eq!(f, fold_assignment(23, 5, 1));
        assert_ne!(f, fold_assignment(23, 5, 2));
    }

    #[test]
    fn single_point_grid_is_returned() {
        let cfg = CVConfig {
            lambdas: vec![0.1],
            ..Default::default()
        };
        let out = cross_validate(&data(0), Method::Ls, &cfg, 0).unwrap();
        assert_eq!(out.best.lambda, 0.1);
        assert_eq!(out.scores.len(), 1);
    }

    #[test]
    fn duplicate_grid_entries_are_dropped() {
        let cfg = CVConfig {
            lambdas: vec![0.1, 0.01, 0.1],
            qs: vec![3, 3],
            ..Default::default()
        };
        assert_eq!(cross_validate(&data(0), Method::Ls, &cfg, 0).unwrap().scores.len(), 2);
    }

    #[test]
    fn ties_go_to_the_smallest_lambda() {
        // With X = 0 every lambda predicts zero.
        let d = data(0);
        let flat = Dataset::regression(d.x.map(|_| 0.0), d.y().unwrap().clone()).unwrap();
        let cfg = CVConfig {
            lambdas: vec![1.0, 0.01, 0.1],
            ..Default::default()
        };
        assert_eq!(cross_validate(&flat, Method::Ls, &cfg, 0).unwrap().best.lambda, 0.01);
    }

    #[test]
    fn failing_method_reports_cv_failure() {
        let err = cross_validate(&data(0), Method::Am, &CVConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::CvFailed { ref method } if method == "AM"));
        assert!(cross_validate(&data(0), Method::Ls, &CVConfig { folds: 1, ..Default::default() }, 0).is_err());
    }

    #[test]
    fn ridge_choice_is_interior_on_most_seeds() {
        let cfg = CVConfig {
            lambdas: log_grid(-5, 3),
            ..Default::default()
        };
        let interior = (0..10)
            .filter(|&s| {
                let b = cross_validate(&data(s), Method::Ls, &cfg, s).unwrap().best.lambda;
                b > 1e-5 && b < 1e3
            })
            .count();
        assert!(interior >= 8, "{interior}/10");
    }
}
