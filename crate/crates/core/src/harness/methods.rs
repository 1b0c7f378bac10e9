//! Uniform entry points for the methods compared in the benchmarks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_alternating_sample, fit_experts, fit_iht, fit_ls, fit_lsk};
use crate::cg::{cg_fit, CGConfig, PsiKind, PsiProblem};
use crate::error::{Error, Result};
use crate::linalg::ridge;
use crate::model::{partition_to_assignment, Dataset, Hyperparams, Partition};
use crate::pgd::{pgd_fit, pgd_fit_sample_cluster, Fitted, Init, PGDConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Least squares given the true partition.
    Oracle,
    Ls,
    Lsk,
    /// Alternating minimization (samples).
    Am,
    Pg,
    Cg,
    /// Conditional gradient, then projected gradient from its output.
    Cgpg,
    Iht,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Oracle,
        Method::Ls,
        Method::Lsk,
        Method::Am,
        Method::Pg,
        Method::Cg,
        Method::Cgpg,
        Method::Iht,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "Oracle",
            Method::Ls => "LS",
            Method::Lsk => "LSK",
            Method::Am => "AM",
            Method::Pg => "PG",
            Method::Cg => "CG",
            Method::Cgpg => "CGPG",
            Method::Iht => "IHT",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// Settings shared by every method; each reads what it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub q: usize,
    pub lambda: f64,
    pub k: Option<usize>,
    pub seed: u64,
    pub max_iter: usize,
    pub cg_max_iter: usize,
}

impl MethodParams {
    pub fn new(q: usize, lambda: f64) -> Self {
        Self {
            q,
            lambda,
            k: None,
            seed: 0,
            max_iter: 500,
            cg_max_iter: 100,
        }
    }

    fn hyper(&self) -> Hyperparams {
        Hyperparams {
            q: self.q,
            k: self.k,
            lambda: self.lambda,
            max_iter: self.max_iter,
            seed: self.seed,
            ..Hyperparams::default()
        }
    }

    fn cg(&self) -> CGConfig {
        CGConfig {
            max_iter: self.cg_max_iter,
            seed: self.seed,
            ..CGConfig::new(self.q)
        }
    }
}

fn column(m: DMatrix<f64>) -> DVector<f64> {
    m.column(0).into_owned()
}

fn need_truth(truth: Option<&Partition>) -> Result<&Partition> {
    truth.ok_or_else(|| Error::InvalidInput("the oracle needs the true partition".into()))
}

/// The relaxation needs a positive ridge term.
fn cg_lambda(lambda: f64) -> f64 {
    lambda.max(1e-8)
}

/// Weight vector estimated by `method` on a feature-clustering problem.
pub fn fit_feature_method(method: Method, data: &Dataset, p: &MethodParams, truth: Option<&Partition>) -> Result<DVector<f64>> {
    let pg = |init: Init| -> Result<DVector<f64>> {
        let cfg = PGDConfig {
            init,
            ..PGDConfig::new(Variant::FeatureCluster, p.hyper())
        };
        match pgd_fit(data, &cfg)?.0 {
            Fitted::Clustered { model } => Ok(column(model.weights())),
            _ => unreachable!("feature variant returns a clustered model"),
        }
    };
    let cg = || -> Result<DVector<f64>> {
        let problem = PsiProblem::new(PsiKind::FeatureRegression, data, cg_lambda(p.lambda))?;
        Ok(column(cg_fit(&problem, &p.cg())?.model.weights()))
    };
    match method {
        Method::Oracle => {
            let truth = need_truth(truth)?;
            let z = partition_to_assignment(truth).matrix();
            let v = ridge(&(&data.x * &z), &data.target_matrix(), data.n() as f64 * p.lambda)?;
            Ok(z * v.column(0))
        }
        Method::Ls => Ok(column(fit_ls(data, p.lambda)?)),
        Method::Lsk => Ok(column(fit_lsk(data, p.q, p.lambda, p.seed)?.weights())),
        Method::Pg => pg(Init::LsKMeans),
        Method::Cg => cg(),
        Method::Cgpg => {
            let start = cg()?;
            pg(Init::Warm(DMatrix::from_column_slice(start.len(), 1, start.as_slice())))
        }
        Method::Iht => {
            let (model, _) = fit_iht(data, &p.hyper())?;
            Ok(DVector::from_column_slice(&model.weights))
        }
        Method::Am => Err(Error::UnsupportedMode("AM clusters samples, not features".into())),
    }
}

/// Experts (`d x Q'`) estimated by `method` on a sample-clustering problem.
/// Every method but the oracle ends with an alternating refinement.
pub fn fit_sample_method(method: Method, data: &Dataset, p: &MethodParams, truth: Option<&Partition>) -> Result<DMatrix<f64>> {
    let refine = |start: &Partition| -> Result<DMatrix<f64>> {
        Ok(fit_alternating_sample(data, p.q, p.lambda, p.seed, Some(start))?
            .model
            .weights())
    };
    match method {
        Method::Oracle => fit_experts(data, need_truth(truth)?, p.lambda),
        Method::Am => Ok(fit_alternating_sample(data, p.q, p.lambda, p.seed, None)?.model.weights()),
        Method::Pg => {
            let cfg = PGDConfig::new(Variant::SampleCluster, p.hyper());
            let (model, _) = pgd_fit_sample_cluster(data, &cfg)?;
            refine(model.partition())
        }
        Method::Cg => {
            let problem = PsiProblem::new(PsiKind::SampleRegression, data, cg_lambda(p.lambda))?;
            let fit = cg_fit(&problem, &p.cg())?;
            refine(fit.partition())
        }
        Method::Ls => fit_ls(data, p.lambda),
        _ => Err(Error::UnsupportedMode(format!("{method} does not cluster samples"))),
    }
}
