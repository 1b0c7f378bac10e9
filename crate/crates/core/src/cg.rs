//! Conditional gradient (Frank-Wolfe) over the convex hull of equivalence
//! matrices.
//!
//! With `A(M) = I + K(M) / (n lambda)`, where `K(M) = X M X^T` (feature
//! clustering) or `(X X^T) o M` (sample clustering), the reduced objective
//! is `psi(M) = (1/2n) sum_k y_k^T A(M)^{-1} y_k`. Its negative gradient is
//! PSD and is kept in factored form `P = F F^T`, which is all the linear
//! oracle needs: clustering the rows of `F` is the same k-means problem as
//! clustering the rows of `P^{1/2}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::fit_experts;
use crate::clustering::{kmeans_1d_exact, kmeans_pp, KMeansConfig};
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, spd_solve};
use crate::model::{ClusteredLinearModel, Dataset, EquivalenceMatrix, Partition, Target};
use crate::theory::{enumerate_partitions, EnumerationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiKind {
    FeatureRegression,
    SampleRegression,
    FeatureClassification,
    SampleClassification,
}

impl PsiKind {
    pub fn is_sample(self) -> bool {
        matches!(self, PsiKind::SampleRegression | PsiKind::SampleClassification)
    }
}

/// Data and regularization defining `psi`.
#[derive(Debug, Clone)]
pub struct PsiProblem<'a> {
    pub kind: PsiKind,
    pub x: &'a DMatrix<f64>,
    /// `n x c` targets (`c = 1` for regression).
    pub y: DMatrix<f64>,
    pub lambda: f64,
    gram: Option<DMatrix<f64>>,
}

impl<'a> PsiProblem<'a> {
    pub fn new(kind: PsiKind, data: &'a Dataset, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "the relaxation needs lambda > 0, got {lambda}"
            )));
        }
        let classification = matches!(kind, PsiKind::FeatureClassification | PsiKind::SampleClassification);
        match (&data.target, classification) {
            (Target::Vector(_), false) | (Target::Classes(_), true) => {}
            _ => {
                return Err(Error::InvalidInput(format!(
                    "{kind:?} does not match the dataset target"
                )))
            }
        }
        let gram = kind.is_sample().then(|| &data.x * data.x.transpose());
        Ok(Self {
            kind,
            x: &data.x,
            y: data.target_matrix(),
            lambda,
            gram,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Size of the equivalence matrices: `d` for features, `n` for samples.
    pub fn m(&self) -> usize {
        if self.kind.is_sample() {
            self.x.nrows()
        } else {
            self.x.ncols()
        }
    }

    fn check(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.shape() != (self.m(), self.m()) {
            return Err(Error::dim("equivalence matrix", self.m(), m.nrows()));
        }
        Ok(())
    }

    /// `A(M)^{-1} Y`.
    fn solve(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m)?;
        let n = self.n();
        let scale = 1.0 / (n as f64 * self.lambda);
        let mut a = match &self.gram {
            Some(k) => k.component_mul(m) * scale,
            None => self.x * m * self.x.transpose() * scale,
        };
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        // Symmetrize against roundoff before factorizing.
        let a = (&a + a.transpose()) * 0.5;
        spd_solve(a, &self.y)
    }

    pub fn value(&self, m: &DMatrix<f64>) -> Result<f64> {
        let sol = self.solve(m)?;
        Ok(crate::linalg::frobenius_inner(&self.y, &sol) / (2.0 * self.n() as f64))
    }

    /// `psi(M)` and the factor `F` of `P = -grad psi(M) = F F^T`.
    pub fn value_factor(&self, m: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let sol = self.solve(m)?;
        let n = self.n() as f64;
        let value = crate::linalg::frobenius_inner(&self.y, &sol) / (2.0 * n);
        let scale = 1.0 / (2.0 * n * n * self.lambda).sqrt();
        let c = sol.ncols();
        let factor = if self.kind.is_sample() {
            // (aa^T) o (XX^T) = D_a X X^T D_a
            let d = self.x.ncols();
            let mut f = DMatrix::zeros(self.x.nrows(), d * c);
            for k in 0..c {
                for i in 0..self.x.nrows() {
                    let ai = sol[(i, k)] * scale;
                    for j in 0..d {
                        f[(i, j + d * k)] = ai * self.x[(i, j)];
                    }
                }
            }
            f
        } else {
            self.x.tr_mul(&sol) * scale
        };
        Ok((value, factor))
    }

    /// Dense `P = -grad psi(M)`.
    pub fn neg_gradient(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (_, f) = self.value_factor(m)?;
        Ok(&f * f.transpose())
    }
}

pub fn psi_value(problem: &PsiProblem, m: &DMatrix<f64>) -> Result<f64> {
    problem.value(m)
}

/// `P = -grad psi(M)` together with its factor (`P = F F^T`). For feature
/// regression `F` is the single column `b`.
pub fn psi_gradient(problem: &PsiProblem, m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (_, f) = problem.value_factor(m)?;
    Ok((&f * f.transpose(), f))
}

/// What the linear oracle is given.
#[derive(Debug, Clone)]
pub enum OracleInput<'a> {
    RankOne(&'a [f64]),
    Factor(&'a DMatrix<f64>),
    Dense(&'a DMatrix<f64>),
}

/// `argmax_{N} <N, P>` over equivalence matrices with at most `q` groups,
/// by k-means on the rows of a square root of `P`. Exact when the factor has
/// one column.
pub fn linear_oracle(input: OracleInput, q: usize, cfg: &KMeansConfig) -> Result<EquivalenceMatrix> {
    let partition = match input {
        OracleInput::RankOne(b) => kmeans_1d_exact(b, q)?.partition,
        OracleInput::Factor(f) if f.ncols() == 1 => kmeans_1d_exact(f.as_slice(), q)?.partition,
        OracleInput::Factor(f) => cluster_rows(f, q, cfg)?,
        OracleInput::Dense(p) => {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite gradient in the oracle".into()));
            }
            cluster_rows(&psd_sqrt(p), q, cfg)?
        }
    };
    Ok(EquivalenceMatrix::from_partition(partition))
}

/// Exact oracle by enumeration; Bell(8) = 4140 partitions at the default size.
fn enumerated_oracle(f: &DMatrix<f64>, q: usize) -> Result<EquivalenceMatrix> {
    let mut best: Option<(f64, EquivalenceMatrix)> = None;
    for p in enumerate_partitions(f.nrows(), q, EnumerationMode::AtMost)? {
        let e = EquivalenceMatrix::from_partition(p);
        let v = e.quadratic_trace(f);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, e));
        }
    }
    best.map(|(_, e)| e)
        .ok_or_else(|| Error::InvalidInput("nothing to partition".into()))
}

fn cluster_rows(f: &DMatrix<f64>, q: usize, cfg: &KMeansConfig) -> Result<Partition> {
    let flat: Vec<f64> = f.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    Ok(kmeans_pp(&flat, f.ncols(), q, cfg)?.partition)
}

/// `Tr(F^T M F)` for a dense `M`.
fn dense_quadratic_trace(m: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
    crate::linalg::frobenius_inner(f, &(m * f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CGConfig {
    pub q: usize,
    /// Gap tolerance; `None` means `1e-6 psi(M_0)`.
    pub epsilon: Option<f64>,
    pub max_iter: usize,
    pub seed: u64,
    pub kmeans_restarts: usize,
    /// Keep every relaxed iterate (small problems only).
    pub keep_iterates: bool,
    /// Up to this many items the multi-column oracle enumerates every
    /// partition instead of running k-means, so the gap is a true
    /// certificate. 0 always uses k-means.
    #[serde(default = "default_exact_oracle_max")]
    pub exact_oracle_max: usize,
}

fn default_exact_oracle_max() -> usize {
    8
}

impl CGConfig {
    pub fn new(q: usize) -> Self {
        Self {
            q,
            epsilon: None,
            max_iter: 200,
            seed: 0,
            kmeans_restarts: 5,
            keep_iterates: false,
            exact_oracle_max: default_exact_oracle_max(),
        }
    }
}

/// One Frank-Wolfe iteration: `psi(M_t)`, the gap at `M_t` and the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedState {
    pub t: usize,
    pub psi: f64,
    pub gap: f64,
    pub oracle: Partition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CGFit {
    pub model: ClusteredLinearModel,
    pub trace: Vec<RelaxedState>,
    pub converged: bool,
    /// Iterations whose gap fell below `-1e-8` (inexact oracle).
    pub oracle_warnings: usize,
    #[serde(skip)]
    pub iterates: Vec<DMatrix<f64>>,
}

impl CGFit {
    pub fn partition(&self) -> &Partition {
        self.model.partition()
    }
}

/// Frank-Wolfe with step `2/(t+2)` from the single-group matrix, stopped on
/// the duality gap, rounded to the last oracle's partition.
pub fn cg_fit(problem: &PsiProblem, cfg: &CGConfig) -> Result<CGFit> {
    if cfg.q < 1 {
        return Err(Error::InvalidInput("Q must be at least 1".into()));
    }
    let m_dim = problem.m();
    let mut m = EquivalenceMatrix::from_partition(Partition::single(m_dim)).into_matrix();
    let mut trace = Vec::new();
    let mut iterates = Vec::new();
    let mut warnings = 0;
    let mut eps = cfg.epsilon;
    let mut converged = false;
    let mut last: Option<Partition> = None;

    for t in 0..cfg.max_iter.max(1) {
        let (psi, f) = problem.value_factor(&m)?;
        if psi.is_nan() {
            return Err(Error::Numerical("psi evaluated to NaN".into()));
        }
        let tol = *eps.get_or_insert(1e-6 * psi);
        let kcfg = KMeansConfig {
            restarts: cfg.kmeans_restarts,
            seed: crate::pgd::iteration_seed(cfg.seed, t),
            ..KMeansConfig::default()
        };
        let delta = if f.ncols() > 1 && m_dim <= cfg.exact_oracle_max {
            enumerated_oracle(&f, cfg.q)?
        } else {
            linear_oracle(OracleInput::Factor(&f), cfg.q, &kcfg)?
        };
        let gap = delta.quadratic_trace(&f) - dense_quadratic_trace(&m, &f);
        if gap < -1e-8 {
            warnings += 1;
            log::warn!("oracle gap {gap:.3e} at iteration {t}: k-means returned a suboptimal vertex");
        }
        if cfg.keep_iterates {
            iterates.push(m.clone());
        }
        trace.push(RelaxedState {
            t,
            psi,
            gap,
            oracle: delta.partition().clone(),
        });
        last = Some(delta.partition().clone());
        if gap <= tol {
            converged = true;
            break;
        }
        let alpha = 2.0 / (t as f64 + 2.0);
        m *= 1.0 - alpha;
        m += delta.matrix() * alpha;
    }

    let partition = last.expect("at least one iteration");
    let model = recover_model(problem, &partition)?;
    Ok(CGFit {
        model,
        trace,
        converged,
        oracle_warnings: warnings,
        iterates,
    })
}

/// Optimal shared coefficients for a fixed partition.
pub fn recover_model(problem: &PsiProblem, partition: &Partition) -> Result<ClusteredLinearModel> {
    let n = problem.n() as f64;
    if problem.kind.is_sample() {
        let data = Dataset {
            x: problem.x.clone(),
            target: Target::Tasks(problem.y.clone()),
        };
        let experts = fit_experts(&data, partition, problem.lambda)?;
        return Ok(ClusteredLinearModel::Sample {
            partition: partition.clone(),
            experts: experts.column_iter().map(|c| c.iter().copied().collect()).collect(),
        });
    }
    // v = (n lambda Z^T Z + Z^T X^T X Z)^{-1} Z^T X^T y
    let z = crate::model::partition_to_assignment(partition).matrix();
    let xz = problem.x * &z;
    let mut lhs = xz.tr_mul(&xz);
    for (g, s) in partition.sizes().iter().enumerate() {
        lhs[(g, g)] += n * problem.lambda * *s as f64;
    }
    let v = spd_solve(lhs, &xz.tr_mul(&problem.y))?;
    Ok(match problem.kind {
        PsiKind::FeatureRegression => ClusteredLinearModel::feature(partition.clone(), v.column(0).iter().copied().collect()),
        _ => ClusteredLinearModel::FeatureMulticlass {
            partition: partition.clone(),
            centroids: v.row_iter().map(|r| r.iter().copied().collect()).collect(),
            intercept: None,
        },
    })
}
