//! Projected gradient descent over clustered (and sparse clustered) models
//! with a backtracking step size.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::fit_experts;
use crate::clustering::KMeansConfig;
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::{data_loss_grad, multitask_penalty, multitask_penalty_grad, LossKind, MultitaskPenaltyParams};
use crate::model::{ClusteredLinearModel, Dataset, Hyperparams, Partition, SparseClusteredModel, Target};
use crate::projections::{project_clustered_warm, project_sparse_clustered, ProjectionMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    FeatureCluster,
    FeatureClusterMulticlass,
    SampleCluster,
    SparseFeatureCluster,
    Multitask,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Least squares followed by clustering for feature variants, random
    /// balanced groups for the sample variant.
    Auto,
    Zeros,
    LsKMeans,
    RandomGroups,
    /// Starting point in the solver's own variable space (projected first).
    Warm(DMatrix<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSearch {
    pub alpha0: f64,
    pub grow: f64,
    pub shrink: f64,
    pub alpha_min: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            grow: 2.0,
            shrink: 0.5,
            alpha_min: 1e-10,
        }
    }
}

impl LineSearch {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.grow > 1.0 && self.shrink > 0.0 && self.shrink < 1.0 && self.alpha_min > 0.0) {
            return Err(Error::InvalidInput(format!("invalid line search settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    Backtracking,
    /// Fixed step `alpha0`, every iterate accepted, zero start. Iterates are
    /// recorded.
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PGDConfig {
    pub variant: Variant,
    pub loss: LossKind,
    pub hyper: Hyperparams,
    pub line_search: LineSearch,
    pub step: StepRule,
    pub init: Init,
    /// k-means restarts used by each projection (warm start is always tried).
    pub kmeans_restarts: usize,
}

impl PGDConfig {
    pub fn new(variant: Variant, hyper: Hyperparams) -> Self {
        let loss = match variant {
            Variant::FeatureClusterMulticlass => LossKind::MulticlassLogistic,
            _ => LossKind::Squared,
        };
        Self {
            variant,
            loss,
            hyper,
            line_search: LineSearch::default(),
            step: StepRule::Backtracking,
            init: Init::Auto,
            kmeans_restarts: 1,
        }
    }

    /// Constant unit step, no regularization, zero start.
    pub fn theory(q: usize, max_iter: usize) -> Self {
        let hyper = Hyperparams {
            lambda: 0.0,
            max_iter,
            epsilon: 0.0,
            ..Hyperparams::with_q(q)
        };
        Self {
            step: StepRule::Constant,
            init: Init::Zeros,
            ..Self::new(Variant::FeatureCluster, hyper)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Tolerance,
    ZeroGradient,
    StepTooSmall,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    /// Objective at the start point followed by every accepted iterate.
    pub objective_trace: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    #[serde(skip)]
    pub wall_time: std::time::Duration,
    /// Flattened iterates, constant-step runs only (start point first).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iterates: Option<Vec<Vec<f64>>>,
}

/// Smooth objective plus feasibility projection.
pub(crate) trait Problem {
    fn value_grad(&self, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)>;
    fn project(&mut self, w: &DMatrix<f64>, iteration: usize) -> Result<DMatrix<f64>>;
}

pub(crate) struct EngineConfig {
    pub line_search: LineSearch,
    pub step: StepRule,
    pub epsilon: f64,
    pub max_iter: usize,
}

fn finite_or_diverged(value: f64, trace: &[f64]) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { trace: trace.to_vec() })
    }
}

pub(crate) fn run<P: Problem>(
    problem: &mut P,
    start: &DMatrix<f64>,
    cfg: &EngineConfig,
) -> Result<(DMatrix<f64>, SolverReport)> {
    cfg.line_search.validate()?;
    let clock = Instant::now();
    let mut w = problem.project(start, 0)?;
    let (mut phi, mut grad) = problem.value_grad(&w)?;
    finite_or_diverged(phi, &[])?;
    let record = cfg.step == StepRule::Constant;
    let mut iterates = record.then(|| vec![w.as_slice().to_vec()]);
    let mut trace = vec![phi];
    let mut steps = Vec::new();
    let mut alpha = cfg.line_search.alpha0;
    let mut stop = StopReason::MaxIter;

    for t in 1..=cfg.max_iter {
        if grad.iter().all(|g| *g == 0.0) {
            stop = StopReason::ZeroGradient;
            break;
        }
        let (cand, phi_c, grad_c) = match cfg.step {
            StepRule::Constant => {
                let half = &w - &grad * alpha;
                if half.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Diverged { trace });
                }
                let cand = problem.project(&half, t)?;
                let (v, g) = problem.value_grad(&cand)?;
                finite_or_diverged(v, &trace)?;
                (cand, v, g)
            }
            StepRule::Backtracking => {
                let mut found = None;
                while alpha >= cfg.line_search.alpha_min {
                    let half = &w - &grad * alpha;
                    if half.iter().any(|v| !v.is_finite()) {
                        alpha *= cfg.line_search.shrink;
                        continue;
                    }
                    let cand = problem.project(&half, t)?;
                    let (v, g) = problem.value_grad(&cand)?;
                    // A non-finite trial is an overshoot; shrink like any
                    // other rejected step.
                    if v.is_finite() && v < phi {
                        found = Some((cand, v, g));
                        break;
                    }
                    alpha *= cfg.line_search.shrink;
                }
                match found {
                    Some(f) => f,
                    None => {
                        stop = StopReason::StepTooSmall;
                        break;
                    }
                }
            }
        };
        let delta = (phi - phi_c).abs();
        steps.push(alpha);
        w = cand;
        phi = phi_c;
        grad = grad_c;
        trace.push(phi);
        if let Some(it) = iterates.as_mut() {
            it.push(w.as_slice().to_vec());
        }
        if cfg.step == StepRule::Backtracking {
            alpha *= cfg.line_search.grow;
        }
        if delta < cfg.epsilon {
            stop = StopReason::Tolerance;
            break;
        }
    }
    let report = SolverReport {
        iterations: steps.len(),
        objective_trace: trace,
        step_sizes: steps,
        converged: stop != StopReason::MaxIter,
        stop_reason: stop,
        wall_time: clock.elapsed(),
        iterates,
    };
    Ok((w, report))
}

/// Seed for the projection at a given iteration.
pub(crate) fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed ^ (iteration as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Clusters the rows of `W`, warm-starting k-means from the last centroids.
struct RowClusterer {
    q: usize,
    mode: ProjectionMode,
    seed: u64,
    restarts: usize,
    centroids: Option<Vec<Vec<f64>>>,
    last: Option<Partition>,
}

impl RowClusterer {
    fn new(q: usize, mode: ProjectionMode, seed: u64, restarts: usize) -> Self {
        Self {
            q,
            mode,
            seed,
            restarts,
            centroids: None,
            last: None,
        }
    }

    fn project(&mut self, w: &DMatrix<f64>, iteration: usize) -> Result<DMatrix<f64>> {
        let cfg = KMeansConfig {
            restarts: self.restarts,
            seed: iteration_seed(self.seed, iteration),
            ..KMeansConfig::default()
        };
        let r = project_clustered_warm(w, self.q, self.mode, &cfg, self.centroids.as_deref())?;
        self.centroids = Some(r.centroids.row_iter().map(|c| c.iter().copied().collect()).collect());
        self.last = Some(r.partition);
        Ok(r.projected)
    }
}

struct FeatureProblem<'a> {
    kind: LossKind,
    x: &'a DMatrix<f64>,
    y: DMatrix<f64>,
    lambda: f64,
    proj: FeatureProjection,
}

enum FeatureProjection {
    Rows(RowClusterer),
    Sparse { k: usize, q: usize },
}

fn ridge_term(value: &mut f64, grad: &mut DMatrix<f64>, w: &DMatrix<f64>, lambda: f64) {
    if lambda != 0.0 {
        *value += 0.5 * lambda * w.norm_squared();
        *grad += w * lambda;
    }
}

impl Problem for FeatureProblem<'_> {
    fn value_grad(&self, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (mut v, mut g) = data_loss_grad(self.kind, self.x, &self.y, w)?;
        ridge_term(&mut v, &mut g, w, self.lambda);
        Ok((v, g))
    }

    fn project(&mut self, w: &DMatrix<f64>, iteration: usize) -> Result<DMatrix<f64>> {
        match &mut self.proj {
            FeatureProjection::Rows(c) => c.project(w, iteration),
            FeatureProjection::Sparse { k, q } => {
                let r = project_sparse_clustered(w.as_slice(), *k, *q);
                Ok(DMatrix::from_column_slice(w.nrows(), 1, &r.w))
            }
        }
    }
}

/// Result of a PGD fit, tagged by model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Fitted {
    Clustered { model: ClusteredLinearModel },
    Sparse { model: SparseClusteredModel },
    Multitask { model: MultitaskModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultitaskModel {
    /// `d x K` task predictors.
    pub w: Vec<Vec<f64>>,
    /// `d x K` clustered centers, one column per task.
    pub w_tilde: Vec<Vec<f64>>,
    pub partition: Partition,
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn check_variant_loss(variant: Variant, kind: LossKind, target: &Target) -> Result<()> {
    let ok = match variant {
        Variant::FeatureCluster | Variant::SparseFeatureCluster => {
            matches!(target, Target::Vector(_)) && !kind.is_multiclass()
        }
        Variant::FeatureClusterMulticlass => matches!(target, Target::Classes(_)) && kind.is_multiclass(),
        Variant::SampleCluster => match target {
            Target::Vector(_) => !kind.is_multiclass(),
            Target::Classes(_) => kind.is_multiclass(),
            Target::Tasks(_) => false,
        },
        Variant::Multitask => matches!(target, Target::Tasks(_)) && kind == LossKind::Squared,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "variant {variant:?} with loss {kind:?} does not fit the dataset target"
        )))
    }
}

/// Centers `X` and the targets when an intercept is requested.
struct Centering {
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
}

fn center(data: &Dataset, kind: LossKind) -> Result<(Dataset, Option<Centering>)> {
    if kind != LossKind::Squared && kind != LossKind::MulticlassSquared {
        return Err(Error::UnsupportedMode(
            "an intercept is only supported with squared losses".into(),
        ));
    }
    let x_mean = data.x.row_mean().transpose();
    let y = data.target_matrix();
    let y_mean = y.row_mean().transpose();
    let mut x = data.x.clone();
    for mut row in x.row_iter_mut() {
        row -= x_mean.transpose();
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= y_mean.transpose();
    }
    let target = match &data.target {
        Target::Vector(_) => Target::Vector(yc.column(0).into_owned()),
        Target::Classes(_) | Target::Tasks(_) => Target::Tasks(yc),
    };
    Ok((Dataset { x, target }, Some(Centering { x_mean, y_mean })))
}

/// Fits a clustered linear model by projected gradient descent.
pub fn pgd_fit(data: &Dataset, cfg: &PGDConfig) -> Result<(Fitted, SolverReport)> {
    cfg.hyper.validate()?;
    check_variant_loss(cfg.variant, cfg.loss, &data.target)?;
    match cfg.variant {
        Variant::SampleCluster => {
            let (fit, report) = pgd_fit_sample_cluster(data, cfg)?;
            Ok((Fitted::Clustered { model: fit }, report))
        }
        Variant::Multitask => {
            let (fit, report) = pgd_fit_multitask(data, cfg)?;
            Ok((Fitted::Multitask { model: fit }, report))
        }
        _ => pgd_fit_features(data, cfg),
    }
}

fn engine(cfg: &PGDConfig) -> EngineConfig {
    EngineConfig {
        line_search: cfg.line_search,
        step: cfg.step,
        epsilon: cfg.hyper.epsilon,
        max_iter: cfg.hyper.max_iter,
    }
}

fn pgd_fit_features(data: &Dataset, cfg: &PGDConfig) -> Result<(Fitted, SolverReport)> {
    let (work, centering) = if cfg.hyper.fit_intercept {
        center(data, cfg.loss)?
    } else {
        (data.clone(), None)
    };
    let n = work.n() as f64;
    let y = work.target_matrix();
    let hp = &cfg.hyper;
    let proj = match cfg.variant {
        Variant::SparseFeatureCluster => {
            let k = hp
                .k
                .ok_or_else(|| Error::InvalidInput("the sparse variant needs k".into()))?;
            FeatureProjection::Sparse { k, q: hp.q }
        }
        _ => {
            let mode = if y.ncols() == 1 {
                ProjectionMode::Exact1d
            } else {
                ProjectionMode::KMeansPP
            };
            FeatureProjection::Rows(RowClusterer::new(hp.q, mode, hp.seed, cfg.kmeans_restarts))
        }
    };
    let mut problem = FeatureProblem {
        kind: cfg.loss,
        x: &work.x,
        y: y.clone(),
        lambda: hp.lambda,
        proj,
    };
    let shape = (work.d(), y.ncols());
    let start = match (&cfg.init, cfg.step) {
        (_, StepRule::Constant) | (Init::Zeros, _) => DMatrix::zeros(shape.0, shape.1),
        (Init::Warm(w), _) => {
            if w.shape() != shape {
                return Err(Error::dim("warm start rows", shape.0, w.nrows()));
            }
            w.clone()
        }
        _ => {
            // Logistic targets are regressed as +-1 for the start point.
            let yy = match cfg.loss {
                LossKind::Logistic => y.map(|v| if v > 0.0 { 1.0 } else { -1.0 }),
                _ => y.clone(),
            };
            linalg::ridge(&work.x, &yy, n * hp.lambda)?
        }
    };
    let (w, report) = run(&mut problem, &start, &engine(cfg))?;

    let model = match cfg.variant {
        Variant::SparseFeatureCluster => {
            let mut m = SparseClusteredModel::from_weights(w.as_slice());
            if let Some(c) = &centering {
                m.intercept = Some(c.y_mean[0] - c.x_mean.dot(&w.column(0)));
            }
            Fitted::Sparse { model: m }
        }
        _ => {
            let partition = Partition::from_values(&w);
            let reps: Vec<usize> = partition.groups().iter().map(|g| g[0]).collect();
            let intercepts = centering.map(|c| {
                (0..w.ncols())
                    .map(|k| c.y_mean[k] - c.x_mean.dot(&w.column(k)))
                    .collect::<Vec<f64>>()
            });
            let model = if w.ncols() == 1 && cfg.variant == Variant::FeatureCluster {
                ClusteredLinearModel::Feature {
                    values: reps.iter().map(|&i| w[(i, 0)]).collect(),
                    partition,
                    intercept: intercepts.map(|v| v[0]),
                }
            } else {
                ClusteredLinearModel::FeatureMulticlass {
                    centroids: reps.iter().map(|&i| w.row(i).iter().copied().collect()).collect(),
                    partition,
                    intercept: intercepts,
                }
            };
            Fitted::Clustered { model }
        }
    };
    Ok((model, report))
}

/// Per-sample predictors stacked as columns of a `(d c) x n` matrix.
struct SampleProblem<'a> {
    kind: LossKind,
    x: &'a DMatrix<f64>,
    y: DMatrix<f64>,
    lambda: f64,
    clusterer: RowClusterer,
}

impl Problem for SampleProblem<'_> {
    fn value_grad(&self, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (n, d) = self.x.shape();
        let c = self.y.ncols();
        if w.shape() != (d * c, n) {
            return Err(Error::dim("per-sample predictor rows", d * c, w.nrows()));
        }
        let inv_n = 1.0 / n as f64;
        let mut grad = DMatrix::zeros(d * c, n);
        let mut total = 0.0;
        let mut yrow = vec![0.0; c];
        let mut srow = vec![0.0; c];
        let mut grow = vec![0.0; c];
        for i in 0..n {
            let wi = w.column(i);
            for k in 0..c {
                yrow[k] = self.y[(i, k)];
                srow[k] = (0..d).map(|j| self.x[(i, j)] * wi[j + d * k]).sum();
            }
            total += self.kind.sample(&yrow, &srow, &mut grow);
            let mut gi = grad.column_mut(i);
            for k in 0..c {
                let s = grow[k] * inv_n;
                for j in 0..d {
                    gi[j + d * k] = s * self.x[(i, j)];
                }
            }
        }
        let mut value = total * inv_n;
        ridge_term(&mut value, &mut grad, w, self.lambda);
        Ok((value, grad))
    }

    fn project(&mut self, w: &DMatrix<f64>, iteration: usize) -> Result<DMatrix<f64>> {
        // Samples are the items: cluster the columns.
        Ok(self.clusterer.project(&w.transpose(), iteration)?.transpose())
    }
}

/// Balanced random groups: a shuffled round-robin assignment.
pub fn random_partition(m: usize, q: usize, seed: u64) -> Partition {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![0; m];
    for (pos, &i) in order.iter().enumerate() {
        labels[i] = pos % q.max(1);
    }
    Partition::from_labels(&labels)
}

/// Per-sample predictor matrix with each sample carrying its group's expert.
pub fn spread_experts(experts: &DMatrix<f64>, partition: &Partition) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(experts.nrows(), partition.len());
    for (g, members) in partition.groups().iter().enumerate() {
        for &i in members {
            w.column_mut(i).copy_from(&experts.column(g));
        }
    }
    w
}

/// Sample clustering: one predictor per sample, projected so at most `Q`
/// distinct predictors remain. Returns the experts (one per group) and the
/// sample partition as a [`ClusteredLinearModel::Sample`].
pub fn pgd_fit_sample_cluster(data: &Dataset, cfg: &PGDConfig) -> Result<(ClusteredLinearModel, SolverReport)> {
    cfg.hyper.validate()?;
    check_variant_loss(Variant::SampleCluster, cfg.loss, &data.target)?;
    let (n, d) = data.x.shape();
    if cfg.hyper.q > n {
        return Err(Error::InvalidInput(format!("Q = {} exceeds n = {n}", cfg.hyper.q)));
    }
    let y = data.target_matrix();
    let c = y.ncols();
    let start = match (&cfg.init, cfg.step) {
        (_, StepRule::Constant) | (Init::Zeros, _) => DMatrix::zeros(d * c, n),
        (Init::Warm(w), _) => {
            if w.shape() != (d * c, n) {
                return Err(Error::dim("warm start rows", d * c, w.nrows()));
            }
            w.clone()
        }
        _ => {
            let p = random_partition(n, cfg.hyper.q, cfg.hyper.seed);
            let experts = fit_experts(data, &p, cfg.hyper.lambda)?;
            spread_experts(&experts, &p)
        }
    };
    let mut problem = SampleProblem {
        kind: cfg.loss,
        x: &data.x,
        y,
        lambda: cfg.hyper.lambda,
        clusterer: RowClusterer::new(cfg.hyper.q, ProjectionMode::KMeansPP, cfg.hyper.seed, cfg.kmeans_restarts),
    };
    let (w, report) = run(&mut problem, &start, &engine(cfg))?;
    let partition = Partition::from_values(&w.transpose());
    let experts = partition
        .groups()
        .iter()
        .map(|g| w.column(g[0]).iter().copied().collect())
        .collect();
    Ok((ClusteredLinearModel::Sample { partition, experts }, report))
}

/// `[W | Wt]` stacked side by side; only `Wt` is projected.
struct MultitaskProblem<'a> {
    x: &'a DMatrix<f64>,
    y: DMatrix<f64>,
    lambda: f64,
    params: MultitaskPenaltyParams,
    clusterer: RowClusterer,
}

impl Problem for MultitaskProblem<'_> {
    fn value_grad(&self, stacked: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let k = self.y.ncols();
        let w = stacked.columns(0, k).into_owned();
        let wt = stacked.columns(k, k).into_owned();
        let (mut v, mut gw) = data_loss_grad(LossKind::Squared, self.x, &self.y, &w)?;
        ridge_term(&mut v, &mut gw, &w, self.lambda);
        v += multitask_penalty(&w, &wt, &self.params)?;
        let (pw, pt) = multitask_penalty_grad(&w, &wt, &self.params);
        gw += pw;
        let mut g = DMatrix::zeros(stacked.nrows(), 2 * k);
        g.columns_mut(0, k).copy_from(&gw);
        g.columns_mut(k, k).copy_from(&pt);
        Ok((v, g))
    }

    fn project(&mut self, stacked: &DMatrix<f64>, iteration: usize) -> Result<DMatrix<f64>> {
        let k = self.y.ncols();
        let wt = stacked.columns(k, k).transpose();
        let projected = self.clusterer.project(&wt, iteration)?;
        let mut out = stacked.clone();
        out.columns_mut(k, k).copy_from(&projected.transpose());
        Ok(out)
    }
}

/// Multitask learning with clustered task centers. Every task shares `X`;
/// the targets are the columns of a [`Target::Tasks`] matrix.
pub fn pgd_fit_multitask(data: &Dataset, cfg: &PGDConfig) -> Result<(MultitaskModel, SolverReport)> {
    cfg.hyper.validate()?;
    check_variant_loss(Variant::Multitask, cfg.loss, &data.target)?;
    let hp = &cfg.hyper;
    let params = MultitaskPenaltyParams {
        lambda_m: hp.lambda_m,
        lambda_b: hp.lambda_b,
        lambda_w: hp.lambda_w,
    };
    params.validate()?;
    let y = data.target_matrix();
    let (n, d) = data.x.shape();
    let k = y.ncols();
    let start = match (&cfg.init, cfg.step) {
        (_, StepRule::Constant) | (Init::Zeros, _) => DMatrix::zeros(d, 2 * k),
        (Init::Warm(w), _) => {
            if w.shape() != (d, 2 * k) {
                return Err(Error::dim("warm start columns", 2 * k, w.ncols()));
            }
            w.clone()
        }
        _ => {
            let w = linalg::ridge(&data.x, &y, n as f64 * hp.lambda.max(1e-8))?;
            let mut s = DMatrix::zeros(d, 2 * k);
            s.columns_mut(0, k).copy_from(&w);
            s.columns_mut(k, k).copy_from(&w);
            s
        }
    };
    let mut problem = MultitaskProblem {
        x: &data.x,
        y,
        lambda: hp.lambda,
        params,
        clusterer: RowClusterer::new(hp.q, ProjectionMode::KMeansPP, hp.seed, cfg.kmeans_restarts),
    };
    let (s, report) = run(&mut problem, &start, &engine(cfg))?;
    let w = s.columns(0, k).into_owned();
    let wt = s.columns(k, k).into_owned();
    let partition = problem
        .clusterer
        .last
        .take()
        .unwrap_or_else(|| Partition::from_values(&wt.transpose()));
    Ok((
        MultitaskModel {
            w: columns(&w),
            w_tilde: columns(&wt),
            partition,
        },
        report,
    ))
}
