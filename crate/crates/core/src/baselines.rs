//! Reference methods: ridge least squares, least squares followed by 1-D
//! k-means, alternating minimization for sample clustering, and iterative
//! hard thresholding.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_1d_exact, kmeans_pp, KMeansConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::{data_loss_grad, sample_clustered_objective, LossKind};
use crate::model::{ClusteredLinearModel, Dataset, Hyperparams, Partition, SparseClusteredModel, Target};
use crate::pgd::{random_partition, run, EngineConfig, LineSearch, Problem, SolverReport, StepRule};
use crate::projections::project_ksparse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Ls,
    Lsk,
    AlternatingMin,
    Iht,
}

/// `argmin (1/2n)||XW - Y||^2 + (lambda/2)||W||^2`; minimum-norm when
/// `lambda = 0`.
pub fn fit_ls(data: &Dataset, lambda: f64) -> Result<DMatrix<f64>> {
    linalg::ridge(&data.x, &data.target_matrix(), data.n() as f64 * lambda)
}

/// Least squares, then the weights clustered into at most `q` values.
pub fn fit_lsk(data: &Dataset, q: usize, lambda: f64, seed: u64) -> Result<ClusteredLinearModel> {
    let w = fit_ls(data, lambda)?;
    if w.ncols() == 1 {
        let r = kmeans_1d_exact(w.as_slice(), q)?;
        let values = r.centroids.iter().map(|c| c[0]).collect();
        return Ok(ClusteredLinearModel::feature(r.partition, values));
    }
    let flat: Vec<f64> = w.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    let r = kmeans_pp(&flat, w.ncols(), q, &KMeansConfig::seeded(seed))?;
    Ok(ClusteredLinearModel::FeatureMulticlass {
        partition: r.partition,
        centroids: r.centroids,
        intercept: None,
    })
}

fn squared_kind(data: &Dataset) -> LossKind {
    match data.target {
        Target::Classes(_) => LossKind::MulticlassSquared,
        _ => LossKind::Squared,
    }
}

fn require_squared(data: &Dataset) -> Result<()> {
    match data.target {
        Target::Vector(_) | Target::Classes(_) => Ok(()),
        Target::Tasks(_) => Err(Error::InvalidInput(
            "sample clustering expects a single regression or class target".into(),
        )),
    }
}

/// One ridge predictor per group:
/// `v_q = (n lambda s_q I + X_q^T X_q)^{-1} X_q^T y_q`.
///
/// Returns a `(d c) x Q'` matrix, one flattened `d x c` expert per column in
/// the partition's group order.
pub fn fit_experts(data: &Dataset, partition: &Partition, lambda: f64) -> Result<DMatrix<f64>> {
    let n = data.n();
    if partition.len() != n {
        return Err(Error::dim("sample partition", n, partition.len()));
    }
    let y = data.target_matrix();
    let (d, c) = (data.d(), y.ncols());
    let mut experts = DMatrix::zeros(d * c, partition.num_groups());
    for (g, members) in partition.groups().iter().enumerate() {
        let xg = data.x.select_rows(members);
        let yg = y.select_rows(members);
        let v = linalg::ridge(&xg, &yg, n as f64 * lambda * members.len() as f64)?;
        experts.column_mut(g).copy_from_slice(v.as_slice());
    }
    Ok(experts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternatingFit {
    pub model: ClusteredLinearModel,
    /// Objective after the initial fit and after each alternation.
    pub objective_trace: Vec<f64>,
    pub alternations: usize,
}

fn model_from(partition: Partition, experts: &DMatrix<f64>) -> ClusteredLinearModel {
    ClusteredLinearModel::Sample {
        partition,
        experts: experts.column_iter().map(|c| c.iter().copied().collect()).collect(),
    }
}

/// Per-sample cost of using expert `v` (flattened `d x c`), including its
/// share of the weighted regularizer so that reassignment never increases
/// the objective.
fn sample_cost(data: &Dataset, y: &DMatrix<f64>, i: usize, v: &[f64], lambda: f64) -> f64 {
    let (n, d) = data.x.shape();
    let c = y.ncols();
    let mut loss = 0.0;
    for k in 0..c {
        let s: f64 = (0..d).map(|j| data.x[(i, j)] * v[j + d * k]).sum();
        let r = s - y[(i, k)];
        loss += 0.5 * r * r;
    }
    loss / n as f64 + 0.5 * lambda * v.iter().map(|a| a * a).sum::<f64>()
}

struct AmState {
    labels: Vec<usize>,
    experts: DMatrix<f64>,
    objective: f64,
}

/// Refits experts for labels in `0..q` (empty labels keep `prev` columns).
fn refit(data: &Dataset, labels: &[usize], q: usize, lambda: f64, prev: &DMatrix<f64>) -> Result<AmState> {
    let partition = Partition::from_labels(labels);
    let fitted = fit_experts(data, &partition, lambda)?;
    let mut experts = prev.clone();
    for (g, members) in partition.groups().iter().enumerate() {
        experts.column_mut(labels[members[0]]).copy_from(&fitted.column(g));
    }
    debug_assert!(labels.iter().all(|&l| l < q));
    let objective = sample_clustered_objective(squared_kind(data), data, &fitted, &partition, lambda)?;
    Ok(AmState {
        labels: labels.to_vec(),
        experts,
        objective,
    })
}

/// Alternating minimization for sample clustering with squared loss.
///
/// Alternates per-group ridge fits with reassignment of every sample to the
/// expert of smallest cost. Starts from `warm` or from balanced random
/// groups drawn with `seed`; stops when assignments are stable or after 100
/// alternations.
pub fn fit_alternating_sample(
    data: &Dataset,
    q: usize,
    lambda: f64,
    seed: u64,
    warm: Option<&Partition>,
) -> Result<AlternatingFit> {
    require_squared(data)?;
    let n = data.n();
    if q < 1 || q > n {
        return Err(Error::InvalidInput(format!("need 1 <= Q <= n, got Q = {q}, n = {n}")));
    }
    let init = match warm {
        Some(p) => {
            if p.len() != n {
                return Err(Error::dim("warm partition", n, p.len()));
            }
            p.clone()
        }
        None => random_partition(n, q, seed),
    };
    let q = q.max(init.num_groups());
    let y = data.target_matrix();
    let zeros = DMatrix::zeros(data.d() * y.ncols(), q);
    let mut state = refit(data, &init.labels(), q, lambda, &zeros)?;
    let mut trace = vec![state.objective];
    let mut alternations = 0;

    for _ in 0..100 {
        let mut labels = state.labels.clone();
        let mut counts = vec![0usize; q];
        let mut own_cost = vec![0.0; n];
        let expert_cols: Vec<Vec<f64>> = state.experts.column_iter().map(|c| c.iter().copied().collect()).collect();
        let occupied: Vec<bool> = (0..q).map(|g| state.labels.contains(&g)).collect();
        for i in 0..n {
            let mut best = state.labels[i];
            let mut best_cost = sample_cost(data, &y, i, &expert_cols[best], lambda);
            for g in (0..q).filter(|&g| occupied[g]) {
                let c = sample_cost(data, &y, i, &expert_cols[g], lambda);
                if c < best_cost {
                    best = g;
                    best_cost = c;
                }
            }
            labels[i] = best;
            own_cost[i] = best_cost;
            counts[best] += 1;
        }
        let mut next = refit(data, &labels, q, lambda, &state.experts)?;

        // Reseed empty groups with the worst-fit sample when that helps.
        for g in 0..q {
            if counts[g] > 0 {
                continue;
            }
            let Some(worst) = (0..n)
                .filter(|&i| counts[next.labels[i]] > 1)
                .max_by(|&a, &b| own_cost[a].total_cmp(&own_cost[b]).then(b.cmp(&a)))
            else {
                break;
            };
            let mut cand = next.labels.clone();
            counts[cand[worst]] -= 1;
            cand[worst] = g;
            let trial = refit(data, &cand, q, lambda, &next.experts)?;
            if trial.objective <= next.objective {
                counts[g] = 1;
                next = trial;
            } else {
                counts[next.labels[worst]] += 1;
            }
        }

        if next.labels == state.labels || next.objective > state.objective {
            break;
        }
        alternations += 1;
        trace.push(next.objective);
        state = next;
    }
    let partition = Partition::from_labels(&state.labels);
    let experts = fit_experts(data, &partition, lambda)?;
    Ok(AlternatingFit {
        model: model_from(partition, &experts),
        objective_trace: trace,
        alternations,
    })
}

struct IhtProblem<'a> {
    x: &'a DMatrix<f64>,
    y: DMatrix<f64>,
    lambda: f64,
    k: usize,
}

impl Problem for IhtProblem<'_> {
    fn value_grad(&self, w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (mut v, mut g) = data_loss_grad(LossKind::Squared, self.x, &self.y, w)?;
        v += 0.5 * self.lambda * w.norm_squared();
        g += w * self.lambda;
        Ok((v, g))
    }

    fn project(&mut self, w: &DMatrix<f64>, _iteration: usize) -> Result<DMatrix<f64>> {
        let r = project_ksparse(w.as_slice(), self.k);
        Ok(DMatrix::from_column_slice(w.nrows(), 1, &r.w))
    }
}

/// Iterative hard thresholding with the same backtracking rule as PGD,
/// started from the least-squares solution.
pub fn fit_iht(data: &Dataset, hyper: &Hyperparams) -> Result<(SparseClusteredModel, SolverReport)> {
    hyper.validate()?;
    let Target::Vector(y) = &data.target else {
        return Err(Error::InvalidInput("IHT expects a regression target".into()));
    };
    let k = hyper.k.unwrap_or(data.d()).min(data.d());
    let mut problem = IhtProblem {
        x: &data.x,
        y: DMatrix::from_column_slice(y.len(), 1, y.as_slice()),
        lambda: hyper.lambda,
        k,
    };
    let start = fit_ls(data, hyper.lambda)?;
    let cfg = EngineConfig {
        line_search: LineSearch::default(),
        step: StepRule::Backtracking,
        epsilon: hyper.epsilon,
        max_iter: hyper.max_iter,
    };
    let (w, report) = run(&mut problem, &start, &cfg)?;
    Ok((SparseClusteredModel::from_weights(w.as_slice()), report))
}
