//! Loss and penalty values with their gradients.
//!
//! All data terms carry the `1/n` factor and squared losses use
//! `l(y, s) = (y - s)^2 / 2`. Binary logistic labels are read as `+1` when
//! positive and `-1` otherwise, so `{0, 1}` and `{-1, +1}` inputs both work.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Partition, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Squared,
    Logistic,
    MulticlassSquared,
    MulticlassLogistic,
}

impl LossKind {
    pub fn is_multiclass(self) -> bool {
        matches!(self, LossKind::MulticlassSquared | LossKind::MulticlassLogistic)
    }

    /// Loss of one sample given its label row and score row. Writes
    /// `d loss / d score` into `grad`.
    pub fn sample(self, y: &[f64], s: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            LossKind::Squared | LossKind::MulticlassSquared => {
                let mut v = 0.0;
                for ((g, &yi), &si) in grad.iter_mut().zip(y).zip(s) {
                    let r = si - yi;
                    *g = r;
                    v += 0.5 * r * r;
                }
                v
            }
            LossKind::Logistic => {
                let mut v = 0.0;
                for ((g, &yi), &si) in grad.iter_mut().zip(y).zip(s) {
                    let label = if yi > 0.0 { 1.0 } else { -1.0 };
                    let margin = label * si;
                    v += softplus(-margin);
                    *g = -label * sigmoid(-margin);
                }
                v
            }
            LossKind::MulticlassLogistic => {
                let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = s.iter().map(|v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                let total: f64 = y.iter().sum();
                let mut v = 0.0;
                for ((g, &yi), &si) in grad.iter_mut().zip(y).zip(s) {
                    let p = (si - lse).exp();
                    *g = total * p - yi;
                    v += yi * (lse - si);
                }
                v
            }
        }
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `(1/n) sum_i l(Y_i, x_i^T W)` and its gradient in `W`.
pub fn data_loss_grad(
    kind: LossKind,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    let (n, d) = x.shape();
    if w.nrows() != d {
        return Err(Error::dim("weight rows", d, w.nrows()));
    }
    if y.nrows() != n {
        return Err(Error::dim("target rows", n, y.nrows()));
    }
    if w.ncols() != y.ncols() {
        return Err(Error::dim("weight columns", y.ncols(), w.ncols()));
    }
    let scores = x * w;
    let c = y.ncols();
    let mut dscore = DMatrix::zeros(n, c);
    let mut total = 0.0;
    let mut yrow = vec![0.0; c];
    let mut srow = vec![0.0; c];
    let mut grow = vec![0.0; c];
    for i in 0..n {
        for j in 0..c {
            yrow[j] = y[(i, j)];
            srow[j] = scores[(i, j)];
        }
        total += kind.sample(&yrow, &srow, &mut grow);
        for j in 0..c {
            dscore[(i, j)] = grow[j];
        }
    }
    let inv_n = 1.0 / n as f64;
    Ok((total * inv_n, x.tr_mul(&dscore) * inv_n))
}

fn check_pairing(kind: LossKind, target: &Target) -> Result<()> {
    let ok = matches!(
        (kind, target),
        (LossKind::Squared | LossKind::Logistic, Target::Vector(_) | Target::Tasks(_))
            | (LossKind::MulticlassSquared | LossKind::MulticlassLogistic, Target::Classes(_))
            | (LossKind::MulticlassSquared, Target::Tasks(_))
    );
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "loss {kind:?} does not match the dataset's target type"
        )))
    }
}

/// `L(y, X, W) + (lambda/2) ||W||_F^2` and its gradient.
pub fn loss_value_grad(
    kind: LossKind,
    data: &Dataset,
    w: &DMatrix<f64>,
    lambda: f64,
) -> Result<(f64, DMatrix<f64>)> {
    check_pairing(kind, &data.target)?;
    let y = data.target_matrix();
    let (mut value, mut grad) = data_loss_grad(kind, &data.x, &y, w)?;
    if lambda != 0.0 {
        value += 0.5 * lambda * w.norm_squared();
        grad += w * lambda;
    }
    Ok((value, grad))
}

/// Objective of the sample-clustered problem:
/// `(1/n) sum_q sum_{i in G_q} l(y_i, x_i^T V_q) + (lambda/2) sum_q s_q ||V_q||^2`.
///
/// `experts` has one column per group of `partition`, each a flattened
/// `d x c` predictor in column-major order.
pub fn sample_clustered_objective(
    kind: LossKind,
    data: &Dataset,
    experts: &DMatrix<f64>,
    partition: &Partition,
    lambda: f64,
) -> Result<f64> {
    check_pairing(kind, &data.target)?;
    let (n, d) = data.x.shape();
    if partition.len() != n {
        return Err(Error::dim("sample partition", n, partition.len()));
    }
    if experts.ncols() != partition.num_groups() {
        return Err(Error::dim(
            "expert columns",
            partition.num_groups(),
            experts.ncols(),
        ));
    }
    let y = data.target_matrix();
    let c = y.ncols();
    if experts.nrows() != d * c {
        return Err(Error::dim("expert length", d * c, experts.nrows()));
    }
    let mut total = 0.0;
    let mut reg = 0.0;
    let mut yrow = vec![0.0; c];
    let mut srow = vec![0.0; c];
    let mut grow = vec![0.0; c];
    for (q, group) in partition.groups().iter().enumerate() {
        let v = experts.column(q);
        reg += group.len() as f64 * v.norm_squared();
        for &i in group {
            for k in 0..c {
                yrow[k] = y[(i, k)];
                srow[k] = (0..d).map(|j| data.x[(i, j)] * v[k * d + j]).sum();
            }
            total += kind.sample(&yrow, &srow, &mut grow);
        }
    }
    Ok(total / n as f64 + 0.5 * lambda * reg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultitaskPenaltyParams {
    pub lambda_m: f64,
    pub lambda_b: f64,
    pub lambda_w: f64,
}

impl MultitaskPenaltyParams {
    pub fn validate(&self) -> Result<()> {
        for v in [self.lambda_m, self.lambda_b, self.lambda_w] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "multitask penalty weights must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn column_mean(w: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    w.column_mean()
}

/// Clustered multitask penalty in matrix form, with `Pi = I - 11^T/K`:
/// `lm/2 Tr(Wt (I-Pi) Wt^T) + lb/2 Tr(Wt Pi Wt^T) + lw/2 ||W - Wt||_F^2`.
pub fn multitask_penalty(
    w: &DMatrix<f64>,
    w_tilde: &DMatrix<f64>,
    params: &MultitaskPenaltyParams,
) -> Result<f64> {
    let k = w_tilde.ncols();
    if k < 1 {
        return Err(Error::InvalidInput("multitask penalty needs K >= 1".into()));
    }
    if w.shape() != w_tilde.shape() {
        return Err(Error::dim("multitask columns", w_tilde.ncols(), w.ncols()));
    }
    let centering = DMatrix::identity(k, k) - DMatrix::from_element(k, k, 1.0 / k as f64);
    let mean_part = DMatrix::from_element(k, k, 1.0 / k as f64);
    let tr = |m: &DMatrix<f64>| (w_tilde * m * w_tilde.transpose()).trace();
    Ok(0.5 * params.lambda_m * tr(&mean_part)
        + 0.5 * params.lambda_b * tr(&centering)
        + 0.5 * params.lambda_w * (w - w_tilde).norm_squared())
}

/// The three penalty terms computed from centroids and task groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultitaskPenaltyParts {
    pub mean: f64,
    pub between: f64,
    pub within: f64,
}

impl MultitaskPenaltyParts {
    pub fn total(&self) -> f64 {
        self.mean + self.between + self.within
    }
}

/// Barycenter/variance decomposition: `centroids` holds one column `v_q`
/// per group of `tasks`.
pub fn multitask_penalty_parts(
    w: &DMatrix<f64>,
    centroids: &DMatrix<f64>,
    tasks: &Partition,
    params: &MultitaskPenaltyParams,
) -> Result<MultitaskPenaltyParts> {
    let k = w.ncols();
    if tasks.len() != k {
        return Err(Error::dim("task partition", k, tasks.len()));
    }
    if centroids.ncols() != tasks.num_groups() {
        return Err(Error::dim(
            "centroid columns",
            tasks.num_groups(),
            centroids.ncols(),
        ));
    }
    let mut bar = nalgebra::DVector::zeros(w.nrows());
    for (q, g) in tasks.groups().iter().enumerate() {
        bar.axpy(g.len() as f64, &centroids.column(q), 1.0);
    }
    bar /= k as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for (q, g) in tasks.groups().iter().enumerate() {
        let v = centroids.column(q);
        between += g.len() as f64 * (v - &bar).norm_squared();
        for &t in g {
            within += (w.column(t) - v).norm_squared();
        }
    }
    Ok(MultitaskPenaltyParts {
        mean: 0.5 * params.lambda_m * k as f64 * bar.norm_squared(),
        between: 0.5 * params.lambda_b * between,
        within: 0.5 * params.lambda_w * within,
    })
}

/// Gradients of the multitask penalty in `W` and `Wt`.
pub fn multitask_penalty_grad(
    w: &DMatrix<f64>,
    w_tilde: &DMatrix<f64>,
    params: &MultitaskPenaltyParams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let diff = w - w_tilde;
    let mean = column_mean(w_tilde);
    let mut g_tilde = -&diff * params.lambda_w;
    for mut col in g_tilde.column_iter_mut() {
        col.axpy(params.lambda_m, &mean, 1.0);
    }
    for (t, mut col) in g_tilde.column_iter_mut().enumerate() {
        let centered = w_tilde.column(t) - &mean;
        col.axpy(params.lambda_b, &centered, 1.0);
    }
    (diff * params.lambda_w, g_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let x = DMatrix::from_row_slice(3, 2, &[1., 2., 0., 1., -1., 1.]);
        let w = DMatrix::from_column_slice(2, 1, &[0.5, -1.0]);
        let y = &x * &w;
        let ds = Dataset::regression(x, DVector::from_column_slice(y.as_slice())).unwrap();
        let (v, g) = loss_value_grad(LossKind::Squared, &ds, &w, 0.0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.amax(), 0.0);
    }

    #[test]
    fn squared_loss_hand_values() {
        let ds = Dataset::regression(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 0.0]))
            .unwrap();
        let (v, g) = loss_value_grad(LossKind::Squared, &ds, &DMatrix::zeros(2, 1), 0.0).unwrap();
        assert_relative_eq!(v, 0.25);
        assert_relative_eq!(g[(0, 0)], -0.5);
        assert_relative_eq!(g[(1, 0)], 0.0);
    }

    #[test]
    fn logistic_at_zero_margin_is_log2() {
        let ds = Dataset::regression(
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let (v, _) = loss_value_grad(LossKind::Logistic, &ds, &DMatrix::zeros(1, 1), 0.0).unwrap();
        assert_relative_eq!(v, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn logistic_is_stable_for_huge_margins() {
        let mut g = [0.0];
        let v = LossKind::Logistic.sample(&[0.0], &[1e4], &mut g);
        assert_relative_eq!(v, 1e4);
        assert_relative_eq!(g[0], 1.0);
        let v = LossKind::Logistic.sample(&[1.0], &[1e4], &mut g);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn mismatched_shapes_fail() {
        let ds = Dataset::regression(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(loss_value_grad(LossKind::Squared, &ds, &DMatrix::zeros(3, 1), 0.0).is_err());
        assert!(loss_value_grad(LossKind::MulticlassSquared, &ds, &DMatrix::zeros(2, 1), 0.0)
            .is_err());
    }

    fn direct_sample_objective(
        ds: &Dataset,
        experts: &DMatrix<f64>,
        labels: &[usize],
        lambda: f64,
    ) -> f64 {
        let y = ds.y().unwrap();
        let n = ds.n();
        let mut sizes = vec![0usize; experts.ncols()];
        let mut loss = 0.0;
        for i in 0..n {
            let q = labels[i];
            sizes[q] += 1;
            let pred: f64 = (0..ds.d()).map(|j| ds.x[(i, j)] * experts[(j, q)]).sum();
            loss += 0.5 * (y[i] - pred).powi(2);
        }
        let reg: f64 = (0..experts.ncols())
            .map(|q| sizes[q] as f64 * experts.column(q).norm_squared())
            .sum();
        loss / n as f64 + 0.5 * lambda * reg
    }

    #[test]
    fn sample_objective_matches_resummation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 9, 3);
            let y = DVector::from_fn(9, |_, _| rng.random_range(-2.0..2.0));
            let ds = Dataset::regression(x, y).unwrap();
            let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
            let p = Partition::from_labels(&labels);
            let experts = random_matrix(&mut rng, 3, 3);
            let got = sample_clustered_objective(LossKind::Squared, &ds, &experts, &p, 0.3)
                .unwrap();
            let want = direct_sample_objective(&ds, &experts, &p.labels(), 0.3);
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_group_reduces_to_plain_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 6, 2);
        let y = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let ds = Dataset::regression(x, y).unwrap();
        let w = random_matrix(&mut rng, 2, 1);
        let (plain, _) = loss_value_grad(LossKind::Squared, &ds, &w, 0.0).unwrap();
        let v = sample_clustered_objective(LossKind::Squared, &ds, &w, &Partition::single(6), 0.0)
            .unwrap();
        assert_relative_eq!(plain, v, epsilon = 1e-14);
    }

    #[test]
    fn sample_objective_zero_when_experts_fit() {
        let x = DMatrix::from_row_slice(4, 1, &[1., 2., 1., 2.]);
        let y = DVector::from_vec(vec![1., 2., -3., -6.]);
        let ds = Dataset::regression(x, y).unwrap();
        let p = Partition::new(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let experts = DMatrix::from_row_slice(1, 2, &[1., -3.]);
        let v = sample_clustered_objective(LossKind::Squared, &ds, &experts, &p, 0.0).unwrap();
        assert_eq!(v, 0.0);
        let bad = Partition::single(3);
        assert!(sample_clustered_objective(LossKind::Squared, &ds, &experts, &bad, 0.0).is_err());
    }

    #[test]
    fn penalty_with_equal_columns() {
        let v = [0.5, -1.0, 2.0];
        let wt = DMatrix::from_fn(3, 4, |i, _| v[i]);
        let params = MultitaskPenaltyParams {
            lambda_m: 0.7,
            lambda_b: 1.3,
            lambda_w: 2.0,
        };
        let p = Partition::single(4);
        let parts = multitask_penalty_parts(&wt, &wt.columns(0, 1).into_owned(), &p, &params)
            .unwrap();
        assert_eq!(parts.between, 0.0);
        assert_eq!(parts.within, 0.0);
        let norm2: f64 = v.iter().map(|a| a * a).sum();
        assert_relative_eq!(parts.mean, 0.35 * 4.0 * norm2, epsilon = 1e-12);
        assert_relative_eq!(
            multitask_penalty(&wt, &wt, &params).unwrap(),
            parts.total(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn unit_weights_give_half_frobenius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wt = random_matrix(&mut rng, 4, 5);
        let params = MultitaskPenaltyParams {
            lambda_m: 1.0,
            lambda_b: 1.0,
            lambda_w: 1.0,
        };
        let omega = multitask_penalty(&wt, &wt, &params).unwrap();
        assert_relative_eq!(omega, 0.5 * (&wt * wt.transpose()).trace(), epsilon = 1e-12);
    }

    #[test]
    fn matrix_form_matches_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..50 {
            let k = 2 + trial % 5;
            let q = 1 + trial % k.min(3);
            let labels: Vec<usize> = (0..k).map(|t| t % q).collect();
            let tasks = Partition::from_labels(&labels);
            let centroids = random_matrix(&mut rng, 3, tasks.num_groups());
            let mut wt = DMatrix::zeros(3, k);
            for (g, members) in tasks.groups().iter().enumerate() {
                for &t in members {
                    wt.set_column(t, &centroids.column(g));
                }
            }
            let w = random_matrix(&mut rng, 3, k);
            let params = MultitaskPenaltyParams {
                lambda_m: rng.random_range(0.0..2.0),
                lambda_b: rng.random_range(0.0..2.0),
                lambda_w: rng.random_range(0.0..2.0),
            };
            let matrix = multitask_penalty(&w, &wt, &params).unwrap();
            let parts = multitask_penalty_parts(&w, &centroids, &tasks, &params).unwrap();
            assert_relative_eq!(matrix, parts.total(), epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn penalty_invariant_to_task_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_matrix(&mut rng, 3, 4);
        let wt = random_matrix(&mut rng, 3, 4);
        let params = MultitaskPenaltyParams {
            lambda_m: 0.3,
            lambda_b: 0.9,
            lambda_w: 1.1,
        };
        let perm = [2, 0, 3, 1];
        let pw = DMatrix::from_fn(3, 4, |i, j| w[(i, perm[j])]);
        let pwt = DMatrix::from_fn(3, 4, |i, j| wt[(i, perm[j])]);
        assert_relative_eq!(
            multitask_penalty(&w, &wt, &params).unwrap(),
            multitask_penalty(&pw, &pwt, &params).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn objectives_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = random_matrix(&mut rng, 5, 3);
            let y = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let ds = Dataset::regression(x, y).unwrap();
            let w = random_matrix(&mut rng, 3, 1) * 5.0;
            for kind in [LossKind::Squared, LossKind::Logistic] {
                let (v, _) = loss_value_grad(kind, &ds, &w, 0.5).unwrap();
                assert!(v >= 0.0);
            }
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    fn check_fd(kind: LossKind, ds: &Dataset, w: &DMatrix<f64>, lambda: f64) {
        let (_, g) = loss_value_grad(kind, ds, w, lambda).unwrap();
        let h = 1e-5;
        for idx in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[idx] += h;
            wm[idx] -= h;
            let fp = loss_value_grad(kind, ds, &wp, lambda).unwrap().0;
            let fm = loss_value_grad(kind, ds, &wm, lambda).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!(rel_err(fd, g[idx]) <= 1e-5, "{kind:?} entry {idx}: fd {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let x = random_matrix(&mut rng, 7, 4);
            let y = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
            let reg = Dataset::regression(x.clone(), y.clone()).unwrap();
            let w = random_matrix(&mut rng, 4, 1);
            check_fd(LossKind::Squared, &reg, &w, 0.3);
            let signs = y.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let bin = Dataset::regression(x.clone(), signs).unwrap();
            check_fd(LossKind::Logistic, &bin, &w, 0.3);

            let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..3)).collect();
            let cls = Dataset::classification(x, &labels, 3).unwrap();
            let w3 = random_matrix(&mut rng, 4, 3);
            check_fd(LossKind::MulticlassSquared, &cls, &w3, 0.1);
            check_fd(LossKind::MulticlassLogistic, &cls, &w3, 0.1);
        }
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let params = MultitaskPenaltyParams {
            lambda_m: 0.7,
            lambda_b: 1.3,
            lambda_w: 0.4,
        };
        for _ in 0..20 {
            let w = random_matrix(&mut rng, 3, 4);
            let wt = random_matrix(&mut rng, 3, 4);
            let (gw, gt) = multitask_penalty_grad(&w, &wt, &params);
            let h = 1e-5;
            for idx in 0..w.len() {
                let mut a = w.clone();
                let mut b = w.clone();
                a[idx] += h;
                b[idx] -= h;
                let fd = (multitask_penalty(&a, &wt, &params).unwrap()
                    - multitask_penalty(&b, &wt, &params).unwrap())
                    / (2.0 * h);
                assert!(rel_err(fd, gw[idx]) <= 1e-5);
                let mut a = wt.clone();
                let mut b = wt.clone();
                a[idx] += h;
                b[idx] -= h;
                let fd = (multitask_penalty(&w, &a, &params).unwrap()
                    - multitask_penalty(&w, &b, &params).unwrap())
                    / (2.0 * h);
                assert!(rel_err(fd, gt[idx]) <= 1e-5);
            }
        }
    }
}
