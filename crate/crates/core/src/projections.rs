//! Euclidean projections onto clustered matrices, k-sparse vectors and
//! k-sparse vectors with at most Q distinct nonzero values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_1d_exact, kmeans_pp_warm, KMeansConfig, KMeansResult};
use crate::error::{Error, Result};
use crate::model::Partition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    Exact1d,
    #[serde(rename = "kmeanspp")]
    KMeansPP,
}

/// Rows of `W` replaced by their cluster centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredProjection {
    pub partition: Partition,
    /// `Q' x p`, one centroid per group in canonical order.
    pub centroids: DMatrix<f64>,
    pub projected: DMatrix<f64>,
    pub distance2: f64,
}

impl ClusteredProjection {
    fn from_kmeans(res: KMeansResult, m: usize, p: usize) -> Self {
        let q = res.centroids.len();
        let centroids = DMatrix::from_fn(q, p, |g, j| res.centroids[g][j]);
        let mut projected = DMatrix::zeros(m, p);
        for (g, members) in res.partition.groups().iter().enumerate() {
            for &i in members {
                projected.row_mut(i).copy_from(&centroids.row(g));
            }
        }
        Self {
            partition: res.partition,
            centroids,
            projected,
            distance2: res.cost,
        }
    }
}

fn rows_flat(w: &DMatrix<f64>) -> Vec<f64> {
    let mut flat = Vec::with_capacity(w.len());
    for r in w.row_iter() {
        flat.extend(r.iter());
    }
    flat
}

/// Projects the rows of `w` (items) onto matrices with at most `q` distinct
/// rows.
pub fn project_clustered(
    w: &DMatrix<f64>,
    q: usize,
    mode: ProjectionMode,
    seed: u64,
) -> Result<ClusteredProjection> {
    project_clustered_warm(w, q, mode, &KMeansConfig::seeded(seed), None)
}

/// As [`project_clustered`], with explicit k-means settings and optional
/// warm-start centroids (ignored by the exact mode).
pub fn project_clustered_warm(
    w: &DMatrix<f64>,
    q: usize,
    mode: ProjectionMode,
    cfg: &KMeansConfig,
    warm: Option<&[Vec<f64>]>,
) -> Result<ClusteredProjection> {
    let (m, p) = w.shape();
    if m == 0 || p == 0 {
        return Err(Error::InvalidInput("cannot project an empty matrix".into()));
    }
    let res = match mode {
        ProjectionMode::Exact1d => {
            if p != 1 {
                return Err(Error::UnsupportedMode(format!(
                    "exact 1-D projection needs a single column, got {p}"
                )));
            }
            kmeans_1d_exact(w.as_slice(), q)?
        }
        ProjectionMode::KMeansPP => kmeans_pp_warm(&rows_flat(w), p, q, cfg, warm)?,
    };
    Ok(ClusteredProjection::from_kmeans(res, m, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub w: Vec<f64>,
    /// Selected indices, ascending.
    pub support: Vec<usize>,
    /// Partition of the support into groups sharing one value.
    pub groups: Vec<Vec<usize>>,
    /// One barycenter per group.
    pub barycenters: Vec<f64>,
    pub distance2: f64,
}

impl ProjectionResult {
    fn from_groups(x: &[f64], mut groups: Vec<Vec<usize>>) -> Self {
        let mut w = vec![0.0; x.len()];
        for g in groups.iter_mut() {
            g.sort_unstable();
        }
        groups.retain(|g| !g.is_empty());
        groups.sort_by_key(|g| g[0]);
        let mut barycenters = Vec::with_capacity(groups.len());
        for g in &groups {
            let mu = g.iter().map(|&i| x[i]).sum::<f64>() / g.len() as f64;
            for &i in g {
                w[i] = mu;
            }
            barycenters.push(mu);
        }
        let mut support: Vec<usize> = groups.iter().flatten().copied().collect();
        support.sort_unstable();
        let distance2 = x.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum();
        Self {
            w,
            support,
            groups,
            barycenters,
            distance2,
        }
    }
}

/// Keeps the `k` largest-magnitude entries. Ties at the threshold keep the
/// lower index.
pub fn project_ksparse(x: &[f64], k: usize) -> ProjectionResult {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    let groups = order.into_iter().take(k).map(|i| vec![i]).collect();
    ProjectionResult::from_groups(x, groups)
}

/// Tables of the negative-side dynamic program over the `k` smallest values.
///
/// `f[j][q]` is the best `sum_p s_p mu_p^2` using exactly the `j` smallest
/// values split into exactly `q` contiguous groups, each with a negative
/// barycenter; `-inf` when no such split exists. `start[j][q]` is the
/// (1-based) first position of the last group and `mu[j][q]` its barycenter.
#[derive(Debug, Clone, PartialEq)]
pub struct NegDPTables {
    pub f: Vec<Vec<f64>>,
    pub start: Vec<Vec<usize>>,
    pub mu: Vec<Vec<f64>>,
    /// Number of candidate evaluations performed.
    pub evaluations: u64,
}

impl NegDPTables {
    /// Groups (as 1-based sorted positions) of the optimal cell `(j, q)`.
    pub fn backtrack(&self, mut j: usize, mut q: usize) -> Vec<std::ops::RangeInclusive<usize>> {
        let mut out = Vec::with_capacity(q);
        while j > 0 && q > 0 {
            let i = self.start[j][q];
            out.push(i..=j);
            j = i - 1;
            q -= 1;
        }
        out.reverse();
        out
    }
}

/// Runs the negative-side recurrence on values sorted ascending.
pub fn negative_side_dp(sorted: &[f64], k: usize, q: usize) -> NegDPTables {
    let k = k.min(sorted.len());
    let mut f = vec![vec![f64::NEG_INFINITY; q + 1]; k + 1];
    let mut start = vec![vec![0usize; q + 1]; k + 1];
    let mut mu_t = vec![vec![0.0; q + 1]; k + 1];
    f[0].iter_mut().for_each(|v| *v = 0.0);
    let mut evaluations = 0u64;
    for j in 1..=k {
        // Running barycenter of sorted[i-1..j] as i decreases.
        let mut mu = 0.0;
        for i in (1..=j).rev() {
            let len = (j - i + 1) as f64;
            mu = (sorted[i - 1] + (len - 1.0) * mu) / len;
            if mu >= 0.0 {
                continue;
            }
            let gain = len * mu * mu;
            for g in 1..=q.min(i) {
                evaluations += 1;
                let prev = f[i - 1][g - 1];
                if prev == f64::NEG_INFINITY {
                    continue;
                }
                let cand = prev + gain;
                // Scanning i downward, ">=" keeps the smallest start on ties.
                if cand >= f[j][g] {
                    f[j][g] = cand;
                    start[j][g] = i;
                    mu_t[j][g] = mu;
                }
            }
        }
    }
    NegDPTables {
        f,
        start,
        mu: mu_t,
        evaluations,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionStats {
    pub dp_evaluations: u64,
    pub grid_evaluations: u64,
}

/// Best of `f[j][0..=q]` for every `(j, q)`, with the group count achieving it.
fn at_most(t: &NegDPTables) -> Vec<Vec<(f64, usize)>> {
    t.f.iter()
        .map(|row| {
            let mut best = (f64::NEG_INFINITY, 0);
            row.iter()
                .enumerate()
                .map(|(g, &v)| {
                    if v > best.0 {
                        best = (v, g);
                    }
                    best
                })
                .collect()
        })
        .collect()
}

/// Projection onto vectors with at most `k` nonzeros taking at most `q`
/// distinct values.
pub fn project_sparse_clustered(x: &[f64], k: usize, q: usize) -> ProjectionResult {
    project_sparse_clustered_with_stats(x, k, q).0
}

pub fn project_sparse_clustered_with_stats(
    x: &[f64],
    k: usize,
    q: usize,
) -> (ProjectionResult, ProjectionStats) {
    let d = x.len();
    let k = k.min(d);
    if k == 0 || q == 0 {
        return (ProjectionResult::from_groups(x, Vec::new()), ProjectionStats::default());
    }
    let q = q.min(k);

    let mut asc: Vec<usize> = (0..d).collect();
    asc.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let neg_vals: Vec<f64> = asc.iter().map(|&i| x[i]).collect();
    let mut desc: Vec<usize> = (0..d).collect();
    desc.sort_by(|&a, &b| (-x[a]).total_cmp(&-x[b]).then(a.cmp(&b)));
    let pos_vals: Vec<f64> = desc.iter().map(|&i| -x[i]).collect();

    let (neg, pos) = build_tables(&neg_vals, &pos_vals, k, q);
    let neg_best = at_most(&neg);
    let pos_best = at_most(&pos);

    // (objective, j, negative groups, positive groups); k' = 0 gives w = 0.
    let mut best = (0.0, 0usize, 0usize, 0usize, 0usize);
    let mut grid = 0u64;
    for kp in 1..=k {
        let qp = kp.min(q);
        for qn in 0..=qp {
            for j in 0..=kp {
                grid += 1;
                let (fneg, gn) = neg_best[j][qn];
                let (fpos, gp) = pos_best[kp - j][qp - qn];
                let v = fneg + fpos;
                if v > best.0 {
                    best = (v, kp, j, gn, gp);
                }
            }
        }
    }

    let (_, kp, j, gn, gp) = best;
    let mut groups = Vec::new();
    if kp > 0 {
        for r in neg.backtrack(j, gn) {
            groups.push(r.map(|p| asc[p - 1]).collect::<Vec<_>>());
        }
        for r in pos.backtrack(kp - j, gp) {
            groups.push(r.map(|p| desc[p - 1]).collect::<Vec<_>>());
        }
    }
    let stats = ProjectionStats {
        dp_evaluations: neg.evaluations + pos.evaluations,
        grid_evaluations: grid,
    };
    (ProjectionResult::from_groups(x, groups), stats)
}

#[cfg(feature = "parallel")]
fn build_tables(neg: &[f64], pos: &[f64], k: usize, q: usize) -> (NegDPTables, NegDPTables) {
    rayon::join(|| negative_side_dp(neg, k, q), || negative_side_dp(pos, k, q))
}

#[cfg(not(feature = "parallel"))]
fn build_tables(neg: &[f64], pos: &[f64], k: usize, q: usize) -> (NegDPTables, NegDPTables) {
    (negative_side_dp(neg, k, q), negative_side_dp(pos, k, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Set partitions of `items` into exactly `q` groups.
    fn partitions_exact(items: &[usize], q: usize) -> Vec<Vec<Vec<usize>>> {
        fn rec(items: &[usize], i: usize, q: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
            if i == items.len() {
                if cur.len() == q {
                    out.push(cur.clone());
                }
                return;
            }
            for g in 0..cur.len() {
                cur[g].push(items[i]);
                rec(items, i + 1, q, cur, out);
                cur[g].pop();
            }
            if cur.len() < q {
                cur.push(vec![items[i]]);
                rec(items, i + 1, q, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(items, 0, q, &mut Vec::new(), &mut out);
        out
    }

    fn subsets(d: usize, size: usize) -> Vec<Vec<usize>> {
        (0u32..1 << d)
            .filter(|m| m.count_ones() as usize == size)
            .map(|m| (0..d).filter(|&i| m >> i & 1 == 1).collect())
            .collect()
    }

    fn brute_force_distance(x: &[f64], k: usize, q: usize) -> f64 {
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        let mut best = 0.0f64;
        for s in 1..=k.min(x.len()) {
            for sup in subsets(x.len(), s) {
                for g in 1..=q.min(s) {
                    for p in partitions_exact(&sup, g) {
                        let val: f64 = p
                            .iter()
                            .map(|grp| {
                                let sum: f64 = grp.iter().map(|&i| x[i]).sum();
                                sum * sum / grp.len() as f64
                            })
                            .sum();
                        best = best.max(val);
                    }
                }
            }
        }
        norm2 - best
    }

    /// Best negative-barycenter objective over any `j` points in exactly `q` groups.
    fn brute_force_negative(x: &[f64], j: usize, q: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for sup in subsets(x.len(), j) {
            for p in partitions_exact(&sup, q) {
                let mut val = 0.0;
                let mut ok = true;
                for grp in &p {
                    let mu = grp.iter().map(|&i| x[i]).sum::<f64>() / grp.len() as f64;
                    ok &= mu < 0.0;
                    val += grp.len() as f64 * mu * mu;
                }
                if ok {
                    best = best.max(val);
                }
            }
        }
        best
    }

    /// Same, over at most `j` points in at most `q` groups.
    fn brute_force_negative_budget(x: &[f64], j: usize, q: usize) -> f64 {
        let mut best = 0.0f64;
        for jj in 1..=j {
            for g in 1..=q.min(jj) {
                best = best.max(brute_force_negative(x, jj, g));
            }
        }
        best
    }

    #[test]
    fn clustered_trivial_cases() {
        let w = DMatrix::from_column_slice(3, 1, &[2.0, 2.0, 2.0]);
        let r = project_clustered(&w, 1, ProjectionMode::Exact1d, 0).unwrap();
        assert_eq!(r.projected, w);
        let w = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let r = project_clustered(&w, 1, ProjectionMode::Exact1d, 0).unwrap();
        assert_eq!(r.projected.as_slice(), &[1.0, 1.0, 1.0]);
        assert_relative_eq!(r.distance2, 2.0);
    }

    #[test]
    fn exact_mode_rejects_matrices() {
        let w = DMatrix::zeros(3, 2);
        assert!(matches!(
            project_clustered(&w, 1, ProjectionMode::Exact1d, 0),
            Err(Error::UnsupportedMode(_))
        ));
    }

    #[test]
    fn clustered_projection_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let w = DMatrix::from_fn(10, 2, |_, _| rng.random_range(-3.0..3.0));
            let r = project_clustered(&w, 3, ProjectionMode::KMeansPP, 1).unwrap();
            let again = project_clustered(&r.projected, 3, ProjectionMode::KMeansPP, 9).unwrap();
            assert_relative_eq!(again.projected, r.projected, epsilon = 1e-12);
            assert!(again.distance2 < 1e-20);
            let v = DMatrix::from_fn(8, 1, |_, _| rng.random_range(-3.0..3.0));
            let r = project_clustered(&v, 3, ProjectionMode::Exact1d, 0).unwrap();
            let again = project_clustered(&r.projected, 3, ProjectionMode::Exact1d, 0).unwrap();
            assert_relative_eq!(again.projected, r.projected, epsilon = 1e-12);
        }
    }

    #[test]
    fn ksparse_cases() {
        assert_eq!(project_ksparse(&[3.0, -1.0, 0.5], 1).w, vec![3.0, 0.0, 0.0]);
        let x = [3.0, -1.0, 0.5];
        assert_eq!(project_ksparse(&x, 3).w, x.to_vec());
        assert_eq!(project_ksparse(&[1.0, -2.0, 2.0, 1.0], 2).support, vec![1, 2]);
        assert_eq!(project_ksparse(&[1.0, -1.0, 1.0, 0.5], 2).support, vec![0, 1]);
    }

    #[test]
    fn ksparse_tie_rule_matches_brute_force() {
        // Among all optimal supports, the kept one is lexicographically smallest.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let d = rng.random_range(1..=7);
            let k = rng.random_range(0..=d);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2i32..=2) as f64).collect();
            let r = project_ksparse(&x, k);
            let mut best: Option<(f64, Vec<usize>)> = None;
            for sup in subsets(d, k) {
                let kept: f64 = sup.iter().map(|&i| x[i] * x[i]).sum();
                if best.as_ref().is_none_or(|(b, _)| kept > *b) {
                    best = Some((kept, sup));
                }
            }
            assert_eq!(r.support, best.unwrap().1);
        }
    }

    #[test]
    fn negative_dp_hand_values() {
        let t = negative_side_dp(&[-2.0, -1.0, 3.0], 3, 2);
        assert_relative_eq!(t.f[2][1], 4.5);
        assert_relative_eq!(t.f[1][1], 4.0);
        assert_eq!(t.f[3][1], f64::NEG_INFINITY);
        assert_eq!(t.f[0][1], 0.0);
        assert_eq!(t.f[1][0], f64::NEG_INFINITY);
        assert_relative_eq!(t.f[2][2], 5.0);
    }

    #[test]
    fn negative_dp_all_positive_is_infeasible() {
        let t = negative_side_dp(&[0.5, 1.0, 2.0], 3, 3);
        for j in 1..=3 {
            for q in 1..=3 {
                assert_eq!(t.f[j][q], f64::NEG_INFINITY);
            }
        }
    }

    #[test]
    fn negative_dp_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let d = rng.random_range(1..=7);
            let q = rng.random_range(1..=3);
            let mut x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..2.0)).collect();
            x.sort_by(f64::total_cmp);
            let t = negative_side_dp(&x, d, q);
            for j in 1..=d {
                // Budgeted form: the j smallest values in contiguous groups
                // reach the best over any <= j points in <= q groups.
                for g in 1..=q {
                    let dp = (0..=j)
                        .flat_map(|jj| t.f[jj][..=g].iter().copied())
                        .fold(f64::NEG_INFINITY, f64::max);
                    let bf = brute_force_negative_budget(&x, j, g);
                    assert!((dp - bf).abs() < 1e-9, "j={j} q={g} dp={dp} bf={bf} x={x:?}");
                }
                // Cells the DP fills are always achievable.
                for g in 1..=q.min(j) {
                    if t.f[j][g] > f64::NEG_INFINITY {
                        assert!(t.f[j][g] <= brute_force_negative(&x, j, g) + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn exact_cell_can_miss_non_contiguous_groups() {
        // Four points in two negative groups exist ({-2.5, 1}, {-1, 0}), but
        // no contiguous split of the four smallest values works. The
        // projection never needs that cell: dropping points is better.
        let x = [-2.5, -1.0, 0.0, 1.0];
        let t = negative_side_dp(&x, 4, 2);
        assert_eq!(t.f[4][2], f64::NEG_INFINITY);
        assert!(brute_force_negative(&x, 4, 2) > 0.0);
    }

    #[test]
    fn sparse_clustered_examples() {
        let r = project_sparse_clustered(&[3.0, -3.0, 0.1, 0.0], 2, 2);
        assert_relative_eq!(r.w.as_slice(), [3.0, -3.0, 0.0, 0.0].as_slice());
        assert_relative_eq!(r.distance2, 0.01, epsilon = 1e-12);

        let r = project_sparse_clustered(&[1.0, 1.2, -5.0, 0.4, 0.1], 3, 2);
        assert_relative_eq!(r.w.as_slice(), [1.1, 1.1, -5.0, 0.0, 0.0].as_slice(), epsilon = 1e-12);
        assert_relative_eq!(r.distance2, 0.19, epsilon = 1e-12);
        assert_eq!(r.groups, vec![vec![0, 1], vec![2]]);

        let x = [0.0, 2.0, 0.0, -1.0, 2.0];
        let r = project_sparse_clustered(&x, 3, 2);
        assert_eq!(r.w, x.to_vec());
        assert_eq!(r.distance2, 0.0);
    }

    #[test]
    fn sparse_clustered_degenerate_inputs() {
        assert!(project_sparse_clustered(&[], 2, 1).w.is_empty());
        let r = project_sparse_clustered(&[1.0, 2.0], 0, 1);
        assert_eq!(r.w, vec![0.0, 0.0]);
        // Q > k never errors.
        let r = project_sparse_clustered(&[1.0, -2.0, 3.0], 2, 5);
        assert_eq!(r.w, vec![0.0, -2.0, 3.0]);
    }

    #[test]
    fn sparse_clustered_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..2000 {
            let d = rng.random_range(1..=8);
            let k = rng.random_range(1..=d.min(5));
            let q = rng.random_range(1..=k.min(3));
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let r = project_sparse_clustered(&x, k, q);
            let bf = brute_force_distance(&x, k, q);
            assert!((r.distance2 - bf).abs() < 1e-9, "x={x:?} k={k} q={q} {} vs {bf}", r.distance2);
            assert!(r.support.len() <= k);
            assert!(r.groups.len() <= q);
        }
    }

    #[test]
    fn sparse_clustered_with_q_equal_k_is_ksparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let d = rng.random_range(1..=10);
            let k = rng.random_range(1..=d);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = project_sparse_clustered(&x, k, k);
            let b = project_ksparse(&x, k);
            assert_relative_eq!(a.w.as_slice(), b.w.as_slice(), epsilon = 1e-12);
        }
    }

    #[test]
    fn dp_work_grows_quadratically_in_k() {
        let x: Vec<f64> = (0..400).map(|i| ((i * 37 % 101) as f64) - 50.0).collect();
        let evals: Vec<u64> = [50, 100, 200]
            .iter()
            .map(|&k| project_sparse_clustered_with_stats(&x, k, 4).1.dp_evaluations)
            .collect();
        for w in evals.windows(2) {
            let ratio = w[1] as f64 / w[0] as f64;
            assert!(ratio < 4.5, "ratio {ratio}");
        }
    }

    proptest! {
        #[test]
        fn sign_symmetry(x in proptest::collection::vec(-5.0f64..5.0, 1..12), k in 1usize..6, q in 1usize..4) {
            let a = project_sparse_clustered(&x, k, q);
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let b = project_sparse_clustered(&neg, k, q);
            prop_assert!((a.distance2 - b.distance2).abs() < 1e-9);
            // Supports may differ only on exact ties; random reals have none.
            for (u, v) in a.w.iter().zip(&b.w) {
                prop_assert!((u + v).abs() < 1e-9);
            }
        }

        #[test]
        fn sparse_clustered_output_is_feasible_and_idempotent(
            x in proptest::collection::vec(-5.0f64..5.0, 1..15), k in 1usize..8, q in 1usize..4,
        ) {
            let r = project_sparse_clustered(&x, k, q);
            let nz = r.w.iter().filter(|v| **v != 0.0).count();
            prop_assert!(nz <= k);
            let mut vals: Vec<f64> = r.w.iter().copied().filter(|v| *v != 0.0).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            prop_assert!(vals.len() <= q);
            let again = project_sparse_clustered(&r.w, k, q);
            prop_assert!(again.distance2 < 1e-18);
            let direct: f64 = x.iter().zip(&r.w).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!((direct - r.distance2).abs() < 1e-12);
        }
    }
}
