//! Numerical checks of the union-of-subspaces analysis: partition
//! enumeration, contraction constants, the error bound of projected
//! gradient with unit steps, and subspace counts.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthonormal_columns;
use crate::model::{Dataset, Partition};
use crate::pgd::{pgd_fit, PGDConfig};

/// Largest item count accepted by exhaustive enumeration.
pub const MAX_ENUMERATION: usize = 12;

/// Stirling number of the second kind by the usual recurrence.
pub fn stirling2(d: usize, q: usize) -> u128 {
    let mut row = vec![0u128; q + 1];
    row[0] = 1;
    for n in 1..=d {
        for k in (1..=q.min(n)).rev() {
            row[k] = k as u128 * row[k] + row[k - 1];
        }
        row[0] = 0;
    }
    row[q]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnumerationMode {
    Exactly,
    AtMost,
}

/// Restricted growth strings in lexicographic order.
pub struct PartitionIter {
    labels: Vec<usize>,
    q: usize,
    mode: EnumerationMode,
    done: bool,
}

impl PartitionIter {
    fn advance(&mut self) -> bool {
        let d = self.labels.len();
        let mut prefix_max = vec![0usize; d];
        for i in 1..d {
            prefix_max[i] = prefix_max[i - 1].max(self.labels[i - 1]);
        }
        for i in (1..d).rev() {
            if self.labels[i] <= prefix_max[i] && self.labels[i] + 1 < self.q {
                self.labels[i] += 1;
                for l in &mut self.labels[i + 1..] {
                    *l = 0;
                }
                return true;
            }
        }
        false
    }
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        loop {
            if self.done {
                return None;
            }
            let current = self.labels.clone();
            self.done = !self.advance();
            let used = current.iter().max().map_or(0, |m| m + 1);
            if self.mode == EnumerationMode::AtMost || used == self.q {
                return Some(Partition::from_labels(&current));
            }
        }
    }
}

/// Every partition of `0..d` into exactly (or at most) `q` groups, each
/// once.
pub fn enumerate_partitions(d: usize, q: usize, mode: EnumerationMode) -> Result<PartitionIter> {
    if d > MAX_ENUMERATION {
        return Err(Error::TooLarge {
            what: "items to enumerate",
            value: d,
            limit: MAX_ENUMERATION,
        });
    }
    Ok(PartitionIter {
        labels: vec![0; d],
        q,
        mode,
        done: d == 0 || q == 0 || (mode == EnumerationMode::Exactly && q > d),
    })
}

/// Orthonormal basis of a subspace `U_G` or of a sum of such subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    pub basis: DMatrix<f64>,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

fn indicators(p: &Partition) -> Vec<DVector<f64>> {
    p.groups()
        .iter()
        .map(|g| {
            let mut v = DVector::zeros(p.len());
            let s = 1.0 / (g.len() as f64).sqrt();
            for &i in g {
                v[i] = s;
            }
            v
        })
        .collect()
}

/// Basis of `U_{G1} + ... + U_{Gp}` from normalized group indicators.
pub fn subspace_basis(partitions: &[&Partition]) -> Result<SubspaceBasis> {
    let Some(first) = partitions.first() else {
        return Err(Error::InvalidInput("at least one partition is needed".into()));
    };
    if partitions.iter().any(|p| p.len() != first.len()) {
        return Err(Error::InvalidInput("partitions cover different item counts".into()));
    }
    let cols: Vec<DVector<f64>> = partitions.iter().flat_map(|p| indicators(p)).collect();
    Ok(SubspaceBasis {
        basis: orthonormal_columns(&DMatrix::from_columns(&cols), 1e-10),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub rho: f64,
    pub nu: f64,
    /// Partitions attaining `rho` and `nu`.
    pub rho_argmax: Vec<Partition>,
    pub nu_argmax: Vec<Partition>,
    /// Number of partitions into exactly Q groups.
    pub partitions: u128,
    pub triples_checked: u64,
    /// False when triples were sampled; `rho` is then a lower estimate.
    pub exact: bool,
}

/// Largest eigenvalue magnitude of `I - B^T G B` and largest eigenvalue of
/// `B^T G B`.
fn restricted(g: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let h = b.tr_mul(&(g * b));
    let eig = SymmetricEigen::new(h).eigenvalues;
    let dev = eig.iter().fold(0.0f64, |m, v| m.max((1.0 - v).abs()));
    let top = eig.iter().fold(0.0f64, |m, v| m.max(*v));
    (dev, top)
}

/// `rho = 2 max_{E3} ||I - Pi^T X^T X Pi / n||` and
/// `nu = (2/n) max_{E2} ||X Pi||` by exhaustive enumeration (`d <= 10`).
pub fn contraction_constants(x: &DMatrix<f64>, q: usize) -> Result<ContractionEstimate> {
    let d = x.ncols();
    if d > 10 {
        return Err(Error::TooLarge {
            what: "features for exhaustive contraction constants",
            value: d,
            limit: 10,
        });
    }
    let parts: Vec<Partition> = enumerate_partitions(d, q, EnumerationMode::Exactly)?.collect();
    let m = parts.len();
    let triples = (0..m).flat_map(move |a| (a..m).flat_map(move |b| (b..m).map(move |c| [a, b, c])));
    estimate(x, q, &parts, triples, true)
}

/// As [`contraction_constants`] over `samples` random triples (and the pairs
/// they contain); any `d <= 12`.
pub fn contraction_constants_sampled(x: &DMatrix<f64>, q: usize, samples: usize, seed: u64) -> Result<ContractionEstimate> {
    let d = x.ncols();
    let parts: Vec<Partition> = enumerate_partitions(d, q, EnumerationMode::Exactly)?.collect();
    if parts.is_empty() {
        return Err(Error::InvalidInput(format!("no partition of {d} items into {q} groups")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = (0..parts.len()).collect();
    let triples: Vec<[usize; 3]> = (0..samples)
        .map(|_| {
            let mut t = [0; 3];
            for v in &mut t {
                *v = *idx.choose(&mut rng).expect("nonempty");
            }
            t.sort_unstable();
            t
        })
        .collect();
    estimate(x, q, &parts, triples.into_iter(), false)
}

fn estimate(
    x: &DMatrix<f64>,
    q: usize,
    parts: &[Partition],
    triples: impl Iterator<Item = [usize; 3]>,
    exact: bool,
) -> Result<ContractionEstimate> {
    let (n, d) = x.shape();
    if parts.is_empty() {
        return Err(Error::InvalidInput(format!("no partition of {d} items into {q} groups")));
    }
    let g = x.tr_mul(x) / n as f64;
    let mut rho = (0.0, [0usize; 3]);
    let mut nu = (0.0, [0usize; 2]);
    let mut checked = 0u64;
    for t in triples {
        checked += 1;
        let b = subspace_basis(&[&parts[t[0]], &parts[t[1]], &parts[t[2]]])?;
        let (dev, top) = restricted(&g, &b.basis);
        if dev > rho.0 {
            rho = (dev, t);
        }
        // Pairs are the triples whose last two entries coincide.
        if t[1] == t[2] && top > nu.0 {
            nu = (top, [t[0], t[1]]);
        }
    }
    Ok(ContractionEstimate {
        // ||X Pi||^2 = n * lambda_max(Pi^T G Pi)
        rho: 2.0 * rho.0,
        nu: 2.0 / n as f64 * (n as f64 * nu.0).sqrt(),
        rho_argmax: rho.1.iter().map(|&i| parts[i].clone()).collect(),
        nu_argmax: nu.1.iter().map(|&i| parts[i].clone()).collect(),
        partitions: stirling2(d, q),
        triples_checked: checked,
        exact,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub rho: f64,
    pub nu: f64,
    pub noise_norm: f64,
    pub w_star_norm: f64,
    /// `||w* - w_t||` for t = 0..=T.
    pub errors: Vec<f64>,
    pub bounds: Vec<f64>,
    pub violations: usize,
    /// Smallest `bound - error` over the run.
    pub min_margin: f64,
    /// `rho >= 1`: the bound does not contract and is not checked.
    pub vacuous: bool,
}

/// Runs unit-step projected gradient from zero on `y = X w* + eta` and
/// compares every iterate with `rho^t ||w*|| + (1 - rho^t)/(1 - rho) nu ||eta||`.
pub fn verify_convergence_bound(
    x: &DMatrix<f64>,
    w_star: &DVector<f64>,
    sigma: f64,
    q: usize,
    iterations: usize,
    seed: u64,
    constants: Option<&ContractionEstimate>,
) -> Result<BoundReport> {
    let owned;
    let c = match constants {
        Some(c) => c,
        None => {
            owned = contraction_constants(x, q)?;
            &owned
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = DVector::from_fn(x.nrows(), |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    let y = x * w_star + &eta;
    let data = Dataset::regression(x.clone(), y)?;
    let (_, report) = pgd_fit(&data, &PGDConfig::theory(q, iterations))?;
    let iterates = report.iterates.unwrap_or_default();
    let (rho, nu) = (c.rho, c.nu);
    let ws = w_star.norm();
    let en = eta.norm();
    let vacuous = rho >= 1.0;
    let mut errors = Vec::with_capacity(iterates.len());
    let mut bounds = Vec::with_capacity(iterates.len());
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for (t, w) in iterates.iter().enumerate() {
        let err = (w_star - DVector::from_column_slice(w)).norm();
        let rt = rho.powi(t as i32);
        let geom = if (1.0 - rho).abs() < 1e-15 { t as f64 } else { (1.0 - rt) / (1.0 - rho) };
        let bound = rt * ws + geom * nu * en;
        let margin = bound - err;
        if !vacuous {
            min_margin = min_margin.min(margin);
            if margin < -1e-12 * (1.0 + ws) {
                violations += 1;
            }
        }
        errors.push(err);
        bounds.push(bound);
    }
    Ok(BoundReport {
        rho,
        nu,
        noise_norm: en,
        w_star_norm: ws,
        errors,
        bounds,
        violations,
        min_margin,
        vacuous,
    })
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCount {
    /// `C(d, k) S(k, Q)`.
    pub formula: u128,
    /// Support-by-partition enumeration, when `d <= 12`.
    pub enumerated: Option<u128>,
    /// `d^k k^Q Q^(k-Q)`.
    pub bound: f64,
}

/// Number of maximal subspaces of k-sparse Q-clustered vectors and its
/// closed-form upper bound.
pub fn sparse_subspace_count(d: usize, k: usize, q: usize) -> Result<SparseCount> {
    if q > k || k > d {
        return Err(Error::InvalidInput(format!("need Q <= k <= d, got d={d} k={k} Q={q}")));
    }
    let enumerated = if d <= MAX_ENUMERATION {
        let mut total = 0u128;
        for mask in 0u32..(1u32 << d) {
            if mask.count_ones() as usize == k {
                total += enumerate_partitions(k, q, EnumerationMode::Exactly)?.count() as u128;
            }
        }
        Some(total)
    } else {
        None
    };
    Ok(SparseCount {
        formula: binomial(d, k) * stirling2(k, q),
        enumerated,
        bound: (d as f64).powi(k as i32) * (k as f64).powi(q as i32) * (q as f64).powi((k - q) as i32),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StirlingBounds {
    pub lower: f64,
    /// `(Q^2 + Q + 2) Q^(d-Q-1) / 2 - 1`; only valid for `d > Q`.
    pub refined_lower: Option<f64>,
    pub upper: f64,
}

/// Bounds on `S(d, Q)` for `d >= Q >= 1`.
pub fn stirling_bounds(d: usize, q: usize) -> StirlingBounds {
    let qf = q as f64;
    let spread = qf.powi(d as i32 - q as i32);
    StirlingBounds {
        lower: spread,
        refined_lower: (d > q).then(|| 0.5 * (qf * qf + qf + 2.0) * qf.powi(d as i32 - q as i32 - 1) - 1.0),
        upper: 0.5 * (std::f64::consts::E * d as f64 / qf).powi(q as i32) * spread,
    }
}

/// A random Q-clustered vector with well separated values, used by the
/// bound checks.
pub fn random_clustered_vector(d: usize, q: usize, rng: &mut impl Rng) -> DVector<f64> {
    let values: Vec<f64> = (0..q).map(|k| -1.0 + 2.0 * (k as f64 + 0.5) / q as f64).collect();
    let mut labels: Vec<usize> = (0..d).map(|i| i % q).collect();
    for i in (1..d).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    DVector::from_fn(d, |i, _| values[labels[i]])
}
