//! Datasets, partitions and the clustered model types shared by every solver.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Disjoint nonempty groups covering `0..m`.
///
/// Stored canonically: members ascending within a group, groups ordered by
/// their smallest member. Two partitions of the same items therefore compare
/// equal iff they group the items identically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
    len: usize,
}

impl Partition {
    pub fn new(m: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; m];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidPartition("empty group".into()));
            }
            for &i in g {
                if i >= m {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} out of range for {m} items"
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} appears twice"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!(
                "index {missing} is not covered"
            )));
        }
        Ok(Self::canonical(m, groups))
    }

    fn canonical(len: usize, mut groups: Vec<Vec<usize>>) -> Self {
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_unstable_by_key(|g| g[0]);
        Self { groups, len }
    }

    /// Builds a partition from one label per item. Labels are arbitrary ids.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        Self::canonical(labels.len(), by_label.into_values().collect())
    }

    /// Groups the rows of `w` that are exactly equal.
    pub fn from_values(w: &DMatrix<f64>) -> Self {
        let mut seen: Vec<usize> = Vec::new();
        let mut labels = Vec::with_capacity(w.nrows());
        for i in 0..w.nrows() {
            let pos = seen.iter().position(|&r| w.row(r) == w.row(i));
            labels.push(match pos {
                Some(p) => p,
                None => {
                    seen.push(i);
                    seen.len() - 1
                }
            });
        }
        Self::from_labels(&labels)
    }

    pub fn single(m: usize) -> Self {
        if m == 0 {
            return Self {
                groups: Vec::new(),
                len: 0,
            };
        }
        Self {
            groups: vec![(0..m).collect()],
            len: m,
        }
    }

    pub fn singletons(m: usize) -> Self {
        Self {
            groups: (0..m).map(|i| vec![i]).collect(),
            len: m,
        }
    }

    /// Number of items `m`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Group index of each item, in canonical group order.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.len];
        for (q, g) in self.groups.iter().enumerate() {
            for &i in g {
                labels[i] = q;
            }
        }
        labels
    }
}

impl Serialize for Partition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.groups.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Partition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let groups = Vec::<Vec<usize>>::deserialize(d)?;
        let m = groups.iter().map(Vec::len).sum();
        Partition::new(m, groups).map_err(serde::de::Error::custom)
    }
}

/// Assignment matrix `Z` in label form: item `i` sits in column `labels[i]`.
/// Columns may be empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    labels: Vec<usize>,
    columns: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, columns: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= columns) {
            return Err(Error::InvalidPartition(format!(
                "label {bad} out of range for {columns} columns"
            )));
        }
        Ok(Self { labels, columns })
    }

    /// Reads a {0,1} matrix with exactly one 1 per row.
    pub fn from_matrix(z: &DMatrix<f64>) -> Result<Self> {
        let mut labels = Vec::with_capacity(z.nrows());
        for (i, row) in z.row_iter().enumerate() {
            let mut hit = None;
            for (q, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    if hit.is_some() {
                        return Err(Error::InvalidPartition(format!("row {i} has several ones")));
                    }
                    hit = Some(q);
                } else if v != 0.0 {
                    return Err(Error::InvalidPartition(format!("row {i} is not binary")));
                }
            }
            labels.push(hit.ok_or_else(|| Error::InvalidPartition(format!("row {i} has no one")))?);
        }
        Ok(Self {
            labels,
            columns: z.ncols(),
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn column_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.columns];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.labels.len(), self.columns);
        for (i, &l) in self.labels.iter().enumerate() {
            z[(i, l)] = 1.0;
        }
        z
    }

    pub fn to_partition(&self) -> Partition {
        Partition::from_labels(&self.labels)
    }
}

/// Column `q` of `Z` holds group `q` of the partition.
pub fn partition_to_assignment(p: &Partition) -> Assignment {
    Assignment {
        labels: p.labels(),
        columns: p.num_groups(),
    }
}

pub fn assignment_to_partition(z: &Assignment) -> Partition {
    z.to_partition()
}

/// Normalized equivalence matrix `M = Z (Z^T Z)^{-1} Z^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceMatrix {
    partition: Partition,
    matrix: DMatrix<f64>,
}

impl EquivalenceMatrix {
    pub fn from_partition(partition: Partition) -> Self {
        let m = partition.len();
        let mut matrix = DMatrix::zeros(m, m);
        for g in partition.groups() {
            // Z^T Z is diagonal with the group sizes; invert entrywise.
            let w = 1.0 / g.len() as f64;
            for &i in g {
                for &j in g {
                    matrix[(i, j)] = w;
                }
            }
        }
        Self { partition, matrix }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// `Tr(F^T M F) = sum_q ||sum_{i in G_q} f_i||^2 / s_q` for rows `f_i`
    /// of `factor`, without touching the dense matrix.
    pub fn quadratic_trace(&self, factor: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        let mut acc = vec![0.0; factor.ncols()];
        for g in self.partition.groups() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for &i in g {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += factor[(i, c)];
                }
            }
            total += acc.iter().map(|a| a * a).sum::<f64>() / g.len() as f64;
        }
        total
    }
}

/// Empty columns of `Z` are dropped, so the group count may shrink.
pub fn assignment_to_equivalence(z: &Assignment) -> EquivalenceMatrix {
    EquivalenceMatrix::from_partition(z.to_partition())
}

/// Labels attached to a design matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Real responses (regression) or binary labels in {0,1} / {-1,+1}.
    Vector(DVector<f64>),
    /// One-hot class indicators, one row per sample.
    Classes(DMatrix<f64>),
    /// Several real-valued tasks sharing the design matrix.
    Tasks(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub target: Target,
}

impl Dataset {
    pub fn regression(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Self::checked(x, Target::Vector(y))
    }

    pub fn classification(x: DMatrix<f64>, labels: &[usize], classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!(
                "class label {bad} out of range for {classes} classes"
            )));
        }
        let mut y = DMatrix::zeros(labels.len(), classes);
        for (i, &l) in labels.iter().enumerate() {
            y[(i, l)] = 1.0;
        }
        Self::checked(x, Target::Classes(y))
    }

    pub fn one_hot(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::checked(x, Target::Classes(y))
    }

    pub fn multitask(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::checked(x, Target::Tasks(y))
    }

    fn checked(x: DMatrix<f64>, target: Target) -> Result<Self> {
        let (n, d) = x.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "design matrix must be nonempty, got {n}x{d}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("design matrix has NaN or Inf".into()));
        }
        let rows = match &target {
            Target::Vector(y) => y.len(),
            Target::Classes(y) | Target::Tasks(y) => y.nrows(),
        };
        if rows != n {
            return Err(Error::dim("target rows", n, rows));
        }
        match &target {
            Target::Vector(y) if y.iter().any(|v| !v.is_finite()) => {
                return Err(Error::InvalidInput("targets have NaN or Inf".into()));
            }
            Target::Tasks(y) if y.iter().any(|v| !v.is_finite()) => {
                return Err(Error::InvalidInput("targets have NaN or Inf".into()));
            }
            Target::Classes(y) => {
                for (i, row) in y.row_iter().enumerate() {
                    let ok = row.iter().all(|&v| v == 0.0 || v == 1.0) && row.sum() == 1.0;
                    if !ok {
                        return Err(Error::InvalidInput(format!("row {i} is not one-hot")));
                    }
                }
            }
            _ => {}
        }
        Ok(Self { x, target })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Targets as an `n x c` matrix (`c = 1` for vector targets).
    pub fn target_matrix(&self) -> DMatrix<f64> {
        match &self.target {
            Target::Vector(y) => DMatrix::from_column_slice(y.len(), 1, y.as_slice()),
            Target::Classes(y) | Target::Tasks(y) => y.clone(),
        }
    }

    pub fn y(&self) -> Option<&DVector<f64>> {
        match &self.target {
            Target::Vector(y) => Some(y),
            _ => None,
        }
    }

    /// Rows `rows` of the dataset, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows);
        let target = match &self.target {
            Target::Vector(y) => Target::Vector(y.select_rows(rows)),
            Target::Classes(y) => Target::Classes(y.select_rows(rows)),
            Target::Tasks(y) => Target::Tasks(y.select_rows(rows)),
        };
        Dataset { x, target }
    }

    pub fn from_csv_path(path: impl AsRef<Path>, spec: &TargetSpec) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, spec)
    }

    /// Header row required. Target columns are picked by name; every other
    /// column must be numeric and becomes a feature.
    pub fn from_csv_reader<R: Read>(reader: R, spec: &TargetSpec) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let target_names = spec.columns();
        let mut target_idx = Vec::with_capacity(target_names.len());
        for name in &target_names {
            let idx = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::InvalidInput(format!("no column named {name:?}")))?;
            target_idx.push(idx);
        }
        let feature_idx: Vec<usize> = (0..headers.len())
            .filter(|i| !target_idx.contains(i))
            .collect();
        if feature_idx.is_empty() {
            return Err(Error::InvalidInput("no feature columns".into()));
        }

        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut raw_labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                let field = rec.get(i).unwrap_or("").trim();
                field.parse::<f64>().map_err(|_| {
                    Error::InvalidInput(format!(
                        "row {}: column {:?} is not numeric ({field:?})",
                        line + 1,
                        headers[i]
                    ))
                })
            };
            for &i in &feature_idx {
                features.push(parse(i)?);
            }
            match spec {
                TargetSpec::Classification(_) => {
                    raw_labels.push(rec.get(target_idx[0]).unwrap_or("").trim().to_owned())
                }
                _ => {
                    for &i in &target_idx {
                        targets.push(parse(i)?);
                    }
                }
            }
        }
        let n = features.len() / feature_idx.len();
        let x = DMatrix::from_row_slice(n, feature_idx.len(), &features);
        match spec {
            TargetSpec::Regression(_) => Self::regression(x, DVector::from_vec(targets)),
            TargetSpec::Tasks(cols) => {
                Self::multitask(x, DMatrix::from_row_slice(n, cols.len(), &targets))
            }
            TargetSpec::Classification(_) => {
                let mut classes: Vec<&String> = raw_labels.iter().collect();
                classes.sort();
                classes.dedup();
                let labels: Vec<usize> = raw_labels
                    .iter()
                    .map(|l| classes.binary_search(&l).expect("label present"))
                    .collect();
                let k = classes.len();
                Self::classification(x, &labels, k)
            }
        }
    }

    /// Writes features as `x0..x{d-1}` followed by target columns.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let y = self.target_matrix();
        let mut header: Vec<String> = (0..self.d()).map(|j| format!("x{j}")).collect();
        if y.ncols() == 1 {
            header.push("y".into());
        } else {
            header.extend((0..y.ncols()).map(|k| format!("y{k}")));
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let row: Vec<String> = self
                .x
                .row(i)
                .iter()
                .chain(y.row(i).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How to pick target columns from a CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    Regression(String),
    Classification(String),
    Tasks(Vec<String>),
}

impl TargetSpec {
    fn columns(&self) -> Vec<String> {
        match self {
            TargetSpec::Regression(c) | TargetSpec::Classification(c) => vec![c.clone()],
            TargetSpec::Tasks(cs) => cs.clone(),
        }
    }
}

/// A linear predictor whose weights are tied by a partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ClusteredLinearModel {
    /// `w = Z v`: feature `j` in group `q` has weight `values[q]`.
    Feature {
        partition: Partition,
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intercept: Option<f64>,
    },
    /// `W = Z V` with one row of `centroids` (length K) per feature group.
    FeatureMulticlass {
        partition: Partition,
        centroids: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intercept: Option<Vec<f64>>,
    },
    /// One expert per group of samples. Each expert is a flattened `d x K`
    /// predictor in column-major order (`K = 1` for regression).
    Sample {
        partition: Partition,
        experts: Vec<Vec<f64>>,
    },
}

impl ClusteredLinearModel {
    pub fn feature(partition: Partition, values: Vec<f64>) -> Self {
        ClusteredLinearModel::Feature {
            partition,
            values,
            intercept: None,
        }
    }

    pub fn partition(&self) -> &Partition {
        match self {
            ClusteredLinearModel::Feature { partition, .. }
            | ClusteredLinearModel::FeatureMulticlass { partition, .. }
            | ClusteredLinearModel::Sample { partition, .. } => partition,
        }
    }

    /// Expanded weights: `d x 1` (feature), `d x K` (multiclass), or `p x Q`
    /// with one expert per column (sample).
    pub fn weights(&self) -> DMatrix<f64> {
        match self {
            ClusteredLinearModel::Feature {
                partition, values, ..
            } => {
                let mut w = DMatrix::zeros(partition.len(), 1);
                for (g, v) in partition.groups().iter().zip(values) {
                    for &j in g {
                        w[(j, 0)] = *v;
                    }
                }
                w
            }
            ClusteredLinearModel::FeatureMulticlass {
                partition,
                centroids,
                ..
            } => {
                let k = centroids.first().map_or(0, Vec::len);
                let mut w = DMatrix::zeros(partition.len(), k);
                for (g, c) in partition.groups().iter().zip(centroids) {
                    for &j in g {
                        for (col, v) in c.iter().enumerate() {
                            w[(j, col)] = *v;
                        }
                    }
                }
                w
            }
            ClusteredLinearModel::Sample { experts, .. } => {
                let p = experts.first().map_or(0, Vec::len);
                DMatrix::from_fn(p, experts.len(), |i, q| experts[q][i])
            }
        }
    }

    /// Number of distinct weight values (feature variant) or experts.
    pub fn distinct_count(&self) -> usize {
        match self {
            ClusteredLinearModel::Feature { values, .. } => {
                let mut v: Vec<f64> = values.clone();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v.len()
            }
            ClusteredLinearModel::FeatureMulticlass { centroids, .. } => {
                let mut c = centroids.clone();
                c.sort_by(|a, b| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                c.dedup();
                c.len()
            }
            ClusteredLinearModel::Sample { experts, .. } => experts.len(),
        }
    }
}

/// A k-sparse vector whose nonzeros take at most Q distinct values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseClusteredModel {
    pub weights: Vec<f64>,
    pub support: Vec<usize>,
    /// Groups of support indices sharing a value, ordered by smallest index.
    pub groups: Vec<Vec<usize>>,
    /// One value per group.
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
}

impl SparseClusteredModel {
    /// Groups the nonzero entries of `w` by exact value.
    pub fn from_weights(w: &[f64]) -> Self {
        let mut by_value: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut support = Vec::new();
        for (i, &v) in w.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            support.push(i);
            match by_value.iter_mut().find(|(u, _)| *u == v) {
                Some((_, g)) => g.push(i),
                None => by_value.push((v, vec![i])),
            }
        }
        let (values, groups) = by_value.into_iter().unzip();
        Self {
            weights: w.to_vec(),
            support,
            groups,
            values,
            intercept: None,
        }
    }

    pub fn is_feasible(&self, k: usize, q: usize) -> bool {
        self.support.len() <= k && self.values.len() <= q
    }
}

/// Shared hyperparameters; not every solver reads every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub q: usize,
    pub k: Option<usize>,
    pub lambda: f64,
    pub lambda_m: f64,
    pub lambda_b: f64,
    pub lambda_w: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub fit_intercept: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            q: 2,
            k: None,
            lambda: 0.0,
            lambda_m: 0.0,
            lambda_b: 0.0,
            lambda_w: 0.0,
            epsilon: 1e-8,
            max_iter: 500,
            seed: 0,
            fit_intercept: false,
        }
    }
}

impl Hyperparams {
    pub fn with_q(q: usize) -> Self {
        Self {
            q,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(Error::InvalidInput("Q must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("lambda_m", self.lambda_m),
            ("lambda_b", self.lambda_b),
            ("lambda_w", self.lambda_w),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if let Some(k) = self.k {
            if k < self.q {
                return Err(Error::InvalidInput(format!(
                    "sparsity k = {k} is smaller than Q = {}",
                    self.q
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn assignment_of_two_groups() {
        let p = Partition::new(3, vec![vec![0, 1], vec![2]]).unwrap();
        let z = partition_to_assignment(&p).matrix();
        assert_eq!(z, DMatrix::from_row_slice(3, 2, &[1., 0., 1., 0., 0., 1.]));
    }

    #[test]
    fn single_group_is_column_of_ones() {
        let z = partition_to_assignment(&Partition::single(3)).matrix();
        assert_eq!(z, DMatrix::from_element(3, 1, 1.0));
    }

    #[test]
    fn invalid_partitions_are_rejected() {
        assert!(Partition::new(3, vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(Partition::new(3, vec![vec![0, 1]]).is_err());
        assert!(Partition::new(3, vec![vec![0, 1, 2], vec![]]).is_err());
        assert!(Partition::new(2, vec![vec![0, 5]]).is_err());
    }

    #[test]
    fn equivalence_of_two_groups() {
        let z = Assignment::new(vec![0, 0, 1], 2).unwrap();
        let m = assignment_to_equivalence(&z);
        let expected = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0., 0.5, 0.5, 0., 0., 0., 1.]);
        assert_eq!(m.matrix(), &expected);
    }

    #[test]
    fn equivalence_of_one_group() {
        let m = EquivalenceMatrix::from_partition(Partition::single(2));
        assert_eq!(m.matrix(), &DMatrix::from_element(2, 2, 0.5));
    }

    #[test]
    fn empty_columns_are_dropped() {
        let z = Assignment::new(vec![0, 2, 2], 3).unwrap();
        let m = assignment_to_equivalence(&z);
        assert_eq!(m.partition().num_groups(), 2);
        assert_relative_eq!(m.matrix().trace(), 2.0);
    }

    #[test]
    fn partition_json_is_array_of_arrays() {
        let p = Partition::new(4, vec![vec![3, 1], vec![0], vec![2]]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[[0],[1,3],[2]]");
        let back: Partition = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Partition>("[[0,1],[1]]").is_err());
    }

    #[test]
    fn csv_loading_splits_target_and_features() {
        let data = "a,y,b\n1,2,3\n4,5,6\n";
        let ds = Dataset::from_csv_reader(data.as_bytes(), &TargetSpec::Regression("y".into()))
            .unwrap();
        assert_eq!(ds.x, DMatrix::from_row_slice(2, 2, &[1., 3., 4., 6.]));
        assert_eq!(ds.y().unwrap().as_slice(), &[2., 5.]);

        let cls = "f,label\n0.5,cat\n1.5,dog\n2.5,cat\n";
        let ds = Dataset::from_csv_reader(
            cls.as_bytes(),
            &TargetSpec::Classification("label".into()),
        )
        .unwrap();
        assert_eq!(
            ds.target_matrix(),
            DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 1., 0.])
        );

        let bad = "a,y\n1,x\n";
        assert!(
            Dataset::from_csv_reader(bad.as_bytes(), &TargetSpec::Regression("y".into())).is_err()
        );
    }

    #[test]
    fn dataset_rejects_nan_and_bad_one_hot() {
        let x = DMatrix::from_element(2, 1, f64::NAN);
        assert!(Dataset::regression(x, DVector::zeros(2)).is_err());
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = DMatrix::from_row_slice(2, 2, &[1., 1., 0., 1.]);
        assert!(Dataset::one_hot(x, y).is_err());
    }

    #[test]
    fn hyperparams_reject_k_below_q() {
        let h = Hyperparams {
            q: 3,
            k: Some(2),
            ..Hyperparams::default()
        };
        assert!(h.validate().is_err());
    }

    #[test]
    fn sparse_model_groups_by_value() {
        let m = SparseClusteredModel::from_weights(&[0.0, 1.5, -2.0, 1.5, 0.0]);
        assert_eq!(m.support, vec![1, 2, 3]);
        assert_eq!(m.groups, vec![vec![1, 3], vec![2]]);
        assert!(m.is_feasible(3, 2));
        assert!(!m.is_feasible(2, 2));
    }

    fn labels_strategy() -> impl Strategy<Value = Vec<usize>> {
        (1usize..=20, 1usize..=5)
            .prop_flat_map(|(m, q)| proptest::collection::vec(0..q, m))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn assignment_round_trip(labels in labels_strategy()) {
            let p = Partition::from_labels(&labels);
            let back = assignment_to_partition(&partition_to_assignment(&p));
            prop_assert_eq!(back, p);
        }

        #[test]
        fn equivalence_is_orthogonal_projector(labels in labels_strategy()) {
            let p = Partition::from_labels(&labels);
            let groups = p.num_groups();
            let m = EquivalenceMatrix::from_partition(p);
            let mm = m.matrix();
            prop_assert!((mm * mm - mm).amax() < 1e-12);
            prop_assert!((mm - mm.transpose()).amax() == 0.0);
            prop_assert!((mm.trace() - groups as f64).abs() < 1e-12);
            let eig = nalgebra::SymmetricEigen::new(mm.clone()).eigenvalues;
            for v in eig.iter() {
                prop_assert!(v.abs() < 1e-9 || (v - 1.0).abs() < 1e-9);
            }
        }
    }
}
