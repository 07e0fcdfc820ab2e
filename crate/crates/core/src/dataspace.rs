//! Labeled datasets, the synthetic class-blob benchmark, stratified splits,
//! class dropout, per-class subsampling and the plain-text dataset format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{AuditError, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    dim: usize,
    class_count: usize,
    tag: String,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        features: Vec<T>,
        dim: usize,
        labels: Vec<usize>,
        class_count: usize,
        tag: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(AuditError::invalid("dataset feature dimension must be >= 1"));
        }
        if labels.is_empty() {
            return Err(AuditError::invalid("dataset must contain at least one row"));
        }
        if features.len() != labels.len() * dim {
            return Err(AuditError::DimensionMismatch {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if let Some((row, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= class_count) {
            return Err(AuditError::invalid(format!(
                "row {row}: label {y} not below class count {class_count}"
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(AuditError::invalid(format!(
                "row {}: non-finite feature",
                pos / dim
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            class_count,
            tag: tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Row counts per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Row indices grouped by label, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_count];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize], tag: impl Into<String>) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(AuditError::invalid(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, self.dim, labels, self.class_count, tag)
    }

    /// Rows whose label is `class`, or `None` when the class is absent.
    pub fn class_subset(&self, class: usize) -> Option<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == class).collect();
        if idx.is_empty() {
            return None;
        }
        self.select(&idx, format!("{}/class{class}", self.tag)).ok()
    }

    pub fn map_scalar<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            features: self
                .features
                .iter()
                .map(|v| U::lit(v.as_f64()))
                .collect(),
            labels: self.labels.clone(),
            dim: self.dim,
            class_count: self.class_count,
            tag: self.tag.clone(),
        }
    }
}

/// Parameters of the class-blob benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub class_count: usize,
    pub feature_dim: usize,
    pub per_class_count: usize,
    pub mean_radius: f64,
    pub spread_min: f64,
    pub spread_max: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_count: 8,
            feature_dim: 16,
            per_class_count: 500,
            mean_radius: 0.0,
            spread_min: 0.3,
            spread_max: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(AuditError::invalid("synthetic config needs at least 2 classes"));
        }
        if self.feature_dim == 0 || self.per_class_count == 0 {
            return Err(AuditError::invalid(
                "synthetic config needs feature_dim >= 1 and per_class_count >= 1",
            ));
        }
        let reals = [self.mean_radius, self.spread_min, self.spread_max];
        if reals.iter().any(|v| !v.is_finite()) {
            return Err(AuditError::invalid("synthetic config has non-finite values"));
        }
        if self.mean_radius < 0.0 || self.spread_min < 0.0 || self.spread_min > self.spread_max {
            return Err(AuditError::invalid(
                "synthetic config needs radius >= 0 and 0 <= spread_min <= spread_max",
            ));
        }
        Ok(())
    }
}

/// Per-class Gaussian blobs with means on a sphere and heterogeneous spreads.
///
/// Rows are emitted class by class. Each class mean is a uniformly random
/// direction scaled to `mean_radius`; each class gets its own isotropic noise
/// level drawn uniformly from `[spread_min, spread_max]`.
pub fn generate_synthetic<T: Scalar>(cfg: &SynthConfig) -> Result<LabeledDataset<T>> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let (c, d, m) = (cfg.class_count, cfg.feature_dim, cfg.per_class_count);
    let mut features = Vec::with_capacity(c * m * d);
    let mut labels = Vec::with_capacity(c * m);

    for class in 0..c {
        let mean = loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm * cfg.mean_radius).collect::<Vec<_>>();
            }
        };
        let spread = cfg.spread_min + (cfg.spread_max - cfg.spread_min) * rng.random::<f64>();
        for _ in 0..m {
            for &mu in &mean {
                let noise: f64 = rng.sample(StandardNormal);
                features.push(T::lit(mu + spread * noise));
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(features, d, labels, c, format!("synth-seed{}", cfg.seed))
}

/// Stratified, disjoint partition of `data` into `fractions.len()` parts.
///
/// Within each class the rows are shuffled and cut at the rounded cumulative
/// fractions, so every part's per-class count is within one of
/// `fraction * class_total`. Each part is shuffled before being returned.
pub fn split<T: Scalar>(
    data: &LabeledDataset<T>,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<LabeledDataset<T>>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(AuditError::invalid("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(AuditError::invalid(format!(
            "split fractions sum to {total}, which exceeds 1"
        )));
    }

    let mut rng = rng_from_seed(seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); fractions.len()];
    for mut group in data.indices_by_class() {
        group.shuffle(&mut rng);
        let n = group.len() as f64;
        let mut cumulative = 0.0;
        let mut start = 0usize;
        for (j, f) in fractions.iter().enumerate() {
            cumulative += f;
            let end = ((cumulative.min(1.0) * n).round() as usize).min(group.len());
            parts[j].extend_from_slice(&group[start..end.max(start)]);
            start = end.max(start);
        }
    }
    parts
        .into_iter()
        .enumerate()
        .map(|(j, mut idx)| {
            if idx.is_empty() {
                return Err(AuditError::invalid(format!("split part {j} is empty")));
            }
            idx.shuffle(&mut rng);
            data.select(&idx, format!("{}/split{j}", data.tag()))
        })
        .collect()
}

/// Set of labels removed from the attacker's public data.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassDropSpec {
    dropped: BTreeSet<usize>,
}

impl ClassDropSpec {
    pub fn new(dropped: impl IntoIterator<Item = usize>, class_count: usize) -> Result<Self> {
        let dropped: BTreeSet<usize> = dropped.into_iter().collect();
        if let Some(&bad) = dropped.iter().find(|&&y| y >= class_count) {
            return Err(AuditError::invalid(format!(
                "dropped class {bad} not below class count {class_count}"
            )));
        }
        if dropped.len() >= class_count {
            return Err(AuditError::invalid("cannot drop every class"));
        }
        Ok(Self { dropped })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.dropped.contains(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.dropped.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty()
    }

    pub fn len(&self) -> usize {
        self.dropped.len()
    }
}

/// Keeps exactly the rows whose label is not dropped. Labels keep their
/// original indices.
pub fn drop_classes<T: Scalar>(
    data: &LabeledDataset<T>,
    spec: &ClassDropSpec,
) -> Result<LabeledDataset<T>> {
    if spec.is_empty() {
        return Ok(data.clone());
    }
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| !spec.contains(data.label(i)))
        .collect();
    if keep.is_empty() {
        return Err(AuditError::invalid(
            "class dropout removed every row of the dataset",
        ));
    }
    data.select(&keep, data.tag().to_string())
}

/// At most `k` uniformly chosen rows per class; smaller classes are kept
/// whole. Retained rows keep their original relative order, so `k` at or
/// above the largest class count returns the input unchanged.
pub fn subsample_per_class<T: Scalar>(
    data: &LabeledDataset<T>,
    k: usize,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    if k == 0 {
        return Err(AuditError::invalid("per-class sample count must be >= 1"));
    }
    let mut keep = Vec::new();
    for (class, mut group) in data.indices_by_class().into_iter().enumerate() {
        if group.len() > k {
            let mut rng = rng_from_seed(derive_seed(seed, class as u64));
            group.shuffle(&mut rng);
            group.truncate(k);
        }
        keep.extend(group);
    }
    keep.sort_unstable();
    data.select(&keep, data.tag().to_string())
}

/// Serializes to the text format: header `n d c`, then one row per line with
/// `d` features followed by the integer label.
pub fn dataset_to_string<T: Scalar>(data: &LabeledDataset<T>) -> String {
    let mut out = String::with_capacity(data.len() * data.dim() * 20);
    let _ = writeln!(out, "{} {} {}", data.len(), data.dim(), data.class_count());
    for i in 0..data.len() {
        for v in data.row(i) {
            // Shortest representation that parses back to the same f64.
            let _ = write!(out, "{} ", v.as_f64());
        }
        let _ = writeln!(out, "{}", data.label(i));
    }
    out
}

pub fn dataset_from_str<T: Scalar>(text: &str, tag: &str) -> Result<LabeledDataset<T>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(AuditError::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let head: Vec<usize> = header
        .split(' ')
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| AuditError::Parse {
            line: 1,
            msg: format!("malformed header {header:?}: {e}"),
        })?;
    let [n, d, c] = head[..] else {
        return Err(AuditError::Parse {
            line: 1,
            msg: format!("header must be `n d c`, got {header:?}"),
        });
    };
    if n == 0 || d == 0 {
        return Err(AuditError::Parse {
            line: 1,
            msg: "dataset has no rows or no features".into(),
        });
    }

    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let line_no = row + 2;
        let line = lines.next().ok_or(AuditError::Parse {
            line: line_no,
            msg: format!("expected {n} rows, found {row}"),
        })?;
        let tokens: Vec<&str> = line.split(' ').collect();
        if tokens.len() != d + 1 {
            return Err(AuditError::Parse {
                line: line_no,
                msg: format!("row {row}: expected {} fields, got {}", d + 1, tokens.len()),
            });
        }
        for tok in &tokens[..d] {
            let v: f64 = tok.parse().map_err(|_| AuditError::Parse {
                line: line_no,
                msg: format!("row {row}: bad feature {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(AuditError::Parse {
                    line: line_no,
                    msg: format!("row {row}: non-finite feature"),
                });
            }
            features.push(T::lit(v));
        }
        let y: usize = tokens[d].parse().map_err(|_| AuditError::Parse {
            line: line_no,
            msg: format!("row {row}: bad label {:?}", tokens[d]),
        })?;
        if y >= c {
            return Err(AuditError::Parse {
                line: line_no,
                msg: format!("row {row}: label {y} >= class count {c}"),
            });
        }
        labels.push(y);
    }
    if lines.any(|l| !l.is_empty()) {
        return Err(AuditError::Parse {
            line: n + 2,
            msg: "trailing content after the declared rows".into(),
        });
    }
    LabeledDataset::new(features, d, labels, c, tag)
}

pub fn write_dataset<T: Scalar>(data: &LabeledDataset<T>, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_string(data)).map_err(|e| AuditError::io(path, e))
}

pub fn read_dataset<T: Scalar>(path: &Path) -> Result<LabeledDataset<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| AuditError::io(path, e))?;
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset_from_str(&text, &tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(c: usize, per: usize, seed: u64) -> LabeledDataset<f64> {
        generate_synthetic(&SynthConfig {
            class_count: c,
            feature_dim: 3,
            per_class_count: per,
            mean_radius: 2.0,
            spread_min: 0.5,
            spread_max: 1.0,
            seed,
        })
        .unwrap()
    }

    fn sorted_rows(d: &LabeledDataset<f64>) -> Vec<(Vec<u64>, usize)> {
        let mut rows: Vec<_> = (0..d.len())
            .map(|i| (d.row(i).iter().map(|v| v.to_bits()).collect(), d.label(i)))
            .collect();
        rows.sort();
        rows
    }

    #[test]
    fn zero_noise_points_lie_on_unit_circle() {
        let cfg = SynthConfig {
            class_count: 2,
            feature_dim: 2,
            per_class_count: 1,
            mean_radius: 1.0,
            spread_min: 0.0,
            spread_max: 0.0,
            seed: 7,
        };
        let d: LabeledDataset<f64> = generate_synthetic(&cfg).unwrap();
        assert_eq!(d.len(), 2);
        for i in 0..2 {
            let r: f64 = d.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 1.0).abs() < 1e-15, "radius {r}");
        }
        let again: LabeledDataset<f64> = generate_synthetic(&cfg).unwrap();
        assert_eq!(dataset_to_string(&d), dataset_to_string(&again));
    }

    #[test]
    fn rejects_degenerate_configs() {
        let mut cfg = SynthConfig::default();
        cfg.class_count = 1;
        assert!(generate_synthetic::<f64>(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.mean_radius = f64::NAN;
        assert!(generate_synthetic::<f64>(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.spread_min = 2.0;
        cfg.spread_max = 1.0;
        assert!(generate_synthetic::<f64>(&cfg).is_err());
    }

    #[test]
    fn identity_split_is_permutation() {
        let d = blobs(3, 20, 1);
        let parts = split(&d, &[1.0], 5).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(sorted_rows(&parts[0]), sorted_rows(&d));
    }

    #[test]
    fn half_split_partitions_rows() {
        let d = blobs(2, 50, 2);
        let parts = split(&d, &[0.5, 0.5], 9).unwrap();
        assert_eq!(parts[0].len(), 50);
        assert_eq!(parts[1].len(), 50);
        let mut union = sorted_rows(&parts[0]);
        union.extend(sorted_rows(&parts[1]));
        union.sort();
        assert_eq!(union, sorted_rows(&d));
    }

    #[test]
    fn split_rejects_overfull_fractions() {
        let d = blobs(2, 10, 2);
        assert!(split(&d, &[0.7, 0.4], 0).is_err());
        assert!(split(&d, &[0.0, 0.4], 0).is_err());
    }

    #[test]
    fn drop_classes_removes_labels_only() {
        let d = blobs(10, 7, 3);
        let same = drop_classes(&d, &ClassDropSpec::none()).unwrap();
        assert_eq!(same, d);
        let spec = ClassDropSpec::new([0], 10).unwrap();
        let out = drop_classes(&d, &spec).unwrap();
        let counts = out.class_counts();
        assert_eq!(counts[0], 0);
        assert!(counts[1..].iter().all(|&c| c == 7));
        assert_eq!(out.class_count(), 10);
    }

    #[test]
    fn cannot_drop_everything() {
        assert!(ClassDropSpec::new(0..4, 4).is_err());
        assert!(ClassDropSpec::new([5], 4).is_err());
    }

    #[test]
    fn subsample_counts() {
        let d = blobs(8, 500, 4);
        assert_eq!(subsample_per_class(&d, 10, 1).unwrap().len(), 80);
        let one = subsample_per_class(&d, 1, 1).unwrap();
        assert!(one.class_counts().iter().all(|&c| c == 1));
        assert_eq!(subsample_per_class(&d, 500, 1).unwrap(), d);
        assert!(subsample_per_class(&d, 0, 1).is_err());
    }

    #[test]
    fn parses_hand_written_fixture() {
        let text = "2 3 4\n0.5 -1 2.25 3\n1e-3 0 7 0\n";
        let d: LabeledDataset<f64> = dataset_from_str(text, "fx").unwrap();
        assert_eq!(d.features(), &[0.5, -1.0, 2.25, 0.001, 0.0, 7.0]);
        assert_eq!(d.labels(), &[3, 0]);
        assert_eq!(d.class_count(), 4);
    }

    #[test]
    fn parse_errors_name_the_row() {
        let bad_label = "2 1 2\n0.5 1\n0.25 2\n";
        match dataset_from_str::<f64>(bad_label, "x") {
            Err(AuditError::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("row 1"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(dataset_from_str::<f64>("1 1 2\nNaN 0\n", "x").is_err());
        assert!(dataset_from_str::<f64>("1 1\n0 0\n", "x").is_err());
        assert!(dataset_from_str::<f64>("0 0 2\n", "x").is_err());
        assert!(dataset_from_str::<f64>("", "x").is_err());
    }
}
