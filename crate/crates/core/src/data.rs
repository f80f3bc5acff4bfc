//! Synthetic data, non-i.i.d. partitioning and the shared global dataset.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng::RngStream;

/// Labelled feature matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("data.d_in", "feature dimension must be >= 1"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::config(
                "data.classes",
                format!("label {bad} out of range for {classes} classes"),
            ));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::non_finite(format!("feature row {}", i / dim)));
        }
        Ok(Dataset {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn empty(dim: usize, classes: usize) -> Self {
        Dataset {
            features: Vec::new(),
            labels: Vec::new(),
            dim,
            classes,
        }
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

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            dim: self.dim,
            classes: self.classes,
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset {
            features,
            labels,
            dim: self.dim,
            classes: self.classes.max(other.classes),
        })
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Rescale every feature column to zero mean and unit variance.
    /// Constant columns are only centred.
    pub fn standardize(&mut self) {
        if self.is_empty() {
            return;
        }
        let n = self.len() as f64;
        for j in 0..self.dim {
            let mean = (0..self.len()).map(|i| self.row(i)[j]).sum::<f64>() / n;
            let var = (0..self.len()).map(|i| (self.row(i)[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.len() {
                let x = &mut self.features[i * self.dim + j];
                *x = (*x - mean) / sd;
            }
        }
    }

    /// Split off a uniformly random `fraction` of the rows. Returns
    /// `(held_out, rest)`.
    pub fn split_off(&self, fraction: f64, stream: &RngStream) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream.rng());
        let k = ((fraction * self.len() as f64).round() as usize).min(self.len());
        (self.subset(&idx[..k]), self.subset(&idx[k..]))
    }
}

/// Gaussian mixture with one unit-covariance component per class. Class
/// means lie on a sphere of radius `sep`; labels are balanced.
pub fn gen_synthetic(n: usize, d_in: usize, classes: usize, sep: f64, stream: &RngStream) -> Result<Dataset> {
    if classes == 0 {
        return Err(Error::config("data.classes", "must be >= 1"));
    }
    if n < classes {
        return Err(Error::config(
            "data.n_samples",
            format!("{n} samples cannot cover {classes} classes"),
        ));
    }
    if !(sep.is_finite() && sep > 0.0) {
        return Err(Error::config("data.sep", format!("{sep} must be > 0")));
    }
    if d_in == 0 {
        return Err(Error::config("data.d_in", "must be >= 1"));
    }
    let mut rng = stream.rng();
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| loop {
            let dir: Vec<f64> = (0..d_in).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break dir.iter().map(|x| sep * x / norm).collect();
            }
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * d_in);
    for &l in &labels {
        for mu in &means[l] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(mu + z);
        }
    }
    Dataset::new(features, labels, d_in, classes)
}

/// How the non-global remainder is spread over workers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Per-class Dirichlet proportions (label skew).
    #[default]
    Dirichlet,
    /// Sort by label and hand each worker two contiguous shards.
    Shards,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSpec {
    pub num_workers: usize,
    pub dirichlet_alpha: f64,
    pub global_fraction: f64,
    pub global_split: f64,
    pub mode: PartitionMode,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_workers < 1 {
            return Err(Error::config("num_workers", "must be >= 1"));
        }
        if !(self.dirichlet_alpha.is_finite() && self.dirichlet_alpha > 0.0) {
            return Err(Error::config("data.dirichlet_alpha", "must be > 0"));
        }
        if !(self.global_fraction > 0.0 && self.global_fraction <= 0.1) {
            return Err(Error::config(
                "data.global_fraction",
                format!("{} not in (0, 0.1]", self.global_fraction),
            ));
        }
        if !(self.global_split > 0.0 && self.global_split < 1.0) {
            return Err(Error::config(
                "data.global_split",
                format!("{} not in (0, 1)", self.global_split),
            ));
        }
        Ok(())
    }
}

/// The small shared dataset: one part joins local training, the other
/// scores models.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDataset {
    pub train_part: Dataset,
    pub score_part: Dataset,
}

impl GlobalDataset {
    pub fn len(&self) -> usize {
        self.train_part.len() + self.score_part.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct Partition {
    pub locals: Vec<Dataset>,
    pub global: GlobalDataset,
}

const MAX_PARTITION_ATTEMPTS: usize = 100;

/// Carve out the global dataset, then spread the rest over workers.
pub fn partition_noniid(ds: &Dataset, spec: &PartitionSpec, stream: &RngStream) -> Result<Partition> {
    spec.validate()?;
    let n = ds.len();
    let n_global = (spec.global_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream.clone().worker(0).round(0).rng());
    let n_global_train = ((spec.global_split * n_global as f64).round() as usize).min(n_global);
    let global = GlobalDataset {
        train_part: ds.subset(&order[..n_global_train]),
        score_part: ds.subset(&order[n_global_train..n_global]),
    };
    let rest: Vec<usize> = order[n_global..].to_vec();
    if rest.len() < spec.num_workers {
        return Err(Error::config(
            "data.n_samples",
            format!(
                "{} non-global samples cannot cover {} workers",
                rest.len(),
                spec.num_workers
            ),
        ));
    }

    for attempt in 0..MAX_PARTITION_ATTEMPTS {
        let attempt_stream = stream.clone().worker(1).round(attempt);
        let shards = match spec.mode {
            PartitionMode::Dirichlet => {
                dirichlet_shards(ds, &rest, spec.num_workers, spec.dirichlet_alpha, &attempt_stream)?
            }
            PartitionMode::Shards => label_shards(ds, &rest, spec.num_workers, &attempt_stream),
        };
        if shards.iter().all(|s| !s.is_empty()) {
            let locals = shards.iter().map(|s| ds.subset(s)).collect();
            return Ok(Partition { locals, global });
        }
    }
    Err(Error::config(
        "data.dirichlet_alpha",
        format!(
            "some worker received no samples after {MAX_PARTITION_ATTEMPTS} attempts; \
             increase data.n_samples or dirichlet_alpha"
        ),
    ))
}

fn dirichlet(alpha: f64, k: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::config("data.dirichlet_alpha", e.to_string()))?;
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(draws.into_iter().map(|g| g / total).collect());
        }
    }
}

fn dirichlet_shards(
    ds: &Dataset,
    rest: &[usize],
    workers: usize,
    alpha: f64,
    stream: &RngStream,
) -> Result<Vec<Vec<usize>>> {
    let mut rng = stream.rng();
    let mut shards = vec![Vec::new(); workers];
    for class in 0..ds.classes() {
        let mut members: Vec<usize> = rest.iter().copied().filter(|&i| ds.label(i) == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let props = dirichlet(alpha, workers, &mut rng)?;
        let n_c = members.len() as f64;
        let mut cum = 0.0;
        let mut start = 0;
        for (w, p) in props.iter().enumerate() {
            cum += p;
            let end = if w + 1 == workers {
                members.len()
            } else {
                ((cum * n_c).round() as usize).clamp(start, members.len())
            };
            shards[w].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

fn label_shards(ds: &Dataset, rest: &[usize], workers: usize, stream: &RngStream) -> Vec<Vec<usize>> {
    let mut sorted = rest.to_vec();
    sorted.sort_by_key(|&i| (ds.label(i), i));
    let pieces = 2 * workers;
    let mut ids: Vec<usize> = (0..pieces).collect();
    ids.shuffle(&mut stream.rng());
    let n = sorted.len();
    let bounds = |p: usize| (p * n / pieces, (p + 1) * n / pieces);
    (0..workers)
        .map(|w| {
            let mut s = Vec::new();
            for &p in &ids[2 * w..2 * w + 2] {
                let (a, b) = bounds(p);
                s.extend_from_slice(&sorted[a..b]);
            }
            s.sort_unstable();
            s
        })
        .collect()
}

/// A worker's effective training set when global sharing is on.
pub fn merge_global_train(local: &Dataset, global: &GlobalDataset) -> Result<Dataset> {
    local.concat(&global.train_part)
}

const DIVERGENCE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightDivergence {
    pub value: f64,
    /// The global model had (near) zero norm, so `value` is relative to
    /// the epsilon guard and not meaningful as a ratio.
    pub degenerate: bool,
}

/// Mean over workers of `|w_i - w_g| / max(|w_g|, 1e-12)`.
pub fn weight_divergence(local_models: &[ParamVector], global: &ParamVector) -> Result<WeightDivergence> {
    let gnorm = global.norm();
    let denom = gnorm.max(DIVERGENCE_EPS);
    if local_models.is_empty() {
        return Ok(WeightDivergence {
            value: 0.0,
            degenerate: gnorm < DIVERGENCE_EPS,
        });
    }
    let mut total = 0.0;
    for w in local_models {
        total += w.sub(global)?.norm() / denom;
    }
    Ok(WeightDivergence {
        value: total / local_models.len() as f64,
        degenerate: gnorm < DIVERGENCE_EPS,
    })
}

/// Read a dataset with header `f0,...,f{d-1},label`.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.len() < 2 || cols.last() != Some(&"label") {
        return Err(parse_err(1, "header must be f0,...,f{d-1},label".into()));
    }
    let dim = cols.len() - 1;
    for (j, c) in cols[..dim].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(parse_err(1, format!("expected column f{j}, found `{c}`")));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        for f in &fields[..dim] {
            let x: f64 = f.parse().map_err(|_| parse_err(lineno, format!("bad float `{f}`")))?;
            if !x.is_finite() {
                return Err(parse_err(lineno, format!("non-finite value `{f}`")));
            }
            features.push(x);
        }
        let label: usize = fields[dim]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label `{}`", fields[dim])))?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, dim, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::io::Write;

    fn spec(workers: usize, alpha: f64) -> PartitionSpec {
        PartitionSpec {
            num_workers: workers,
            dirichlet_alpha: alpha,
            global_fraction: 0.01,
            global_split: 0.5,
            mode: PartitionMode::Dirichlet,
        }
    }

    /// Tag each row with its original index in feature 0 so shards can be
    /// traced back.
    fn tagged(n: usize, classes: usize) -> Dataset {
        let features = (0..n).map(|i| i as f64).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(features, labels, 1, classes).unwrap()
    }

    fn tags(ds: &Dataset) -> Vec<usize> {
        (0..ds.len()).map(|i| ds.row(i)[0] as usize).collect()
    }

    #[test]
    fn single_class_labels() {
        let ds = gen_synthetic(100, 3, 1, 1.0, &RngStream::new(1, "gen")).unwrap();
        assert!(ds.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn synthetic_preconditions() {
        let s = RngStream::new(1, "gen");
        assert!(matches!(gen_synthetic(100, 3, 2, 0.0, &s), Err(Error::Config { .. })));
        assert!(matches!(gen_synthetic(3, 3, 5, 1.0, &s), Err(Error::Config { .. })));
    }

    #[test]
    fn synthetic_labels_balanced() {
        let ds = gen_synthetic(1003, 4, 5, 2.0, &RngStream::new(3, "gen")).unwrap();
        let h = ds.label_histogram();
        assert!(h.iter().all(|&c| c == 200 || c == 201), "{h:?}");
    }

    #[test]
    fn partition_is_exact_and_disjoint() {
        let ds = tagged(5000, 5);
        let p = partition_noniid(&ds, &spec(20, 0.5), &RngStream::new(9, "part")).unwrap();
        let mut seen = BTreeSet::new();
        let mut count = 0;
        for part in p.locals.iter().chain([&p.global.train_part, &p.global.score_part]) {
            for t in tags(part) {
                assert!(seen.insert(t), "sample {t} appears twice");
                count += 1;
            }
        }
        assert_eq!(count, 5000);
        assert_eq!(seen.len(), 5000);
    }

    #[test]
    fn global_size_is_one_percent() {
        let ds = tagged(4321, 5);
        let p = partition_noniid(&ds, &spec(10, 1.0), &RngStream::new(2, "part")).unwrap();
        assert_eq!(p.global.len(), (0.01f64 * 4321.0).round() as usize);
        assert_eq!(p.global.train_part.len(), 22);
        assert_eq!(p.global.score_part.len(), 21);
    }

    #[test]
    fn same_seed_same_partition() {
        let ds = tagged(3000, 5);
        let a = partition_noniid(&ds, &spec(10, 0.3), &RngStream::new(5, "part")).unwrap();
        let b = partition_noniid(&ds, &spec(10, 0.3), &RngStream::new(5, "part")).unwrap();
        assert_eq!(a.locals, b.locals);
        assert_eq!(a.global, b.global);
    }

    #[test]
    fn huge_alpha_is_nearly_iid() {
        for seed in 0..10 {
            let ds = tagged(50_000, 5);
            let p = partition_noniid(&ds, &spec(50, 1e6), &RngStream::new(seed, "part")).unwrap();
            for local in &p.locals {
                let h = local.label_histogram();
                let n = local.len() as f64;
                let tv: f64 = h.iter().map(|&c| (c as f64 / n - 0.2).abs()).sum::<f64>() / 2.0;
                assert!(tv < 0.05, "seed {seed}: tv {tv} for {h:?}");
            }
        }
    }

    #[test]
    fn small_alpha_concentrates_labels() {
        for seed in 0..10 {
            let ds = tagged(50_000, 5);
            let p = partition_noniid(&ds, &spec(50, 0.1), &RngStream::new(seed, "part")).unwrap();
            let mut top2: Vec<f64> = p
                .locals
                .iter()
                .map(|l| {
                    let mut h = l.label_histogram();
                    h.sort_unstable_by(|a, b| b.cmp(a));
                    (h[0] + h[1]) as f64 / l.len() as f64
                })
                .collect();
            top2.sort_by(f64::total_cmp);
            let median = top2[top2.len() / 2];
            assert!(median >= 0.8, "seed {seed}: median top-2 share {median}");
        }
    }

    #[test]
    fn impossible_partition_is_a_config_error() {
        let ds = tagged(60, 5);
        let r = partition_noniid(&ds, &spec(59, 0.01), &RngStream::new(1, "part"));
        assert!(matches!(r, Err(Error::Config { .. })));
    }

    #[test]
    fn shard_mode_gives_each_worker_two_shards() {
        let ds = tagged(2000, 5);
        let s = PartitionSpec {
            mode: PartitionMode::Shards,
            ..spec(10, 1.0)
        };
        let p = partition_noniid(&ds, &s, &RngStream::new(1, "part")).unwrap();
        for local in &p.locals {
            let classes = local.label_histogram().iter().filter(|&&c| c > 0).count();
            assert!(classes <= 4, "{classes}");
        }
        let total: usize = p.locals.iter().map(Dataset::len).sum();
        assert_eq!(total + p.global.len(), 2000);
    }

    #[test]
    fn merge_concatenates() {
        let local = tagged(20, 2);
        let global = GlobalDataset {
            train_part: tagged(5, 2),
            score_part: tagged(3, 2),
        };
        assert_eq!(merge_global_train(&local, &global).unwrap().len(), 25);
        let empty = GlobalDataset {
            train_part: Dataset::empty(1, 2),
            score_part: tagged(3, 2),
        };
        assert_eq!(merge_global_train(&local, &empty).unwrap(), local);
        let wide = GlobalDataset {
            train_part: Dataset::new(vec![0.0; 4], vec![0, 1], 2, 2).unwrap(),
            score_part: tagged(3, 2),
        };
        assert!(merge_global_train(&local, &wide).is_err());
    }

    #[test]
    fn divergence_cases() {
        let g = ParamVector::from_vec(vec![1.0, 0.0]).unwrap();
        let d = weight_divergence(&[g.clone(), g.clone()], &g).unwrap();
        assert_eq!(d.value, 0.0);

        let plus = g.clone();
        let minus = g.scale(-1.0).unwrap();
        let d = weight_divergence(&[plus, minus], &g).unwrap();
        assert!((d.value - 1.0).abs() < 1e-15);
        assert!(!d.degenerate);

        let zero = ParamVector::zeros(2);
        let w = ParamVector::from_vec(vec![3.0, 4.0]).unwrap();
        let d = weight_divergence(&[w], &zero).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.value, 5.0 / 1e-12);
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.csv");
        let mut f = fs::File::create(&good).unwrap();
        writeln!(f, "f0,f1,label\n0.5,-1.25,0\n1e-3,2,2").unwrap();
        let ds = read_csv(&good).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.classes(), 3);
        assert_eq!(ds.row(1), &[1e-3, 2.0]);

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "f0,label\n1.0,0\nabc,1\n").unwrap();
        match read_csv(&bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let hdr = dir.path().join("hdr.csv");
        fs::write(&hdr, "x,label\n1.0,0\n").unwrap();
        assert!(matches!(read_csv(&hdr), Err(Error::Parse { line: 1, .. })));
        let neg = dir.path().join("neg.csv");
        fs::write(&neg, "f0,label\n1.0,-1\n").unwrap();
        assert!(matches!(read_csv(&neg), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn standardize_centres_columns() {
        let mut ds = Dataset::new(vec![1.0, 5.0, 3.0, 5.0, 5.0, 5.0], vec![0, 1, 0], 2, 2).unwrap();
        ds.standardize();
        let col0: Vec<f64> = (0..3).map(|i| ds.row(i)[0]).collect();
        assert!(col0.iter().sum::<f64>().abs() < 1e-12);
        assert!(((0..3).map(|i| ds.row(i)[1]).sum::<f64>()).abs() < 1e-12);
    }
}
