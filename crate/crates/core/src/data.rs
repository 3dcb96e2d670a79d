//! Federated datasets: one labelled task per node.
//!
//! Features are stored column-major, one contiguous `d`-vector per example,
//! which is the access pattern of every coordinate solver in the crate.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::scalar::{dot, Scalar};
use crate::solver::PrimalState;

/// Labelled examples held by one node. Labels are exactly ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset<T> {
    task_id: usize,
    dim: usize,
    features: Vec<T>,
    labels: Vec<T>,
    norms2: Vec<T>,
}

impl<T: Scalar> TaskDataset<T> {
    /// `features` holds `labels.len()` examples of length `dim`, back to back.
    pub fn new(task_id: usize, dim: usize, features: Vec<T>, labels: Vec<T>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Dataset(format!("task {task_id} has no examples")));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Dimension(format!(
                "task {task_id}: {} feature values for {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y != T::one() && y != -T::one()) {
            return Err(Error::Dataset(format!(
                "task {task_id}: label {} of example {i} is not ±1",
                labels[i]
            )));
        }
        let norms2 = features.chunks_exact(dim.max(1)).map(crate::scalar::norm2).collect();
        Ok(TaskDataset {
            task_id,
            dim,
            features,
            labels,
            norms2,
        })
    }

    /// Builds a task from per-example rows.
    pub fn from_examples(task_id: usize, examples: &[Vec<T>], labels: Vec<T>) -> Result<Self> {
        let dim = examples.first().map_or(0, Vec::len);
        if examples.iter().any(|x| x.len() != dim) {
            return Err(Error::Dimension(format!(
                "task {task_id}: examples of differing length"
            )));
        }
        let features = examples.iter().flatten().copied().collect();
        Self::new(task_id, dim, features, labels)
    }

    #[inline]
    pub fn task_id(&self) -> usize {
        self.task_id
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The `i`-th example `x_t^i`.
    #[inline]
    pub fn example(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> T {
        self.labels[i]
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    /// `X_t a` for a coefficient vector over this task's examples.
    pub fn combine(&self, coeffs: &[T]) -> Vec<T> {
        assert_eq!(coeffs.len(), self.len());
        let mut out = vec![T::zero(); self.dim];
        for (i, &c) in coeffs.iter().enumerate() {
            if c != T::zero() {
                crate::scalar::axpy(c, self.example(i), &mut out);
            }
        }
        out
    }

    /// `‖x_t^i‖²` for every example, cached at construction.
    pub fn norms2(&self) -> &[T] {
        &self.norms2
    }

    /// Restricts the task to the given example indices, keeping their order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.example(i));
            labels.push(self.labels[i]);
        }
        Self::new(self.task_id, self.dim, features, labels)
    }

    fn with_id(mut self, task_id: usize) -> Self {
        self.task_id = task_id;
        self
    }
}

/// All tasks of a federation, in task-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset<T> {
    tasks: Vec<TaskDataset<T>>,
    total: usize,
}

impl<T: Scalar> FederatedDataset<T> {
    /// Re-numbers tasks `0..m` in the given order and checks the shared dimension.
    pub fn new(tasks: Vec<TaskDataset<T>>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Dataset("a federation needs at least one task".into()));
        }
        let d = tasks[0].dim();
        if let Some(t) = tasks.iter().find(|t| t.dim() != d) {
            return Err(Error::Dimension(format!(
                "task {} has dimension {}, expected {d}",
                t.task_id(),
                t.dim()
            )));
        }
        let tasks: Vec<_> = tasks.into_iter().enumerate().map(|(k, t)| t.with_id(k)).collect();
        let total = tasks.iter().map(TaskDataset::len).sum();
        Ok(FederatedDataset { tasks, total })
    }

    #[inline]
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Total example count `n = Σ n_t`.
    #[inline]
    pub fn num_examples(&self) -> usize {
        self.total
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.tasks[0].dim()
    }

    pub fn tasks(&self) -> &[TaskDataset<T>] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &TaskDataset<T> {
        &self.tasks[t]
    }

    pub fn task_sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(TaskDataset::len).collect()
    }

    pub fn min_task_size(&self) -> usize {
        self.tasks.iter().map(TaskDataset::len).min().unwrap_or(0)
    }

    pub fn max_task_size(&self) -> usize {
        self.tasks.iter().map(TaskDataset::len).max().unwrap_or(0)
    }

    /// Pools every example into a single task (the fully global view).
    pub fn pooled(&self) -> Result<FederatedDataset<T>> {
        let mut features = Vec::with_capacity(self.total * self.dim());
        let mut labels = Vec::with_capacity(self.total);
        for t in &self.tasks {
            features.extend_from_slice(t.features());
            labels.extend_from_slice(t.labels());
        }
        FederatedDataset::new(vec![TaskDataset::new(0, self.dim(), features, labels)?])
    }

    /// Applies a per-task index selection.
    pub fn select(&self, per_task: &[Vec<usize>]) -> Result<FederatedDataset<T>> {
        assert_eq!(per_task.len(), self.num_tasks());
        let tasks = self
            .tasks
            .iter()
            .zip(per_task)
            .map(|(t, idx)| t.subset(idx))
            .collect::<Result<Vec<_>>>()?;
        FederatedDataset::new(tasks)
    }
}

// ---------------------------------------------------------------------------
// CSV I/O

fn task_index(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("task_")?.strip_suffix(".csv")?.parse().ok()
}

fn read_task_csv<T: Scalar>(path: &Path, task_id: usize) -> Result<TaskDataset<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut dim: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label = match fields.next() {
            Some("1") | Some("+1") => T::one(),
            Some("-1") => -T::one(),
            Some(other) => return Err(parse_err(lineno, format!("label `{other}` is not 1 or -1"))),
            None => return Err(parse_err(lineno, "empty row".into())),
        };
        let mut count = 0;
        for (col, field) in fields.enumerate() {
            let v: T = field
                .parse()
                .map_err(|_| parse_err(lineno, format!("field {} `{field}` is not numeric", col + 2)))?;
            features.push(v);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => return Err(parse_err(lineno, format!("row has {count} features, expected {d}"))),
            _ => {}
        }
        labels.push(label);
    }
    let Some(dim) = dim else {
        return Err(parse_err(0, "file has no rows".into()));
    };
    TaskDataset::new(task_id, dim, features, labels)
}

/// Loads `task_<k>.csv` files (k = 0..m-1) from a directory.
///
/// Each row is `label,f1,...,fd` with labels `1` or `-1`.
pub fn load_federated_csv<T: Scalar>(dir: impl AsRef<Path>) -> Result<FederatedDataset<T>> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if let Some(k) = task_index(&path) {
            files.push((k, path));
        }
    }
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no task_<k>.csv files found",
            dir.display()
        )));
    }
    files.sort_by_key(|(k, _)| *k);
    for (expect, (k, path)) in files.iter().enumerate() {
        if *k != expect {
            return Err(Error::Dataset(format!(
                "{}: task ids must be 0..m-1, found task_{k} where task_{expect} was expected",
                path.display()
            )));
        }
    }
    let mut tasks = Vec::with_capacity(files.len());
    let mut dim = None;
    for (k, path) in &files {
        let task = read_task_csv::<T>(path, *k)?;
        match dim {
            None => dim = Some(task.dim()),
            Some(d) if d != task.dim() => {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: 1,
                    message: format!("feature dimension {} differs from {d}", task.dim()),
                })
            }
            _ => {}
        }
        tasks.push(task);
    }
    FederatedDataset::new(tasks)
}

/// Writes one `task_<k>.csv` per task; the inverse of [`load_federated_csv`].
pub fn save_federated_csv<T: Scalar>(ds: &FederatedDataset<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for task in ds.tasks() {
        let path = dir.join(format!("task_{}.csv", task.task_id()));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for i in 0..task.len() {
            let label = if task.label(i) > T::zero() { "1" } else { "-1" };
            let mut row = String::from(label);
            for v in task.example(i) {
                row.push(',');
                row.push_str(&v.to_string());
            }
            row.push('\n');
            w.write_all(row.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Clustered linear-classification federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub dim: usize,
    /// Inclusive range the per-task sizes are drawn from.
    pub min_examples: usize,
    pub max_examples: usize,
    /// Explicit per-task sizes; overrides the range when present.
    #[serde(default)]
    pub task_sizes: Option<Vec<usize>>,
    pub clusters: usize,
    #[serde(default)]
    pub deviation: f64,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.tasks == 0 || self.dim == 0 {
            return bad("tasks and dim must be positive");
        }
        if self.clusters == 0 || self.clusters > self.tasks {
            return bad("clusters must be in 1..=tasks");
        }
        if !(self.deviation >= 0.0) {
            return bad("deviation must be non-negative");
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad("label noise must be in [0, 0.5)");
        }
        match &self.task_sizes {
            Some(sizes) => {
                if sizes.len() != self.tasks || sizes.contains(&0) {
                    return bad("task_sizes needs one positive size per task");
                }
            }
            None => {
                if self.min_examples == 0 || self.min_examples > self.max_examples {
                    return bad("need 1 <= min_examples <= max_examples");
                }
            }
        }
        Ok(())
    }

    /// Cluster assigned to task `t` (round-robin, so every cluster is used).
    pub fn cluster_of(&self, t: usize) -> usize {
        t % self.clusters
    }
}

/// Generating weights alongside the data, for tests that need the ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticTruth<T> {
    pub centers: Vec<Vec<T>>,
    pub weights: PrimalState<T>,
}

pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<FederatedDataset<T>> {
    generate_synthetic_with_truth(spec).map(|(ds, _)| ds)
}

/// Draws cluster centers, per-task weights `w_c + deviation·δ_t`, standard
/// normal features, and labels `sign(w_t·x)` flipped with the noise rate.
pub fn generate_synthetic_with_truth<T: Scalar>(
    spec: &SyntheticSpec,
) -> Result<(FederatedDataset<T>, SyntheticTruth<T>)> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = stream(spec.seed, Stream::Synthetic, u64::MAX, 0);
    let normal = |rng: &mut crate::rng::StreamRng| -> f64 { StandardNormal.sample(rng) };

    let centers: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
        .collect();
    let sizes: Vec<usize> = match &spec.task_sizes {
        Some(s) => s.clone(),
        None => (0..spec.tasks)
            .map(|_| rng.random_range(spec.min_examples..=spec.max_examples))
            .collect(),
    };

    let mut tasks = Vec::with_capacity(spec.tasks);
    let mut weights = Vec::with_capacity(spec.tasks);
    for (t, &n_t) in sizes.iter().enumerate() {
        let mut trng = stream(spec.seed, Stream::Synthetic, t as u64, 0);
        let center = &centers[spec.cluster_of(t)];
        let w: Vec<f64> = center.iter().map(|&c| c + spec.deviation * normal(&mut trng)).collect();
        let mut features = Vec::with_capacity(n_t * d);
        let mut labels = Vec::with_capacity(n_t);
        for _ in 0..n_t {
            let x: Vec<f64> = (0..d).map(|_| normal(&mut trng)).collect();
            let score: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mut y = if score > 0.0 { 1.0 } else { -1.0 };
            if spec.label_noise > 0.0 && trng.random::<f64>() < spec.label_noise {
                y = -y;
            }
            features.extend(x.into_iter().map(T::of));
            labels.push(T::of(y));
        }
        tasks.push(TaskDataset::new(t, d, features, labels)?);
        weights.push(w.into_iter().map(T::of).collect());
    }
    let truth = SyntheticTruth {
        centers: centers
            .into_iter()
            .map(|c| c.into_iter().map(T::of).collect())
            .collect(),
        weights: PrimalState::from_columns(weights)?,
    };
    Ok((FederatedDataset::new(tasks)?, truth))
}

// ---------------------------------------------------------------------------
// Splitting, standardization, evaluation

/// Per-task shuffled indices: `(train, test)` with `round(fraction·n_t)` training
/// examples, clamped so both sides are non-empty.
pub fn split_indices(sizes: &[usize], train_fraction: f64, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    sizes
        .iter()
        .enumerate()
        .map(|(t, &n)| {
            if n < 2 {
                return Err(Error::Dataset(format!(
                    "task {t} has {n} example(s); splitting needs at least 2"
                )));
            }
            let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut stream(seed, Stream::Split, t as u64, 0));
            let test = idx.split_off(n_train);
            Ok((idx, test))
        })
        .collect()
}

pub fn train_test_split<T: Scalar>(
    ds: &FederatedDataset<T>,
    train_fraction: f64,
    seed: u64,
) -> Result<(FederatedDataset<T>, FederatedDataset<T>)> {
    let parts = split_indices(&ds.task_sizes(), train_fraction, seed)?;
    let (train, test): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok((ds.select(&train)?, ds.select(&test)?))
}

/// Per-feature z-scoring fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    /// Statistics pooled over every example of every task.
    pub fn fit(ds: &FederatedDataset<T>) -> Self {
        let d = ds.dim();
        let n = T::of_usize(ds.num_examples());
        let mut mean = vec![T::zero(); d];
        for task in ds.tasks() {
            for i in 0..task.len() {
                crate::scalar::axpy(T::one(), task.example(i), &mut mean);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); d];
        for task in ds.tasks() {
            for i in 0..task.len() {
                for (k, &x) in task.example(i).iter().enumerate() {
                    let c = x - mean[k];
                    var[k] += c * c;
                }
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > T::epsilon() {
                    sd
                } else {
                    T::one()
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, ds: &FederatedDataset<T>) -> Result<FederatedDataset<T>> {
        if ds.dim() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on dimension {}, data has {}",
                self.mean.len(),
                ds.dim()
            )));
        }
        let tasks = ds
            .tasks()
            .iter()
            .map(|task| {
                let d = task.dim();
                let features = task
                    .features()
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| (x - self.mean[j % d]) / self.scale[j % d])
                    .collect();
                TaskDataset::new(task.task_id(), d, features, task.labels().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        FederatedDataset::new(tasks)
    }
}

/// Misclassification rates: one per task plus their unweighted mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionError {
    pub per_task: Vec<f64>,
    pub mean: f64,
}

/// Predicts `+1` iff `w_t·x > 0`, so a zero score counts against a `+1` label.
pub fn prediction_error<T: Scalar>(w: &PrimalState<T>, ds: &FederatedDataset<T>) -> Result<PredictionError> {
    if w.num_tasks() != ds.num_tasks() || w.dim() != ds.dim() {
        return Err(Error::Dimension(format!(
            "weights are {}x{}, data has d={} and m={}",
            w.dim(),
            w.num_tasks(),
            ds.dim(),
            ds.num_tasks()
        )));
    }
    let per_task: Vec<f64> = ds
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| {
            let wrong = (0..task.len())
                .filter(|&i| {
                    let predicted = if dot(w.column(t), task.example(i)) > T::zero() {
                        T::one()
                    } else {
                        -T::one()
                    };
                    predicted != task.label(i)
                })
                .count();
            wrong as f64 / task.len() as f64
        })
        .collect();
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(PredictionError { per_task, mean })
}
