//! Reference methods: CoCoA with a fixed local accuracy, mini-batch SGD and
//! SDCA, and the fully local / fully global SVMs used for model selection.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FederatedDataset, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::losses::LossKind;
use crate::regularizers::{primal_from_dual, OmegaModel, RelationshipState};
use crate::rng::{stream, Stream, StreamRng};
use crate::scalar::{axpy, dot, Scalar};
use crate::solver::{
    duality_gap, execute_round, oracle_subproblem_until, primal_objective_with, run_mocha, DualState, LocalSolution,
    LocalSolver, LocalView, PrimalState, RoundContext, RoundStats, SolverConfig, StopRule,
};
use crate::trace::TraceRecord;

/// One round of any method: the trace record plus per-node work for timing.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub record: TraceRecord,
    pub updates: Vec<usize>,
}

impl From<&RoundStats> for RoundLog {
    fn from(s: &RoundStats) -> Self {
        RoundLog {
            record: s.into(),
            updates: s.updates.clone(),
        }
    }
}

/// Result of a dual (coordinate-ascent style) method.
#[derive(Debug, Clone)]
pub struct DualRun<T> {
    pub dual: DualState<T>,
    pub weights: PrimalState<T>,
    pub trace: Vec<RoundStats>,
}

/// Result of a primal method.
#[derive(Debug, Clone)]
pub struct PrimalRun<T> {
    pub weights: PrimalState<T>,
    pub trace: Vec<RoundLog>,
}

fn run_dual_rounds<T: Scalar, S: crate::solver::NodeSolver<T>>(
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
    stop: StopRule,
    seed: u64,
    node_solver: &S,
) -> Result<DualRun<T>> {
    let mut dual = DualState::zeros(ds);
    let mut trace = Vec::new();
    let no_drops = vec![false; ds.num_tasks()];
    let already = match stop.gap_tolerance {
        Some(tol) => duality_gap(&dual, ds, loss, rel)?.as_f64() <= tol,
        None => false,
    };
    if !already {
        for h in 0..stop.max_rounds as u64 {
            let ctx = RoundContext {
                seed,
                round: h,
                ..RoundContext::default()
            };
            let stats = execute_round(&mut dual, ds, loss, rel, &no_drops, ctx, node_solver)?;
            let done = stop.gap_tolerance.is_some_and(|tol| stats.gap <= tol);
            trace.push(stats);
            if done {
                break;
            }
        }
    }
    let weights = primal_from_dual(dual.v(), &rel.mbar);
    Ok(DualRun { dual, weights, trace })
}

/// Per-node cap on CoCoA's local updates, as a multiple of `n_t`.
pub const COCOA_MAX_EPOCHS: usize = 1000;

/// Epoch cap on the oracle solve CoCoA uses to place its θ target.
pub const COCOA_ORACLE_EPOCHS: usize = 2000;

/// CoCoA: every node keeps updating until its subproblem accuracy reaches
/// `θ` (measured against the oracle optimum), then all synchronize.
pub fn cocoa_run<T: Scalar>(
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
    theta: f64,
    stop: StopRule,
    seed: u64,
) -> Result<DualRun<T>> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::Config(format!("CoCoA theta {theta} must lie in [0, 1)")));
    }
    let solver = |_t: usize, view: LocalView<'_, T>, rng: &mut StreamRng| -> Result<LocalSolution<T>> {
        // G* only has to be accurate to a small fraction of the θ target;
        // past the epoch cap the best value found stands in for it.
        let oracle = oracle_subproblem_until(view, |epoch, g0, g, bound| {
            epoch + 1 >= COCOA_ORACLE_EPOCHS
                || bound <= T::of(1e-2 * theta.max(1e-2)) * (g0 - g)
                || bound <= T::of(1e-12) * T::one().max(g.abs())
        })?;
        let g0 = oracle.initial_value.as_f64();
        let gstar = oracle.value.as_f64();
        let target = gstar + theta * (g0 - gstar);
        let mut local = LocalSolver::new(view)?;
        let cap = COCOA_MAX_EPOCHS * view.task.len();
        // The denominator of θ vanishes when the node is already optimal.
        if g0 - gstar > 1e-14 {
            while local.value().as_f64() > target && local.updates() < cap {
                local.step_random(rng)?;
            }
        }
        Ok(local.into_solution())
    };
    run_dual_rounds(ds, loss, rel, stop, seed, &solver)
}

/// `b` distinct indices from `0..n` by a partial Fisher–Yates shuffle; the
/// first draw is `random_range(0..n)`.
pub fn sample_batch(n: usize, b: usize, rng: &mut StreamRng) -> Vec<usize> {
    let b = b.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for j in 0..b {
        let k = rng.random_range(j..n);
        idx.swap(j, k);
    }
    idx.truncate(b);
    idx
}

/// Mini-batch SDCA: each node computes `b` coordinate steps against the
/// frozen round snapshot and applies each scaled by `β/b`.
pub fn mb_sdca_run<T: Scalar>(
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
    batch: usize,
    beta: f64,
    stop: StopRule,
    seed: u64,
) -> Result<DualRun<T>> {
    if batch == 0 || !(beta >= 1.0 && beta <= batch as f64) {
        return Err(Error::Config(format!(
            "mini-batch SDCA needs b >= 1 and 1 <= beta <= b (b = {batch}, beta = {beta})"
        )));
    }
    let solver = |t: usize, view: LocalView<'_, T>, rng: &mut StreamRng| -> Result<LocalSolution<T>> {
        let task = view.task;
        let b = batch.min(task.len());
        let scale = T::of(beta / batch as f64);
        let mut sol = LocalSolution::zero(task.len(), task.dim());
        for i in sample_batch(task.len(), b, rng) {
            let x = task.example(i);
            let delta = loss
                .coordinate_update(
                    view.alpha[i],
                    task.label(i),
                    dot(view.w, x),
                    task.norms2()[i],
                    view.kappa,
                )
                .map_err(|_| Error::DualInfeasible { task: t, index: i })?;
            let step = scale * delta;
            sol.delta_alpha[i] += step;
            axpy(step, x, &mut sol.delta_v);
        }
        sol.updates = b;
        Ok(sol)
    };
    run_dual_rounds(ds, loss, rel, stop, seed, &solver)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// `η_h = eta / √(h + 1)`.
    InvSqrt {
        eta: f64,
    },
}

impl StepSchedule {
    pub fn step(&self, h: u64) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::InvSqrt { eta } => eta / ((h + 1) as f64).sqrt(),
        }
    }
}

/// Mini-batch SGD on the primal with a fixed `Q̄`: each node samples `b`
/// examples, forms `(n_t/b)Σ ℓ'(w_t·x)x + 2Σ_s Q̄_ts w_s`, and all columns
/// step synchronously.
pub fn mb_sgd_run<T: Scalar>(
    ds: &FederatedDataset<T>,
    loss: LossKind,
    qbar: &Mat<T>,
    batch: usize,
    schedule: StepSchedule,
    rounds: usize,
    seed: u64,
) -> Result<PrimalRun<T>> {
    if batch == 0 {
        return Err(Error::Config("mini-batch size must be at least 1".into()));
    }
    let m = ds.num_tasks();
    if qbar.rows() != m {
        return Err(Error::Dimension("Q̄ does not match the task count".into()));
    }
    let mut w = PrimalState::zeros(ds.dim(), m);
    let mut trace = Vec::with_capacity(rounds);
    for h in 0..rounds as u64 {
        let eta = T::of(schedule.step(h));
        let snapshot = w.clone();
        let grads: Vec<(Vec<T>, usize)> = (0..m)
            .into_par_iter()
            .map(|t| {
                let task = ds.task(t);
                let wt = snapshot.column(t);
                let mut rng = stream(seed, Stream::MiniBatch, t as u64, h);
                let idx = sample_batch(task.len(), batch, &mut rng);
                let mut g = vec![T::zero(); ds.dim()];
                let scale = T::of_usize(task.len()) / T::of_usize(idx.len());
                for &i in &idx {
                    let x = task.example(i);
                    let s = loss.subgradient(dot(wt, x), task.label(i));
                    axpy(scale * s, x, &mut g);
                }
                for s in 0..m {
                    axpy(T::of(2.0) * qbar[(t, s)], snapshot.column(s), &mut g);
                }
                (g, idx.len())
            })
            .collect();
        let mut updates = Vec::with_capacity(m);
        for (t, (g, used)) in grads.into_iter().enumerate() {
            axpy(-eta, &g, w.column_mut(t));
            updates.push(used);
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("mini-batch SGD weights"));
        }
        let primal = primal_objective_with(&w, ds, loss, qbar)?.as_f64();
        trace.push(RoundLog {
            record: TraceRecord {
                h,
                elapsed_ms_estimated: None,
                dual: None,
                primal,
                gap: None,
                dropped: Vec::new(),
                theta: None,
            },
            updates,
        });
    }
    Ok(PrimalRun { weights: w, trace })
}

/// Duality gap reached by the single-task trainers.
pub const TRAINER_GAP: f64 = 1e-6;
/// Epoch cap of the single-task trainers. Small `λ` on pooled data can need
/// most of it.
pub const TRAINER_MAX_EPOCHS: usize = 1_000_000;

/// Epochs between the trainers' null-space steps.
const NULL_STEP_EVERY: usize = 10;

/// `min_w Σ_i ℓ(w·x_i, y_i) + λ‖w‖²` by dual coordinate descent in random
/// permutation order, to duality gap `tol`. Returns `(w, gap)`.
///
/// With hinge loss and more examples than features, the dual is linear
/// along the null space of the free examples, where coordinate steps crawl.
/// Every few epochs the solver walks that direction to the box boundary.
pub fn solve_regularized_task<T: Scalar>(
    task: &TaskDataset<T>,
    loss: LossKind,
    lambda: f64,
    tol: f64,
    seed: u64,
) -> Result<(Vec<T>, f64)> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda {lambda} must be positive")));
    }
    let n = task.len();
    let alpha = vec![T::zero(); n];
    let w0 = vec![T::zero(); task.dim()];
    // With w = 0 and α = 0 the subproblem is the task's full dual once
    // κ/2 matches the ¼λ⁻¹ curvature of R*.
    let view = LocalView {
        task_index: task.task_id(),
        task,
        alpha: &alpha,
        w: &w0,
        kappa: T::of(0.5 / lambda),
        loss,
    };
    let mut solver = LocalSolver::new(view)?;
    let mut rng = stream(seed, Stream::LocalSolver, task.task_id() as u64, u64::MAX);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=TRAINER_MAX_EPOCHS {
        for j in (1..n).rev() {
            order.swap(j, rng.random_range(0..=j));
        }
        for &i in &order {
            solver.step(i)?;
        }
        if loss == LossKind::Hinge && epoch % NULL_STEP_EVERY == 0 {
            if let Some(jump) = null_space_walk(&view, solver.delta_alpha(), solver.z()) {
                if view.value(&jump).finite().is_some_and(|v| v <= solver.value()) {
                    solver.jump_to(jump)?;
                }
            }
        }
        let gap = view
            .suboptimality_bound(solver.delta_alpha(), solver.z())
            .finite()
            .ok_or(Error::NonFinite("trainer duality gap"))?
            .as_f64();
        if gap <= tol {
            let w = solver.z().iter().map(|&z| view.kappa * z).collect();
            return Ok((w, gap));
        }
    }
    Err(Error::NoConvergence {
        what: "single-task trainer",
        iterations: TRAINER_MAX_EPOCHS,
    })
}

/// Hinge dual at `α = 0`, `w = 0`: projects the gradient of the free
/// coordinates (`0 < yβ < 1`) onto the null space of their examples and
/// moves against it until a coordinate reaches the box, repeatedly. The
/// quadratic term is constant along such moves, so the value drops by
/// `t‖r‖²` each time. `None` if no move was made.
fn null_space_walk<T: Scalar>(view: &LocalView<'_, T>, beta: &[T], z: &[T]) -> Option<Vec<T>> {
    let task = view.task;
    let d = task.dim();
    let edge = T::of(1e-12);
    let mut beta = beta.to_vec();
    let kz: Vec<T> = z.iter().map(|&v| view.kappa * v).collect();
    let mut moved = false;
    for _ in 0..task.len() {
        let free: Vec<usize> = (0..task.len())
            .filter(|&i| {
                let b = task.label(i) * beta[i];
                b > edge && b < T::one() - edge
            })
            .collect();
        if free.len() <= 1 {
            break;
        }
        let grad: Vec<T> = free
            .iter()
            .map(|&i| dot(task.example(i), &kz) - task.label(i))
            .collect();
        let mut gram: Mat<T> = Mat::zeros(d, d);
        let mut u = vec![T::zero(); d];
        for (k, &i) in free.iter().enumerate() {
            let x = task.example(i);
            axpy(grad[k], x, &mut u);
            for a in 0..d {
                for b in 0..d {
                    gram[(a, b)] += x[a] * x[b];
                }
            }
        }
        // Pseudo-inverse solve, discarding directions below a relative cutoff.
        let (vals, vecs) = gram.symmetric_eigen();
        let top = vals.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        let cutoff = top * T::of(1e-10);
        let mut coef = vec![T::zero(); d];
        for (j, &lam) in vals.iter().enumerate() {
            if lam > cutoff {
                let proj = (0..d).fold(T::zero(), |acc, a| acc + vecs[(a, j)] * u[a]) / lam;
                for a in 0..d {
                    coef[a] += proj * vecs[(a, j)];
                }
            }
        }
        let r: Vec<T> = free
            .iter()
            .enumerate()
            .map(|(k, &i)| grad[k] - dot(task.example(i), &coef))
            .collect();
        let rr = r.iter().fold(T::zero(), |acc, &v| acc + v * v);
        if !(rr > T::of(1e-20)) {
            break;
        }
        // Largest step along −r keeping every free yβ inside [0, 1].
        let mut step = T::infinity();
        let mut hit = None;
        for (k, &i) in free.iter().enumerate() {
            let y = task.label(i);
            let rate = -y * r[k];
            let b = y * beta[i];
            let room = if rate > T::zero() {
                (T::one() - b) / rate
            } else if rate < T::zero() {
                b / -rate
            } else {
                continue;
            };
            if room < step {
                step = room;
                hit = Some(k);
            }
        }
        let Some(hit) = hit else { break };
        for (k, &i) in free.iter().enumerate() {
            beta[i] = view.loss.project(beta[i] - step * r[k], task.label(i));
        }
        // Snap the blocking coordinate exactly onto its bound.
        let i = free[hit];
        let y = task.label(i);
        beta[i] = if y * beta[i] > T::half() { y } else { T::zero() };
        moved = true;
    }
    moved.then_some(beta)
}

/// One L2-regularized SVM per task.
pub fn train_local<T: Scalar>(ds: &FederatedDataset<T>, lambda: f64) -> Result<PrimalState<T>> {
    let cols = ds
        .tasks()
        .par_iter()
        .map(|task| solve_regularized_task(task, LossKind::Hinge, lambda, TRAINER_GAP, 0).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    PrimalState::from_columns(cols)
}

/// One L2-regularized SVM on the pooled data, replicated to every task.
pub fn train_global<T: Scalar>(ds: &FederatedDataset<T>, lambda: f64) -> Result<PrimalState<T>> {
    let pooled = ds.pooled()?;
    let (w, _) = solve_regularized_task(pooled.task(0), LossKind::Hinge, lambda, TRAINER_GAP, 0)?;
    Ok(PrimalState::broadcast(w, ds.num_tasks()))
}

/// A model family whose regularization strength is chosen by validation.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainer {
    Local,
    Global,
    /// MOCHA with `model.with_lambda(λ)`.
    Mtl {
        model: OmegaModel,
        config: SolverConfig,
    },
}

impl Trainer {
    pub fn name(&self) -> &'static str {
        match self {
            Trainer::Local => "local",
            Trainer::Global => "global",
            Trainer::Mtl { .. } => "mtl",
        }
    }

    pub fn fit<T: Scalar>(&self, ds: &FederatedDataset<T>, lambda: f64) -> Result<PrimalState<T>> {
        match self {
            Trainer::Local => train_local(ds, lambda),
            Trainer::Global => train_global(ds, lambda),
            Trainer::Mtl { model, config } => {
                let scheduler = crate::solver::FixedBudget(None);
                Ok(run_mocha(ds, &model.with_lambda(lambda), config, &scheduler)?.weights)
            }
        }
    }
}

/// `{1e-5, 1e-4, …, 10}`.
pub fn default_lambda_grid() -> Vec<f64> {
    vec![1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub lambda: f64,
    pub cv_error: f64,
    /// `(λ, mean validation error)` for every grid value.
    pub scores: Vec<(f64, f64)>,
}

/// Misclassification rate of `w` on the listed examples.
fn subset_error<T: Scalar>(w: &[T], task: &TaskDataset<T>, idx: &[usize]) -> f64 {
    let wrong = idx
        .iter()
        .filter(|&&i| {
            let positive = dot(w, task.example(i)) > T::zero();
            positive != (task.label(i) > T::zero())
        })
        .count();
    wrong as f64 / idx.len() as f64
}

/// Per-task `k`-fold assignments: `folds[t][f]` lists task `t`'s examples in
/// fold `f` (dealt round-robin after a seeded shuffle).
pub fn fold_assignments(sizes: &[usize], k: usize, seed: u64) -> Vec<Vec<Vec<usize>>> {
    use rand::seq::SliceRandom;
    sizes
        .iter()
        .enumerate()
        .map(|(t, &n)| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut stream(seed, Stream::Folds, t as u64, 0));
            let mut folds = vec![Vec::new(); k];
            for (j, i) in idx.into_iter().enumerate() {
                folds[j % k].push(i);
            }
            folds
        })
        .collect()
}

/// `k`-fold cross-validation over `grid`; ties go to the larger `λ`.
pub fn model_select<T: Scalar>(
    ds: &FederatedDataset<T>,
    trainer: &Trainer,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<Selection> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if k < 2 {
        return Err(Error::Config(format!("k_folds = {k}; need at least 2")));
    }
    if let Some(t) = ds.tasks().iter().position(|t| t.len() < 2) {
        return Err(Error::Dataset(format!("task {t} has fewer than 2 examples")));
    }
    let folds = fold_assignments(&ds.task_sizes(), k, seed);
    let splits = (0..k)
        .map(|f| {
            let train: Vec<Vec<usize>> = folds
                .iter()
                .map(|task_folds| {
                    let mut v: Vec<usize> = (0..k)
                        .filter(|&g| g != f)
                        .flat_map(|g| task_folds[g].iter().copied())
                        .collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            Ok((ds.select(&train)?, f))
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|l| (0..k).map(move |f| (l, f))).collect();
    let errors = jobs
        .par_iter()
        .map(|&(l, f)| {
            let (train, _) = &splits[f];
            let w = trainer.fit(train, grid[l])?;
            let mut sum = 0.0;
            let mut count = 0usize;
            for (t, task) in ds.tasks().iter().enumerate() {
                let test = &folds[t][f];
                if !test.is_empty() {
                    sum += subset_error(w.column(t), task, test);
                    count += 1;
                }
            }
            Ok(sum / count.max(1) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let scores: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(l, &lambda)| (lambda, errors[l * k..(l + 1) * k].iter().sum::<f64>() / k as f64))
        .collect();
    let mut best = scores[0];
    for &(lambda, err) in &scores[1..] {
        if err < best.1 || (err == best.1 && lambda > best.0) {
            best = (lambda, err);
        }
    }
    Ok(Selection {
        lambda: best.0,
        cv_error: best.1,
        scores,
    })
}
