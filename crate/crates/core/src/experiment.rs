//! Experiment workflows on top of the solvers: simulated-time runs of any
//! method, a centralized reference optimum, the held-out comparison of
//! local/global/multi-task models, and the straggler and dropout sweeps.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    cocoa_run, mb_sdca_run, mb_sgd_run, model_select, train_global, train_local, RoundLog, StepSchedule, Trainer,
    TRAINER_GAP,
};
use crate::data::{prediction_error, train_test_split, FederatedDataset, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::losses::LossKind;
use crate::regularizers::{primal_from_dual, OmegaModel, RelationshipState};
use crate::rng::{stream, stream_seed, Stream};
use crate::scalar::{axpy, dot, Scalar};
use crate::solver::{objectives, run_mocha, DualState, Objectives, PrimalState, SolverConfig, StopRule};
use crate::systems::{Heterogeneity, NetworkPreset, NodeProfile, SimClock, SystemsModel, SystemsScheduler};
use crate::trace::TraceRecord;

fn one() -> f64 {
    1.0
}

/// A method as named in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Mocha {
        /// Local updates per round as a multiple of the heterogeneity draw.
        #[serde(default = "one")]
        budget_scale: f64,
    },
    Cocoa {
        theta: f64,
    },
    MbSgd {
        batch: usize,
        step: StepSchedule,
    },
    MbSdca {
        batch: usize,
        beta: f64,
    },
    Local {
        lambda: f64,
    },
    Global {
        lambda: f64,
    },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Mocha { budget_scale } => format!("mocha(x{budget_scale})"),
            Method::Cocoa { theta } => format!("cocoa(theta={theta})"),
            Method::MbSgd { batch, step } => match step {
                StepSchedule::Constant { eta } => format!("mb-sgd(b={batch},eta={eta})"),
                StepSchedule::InvSqrt { eta } => format!("mb-sgd(b={batch},eta={eta}/sqrt)"),
            },
            Method::MbSdca { batch, beta } => format!("mb-sdca(b={batch},beta={beta})"),
            Method::Local { lambda } => format!("local(lambda={lambda})"),
            Method::Global { lambda } => format!("global(lambda={lambda})"),
        }
    }
}

/// Everything besides the method that fixes a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub solver: SolverConfig,
    pub model: OmegaModel,
    pub preset: NetworkPreset,
    pub clock_rate: f64,
    pub heterogeneity: Heterogeneity,
    /// Per-node drop probabilities (MOCHA only); missing entries are 0.
    pub drop_probabilities: Vec<f64>,
}

/// Final model plus a time-annotated trace.
#[derive(Debug, Clone)]
pub struct SimulatedRun<T> {
    pub weights: PrimalState<T>,
    pub omega: Option<Mat<T>>,
    pub records: Vec<TraceRecord>,
    pub clock: SimClock,
}

impl<T> SimulatedRun<T> {
    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// Runs `method` on `ds` and charges every round to the simulated clock.
///
/// MOCHA alternates with Ω as configured; the other iterative methods
/// perform one W-update under the model's initial Ω.
pub fn simulate_run<T: Scalar>(
    method: &Method,
    ds: &FederatedDataset<T>,
    cfg: &SimulationConfig,
) -> Result<SimulatedRun<T>> {
    let mut runs = simulate_presets(method, ds, cfg, std::slice::from_ref(&cfg.preset))?;
    Ok(runs.remove(0))
}

/// One solve of `method`, clocked under each of `presets` in turn. The
/// optimization trace does not depend on the network, so this equals
/// calling [`simulate_run`] once per preset.
pub fn simulate_presets<T: Scalar>(
    method: &Method,
    ds: &FederatedDataset<T>,
    cfg: &SimulationConfig,
    presets: &[NetworkPreset],
) -> Result<Vec<SimulatedRun<T>>> {
    cfg.solver.validate()?;
    cfg.model.validate()?;
    let m = ds.num_tasks();
    let sizes = ds.task_sizes();
    let seed = cfg.solver.seed;
    let mut drops = cfg.drop_probabilities.clone();
    drops.resize(m, 0.0);
    if drops.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config("drop probabilities must lie in [0, 1]".into()));
    }
    let profiles = vec![
        NodeProfile {
            clock_rate: cfg.clock_rate,
            drop_probability: 0.0,
        };
        m
    ];
    let systems = presets
        .iter()
        .map(|p| SystemsModel::new(p.clone(), profiles.clone(), ds.dim()))
        .collect::<Result<Vec<_>>>()?;
    let scheduler = SystemsScheduler::new(seed, cfg.heterogeneity, drops);
    let stop = StopRule {
        max_rounds: cfg.solver.rounds_per_update,
        gap_tolerance: cfg.solver.gap_tolerance,
    };
    let fixed_rel = || cfg.solver.relationship(&cfg.model, cfg.model.initial_omega::<T>(m));

    let (weights, omega, logs): (PrimalState<T>, Option<Mat<T>>, Vec<RoundLog>) = match *method {
        Method::Mocha { budget_scale } => {
            if !(budget_scale > 0.0) {
                return Err(Error::Config("budget_scale must be positive".into()));
            }
            let sched = scheduler.clone().with_budget_scale(budget_scale);
            let run = run_mocha(ds, &cfg.model, &cfg.solver, &sched)?;
            let logs = run.trace.iter().map(RoundLog::from).collect();
            (run.weights, Some(run.omega), logs)
        }
        Method::Cocoa { theta } => {
            let rel = fixed_rel()?;
            let run = cocoa_run(ds, cfg.solver.loss, &rel, theta, stop, seed)?;
            let logs = run.trace.iter().map(RoundLog::from).collect();
            (run.weights, Some(rel.omega), logs)
        }
        Method::MbSdca { batch, beta } => {
            let rel = fixed_rel()?;
            let run = mb_sdca_run(ds, cfg.solver.loss, &rel, batch, beta, stop, seed)?;
            let logs = run.trace.iter().map(RoundLog::from).collect();
            (run.weights, Some(rel.omega), logs)
        }
        Method::MbSgd { batch, step } => {
            let rel = fixed_rel()?;
            let run = mb_sgd_run(ds, cfg.solver.loss, &rel.qbar, batch, step, stop.max_rounds, seed)?;
            (run.weights, Some(rel.omega), run.trace)
        }
        Method::Local { lambda } => {
            let w = train_local(ds, lambda)?;
            let logs = vec![trainer_log(ds, &w, lambda, false)?];
            (w, None, logs)
        }
        Method::Global { lambda } => {
            let w = train_global(ds, lambda)?;
            let logs = vec![trainer_log(ds, &w, lambda, true)?];
            (w, None, logs)
        }
    };

    let untimed = matches!(method, Method::Local { .. } | Method::Global { .. });
    let mut runs = Vec::with_capacity(systems.len());
    for model in &systems {
        let mut clock = SimClock::default();
        let mut records = Vec::with_capacity(logs.len());
        for log in &logs {
            let mut rec = log.record.clone();
            if !untimed {
                let speeds = scheduler.speeds(rec.h, &sizes);
                let timing = model.time_round(&log.updates, &rec.dropped, &speeds)?;
                rec.elapsed_ms_estimated = Some(clock.advance(timing));
            }
            records.push(rec);
        }
        runs.push(SimulatedRun {
            weights: weights.clone(),
            omega: omega.clone(),
            records,
            clock,
        });
    }
    Ok(runs)
}

/// Objective record for the closed-form trainers: the primal of the trained
/// problem (pooled for the global model).
fn trainer_log<T: Scalar>(ds: &FederatedDataset<T>, w: &PrimalState<T>, lambda: f64, pooled: bool) -> Result<RoundLog> {
    let mut primal = 0.0;
    let tasks: Vec<_> = if pooled {
        vec![ds.pooled()?.task(0).clone()]
    } else {
        ds.tasks().to_vec()
    };
    for (t, task) in tasks.iter().enumerate() {
        let wt = w.column(t);
        for i in 0..task.len() {
            primal += LossKind::Hinge.value(dot(wt, task.example(i)), task.label(i)).as_f64();
        }
        primal += lambda * dot(wt, wt).as_f64();
    }
    Ok(RoundLog {
        record: TraceRecord {
            h: 0,
            elapsed_ms_estimated: None,
            dual: None,
            primal,
            gap: Some(TRAINER_GAP),
            dropped: Vec::new(),
            theta: None,
        },
        updates: vec![0; ds.num_tasks()],
    })
}

/// Epoch cap for [`centralized_optimum`].
pub const CENTRAL_MAX_EPOCHS: usize = 1_000_000;

/// Solves the full dual on one machine (exact coordinate steps with the
/// true `¼M̄` coupling) until `gap ≤ tol·max(1, |P|)`. Used as the reference
/// optimum for suboptimality curves.
pub fn centralized_optimum<T: Scalar>(
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
    tol: f64,
    seed: u64,
) -> Result<(DualState<T>, Objectives<T>)> {
    let m = ds.num_tasks();
    let mut alpha: Vec<Vec<T>> = ds.tasks().iter().map(|t| vec![T::zero(); t.len()]).collect();
    let mut w = PrimalState::<T>::zeros(ds.dim(), m);
    let coords: Vec<(usize, usize)> = ds
        .tasks()
        .iter()
        .enumerate()
        .flat_map(|(t, task)| (0..task.len()).map(move |i| (t, i)))
        .collect();
    let mut order = coords;
    let mut rng = stream(seed, Stream::LocalSolver, u64::MAX, u64::MAX);
    let half = T::half();
    for epoch in 0..CENTRAL_MAX_EPOCHS {
        for j in (1..order.len()).rev() {
            order.swap(j, rng.random_range(0..=j));
        }
        for &(t, i) in &order {
            let task = ds.task(t);
            let x = task.example(i);
            let kappa = half * rel.mbar[(t, t)];
            let delta = loss
                .coordinate_update(alpha[t][i], task.label(i), dot(w.column(t), x), task.norms2()[i], kappa)
                .map_err(|_| Error::DualInfeasible { task: t, index: i })?;
            if delta != T::zero() {
                alpha[t][i] += delta;
                for s in 0..m {
                    axpy(half * rel.mbar[(s, t)] * delta, x, w.column_mut(s));
                }
            }
        }
        if epoch % 4 == 3 || epoch == 0 {
            let state = DualState::from_alpha(ds, alpha.clone())?;
            let obj = objectives(&state, ds, loss, rel)?;
            if obj.gap.as_f64() <= tol * obj.primal.as_f64().abs().max(1.0) {
                return Ok((state, obj));
            }
            // Rebuild w from scratch to stop drift.
            w = primal_from_dual(state.v(), &rel.mbar);
        }
    }
    Err(Error::NoConvergence {
        what: "centralized reference solve",
        iterations: CENTRAL_MAX_EPOCHS,
    })
}

/// `(elapsed_ms, (P − P*) / |P*|)` for every timed record.
pub fn suboptimality_curve(records: &[TraceRecord], p_star: f64) -> Vec<(f64, f64)> {
    let scale = p_star.abs().max(f64::MIN_POSITIVE);
    records
        .iter()
        .filter_map(|r| r.elapsed_ms_estimated.map(|t| (t, (r.primal - p_star) / scale)))
        .collect()
}

/// First time a curve reaches `target`; `None` if it never does.
pub fn time_to_suboptimality(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    curve.iter().find(|p| p.1 <= target).map(|p| p.0)
}

/// Settings of the held-out comparison of local, global and multi-task models.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub shuffles: usize,
    pub train_fraction: f64,
    pub k_folds: usize,
    pub grid: Vec<f64>,
    pub standardize: bool,
    pub trainers: Vec<Trainer>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_error: f64,
    /// Sample standard deviation over shuffles divided by `√R`.
    pub std_error: f64,
    pub errors: Vec<f64>,
    pub lambdas: Vec<f64>,
}

/// Mean and standard error (sample sd / √R).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// For each shuffle: split, select `λ` by cross-validation on the training
/// part, refit, and record the mean test error of every trainer.
pub fn compare<T: Scalar>(ds: &FederatedDataset<T>, cfg: &CompareConfig, seed: u64) -> Result<Vec<MethodSummary>> {
    if cfg.shuffles == 0 || cfg.trainers.is_empty() {
        return Err(Error::Config(
            "compare needs at least one shuffle and one method".into(),
        ));
    }
    let per_shuffle = (0..cfg.shuffles)
        .map(|r| {
            let split_seed = stream_seed(seed, Stream::Split, 0, r as u64);
            let (mut train, mut test) = train_test_split(ds, cfg.train_fraction, split_seed)?;
            if cfg.standardize {
                let z = Standardizer::fit(&train);
                train = z.apply(&train)?;
                test = z.apply(&test)?;
            }
            cfg.trainers
                .iter()
                .map(|trainer| {
                    let sel = model_select(&train, trainer, &cfg.grid, cfg.k_folds, split_seed)?;
                    let w = trainer.fit(&train, sel.lambda)?;
                    Ok((prediction_error(&w, &test)?.mean, sel.lambda))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cfg
        .trainers
        .iter()
        .enumerate()
        .map(|(k, trainer)| {
            let errors: Vec<f64> = per_shuffle.iter().map(|s| s[k].0).collect();
            let lambdas = per_shuffle.iter().map(|s| s[k].1).collect();
            let (mean_error, std_error) = mean_and_stderr(&errors);
            MethodSummary {
                method: trainer.name().to_string(),
                mean_error,
                std_error,
                errors,
                lambdas,
            }
        })
        .collect())
}

/// One curve of a dropout sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultCurve {
    pub label: String,
    pub probabilities: Vec<f64>,
    pub records: Vec<TraceRecord>,
}

impl FaultCurve {
    /// First round whose gap is at most `tol`.
    pub fn rounds_to_gap(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .position(|r| r.gap.is_some_and(|g| g <= tol))
            .map(|k| k + 1)
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.gap)
    }
}

/// MOCHA under uniform drop probability `p` for each listed value, plus
/// (optionally) the scenario where node 0 never responds.
pub fn fault_sweep<T: Scalar>(
    ds: &FederatedDataset<T>,
    cfg: &SimulationConfig,
    probabilities: &[f64],
    permanent_drop: bool,
) -> Result<Vec<FaultCurve>> {
    let m = ds.num_tasks();
    let mut scenarios: Vec<(String, Vec<f64>)> =
        probabilities.iter().map(|&p| (format!("p={p}"), vec![p; m])).collect();
    if permanent_drop {
        let mut p = vec![0.0; m];
        p[0] = 1.0;
        scenarios.push(("p1=1".into(), p));
    }
    scenarios
        .into_par_iter()
        .map(|(label, probs)| {
            let cfg = SimulationConfig {
                drop_probabilities: probs.clone(),
                ..cfg.clone()
            };
            let run = simulate_run(&Method::Mocha { budget_scale: 1.0 }, ds, &cfg)?;
            Ok(FaultCurve {
                label,
                probabilities: probs,
                records: run.records,
            })
        })
        .collect()
}

/// One cell of the method × network × heterogeneity grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchCell {
    pub method: String,
    pub preset: String,
    pub heterogeneity: Heterogeneity,
    /// `(elapsed_ms, primal_suboptimality)`
    pub curve: Vec<(f64, f64)>,
}

/// Runs every method under every preset and heterogeneity mode against a
/// shared reference optimum `p_star`.
pub fn bench<T: Scalar>(
    ds: &FederatedDataset<T>,
    base: &SimulationConfig,
    methods: &[Method],
    presets: &[NetworkPreset],
    modes: &[Heterogeneity],
    p_star: f64,
) -> Result<Vec<BenchCell>> {
    let mut jobs = Vec::new();
    for method in methods {
        for &mode in modes {
            jobs.push((*method, mode));
        }
    }
    let cells: Vec<Vec<BenchCell>> = jobs
        .into_par_iter()
        .map(|(method, mode)| {
            let cfg = SimulationConfig {
                heterogeneity: mode,
                ..base.clone()
            };
            let runs = simulate_presets(&method, ds, &cfg, presets)?;
            Ok(runs
                .iter()
                .zip(presets)
                .map(|(run, preset)| BenchCell {
                    method: method.label(),
                    preset: preset.name.clone(),
                    heterogeneity: mode,
                    curve: suboptimality_curve(&run.records, p_star),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(cells.into_iter().flatten().collect())
}

/// Reference primal optimum under the model's initial Ω.
pub fn reference_primal<T: Scalar>(ds: &FederatedDataset<T>, cfg: &SimulationConfig) -> Result<f64> {
    let rel = cfg
        .solver
        .relationship(&cfg.model, cfg.model.initial_omega::<T>(ds.num_tasks()))?;
    let (_, obj) = centralized_optimum(ds, cfg.solver.loss, &rel, 1e-10, cfg.solver.seed)?;
    Ok(obj.primal.as_f64())
}
