use mocha_core::data::{generate_synthetic, FederatedDataset, SyntheticSpec, TaskDataset};
use mocha_core::experiment::centralized_optimum;
use mocha_core::linalg::Mat;
use mocha_core::losses::Extended;
use mocha_core::regularizers::{mean_reg_omega, primal_from_dual, RelationshipState};
use mocha_core::rng::{stream, Stream};
use mocha_core::solver::*;
use mocha_core::theory::fitted_decay_factor;
use mocha_core::{Dataset, LossKind, OmegaModel};

fn spec(tasks: usize, dim: usize, n: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        tasks,
        dim,
        min_examples: n,
        max_examples: n,
        task_sizes: None,
        clusters: 2.min(tasks),
        deviation: 0.3,
        label_noise: 0.05,
        seed,
    }
}

fn mean_model() -> OmegaModel {
    OmegaModel::MeanRegularized {
        lambda1: 1.0,
        lambda2: 1.0,
    }
}

fn rel_for(ds: &Dataset, model: &OmegaModel, gamma: f64) -> RelationshipState<f64> {
    RelationshipState::new(model, model.initial_omega(ds.num_tasks()), gamma).unwrap()
}

fn view<'a>(
    ds: &'a Dataset,
    t: usize,
    alpha: &'a [f64],
    w: &'a [f64],
    kappa: f64,
    loss: LossKind,
) -> LocalView<'a, f64> {
    LocalView {
        task_index: t,
        task: ds.task(t),
        alpha,
        w,
        kappa,
        loss,
    }
}

#[test]
fn dual_objective_examples() {
    let ds: Dataset = generate_synthetic(&spec(3, 4, 5, 1)).unwrap();
    let rel = rel_for(&ds, &mean_model(), 1.0);
    let zero = DualState::zeros(&ds);
    assert_eq!(dual_objective(&zero, &ds, LossKind::Hinge, &rel).unwrap(), 0.0);

    let one = FederatedDataset::new(vec![TaskDataset::new(0, 2, vec![1.0, 0.0], vec![1.0]).unwrap()]).unwrap();
    let unit = OmegaModel::MeanRegularized {
        lambda1: 0.0,
        lambda2: 1.0,
    };
    let rel1 = rel_for(&one, &unit, 1.0);
    assert_eq!(rel1.mbar[(0, 0)], 1.0);
    let state = DualState::from_alpha(&one, vec![vec![1.0]]).unwrap();
    let d = dual_objective(&state, &one, LossKind::Hinge, &rel1).unwrap();
    assert!((d - (-1.0 + 0.25)).abs() < 1e-15);
}

#[test]
fn weak_duality_on_random_feasible_points() {
    let ds: Dataset = generate_synthetic(&spec(4, 5, 8, 2)).unwrap();
    let rel = rel_for(&ds, &mean_model(), 1.0);
    let mut rng = stream(9, Stream::Synthetic, 0, 0);
    use rand::Rng;
    for _ in 0..200 {
        let alpha: Vec<Vec<f64>> = ds
            .tasks()
            .iter()
            .map(|t| t.labels().iter().map(|&y| y * rng.random::<f64>()).collect())
            .collect();
        let state = DualState::from_alpha(&ds, alpha).unwrap();
        for loss in [LossKind::Hinge, LossKind::Squared] {
            let g = duality_gap(&state, &ds, loss, &rel).unwrap();
            assert!(g >= -1e-8, "gap {g}");
        }
    }
}

#[test]
fn primal_objective_examples() {
    let ds: Dataset = generate_synthetic(&spec(3, 4, 7, 3)).unwrap();
    let model = mean_model();
    let omega = mean_reg_omega::<f64>(3);
    let zero = PrimalState::zeros(4, 3);
    let n = ds.num_examples() as f64;
    assert_eq!(
        primal_objective(&zero, &ds, LossKind::Hinge, &omega, &model).unwrap(),
        n
    );
    assert_eq!(
        primal_objective(&zero, &ds, LossKind::Squared, &omega, &model).unwrap(),
        n / 2.0
    );

    // Independent evaluation summing terms in reverse order.
    let w = PrimalState::from_columns(vec![
        vec![0.3, -1.2, 0.5, 2.0],
        vec![-0.7, 0.1, 0.9, -0.4],
        vec![1.1, 0.0, -0.2, 0.6],
    ])
    .unwrap();
    let q = match model {
        OmegaModel::MeanRegularized { lambda1, lambda2 } => omega.scale(lambda1).add(&Mat::identity(3).scale(lambda2)),
        _ => unreachable!(),
    };
    for loss in [LossKind::Hinge, LossKind::Squared] {
        let mut total = 0.0;
        for t in (0..3).rev() {
            let task = ds.task(t);
            for i in (0..task.len()).rev() {
                let u: f64 = task.example(i).iter().zip(w.column(t)).rev().map(|(a, b)| a * b).sum();
                total += loss.value(u, task.label(i));
            }
        }
        for a in (0..3).rev() {
            for b in (0..3).rev() {
                let ip: f64 = w.column(a).iter().zip(w.column(b)).map(|(x, y)| x * y).sum();
                total += q[(a, b)] * ip;
            }
        }
        let p = primal_objective(&w, &ds, loss, &omega, &model).unwrap();
        assert!((p - total).abs() <= 1e-9 * total.abs().max(1.0));
    }
}

#[test]
fn duality_gap_at_zero_and_at_optimum() {
    let ds: Dataset = generate_synthetic(&spec(3, 5, 12, 4)).unwrap();
    let rel = rel_for(&ds, &mean_model(), 1.0);
    let zero = DualState::zeros(&ds);
    let n = ds.num_examples() as f64;
    assert_eq!(duality_gap(&zero, &ds, LossKind::Hinge, &rel).unwrap(), n);
    for loss in [LossKind::Hinge, LossKind::Squared] {
        let (state, obj) = centralized_optimum(&ds, loss, &rel, 1e-12, 0).unwrap();
        assert!(obj.gap <= 1e-8, "{loss:?} gap {}", obj.gap);
        assert!(duality_gap(&state, &ds, loss, &rel).unwrap() <= 1e-8);
    }
}

#[test]
fn local_subproblem_value_examples() {
    let task = TaskDataset::from_examples(
        0,
        &[vec![1.0, 2.0], vec![-0.5, 0.3], vec![0.0, -1.5]],
        vec![1.0, -1.0, 1.0],
    )
    .unwrap();
    let ds = FederatedDataset::new(vec![task]).unwrap();
    let alpha = [0.2, -0.4, 0.0];
    let w = [0.7, -0.3];
    let kappa = 1.7;
    for loss in [LossKind::Hinge, LossKind::Squared] {
        let v = view(&ds, 0, &alpha, &w, kappa, loss);
        let at_zero = local_subproblem_value(&v, &[0.0; 3]).finite().unwrap();
        let conj: f64 = (0..3)
            .map(|i| loss.conjugate(alpha[i], ds.task(0).label(i)).finite().unwrap())
            .sum();
        assert!((at_zero - conj).abs() < 1e-15);

        // Dense term-by-term evaluation.
        let delta = [0.3, -0.1, 0.5];
        let x = [[1.0, 2.0], [-0.5, 0.3], [0.0, -1.5]];
        let y = [1.0, -1.0, 1.0];
        let z = [
            delta[0] * x[0][0] + delta[1] * x[1][0] + delta[2] * x[2][0],
            delta[0] * x[0][1] + delta[1] * x[1][1] + delta[2] * x[2][1],
        ];
        let mut expected = 0.0;
        for i in 0..3 {
            expected += loss.conjugate(alpha[i] + delta[i], y[i]).finite().unwrap();
        }
        expected += w[0] * z[0] + w[1] * z[1] + 0.5 * kappa * (z[0] * z[0] + z[1] * z[1]);
        let got = local_subproblem_value(&v, &delta).finite().unwrap();
        assert!((got - expected).abs() < 1e-10, "{loss:?}: {got} vs {expected}");

        let mut solver = LocalSolver::new(v).unwrap();
        let before = solver.value();
        solver.step(1).unwrap();
        assert!(solver.value() <= before + 1e-15);
        let re = local_subproblem_value(&v, solver.delta_alpha()).finite().unwrap();
        assert!((re - solver.value()).abs() < 1e-12);
    }
    let v = view(&ds, 0, &alpha, &w, kappa, LossKind::Hinge);
    assert_eq!(local_subproblem_value(&v, &[2.0, 0.0, 0.0]), Extended::Infinite);
}

#[test]
fn solve_local_examples() {
    let ds: Dataset = generate_synthetic(&spec(1, 3, 5, 5)).unwrap();
    let alpha = vec![0.0; 5];
    let w = vec![0.1, -0.2, 0.3];
    for loss in [LossKind::Hinge, LossKind::Squared] {
        let v = view(&ds, 0, &alpha, &w, 0.8, loss);
        let mut rng = stream(1, Stream::LocalSolver, 0, 0);
        let zero = solve_local(v, 0, &mut rng).unwrap();
        assert_eq!(zero, LocalSolution::zero(5, 3));

        let long = solve_local(v, 10_000 * 5, &mut stream(1, Stream::LocalSolver, 0, 0)).unwrap();
        let again = solve_local(v, 10_000 * 5, &mut stream(1, Stream::LocalSolver, 0, 0)).unwrap();
        assert_eq!(long, again);
        let z = ds.task(0).combine(&long.delta_alpha);
        for (a, b) in z.iter().zip(&long.delta_v) {
            assert!((a - b).abs() < 1e-12);
        }
        let oracle = oracle_subproblem_opt(v).unwrap();
        let g = local_subproblem_value(&v, &long.delta_alpha).finite().unwrap();
        assert!((g - oracle.value).abs() < 1e-10, "{loss:?}: {g} vs {}", oracle.value);
        // Only the squared-loss conjugate is strongly convex, which gives
        // |Δα - Δα*|² <= 2 (G - G*).
        if loss == LossKind::Squared {
            for (a, b) in long.delta_alpha.iter().zip(&oracle.delta_alpha) {
                assert!((a - b).abs() < 2e-5, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn oracle_examples() {
    use rand::Rng;
    let ds: Dataset = generate_synthetic(&spec(1, 4, 9, 6)).unwrap();
    let alpha0 = vec![0.0; 9];
    let w = vec![0.2, 0.1, -0.3, 0.05];
    for loss in [LossKind::Hinge, LossKind::Squared] {
        let v = view(&ds, 0, &alpha0, &w, 1.3, loss);
        let opt = oracle_subproblem_opt(v).unwrap();
        // Random feasible perturbations never beat the oracle.
        let mut rng = stream(3, Stream::Synthetic, 0, 0);
        for _ in 0..1000 {
            let cand: Vec<f64> = opt
                .delta_alpha
                .iter()
                .zip(ds.task(0).labels())
                .map(|(&d, &y)| {
                    let step = 0.1 * (rng.random::<f64>() - 0.5);
                    match loss {
                        LossKind::Hinge => y * (y * d + step).clamp(0.0, 1.0),
                        LossKind::Squared => d + step,
                    }
                })
                .collect();
            let g = local_subproblem_value(&v, &cand).finite().unwrap();
            assert!(g >= opt.value - 1e-12);
        }
        // Re-solving from the optimum gives a zero step.
        let shifted: Vec<f64> = opt.delta_alpha.clone();
        let z = ds.task(0).combine(&shifted);
        let w_new: Vec<f64> = w.iter().zip(&z).map(|(a, b)| a + 1.3 * b).collect();
        let v2 = view(&ds, 0, &shifted, &w_new, 1.3, loss);
        let again = oracle_subproblem_opt(v2).unwrap();
        assert!(again.delta_alpha.iter().all(|d| d.abs() < 1e-6));
    }
}

#[test]
fn theta_examples() {
    let ds: Dataset = generate_synthetic(&spec(1, 4, 10, 7)).unwrap();
    let alpha = vec![0.0; 10];
    let w = vec![0.0; 4];
    for loss in [LossKind::Hinge, LossKind::Squared] {
        let v = view(&ds, 0, &alpha, &w, 1.0, loss);
        let opt = oracle_subproblem_opt(v).unwrap();
        assert_eq!(measure_theta(v, &[0.0; 10]).unwrap(), 1.0);
        assert!(measure_theta(v, &opt.delta_alpha).unwrap() < 1e-9);

        // Bisect along the segment 0 → Δα* for the midpoint of G.
        let target = 0.5 * (opt.initial_value + opt.value);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let d: Vec<f64> = opt.delta_alpha.iter().map(|x| mid * x).collect();
            if local_subproblem_value(&v, &d).finite().unwrap() > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let d: Vec<f64> = opt.delta_alpha.iter().map(|x| hi * x).collect();
        assert!((measure_theta(v, &d).unwrap() - 0.5).abs() < 1e-6);
    }
    assert_eq!(theta_from_values(1.0, 1.0, 1.0), 0.0);
}

#[test]
fn round_with_all_nodes_dropped_changes_nothing() {
    let ds: Dataset = generate_synthetic(&spec(3, 4, 6, 8)).unwrap();
    let rel = rel_for(&ds, &mean_model(), 1.0);
    let mut state = DualState::zeros(&ds);
    let plan = RoundPlan {
        budgets: vec![6; 3],
        drops: vec![true; 3],
    };
    let stats = federated_round(&mut state, &ds, LossKind::Hinge, &rel, &plan, RoundContext::default()).unwrap();
    assert_eq!(state, DualState::zeros(&ds));
    assert_eq!(stats.dropped, vec![0, 1, 2]);
    assert_eq!(stats.updates, vec![0, 0, 0]);
}

#[test]
fn single_task_exact_round_does_not_increase_gap() {
    let ds: Dataset = generate_synthetic(&spec(1, 5, 30, 9)).unwrap();
    let rel = rel_for(
        &ds,
        &OmegaModel::MeanRegularized {
            lambda1: 0.0,
            lambda2: 0.5,
        },
        1.0,
    );
    for loss in [LossKind::Hinge, LossKind::Squared] {
        let mut state = DualState::zeros(&ds);
        let mut prev = duality_gap(&state, &ds, loss, &rel).unwrap();
        let exact = |_t: usize, v: LocalView<'_, f64>, _rng: &mut mocha_core::rng::StreamRng| {
            let opt = oracle_subproblem_opt(v)?;
            let dv = v.task.combine(&opt.delta_alpha);
            Ok(LocalSolution {
                delta_alpha: opt.delta_alpha,
                delta_v: dv,
                updates: 1,
            })
        };
        for h in 0..5 {
            let ctx = RoundContext {
                round: h,
                ..RoundContext::default()
            };
            let s = execute_round(&mut state, &ds, loss, &rel, &[false], ctx, &exact).unwrap();
            assert!(s.gap <= prev + 1e-12, "{loss:?} round {h}: {} > {prev}", s.gap);
            prev = s.gap;
        }
    }
}

#[test]
fn rounds_preserve_invariants() {
    let ds: Dataset = generate_synthetic(&spec(5, 6, 15, 10)).unwrap();
    for model in [
        mean_model(),
        OmegaModel::ProbabilisticPrior {
            lambda: 1.0,
            sigma2: 1.0,
            ridge_eps: 1e-6,
        },
    ] {
        for gamma in [0.5, 1.0] {
            let rel = rel_for(&ds, &model, gamma);
            let mut state = DualState::zeros(&ds);
            for h in 0..40 {
                let plan = RoundPlan {
                    budgets: vec![7; 5],
                    drops: (0..5).map(|t| (t + h) % 4 == 0).collect(),
                };
                let ctx = RoundContext {
                    seed: 2,
                    round: h as u64,
                    record_lemma: true,
                    ..RoundContext::default()
                };
                let s = federated_round(&mut state, &ds, LossKind::Hinge, &rel, &plan, ctx).unwrap();
                assert!(s.dual + s.primal >= -1e-8);
                let lem = s.lemma.unwrap();
                assert!(lem.slack() >= -1e-8 * lem.scale());
            }
            assert!(state.v_consistency_error(&ds) <= 1e-8);
            state.check_feasible(&ds, LossKind::Hinge).unwrap();
        }
    }
}

#[test]
fn squared_loss_gap_decays_geometrically_and_stops_at_tolerance() {
    let ds: Dataset = generate_synthetic(&spec(4, 6, 20, 11)).unwrap();
    let cfg = SolverConfig {
        loss: LossKind::Squared,
        rounds_per_update: 500,
        gap_tolerance: Some(1e-6),
        ..SolverConfig::default()
    };
    let run = run_mocha(&ds, &mean_model(), &cfg, &FixedBudget(None)).unwrap();
    let last = run.trace.last().unwrap();
    assert!(last.gap <= 1e-6);
    assert!(run.trace.len() < 500);
    let gaps: Vec<f64> = run.trace.iter().map(|s| s.gap).collect();
    assert!(fitted_decay_factor(&gaps).unwrap() < 1.0);
}

struct DropFirst;

impl RoundScheduler for DropFirst {
    fn plan(&self, _round: u64, sizes: &[usize]) -> RoundPlan {
        let mut plan = FixedBudget(None).plan(0, sizes);
        plan.drops[0] = true;
        plan
    }
}

#[test]
fn permanently_dropped_node_plateaus() {
    let ds: Dataset = generate_synthetic(&spec(4, 6, 20, 12)).unwrap();
    let cfg = SolverConfig {
        loss: LossKind::Squared,
        rounds_per_update: 300,
        gap_tolerance: Some(1e-6),
        ..SolverConfig::default()
    };
    let run = run_mocha(&ds, &mean_model(), &cfg, &DropFirst).unwrap();
    assert_eq!(run.trace.len(), 300);
    assert!(run.trace.last().unwrap().gap > 1e-2);
}

#[test]
fn run_mocha_edge_cases() {
    let ds: Dataset = generate_synthetic(&spec(4, 5, 10, 13)).unwrap();
    let none = SolverConfig {
        outer_iterations: 0,
        ..SolverConfig::default()
    };
    let run = run_mocha(&ds, &mean_model(), &none, &FixedBudget(None)).unwrap();
    assert_eq!(run.weights, PrimalState::zeros(5, 4));
    assert!(run.trace.is_empty());

    // Fixed Ω: three outer iterations of 10 rounds equal one of 30.
    let three = SolverConfig {
        outer_iterations: 3,
        rounds_per_update: 10,
        ..SolverConfig::default()
    };
    let one = SolverConfig {
        outer_iterations: 1,
        rounds_per_update: 30,
        ..SolverConfig::default()
    };
    let a = run_mocha(&ds, &mean_model(), &three, &FixedBudget(None)).unwrap();
    let b = run_mocha(&ds, &mean_model(), &one, &FixedBudget(None)).unwrap();
    assert_eq!(a.omega, mean_reg_omega(4));
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn learned_omega_reflects_clusters() {
    let spec = SyntheticSpec {
        tasks: 8,
        dim: 10,
        min_examples: 40,
        max_examples: 40,
        task_sizes: None,
        clusters: 2,
        deviation: 0.1,
        label_noise: 0.0,
        seed: 14,
    };
    let ds: Dataset = generate_synthetic(&spec).unwrap();
    let model = OmegaModel::ProbabilisticPrior {
        lambda: 0.1,
        sigma2: 10.0,
        ridge_eps: 1e-6,
    };
    let cfg = SolverConfig {
        loss: LossKind::Hinge,
        rounds_per_update: 50,
        outer_iterations: 4,
        ..SolverConfig::default()
    };
    let run = run_mocha(&ds, &model, &cfg, &FixedBudget(None)).unwrap();
    let (mut within, mut across, mut nw, mut na) = (0.0, 0.0, 0, 0);
    for a in 0..8 {
        for b in 0..8 {
            if a == b {
                continue;
            }
            if a % 2 == b % 2 {
                within += run.omega[(a, b)];
                nw += 1;
            } else {
                across += run.omega[(a, b)];
                na += 1;
            }
        }
    }
    assert!(within / nw as f64 - across / na as f64 > 0.0);
    assert!((run.omega.trace() - 1.0).abs() < 1e-10);
    assert_eq!(run.outer.len(), 4);
}

#[test]
fn traces_do_not_depend_on_thread_count() {
    let ds: Dataset = generate_synthetic(&spec(6, 5, 12, 15)).unwrap();
    let cfg = SolverConfig {
        loss: LossKind::Hinge,
        rounds_per_update: 20,
        outer_iterations: 2,
        measure_theta: true,
        ..SolverConfig::default()
    };
    let model = OmegaModel::ProbabilisticPrior {
        lambda: 1.0,
        sigma2: 1.0,
        ridge_eps: 1e-6,
    };
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_mocha(&ds, &model, &cfg, &FixedBudget(Some(5))).unwrap())
    };
    let a = run_with(1);
    let b = run_with(4);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.weights, b.weights);
}

#[test]
fn works_in_single_precision() {
    let ds: FederatedDataset<f32> = generate_synthetic(&spec(3, 4, 10, 16)).unwrap();
    let cfg = SolverConfig {
        loss: LossKind::Squared,
        rounds_per_update: 200,
        gap_tolerance: Some(1e-2),
        ..SolverConfig::default()
    };
    let run = run_mocha(&ds, &mean_model(), &cfg, &FixedBudget(None)).unwrap();
    assert!(run.trace.last().unwrap().gap <= 1e-2);
    let w = primal_from_dual(
        run.dual.v(),
        &RelationshipState::<f32>::new(&mean_model(), mean_reg_omega(3), 1.0)
            .unwrap()
            .mbar,
    );
    assert_eq!(w, run.weights);
}
