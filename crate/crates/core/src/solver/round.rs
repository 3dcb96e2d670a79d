use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::regularizers::{conjugate_r, primal_from_dual, RelationshipState};
use crate::rng::{stream, Stream, StreamRng};
use crate::scalar::Scalar;

use super::local::{measure_theta_against, oracle_subproblem_opt, solve_local, LocalSolution, LocalView};
use super::objective::{dual_objective, objectives};
use super::state::DualState;

/// Per-node work assignment for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub budgets: Vec<usize>,
    pub drops: Vec<bool>,
}

impl RoundPlan {
    /// Every node runs `budget` updates, nobody drops.
    pub fn uniform(m: usize, budget: usize) -> Self {
        RoundPlan {
            budgets: vec![budget; m],
            drops: vec![false; m],
        }
    }

    pub fn dropped_ids(&self) -> Vec<usize> {
        (0..self.drops.len()).filter(|&t| self.drops[t]).collect()
    }
}

/// Source of per-round budgets and drops.
pub trait RoundScheduler: Sync {
    fn plan(&self, round: u64, ds_sizes: &[usize]) -> RoundPlan;
}

/// Fixed budget per node for every round; `None` means `n_t` updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FixedBudget(pub Option<usize>);

impl RoundScheduler for FixedBudget {
    fn plan(&self, _round: u64, sizes: &[usize]) -> RoundPlan {
        RoundPlan {
            budgets: sizes.iter().map(|&n| self.0.unwrap_or(n)).collect(),
            drops: vec![false; sizes.len()],
        }
    }
}

/// Both sides of the per-round decrease inequality
/// `D(α + γΔα) ≤ (1 − γ)D(α) + γ(Σ_t G_t(Δα_t) + R*(Xα))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaRecord {
    pub gamma: f64,
    pub dual_before: f64,
    /// `Σ_t G_t(Δα_t) + R*(Xα)` with the constant re-added.
    pub subproblem_sum: f64,
    pub dual_after: f64,
}

impl LemmaRecord {
    pub fn rhs(&self) -> f64 {
        (1.0 - self.gamma) * self.dual_before + self.gamma * self.subproblem_sum
    }

    /// `rhs − lhs`; negative when the inequality is violated.
    pub fn slack(&self) -> f64 {
        self.rhs() - self.dual_after
    }

    pub fn scale(&self) -> f64 {
        1f64.max(self.dual_before.abs())
            .max(self.subproblem_sum.abs())
            .max(self.dual_after.abs())
    }
}

/// Diagnostics for one executed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub h: u64,
    pub dual: f64,
    pub primal: f64,
    pub gap: f64,
    pub theta: Option<Vec<f64>>,
    pub updates: Vec<usize>,
    pub dropped: Vec<usize>,
    pub lemma: Option<LemmaRecord>,
}

/// Seed, global round index, and which diagnostics to record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundContext {
    pub seed: u64,
    pub round: u64,
    pub measure_theta: bool,
    pub record_lemma: bool,
}

/// A node-local solver: given task `t`'s view and its RNG stream, returns
/// `(Δα_t, Δv_t)`.
pub trait NodeSolver<T>: Sync {
    fn solve(&self, t: usize, view: LocalView<'_, T>, rng: &mut StreamRng) -> Result<LocalSolution<T>>;
}

impl<T, F> NodeSolver<T> for F
where
    F: Fn(usize, LocalView<'_, T>, &mut StreamRng) -> Result<LocalSolution<T>> + Sync,
{
    fn solve(&self, t: usize, view: LocalView<'_, T>, rng: &mut StreamRng) -> Result<LocalSolution<T>> {
        self(t, view, rng)
    }
}

/// One synchronous round with an arbitrary node solver.
///
/// Live nodes solve in parallel against the same `w(α)`; the coordinator
/// then applies `α_t += γΔα_t`, `v_t += γΔv_t` in task order.
pub fn execute_round<T: Scalar, S: NodeSolver<T>>(
    state: &mut DualState<T>,
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
    drops: &[bool],
    ctx: RoundContext,
    node_solver: &S,
) -> Result<RoundStats> {
    let m = ds.num_tasks();
    if drops.len() != m || rel.num_tasks() != m {
        return Err(Error::Dimension(format!(
            "round plan or Ω sized for a different task count than {m}"
        )));
    }
    let w = primal_from_dual(state.v(), &rel.mbar);
    let dual_before = if ctx.record_lemma {
        Some(dual_objective(state, ds, loss, rel)?)
    } else {
        None
    };

    let results: Vec<Result<_>> = (0..m)
        .into_par_iter()
        .map(|t| {
            let task = ds.task(t);
            let view = LocalView {
                task_index: t,
                task,
                alpha: state.alpha_block(t),
                w: w.column(t),
                kappa: rel.kappa(t),
                loss,
            };
            let sol = if drops[t] {
                LocalSolution::zero(task.len(), task.dim())
            } else {
                let mut rng = stream(ctx.seed, Stream::LocalSolver, t as u64, ctx.round);
                node_solver.solve(t, view, &mut rng)?
            };
            let theta = if ctx.measure_theta {
                let oracle = oracle_subproblem_opt(view)?;
                Some(measure_theta_against(&view, &sol.delta_alpha, &oracle)?)
            } else {
                None
            };
            let value = if ctx.record_lemma {
                view.value_with(&sol.delta_alpha, &sol.delta_v)
                    .finite()
                    .ok_or(Error::DualInfeasible { task: t, index: 0 })?
            } else {
                T::zero()
            };
            Ok((sol, theta, value))
        })
        .collect();

    let mut solutions = Vec::with_capacity(m);
    let mut thetas = Vec::with_capacity(m);
    let mut local_sum = T::zero();
    for r in results {
        let (sol, theta, value) = r?;
        solutions.push(sol);
        thetas.push(theta);
        local_sum += value;
    }
    let subproblem_sum = if ctx.record_lemma {
        Some(local_sum + conjugate_r(state.v(), &rel.mbar))
    } else {
        None
    };

    for (t, sol) in solutions.iter().enumerate() {
        if sol.updates > 0 {
            state.apply_block(t, rel.gamma, &sol.delta_alpha, &sol.delta_v);
        }
    }

    let obj = objectives(state, ds, loss, rel)?;
    let lemma = match (dual_before, subproblem_sum) {
        (Some(before), Some(sum)) => Some(LemmaRecord {
            gamma: rel.gamma.as_f64(),
            dual_before: before.as_f64(),
            subproblem_sum: sum.as_f64(),
            dual_after: obj.dual.as_f64(),
        }),
        _ => None,
    };
    Ok(RoundStats {
        h: ctx.round,
        dual: obj.dual.as_f64(),
        primal: obj.primal.as_f64(),
        gap: obj.gap.as_f64(),
        theta: if ctx.measure_theta {
            Some(thetas.into_iter().map(|x| x.unwrap_or(1.0)).collect())
        } else {
            None
        },
        updates: solutions.iter().map(|s| s.updates).collect(),
        dropped: (0..m).filter(|&t| drops[t]).collect(),
        lemma,
    })
}

/// One MOCHA round: node `t` runs `plan.budgets[t]` random coordinate
/// updates unless it drops.
pub fn federated_round<T: Scalar>(
    state: &mut DualState<T>,
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
    plan: &RoundPlan,
    ctx: RoundContext,
) -> Result<RoundStats> {
    if plan.budgets.len() != ds.num_tasks() {
        return Err(Error::Dimension("one budget per task required".into()));
    }
    let budgets = &plan.budgets;
    let solver = |t: usize, view: LocalView<'_, T>, rng: &mut StreamRng| solve_local(view, budgets[t], rng);
    execute_round(state, ds, loss, rel, &plan.drops, ctx, &solver)
}
