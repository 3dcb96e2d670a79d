//! The federated primal-dual W-update and the outer alternation with Ω.

mod local;
mod objective;
mod round;
mod state;

pub use local::{
    local_subproblem_value, measure_theta, measure_theta_against, oracle_subproblem_opt, oracle_subproblem_until,
    solve_local, theta_from_values, LocalSolution, LocalSolver, LocalView, OracleSolution, ORACLE_MAX_EPOCHS,
};
pub use objective::{
    conjugate_loss_sum, dual_objective, duality_gap, empirical_loss, objectives, primal_objective,
    primal_objective_with, Objectives,
};
pub use round::{
    execute_round, federated_round, FixedBudget, LemmaRecord, NodeSolver, RoundContext, RoundPlan, RoundScheduler,
    RoundStats,
};
pub use state::{DualState, PrimalState};

use serde::{Deserialize, Serialize};

use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::losses::LossKind;
use crate::regularizers::{primal_from_dual, update_omega, OmegaModel, RelationshipState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    #[default]
    Global,
    PerTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub loss: LossKind,
    pub gamma: f64,
    pub sigma_mode: SigmaMode,
    /// Federated rounds per W-update (constant across outer iterations).
    pub rounds_per_update: usize,
    /// Ends a W-update early once the duality gap is at most this.
    pub gap_tolerance: Option<f64>,
    pub outer_iterations: usize,
    pub seed: u64,
    pub measure_theta: bool,
    pub record_lemma: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            loss: LossKind::Hinge,
            gamma: 1.0,
            sigma_mode: SigmaMode::Global,
            rounds_per_update: 100,
            gap_tolerance: None,
            outer_iterations: 1,
            seed: 0,
            measure_theta: false,
            record_lemma: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} must lie in (0, 1]", self.gamma)));
        }
        if let Some(tol) = self.gap_tolerance {
            if !(tol >= 0.0) {
                return Err(Error::Config(format!("gap_tolerance {tol} must be nonnegative")));
            }
        }
        Ok(())
    }

    /// `Ω`-dependent solver parameters under this config.
    pub fn relationship<T: Scalar>(&self, model: &OmegaModel, omega: Mat<T>) -> Result<RelationshipState<T>> {
        Ok(RelationshipState::new(model, omega, T::of(self.gamma))?
            .with_per_task_sigma(self.sigma_mode == SigmaMode::PerTask))
    }
}

/// When a W-update stops: after `max_rounds` or once `gap ≤ gap_tolerance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_rounds: usize,
    pub gap_tolerance: Option<f64>,
}

/// Repeated federated rounds under a scheduler.
///
/// `first_round` is the global round index used for RNG streams and trace
/// numbering. Returns one [`RoundStats`] per executed round.
#[allow(clippy::too_many_arguments)]
pub fn run_w_update<T: Scalar>(
    state: &mut DualState<T>,
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
    scheduler: &dyn RoundScheduler,
    stop: StopRule,
    ctx: RoundContext,
) -> Result<Vec<RoundStats>> {
    let sizes = ds.task_sizes();
    let mut trace = Vec::new();
    if let Some(tol) = stop.gap_tolerance {
        if duality_gap(state, ds, loss, rel)?.as_f64() <= tol {
            return Ok(trace);
        }
    }
    for k in 0..stop.max_rounds {
        let round = ctx.round + k as u64;
        let plan = scheduler.plan(round, &sizes);
        let stats = federated_round(state, ds, loss, rel, &plan, RoundContext { round, ..ctx })?;
        if !stats.gap.is_finite() {
            return Err(Error::NonFinite("duality gap"));
        }
        let done = stop.gap_tolerance.is_some_and(|tol| stats.gap <= tol);
        trace.push(stats);
        if done {
            break;
        }
    }
    Ok(trace)
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterStats {
    pub iteration: usize,
    pub rounds: usize,
    pub gap: f64,
    /// `D(α)` re-evaluated under the updated Ω.
    pub dual_after_omega_update: f64,
    pub sigma_prime: f64,
}

#[derive(Debug, Clone)]
pub struct MochaRun<T> {
    pub weights: PrimalState<T>,
    pub omega: Mat<T>,
    pub dual: DualState<T>,
    pub trace: Vec<RoundStats>,
    pub outer: Vec<OuterStats>,
}

/// Alternates W-updates (federated rounds) with central Ω updates.
///
/// The returned weights are `w(α)` from the last W-update; the returned
/// `Ω` is the one computed from those weights.
pub fn run_mocha<T: Scalar>(
    ds: &FederatedDataset<T>,
    model: &OmegaModel,
    config: &SolverConfig,
    scheduler: &dyn RoundScheduler,
) -> Result<MochaRun<T>> {
    config.validate()?;
    model.validate()?;
    let m = ds.num_tasks();
    let mut omega = model.initial_omega::<T>(m);
    let mut dual = DualState::zeros(ds);
    let mut weights = PrimalState::zeros(ds.dim(), m);
    let mut trace = Vec::new();
    let mut outer = Vec::new();
    let mut next_round = 0u64;
    for iteration in 0..config.outer_iterations {
        let rel = config.relationship(model, omega.clone())?;
        let rounds = run_w_update(
            &mut dual,
            ds,
            config.loss,
            &rel,
            scheduler,
            StopRule {
                max_rounds: config.rounds_per_update,
                gap_tolerance: config.gap_tolerance,
            },
            RoundContext {
                seed: config.seed,
                round: next_round,
                measure_theta: config.measure_theta,
                record_lemma: config.record_lemma,
            },
        )?;
        next_round += rounds.len() as u64;
        let gap = match rounds.last() {
            Some(s) => s.gap,
            None => duality_gap(&dual, ds, config.loss, &rel)?.as_f64(),
        };
        weights = primal_from_dual(dual.v(), &rel.mbar);
        omega = update_omega(model, &weights, &omega)?;
        let next_rel = config.relationship(model, omega.clone())?;
        outer.push(OuterStats {
            iteration,
            rounds: rounds.len(),
            gap,
            dual_after_omega_update: dual_objective(&dual, ds, config.loss, &next_rel)?.as_f64(),
            sigma_prime: rel.sigma_prime.as_f64(),
        });
        trace.extend(rounds);
    }
    Ok(MochaRun {
        weights,
        omega,
        dual,
        trace,
        outer,
    })
}
