//! The data-local dual subproblem of one node and its solvers.
//!
//! For task `t` with current dual block `α`, broadcast weights `w` and
//! curvature `κ = σ'·M̄_tt`, the subproblem is
//!
//! `G(Δα) = Σ_i ℓ*(−α_i − Δα_i) + ⟨w, XΔα⟩ + (κ/2)‖XΔα‖²`
//!
//! with the constant that does not depend on `Δα` left out.

use rand::Rng;

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::losses::{Extended, LossKind};
use crate::rng::StreamRng;
use crate::scalar::{axpy, dot, norm2, Scalar};

/// Read-only snapshot a node needs to work on its subproblem.
#[derive(Debug, Clone, Copy)]
pub struct LocalView<'a, T> {
    pub task_index: usize,
    pub task: &'a TaskDataset<T>,
    pub alpha: &'a [T],
    pub w: &'a [T],
    pub kappa: T,
    pub loss: LossKind,
}

/// Output of a local solve: `Δα_t`, `Δv_t = X_tΔα_t`, and the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution<T> {
    pub delta_alpha: Vec<T>,
    pub delta_v: Vec<T>,
    pub updates: usize,
}

impl<T: Scalar> LocalSolution<T> {
    pub fn zero(n: usize, d: usize) -> Self {
        LocalSolution {
            delta_alpha: vec![T::zero(); n],
            delta_v: vec![T::zero(); d],
            updates: 0,
        }
    }
}

impl<'a, T: Scalar> LocalView<'a, T> {
    /// `G(Δα)` given `z = XΔα`.
    pub fn value_with(&self, delta_alpha: &[T], z: &[T]) -> Extended<T> {
        let conj: Extended<T> = self
            .alpha
            .iter()
            .zip(delta_alpha)
            .enumerate()
            .map(|(i, (&a, &d))| self.loss.conjugate(a + d, self.task.label(i)))
            .sum();
        conj + Extended::Finite(dot(self.w, z) + T::half() * self.kappa * norm2(z))
    }

    /// `G(Δα)`.
    pub fn value(&self, delta_alpha: &[T]) -> Extended<T> {
        self.value_with(delta_alpha, &self.task.combine(delta_alpha))
    }

    /// Upper bound on `G(Δα) − min G`.
    ///
    /// With `β = α + Δα`, `z = XΔα` and `p = w + κz`, the bound is the sum of
    /// Fenchel–Young residuals `Σ_i ℓ(x_i·p) + ℓ*(−β_i) + β_i (x_i·p)`; every
    /// term is nonnegative, and all vanish exactly at the minimizer.
    pub fn suboptimality_bound(&self, delta_alpha: &[T], z: &[T]) -> Extended<T> {
        let p: Vec<T> = self.w.iter().zip(z).map(|(&w, &z)| w + self.kappa * z).collect();
        let mut bound = T::zero();
        for (i, (&a, &d)) in self.alpha.iter().zip(delta_alpha).enumerate() {
            let y = self.task.label(i);
            let b = a + d;
            let u = dot(self.task.example(i), &p);
            match self.loss.conjugate(b, y) {
                Extended::Finite(c) => bound += self.loss.value(u, y) + c + b * u,
                Extended::Infinite => return Extended::Infinite,
            }
        }
        Extended::Finite(bound)
    }

    fn remap(&self, i: usize, e: Error) -> Error {
        match e {
            Error::DualInfeasible { .. } => Error::DualInfeasible {
                task: self.task_index,
                index: i,
            },
            other => other,
        }
    }
}

/// Incremental coordinate-descent state on one subproblem.
///
/// Keeps `Δα`, `z = XΔα`, and the running change in `G` so callers can
/// stop on a target value without re-evaluating the subproblem.
#[derive(Debug, Clone)]
pub struct LocalSolver<'a, T> {
    view: LocalView<'a, T>,
    delta_alpha: Vec<T>,
    z: Vec<T>,
    value: T,
    updates: usize,
}

impl<'a, T: Scalar> LocalSolver<'a, T> {
    pub fn new(view: LocalView<'a, T>) -> Result<Self> {
        let n = view.task.len();
        let value = match view.value_with(&vec![T::zero(); n], &vec![T::zero(); view.task.dim()]) {
            Extended::Finite(v) => v,
            Extended::Infinite => {
                let i = (0..n)
                    .find(|&i| !view.loss.is_feasible(view.alpha[i], view.task.label(i)))
                    .unwrap_or(0);
                return Err(Error::DualInfeasible {
                    task: view.task_index,
                    index: i,
                });
            }
        };
        Ok(LocalSolver {
            view,
            delta_alpha: vec![T::zero(); n],
            z: vec![T::zero(); view.task.dim()],
            value,
            updates: 0,
        })
    }

    /// Exact minimization of `G` along coordinate `i`.
    pub fn step(&mut self, i: usize) -> Result<()> {
        let v = &self.view;
        let x = v.task.example(i);
        let y = v.task.label(i);
        let a = v.alpha[i] + self.delta_alpha[i];
        let score = dot(v.w, x) + v.kappa * dot(x, &self.z);
        let q = v.task.norms2()[i];
        let delta = v
            .loss
            .coordinate_update(a, y, score, q, v.kappa)
            .map_err(|e| v.remap(i, e))?;
        self.updates += 1;
        if delta == T::zero() {
            return Ok(());
        }
        let before = v.loss.conjugate(a, y).finite().unwrap_or_else(T::zero);
        let after = v
            .loss
            .conjugate(a + delta, y)
            .finite()
            .ok_or_else(|| v.remap(i, Error::DualInfeasible { task: 0, index: 0 }))?;
        self.value += after - before + delta * score + T::half() * v.kappa * delta * delta * q;
        self.delta_alpha[i] += delta;
        axpy(delta, x, &mut self.z);
        Ok(())
    }

    /// One update on a coordinate drawn uniformly with replacement.
    pub fn step_random(&mut self, rng: &mut StreamRng) -> Result<()> {
        let i = rng.random_range(0..self.view.task.len());
        self.step(i)
    }

    /// Running value of `G(Δα)` (accumulated, not re-evaluated).
    pub fn value(&self) -> T {
        self.value
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn delta_alpha(&self) -> &[T] {
        &self.delta_alpha
    }

    pub fn z(&self) -> &[T] {
        &self.z
    }

    pub fn view(&self) -> &LocalView<'a, T> {
        &self.view
    }

    /// Replaces `Δα` wholesale, recomputing `z` and the value.
    pub fn jump_to(&mut self, delta_alpha: Vec<T>) -> Result<()> {
        assert_eq!(delta_alpha.len(), self.delta_alpha.len());
        let z = self.view.task.combine(&delta_alpha);
        self.value = self
            .view
            .value_with(&delta_alpha, &z)
            .finite()
            .ok_or(Error::DualInfeasible {
                task: self.view.task_index,
                index: 0,
            })?;
        self.delta_alpha = delta_alpha;
        self.z = z;
        Ok(())
    }

    pub fn into_solution(self) -> LocalSolution<T> {
        LocalSolution {
            delta_alpha: self.delta_alpha,
            delta_v: self.z,
            updates: self.updates,
        }
    }
}

/// `G(Δα)` for task `t`; [`Extended::Infinite`] outside the conjugate domain.
pub fn local_subproblem_value<T: Scalar>(view: &LocalView<'_, T>, delta_alpha: &[T]) -> Extended<T> {
    view.value(delta_alpha)
}

/// `budget` randomized coordinate updates, uniform with replacement.
pub fn solve_local<T: Scalar>(view: LocalView<'_, T>, budget: usize, rng: &mut StreamRng) -> Result<LocalSolution<T>> {
    let mut solver = LocalSolver::new(view)?;
    for _ in 0..budget {
        solver.step_random(rng)?;
    }
    Ok(solver.into_solution())
}

/// Epoch cap for [`oracle_subproblem_opt`].
pub const ORACLE_MAX_EPOCHS: usize = 200_000;

/// Exact subproblem minimizer and its value.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution<T> {
    pub delta_alpha: Vec<T>,
    pub value: T,
    /// `G(0)`
    pub initial_value: T,
}

/// Minimizes the subproblem by cyclic coordinate descent until the
/// certified suboptimality drops below `1e-12` relative to the objective
/// scale (or the precision floor of `T`).
pub fn oracle_subproblem_opt<T: Scalar>(view: LocalView<'_, T>) -> Result<OracleSolution<T>> {
    let rel_tol = T::of(1e-12).max(T::epsilon() * T::of(64.0));
    oracle_subproblem_until(view, |_, initial, value, bound| {
        bound <= rel_tol * T::one().max(initial.abs()).max(value.abs())
    })
}

/// Cyclic coordinate descent until `done(epoch, G(0), G(Δα), bound)` holds,
/// where `bound >= G(Δα) − G*` is the Fenchel–Young certificate.
pub fn oracle_subproblem_until<T: Scalar>(
    view: LocalView<'_, T>,
    done: impl Fn(usize, T, T, T) -> bool,
) -> Result<OracleSolution<T>> {
    let n = view.task.len();
    let mut solver = LocalSolver::new(view)?;
    let initial_value = solver.value();
    for epoch in 0..ORACLE_MAX_EPOCHS {
        for i in 0..n {
            solver.step(i)?;
        }
        let (value, bound) = match (
            view.value_with(solver.delta_alpha(), solver.z()),
            view.suboptimality_bound(solver.delta_alpha(), solver.z()),
        ) {
            (Extended::Finite(v), Extended::Finite(b)) => (v, b),
            _ => return Err(Error::NonFinite("oracle subproblem value")),
        };
        if done(epoch, initial_value, value, bound) {
            // Re-evaluate from scratch so that measuring the oracle's own Δα
            // reproduces `value` bit for bit.
            let value = view
                .value(solver.delta_alpha())
                .finite()
                .ok_or(Error::NonFinite("oracle subproblem value"))?;
            return Ok(OracleSolution {
                delta_alpha: solver.delta_alpha,
                value,
                initial_value,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "oracle subproblem",
        iterations: ORACLE_MAX_EPOCHS,
    })
}

/// `θ = (G(Δα) − G*) / (G(0) − G*)`, zero when the denominator is below
/// `1e-14`, clipped to `[0, 1]`.
pub fn theta_from_values(value: f64, initial: f64, optimum: f64) -> f64 {
    let den = initial - optimum;
    if !(den > 1e-14) {
        return 0.0;
    }
    ((value - optimum) / den).clamp(0.0, 1.0)
}

/// Accuracy of `delta_alpha` on the subproblem relative to the oracle.
pub fn measure_theta<T: Scalar>(view: LocalView<'_, T>, delta_alpha: &[T]) -> Result<f64> {
    let oracle = oracle_subproblem_opt(view)?;
    measure_theta_against(&view, delta_alpha, &oracle)
}

/// As [`measure_theta`] with a precomputed oracle solution.
pub fn measure_theta_against<T: Scalar>(
    view: &LocalView<'_, T>,
    delta_alpha: &[T],
    oracle: &OracleSolution<T>,
) -> Result<f64> {
    let value = view.value(delta_alpha).finite().ok_or(Error::DualInfeasible {
        task: view.task_index,
        index: 0,
    })?;
    Ok(theta_from_values(
        value.as_f64(),
        oracle.initial_value.as_f64(),
        oracle.value.as_f64(),
    ))
}
