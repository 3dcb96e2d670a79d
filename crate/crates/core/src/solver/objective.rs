use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::losses::{Extended, LossKind};
use crate::regularizers::{conjugate_r, primal_from_dual, regularizer_matrix, OmegaModel, RelationshipState};
use crate::scalar::{dot, Scalar};

use super::state::{DualState, PrimalState};

/// `Σ_t Σ_i ℓ*(−α_t^i)`; errors on the first coordinate outside the domain.
pub fn conjugate_loss_sum<T: Scalar>(state: &DualState<T>, ds: &FederatedDataset<T>, loss: LossKind) -> Result<T> {
    let mut total = T::zero();
    for (t, task) in ds.tasks().iter().enumerate() {
        for (i, &a) in state.alpha_block(t).iter().enumerate() {
            match loss.conjugate(a, task.label(i)) {
                Extended::Finite(c) => total += c,
                Extended::Infinite => return Err(Error::DualInfeasible { task: t, index: i }),
            }
        }
    }
    Ok(total)
}

/// `D(α) = Σ ℓ*(−α) + R*(Xα)`, the dual objective (minimized).
pub fn dual_objective<T: Scalar>(
    state: &DualState<T>,
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
) -> Result<T> {
    Ok(conjugate_loss_sum(state, ds, loss)? + conjugate_r(state.v(), &rel.mbar))
}

/// `Σ_t Σ_i ℓ(w_t·x_t^i, y_t^i)`.
pub fn empirical_loss<T: Scalar>(w: &PrimalState<T>, ds: &FederatedDataset<T>, loss: LossKind) -> Result<T> {
    check_dims(w, ds)?;
    let mut total = T::zero();
    for (t, task) in ds.tasks().iter().enumerate() {
        let wt = w.column(t);
        for i in 0..task.len() {
            total += loss.value(dot(wt, task.example(i)), task.label(i));
        }
    }
    Ok(total)
}

/// Primal objective with a precomputed `Q̄`.
pub fn primal_objective_with<T: Scalar>(
    w: &PrimalState<T>,
    ds: &FederatedDataset<T>,
    loss: LossKind,
    qbar: &Mat<T>,
) -> Result<T> {
    let value = empirical_loss(w, ds, loss)? + qbar.kron_quadratic_form(w.columns());
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("primal objective"))
    }
}

/// `P(W) = Σ ℓ(w_t·x) + R(W, Ω)`.
pub fn primal_objective<T: Scalar>(
    w: &PrimalState<T>,
    ds: &FederatedDataset<T>,
    loss: LossKind,
    omega: &Mat<T>,
    model: &OmegaModel,
) -> Result<T> {
    if omega.rows() != w.num_tasks() {
        return Err(Error::Dimension(format!(
            "Ω has {} rows for {} tasks",
            omega.rows(),
            w.num_tasks()
        )));
    }
    primal_objective_with(w, ds, loss, &regularizer_matrix(model, omega)?)
}

/// Dual, primal at `W(α)`, and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives<T> {
    pub dual: T,
    pub primal: T,
    pub gap: T,
}

pub fn objectives<T: Scalar>(
    state: &DualState<T>,
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
) -> Result<Objectives<T>> {
    let dual = dual_objective(state, ds, loss, rel)?;
    let w = primal_from_dual(state.v(), &rel.mbar);
    let primal = primal_objective_with(&w, ds, loss, &rel.qbar)?;
    Ok(Objectives {
        dual,
        primal,
        gap: dual + primal,
    })
}

/// `G(α) = D(α) + P(W(α))`.
pub fn duality_gap<T: Scalar>(
    state: &DualState<T>,
    ds: &FederatedDataset<T>,
    loss: LossKind,
    rel: &RelationshipState<T>,
) -> Result<T> {
    Ok(objectives(state, ds, loss, rel)?.gap)
}

fn check_dims<T: Scalar>(w: &PrimalState<T>, ds: &FederatedDataset<T>) -> Result<()> {
    if w.num_tasks() != ds.num_tasks() || w.dim() != ds.dim() {
        return Err(Error::Dimension(format!(
            "W is {}x{} but the data has d={} and m={}",
            w.dim(),
            w.num_tasks(),
            ds.dim(),
            ds.num_tasks()
        )));
    }
    Ok(())
}
