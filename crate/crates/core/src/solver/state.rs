use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::losses::LossKind;
use crate::scalar::{dot, Scalar};

/// Per-task weight vectors, the columns of the d×m matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalState<T> {
    dim: usize,
    columns: Vec<Vec<T>>,
}

impl<T: Scalar> PrimalState<T> {
    pub fn zeros(dim: usize, tasks: usize) -> Self {
        PrimalState {
            dim,
            columns: vec![vec![T::zero(); dim]; tasks],
        }
    }

    pub fn from_columns(columns: Vec<Vec<T>>) -> Result<Self> {
        let dim = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != dim) {
            return Err(Error::Dimension("weight columns of differing length".into()));
        }
        Ok(PrimalState { dim, columns })
    }

    /// One weight vector shared by all `tasks` columns.
    pub fn broadcast(w: Vec<T>, tasks: usize) -> Self {
        PrimalState {
            dim: w.len(),
            columns: vec![w; tasks],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn num_tasks(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn column(&self, t: usize) -> &[T] {
        &self.columns[t]
    }

    pub fn column_mut(&mut self, t: usize) -> &mut [T] {
        &mut self.columns[t]
    }

    pub fn columns(&self) -> &[Vec<T>] {
        &self.columns
    }

    pub fn is_finite(&self) -> bool {
        self.columns.iter().flatten().all(|x| x.is_finite())
    }

    /// `WᵀW`, the m×m Gram matrix of the task weights.
    pub fn gram(&self) -> Mat<T> {
        let m = self.num_tasks();
        let mut g = Mat::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = dot(&self.columns[i], &self.columns[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// Frobenius norm of the difference to another weight matrix.
    pub fn distance(&self, other: &Self) -> T {
        self.columns
            .iter()
            .flatten()
            .zip(other.columns.iter().flatten())
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            .sqrt()
    }

    pub fn frobenius_norm(&self) -> T {
        self.columns.iter().flatten().map(|a| *a * *a).sum::<T>().sqrt()
    }
}

/// Dual variables `α` (one block per task) and the shared vector `v = Xα`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState<T> {
    alpha: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    dirty: bool,
}

impl<T: Scalar> DualState<T> {
    /// `α = 0`, `v = 0`.
    pub fn zeros(ds: &FederatedDataset<T>) -> Self {
        DualState {
            alpha: ds.tasks().iter().map(|t| vec![T::zero(); t.len()]).collect(),
            v: vec![vec![T::zero(); ds.dim()]; ds.num_tasks()],
            dirty: false,
        }
    }

    /// Builds a state from explicit dual blocks; `v` is recomputed.
    pub fn from_alpha(ds: &FederatedDataset<T>, alpha: Vec<Vec<T>>) -> Result<Self> {
        if alpha.len() != ds.num_tasks() || alpha.iter().zip(ds.tasks()).any(|(a, t)| a.len() != t.len()) {
            return Err(Error::Dimension("dual blocks do not match task sizes".into()));
        }
        let mut s = DualState {
            alpha,
            v: Vec::new(),
            dirty: true,
        };
        s.refresh_v(ds);
        Ok(s)
    }

    pub fn alpha(&self) -> &[Vec<T>] {
        &self.alpha
    }

    pub fn alpha_block(&self, t: usize) -> &[T] {
        &self.alpha[t]
    }

    /// Mutable access to the dual blocks; marks `v` stale.
    pub fn alpha_mut(&mut self) -> &mut [Vec<T>] {
        self.dirty = true;
        &mut self.alpha
    }

    /// The maintained `v = Xα`. Panics if `α` was edited without a refresh.
    pub fn v(&self) -> &[Vec<T>] {
        assert!(!self.dirty, "v is stale; call refresh_v first");
        &self.v
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    /// Recomputes `v = Xα` from scratch.
    pub fn refresh_v(&mut self, ds: &FederatedDataset<T>) {
        self.v = ds
            .tasks()
            .iter()
            .zip(&self.alpha)
            .map(|(task, a)| task.combine(a))
            .collect();
        self.dirty = false;
    }

    /// Applies `α_t += γ Δα_t`, `v_t += γ Δv_t` for one task.
    pub fn apply_block(&mut self, t: usize, gamma: T, delta_alpha: &[T], delta_v: &[T]) {
        crate::scalar::axpy(gamma, delta_alpha, &mut self.alpha[t]);
        crate::scalar::axpy(gamma, delta_v, &mut self.v[t]);
    }

    /// `‖v − Xα‖ / (1 + ‖Xα‖)` against a fresh recomputation.
    pub fn v_consistency_error(&self, ds: &FederatedDataset<T>) -> T {
        let mut diff = T::zero();
        let mut norm = T::zero();
        for (t, task) in ds.tasks().iter().enumerate() {
            let exact = task.combine(&self.alpha[t]);
            for (a, b) in exact.iter().zip(&self.v[t]) {
                diff += (*a - *b) * (*a - *b);
                norm += *a * *a;
            }
        }
        diff.sqrt() / (T::one() + norm.sqrt())
    }

    /// First coordinate outside the loss conjugate's domain, if any.
    pub fn check_feasible(&self, ds: &FederatedDataset<T>, loss: LossKind) -> Result<()> {
        for (t, (task, a)) in ds.tasks().iter().zip(&self.alpha).enumerate() {
            for (i, &ai) in a.iter().enumerate() {
                if !loss.is_feasible(ai, task.label(i)) {
                    return Err(Error::DualInfeasible { task: t, index: i });
                }
            }
        }
        Ok(())
    }
}
