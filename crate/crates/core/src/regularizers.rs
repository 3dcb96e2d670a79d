//! Task-relationship regularizers in vectorized form.
//!
//! Every supported regularizer is written as `R(w) = wᵀ (Q̄ ⊗ I_d) w` with
//! `Q̄ = M̄⁻¹`. Its conjugate is `R*(v) = ¼ vᵀ(M̄ ⊗ I)v`, and the primal point
//! attached to a dual vector is `w = ∇R*(v) = ½ (M̄ ⊗ I) v`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;
use crate::solver::PrimalState;

pub const DEFAULT_RIDGE_EPS: f64 = 1e-6;

fn default_ridge() -> f64 {
    DEFAULT_RIDGE_EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OmegaModel {
    /// `λ1 tr(W Ω Wᵀ) + λ2 ‖W‖²` with the fixed centering `Ω`.
    MeanRegularized { lambda1: f64, lambda2: f64 },
    /// `λ (‖W‖²/σ² + tr(W Ω⁻¹ Wᵀ))` with `Ω` learned under `tr Ω = 1`.
    ProbabilisticPrior {
        lambda: f64,
        sigma2: f64,
        #[serde(default = "default_ridge")]
        ridge_eps: f64,
    },
}

impl OmegaModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OmegaModel::MeanRegularized { lambda1, lambda2 } => {
                if !(lambda1 >= 0.0 && lambda2 > 0.0) {
                    return Err(Error::Config(format!(
                        "mean-regularized model needs lambda1 >= 0 and lambda2 > 0, got ({lambda1}, {lambda2})"
                    )));
                }
            }
            OmegaModel::ProbabilisticPrior {
                lambda,
                sigma2,
                ridge_eps,
            } => {
                if !(lambda > 0.0 && sigma2 > 0.0 && ridge_eps > 0.0) {
                    return Err(Error::Config(format!(
                        "probabilistic model needs positive lambda, sigma2, ridge_eps, got ({lambda}, {sigma2}, {ridge_eps})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether `Ω` is re-estimated between W-updates.
    pub fn learns_omega(&self) -> bool {
        matches!(self, OmegaModel::ProbabilisticPrior { .. })
    }

    /// Same model with the overall regularization strength replaced by `lambda`.
    ///
    /// For the mean-regularized model `lambda2` becomes `lambda` and `lambda1`
    /// keeps its ratio to `lambda2`.
    pub fn with_lambda(&self, lambda: f64) -> OmegaModel {
        match *self {
            OmegaModel::MeanRegularized { lambda1, lambda2 } => OmegaModel::MeanRegularized {
                lambda1: lambda1 / lambda2 * lambda,
                lambda2: lambda,
            },
            OmegaModel::ProbabilisticPrior { sigma2, ridge_eps, .. } => OmegaModel::ProbabilisticPrior {
                lambda,
                sigma2,
                ridge_eps,
            },
        }
    }

    /// Starting `Ω`: the centering matrix, or `I/m` for the learned model.
    pub fn initial_omega<T: Scalar>(&self, m: usize) -> Mat<T> {
        match self {
            OmegaModel::MeanRegularized { .. } => mean_reg_omega(m),
            OmegaModel::ProbabilisticPrior { .. } => Mat::identity(m).scale(T::one() / T::of_usize(m)),
        }
    }
}

/// `(I - 11ᵀ/m)²`, which equals the centering projection itself.
pub fn mean_reg_omega<T: Scalar>(m: usize) -> Mat<T> {
    let inv_m = T::one() / T::of_usize(m);
    let mut c = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            c[(i, j)] = if i == j { T::one() } else { T::zero() } - inv_m;
        }
    }
    c.matmul(&c)
}

fn check_psd<T: Scalar>(omega: &Mat<T>) -> Result<()> {
    if !omega.is_square() {
        return Err(Error::Dimension("Ω must be square".into()));
    }
    if !omega.is_finite() {
        return Err(Error::NonFinite("Ω"));
    }
    Ok(())
}

/// `Q̄ = M̄⁻¹`, the quadratic form of the vectorized regularizer.
pub fn regularizer_matrix<T: Scalar>(model: &OmegaModel, omega: &Mat<T>) -> Result<Mat<T>> {
    check_psd(omega)?;
    let m = omega.rows();
    match *model {
        OmegaModel::MeanRegularized { lambda1, lambda2 } => Ok(omega
            .symmetrize()
            .scale(T::of(lambda1))
            .add(&Mat::identity(m).scale(T::of(lambda2)))),
        OmegaModel::ProbabilisticPrior {
            lambda,
            sigma2,
            ridge_eps,
        } => {
            let omega_inv = omega.add_diagonal(T::of(ridge_eps)).inverse_spd()?;
            Ok(omega_inv.add_diagonal(T::one() / T::of(sigma2)).scale(T::of(lambda)))
        }
    }
}

/// `M̄` with `M = M̄ ⊗ I_d`.
pub fn build_mbar<T: Scalar>(model: &OmegaModel, omega: &Mat<T>) -> Result<Mat<T>> {
    regularizer_matrix(model, omega)?.inverse_spd()
}

/// `σ'_t = γ Σ_{t'} |M̄_{tt'}| / M̄_{tt}` for every task.
pub fn sigma_prime_per_task<T: Scalar>(mbar: &Mat<T>, gamma: T) -> Vec<T> {
    (0..mbar.rows())
        .map(|t| {
            let row: T = mbar.row(t).iter().map(|x| x.abs()).sum();
            gamma * row / mbar[(t, t)]
        })
        .collect()
}

/// `σ' = max_t σ'_t`, safe for every data partition.
pub fn sigma_prime<T: Scalar>(mbar: &Mat<T>, gamma: T) -> T {
    sigma_prime_per_task(mbar, gamma).into_iter().fold(T::zero(), T::max)
}

/// `R*(v) = ¼ Σ_{t,t'} M̄_{tt'} ⟨v_t, v_t'⟩`.
pub fn conjugate_r<T: Scalar>(v: &[Vec<T>], mbar: &Mat<T>) -> T {
    T::of(0.25) * mbar.kron_quadratic_form(v)
}

/// `w_t = ½ Σ_{t'} M̄_{tt'} v_t'`.
pub fn primal_from_dual<T: Scalar>(v: &[Vec<T>], mbar: &Mat<T>) -> PrimalState<T> {
    let cols = mbar
        .kron_apply(v)
        .into_iter()
        .map(|mut c| {
            c.iter_mut().for_each(|x| *x *= T::half());
            c
        })
        .collect();
    PrimalState::from_columns(cols).expect("blocks share the dimension")
}

/// `R(W, Ω)`; the probabilistic model uses the same ridged `Ω` as [`build_mbar`].
pub fn regularizer_value<T: Scalar>(w: &PrimalState<T>, omega: &Mat<T>, model: &OmegaModel) -> Result<T> {
    if omega.rows() != w.num_tasks() {
        return Err(Error::Dimension(format!(
            "Ω is {}x{} for {} tasks",
            omega.rows(),
            omega.cols(),
            w.num_tasks()
        )));
    }
    let q = regularizer_matrix(model, omega)?;
    Ok(q.kron_quadratic_form(w.columns()))
}

/// Central `Ω` step: unchanged for the mean-regularized model, otherwise
/// `(WᵀW)^{1/2} / tr((WᵀW)^{1/2})`, falling back to `I/m` when the trace
/// underflows the ridge.
pub fn update_omega<T: Scalar>(model: &OmegaModel, w: &PrimalState<T>, current: &Mat<T>) -> Result<Mat<T>> {
    if !w.is_finite() {
        return Err(Error::NonFinite("W"));
    }
    match *model {
        OmegaModel::MeanRegularized { .. } => Ok(current.clone()),
        OmegaModel::ProbabilisticPrior { ridge_eps, .. } => {
            let m = w.num_tasks();
            let gram = w.gram();
            let (values, vectors) = gram.symmetric_eigen();
            let root = Mat::spectral_map(&values, &vectors, |x| x.max(T::zero()).sqrt());
            let tr = root.trace();
            if !(tr > T::of(ridge_eps)) {
                return Ok(Mat::identity(m).scale(T::one() / T::of_usize(m)));
            }
            Ok(root.scale(T::one() / tr).symmetrize())
        }
    }
}

/// `Ω`, `M̄`, and the subproblem safety parameters for one outer iteration.
#[derive(Debug, Clone)]
pub struct RelationshipState<T> {
    pub omega: Mat<T>,
    pub mbar: Mat<T>,
    /// `M̄⁻¹`
    pub qbar: Mat<T>,
    pub gamma: T,
    pub sigma_prime: T,
    pub sigma_prime_per_task: Vec<T>,
    pub per_task: bool,
}

impl<T: Scalar> RelationshipState<T> {
    pub fn new(model: &OmegaModel, omega: Mat<T>, gamma: T) -> Result<Self> {
        model.validate()?;
        if !(gamma > T::zero() && gamma <= T::one()) {
            return Err(Error::Config(format!("gamma {gamma} must lie in (0, 1]")));
        }
        let qbar = regularizer_matrix(model, &omega)?;
        let mbar = qbar.inverse_spd()?;
        let sigma_prime_per_task = sigma_prime_per_task(&mbar, gamma);
        let sigma_prime = sigma_prime_per_task.iter().copied().fold(T::zero(), T::max);
        Ok(RelationshipState {
            omega,
            mbar,
            qbar,
            gamma,
            sigma_prime,
            sigma_prime_per_task,
            per_task: false,
        })
    }

    /// Uses the per-task `σ'_t` instead of the global maximum.
    pub fn with_per_task_sigma(mut self, per_task: bool) -> Self {
        self.per_task = per_task;
        self
    }

    /// Overrides σ' (global and per task); for experiments with unsafe values.
    pub fn with_sigma_prime(mut self, sigma_prime: T) -> Self {
        self.sigma_prime = sigma_prime;
        self.sigma_prime_per_task = vec![sigma_prime; self.mbar.rows()];
        self
    }

    pub fn num_tasks(&self) -> usize {
        self.mbar.rows()
    }

    /// σ' used by task `t`'s subproblem.
    pub fn sigma_for(&self, t: usize) -> T {
        if self.per_task {
            self.sigma_prime_per_task[t]
        } else {
            self.sigma_prime
        }
    }

    /// `κ_t = σ'_t · M̄_tt`, the curvature of task `t`'s quadratic term.
    pub fn kappa(&self, t: usize) -> T {
        self.sigma_for(t) * self.mbar[(t, t)]
    }
}

/// Writes a square matrix as CSV: a `m,<m>` header line then one row per line.
pub fn write_matrix_csv<T: Scalar>(mat: &Mat<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("m,{}\n", mat.rows());
    for r in 0..mat.rows() {
        let row: Vec<String> = mat.row(r).iter().map(ToString::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Mat<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let m: usize = lines
        .next()
        .and_then(|h| h.strip_prefix("m,"))
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(1, "expected header `m,<size>`".into()))?;
    let mut data = Vec::with_capacity(m * m);
    for (i, line) in lines.enumerate() {
        for field in line.split(',') {
            data.push(
                field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(i + 2, format!("`{field}` is not numeric")))?,
            );
        }
    }
    Mat::from_vec(m, m, data)
}
