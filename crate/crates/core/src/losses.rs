//! Per-example losses, their convex conjugates, and the exact single-coordinate
//! minimizer of the local dual subproblem.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `max(0, 1 - y u)`: 1-Lipschitz, not smooth.
    Hinge,
    /// `½ (u - y)²`: 1-smooth.
    Squared,
}

/// Value of a conjugate that may leave its domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended<T> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Extended<T> {
    pub fn finite(self) -> Option<T> {
        match self {
            Extended::Finite(v) => Some(v),
            Extended::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Extended::Finite(_))
    }
}

impl<T: Scalar> Add for Extended<T> {
    type Output = Extended<T>;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            _ => Extended::Infinite,
        }
    }
}

impl<T: Scalar> std::iter::Sum for Extended<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Extended::Finite(T::zero()), Add::add)
    }
}

/// Slack allowed on the hinge dual box `y·a ∈ [0, 1]` for rounding in sums
/// such as `α + (yb − α)`; values inside the slack are clamped.
fn box_slack<T: Scalar>() -> T {
    T::epsilon() * T::of(64.0)
}

/// `y·a` clamped to `[0, 1]` when within rounding slack of the box.
fn hinge_box<T: Scalar>(a: T, y: T) -> Option<T> {
    let b = a * y;
    let slack = box_slack::<T>();
    if b >= -slack && b <= T::one() + slack {
        Some(b.max(T::zero()).min(T::one()))
    } else {
        None
    }
}

/// Lipschitz constant `L` and smoothness parameter `μ` (loss is `1/μ`-smooth).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConstants {
    pub lipschitz: Option<f64>,
    pub mu: Option<f64>,
}

impl LossKind {
    pub fn value<T: Scalar>(self, u: T, y: T) -> T {
        match self {
            LossKind::Hinge => (T::one() - y * u).max(T::zero()),
            LossKind::Squared => T::half() * (u - y) * (u - y),
        }
    }

    /// A subgradient of the loss in its score argument.
    pub fn subgradient<T: Scalar>(self, u: T, y: T) -> T {
        match self {
            LossKind::Hinge => {
                if y * u < T::one() {
                    -y
                } else {
                    T::zero()
                }
            }
            LossKind::Squared => u - y,
        }
    }

    /// `ℓ*(-a)`, the conjugate evaluated at the negated dual variable.
    pub fn conjugate<T: Scalar>(self, a: T, y: T) -> Extended<T> {
        match self {
            LossKind::Hinge => match hinge_box(a, y) {
                Some(b) => Extended::Finite(-b),
                None => Extended::Infinite,
            },
            LossKind::Squared => Extended::Finite(T::half() * a * a - a * y),
        }
    }

    pub fn constants(self) -> LossConstants {
        match self {
            LossKind::Hinge => LossConstants {
                lipschitz: Some(1.0),
                mu: None,
            },
            LossKind::Squared => LossConstants {
                lipschitz: None,
                mu: Some(1.0),
            },
        }
    }

    /// Nearest point of the conjugate domain to `a` (labels are `±1`).
    pub fn project<T: Scalar>(self, a: T, y: T) -> T {
        match self {
            LossKind::Hinge => y * (a * y).max(T::zero()).min(T::one()),
            LossKind::Squared => a,
        }
    }

    /// Whether `a` is in the domain of `ℓ*(-·)`, up to rounding slack.
    pub fn is_feasible<T: Scalar>(self, a: T, y: T) -> bool {
        match self {
            LossKind::Hinge => hinge_box(a, y).is_some(),
            LossKind::Squared => a.is_finite(),
        }
    }

    /// Exact minimizer over `δ` of
    /// `ℓ*(-(alpha + δ)) + δ·score + (kappa/2)·δ²·x_norm2`,
    /// the one-coordinate restriction of the local subproblem.
    ///
    /// `alpha` is the coordinate's current value (including any local
    /// progress); `score` already contains the `kappa·⟨x_i, X_t Δα_t⟩` term.
    pub fn coordinate_update<T: Scalar>(self, alpha: T, y: T, score: T, x_norm2: T, kappa: T) -> Result<T> {
        let curvature = kappa * x_norm2;
        match self {
            LossKind::Hinge => {
                let Some(b) = hinge_box(alpha, y) else {
                    return Err(Error::DualInfeasible { task: 0, index: 0 });
                };
                let slope = T::one() - y * score;
                let target = if curvature > T::zero() {
                    (b + slope / curvature).max(T::zero()).min(T::one())
                } else if slope > T::zero() {
                    T::one()
                } else if slope < T::zero() {
                    T::zero()
                } else {
                    b
                };
                Ok(y * target - alpha)
            }
            LossKind::Squared => Ok((y - score - alpha) / (T::one() + curvature)),
        }
    }
}

/// `ℓ(u, y)`.
pub fn loss_value<T: Scalar>(kind: LossKind, u: T, y: T) -> T {
    kind.value(u, y)
}

/// `ℓ*(-a, y)`.
pub fn conjugate_value<T: Scalar>(kind: LossKind, a: T, y: T) -> Extended<T> {
    kind.conjugate(a, y)
}

pub fn loss_constants(kind: LossKind) -> LossConstants {
    kind.constants()
}
