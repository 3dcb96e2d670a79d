//! Convergence constants, iteration bounds, and numeric checks of the
//! inequalities the rates rest on.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FederatedDataset, TaskDataset};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::{stream, Stream};
use crate::scalar::{dot, Scalar};
use crate::solver::{LemmaRecord, RoundStats};

/// `Θ̄ = p + (1 − p)Θ`.
pub fn theta_bar(p_max: f64, theta_max: f64) -> Result<f64> {
    for (name, v) in [("p_max", p_max), ("theta_max", theta_max)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
        }
    }
    Ok(p_max + (1.0 - p_max) * theta_max)
}

/// `s = μ / (μ + σ_max σ')`.
pub fn convergence_constant_s(mu: f64, sigma_max: f64, sigma_prime: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::Config(format!(
            "mu = {mu}: the smooth-loss constant needs mu > 0"
        )));
    }
    if !(sigma_max >= 0.0 && sigma_prime >= 0.0) {
        return Err(Error::Config("sigma_max and sigma_prime must be nonnegative".into()));
    }
    Ok(mu / (mu + sigma_max * sigma_prime))
}

fn check_rate_inputs(eps: f64, theta_bar: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("epsilon {eps} must be positive")));
    }
    if !(0.0..1.0).contains(&theta_bar) {
        return Err(Error::Config(format!("theta_bar {theta_bar} must lie in [0, 1)")));
    }
    Ok(())
}

/// Smallest integer `H ≥ ln(n/ε) / ((1 − Θ̄) s)`, floored at 0.
pub fn smooth_iteration_bound(n: f64, eps: f64, s: f64, theta_bar: f64) -> Result<u64> {
    check_rate_inputs(eps, theta_bar)?;
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::Config(format!("s = {s} must lie in (0, 1]")));
    }
    let h = (n / eps).ln() / ((1.0 - theta_bar) * s);
    Ok(ceil_nonneg(h))
}

fn ceil_nonneg(x: f64) -> u64 {
    // Guard against `ln` returning 1e-16 instead of 0 at exact ratios.
    let r = x.round();
    let x = if (x - r).abs() < 1e-9 * r.abs().max(1.0) { r } else { x };
    x.ceil().max(0.0) as u64
}

/// `σ_t = M̄_tt · λ_max(X_tᵀX_t)`, the largest eigenvalue by power iteration.
pub fn sigma_t<T: Scalar>(task: &TaskDataset<T>, mbar_tt: f64) -> Result<f64> {
    Ok(mbar_tt * largest_gram_eigenvalue(task)?)
}

/// Iteration cap for [`largest_gram_eigenvalue`].
pub const POWER_MAX_ITERS: usize = 100_000;

/// `λ_max(X_tᵀX_t)` by power iteration on the `d × d` matrix `X_t X_tᵀ`
/// (same nonzero spectrum), stopping at relative change `1e-9`.
pub fn largest_gram_eigenvalue<T: Scalar>(task: &TaskDataset<T>) -> Result<f64> {
    let d = task.dim();
    let mut gram = vec![0.0f64; d * d];
    for i in 0..task.len() {
        let x = task.example(i);
        for a in 0..d {
            let xa = x[a].as_f64();
            for b in 0..d {
                gram[a * d + b] += xa * x[b].as_f64();
            }
        }
    }
    if gram.iter().all(|&g| g == 0.0) {
        return Ok(0.0);
    }
    let mut rng = stream(0x5eed, Stream::Power, task.task_id() as u64, 0);
    let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let gv: Vec<f64> = (0..d).map(|a| dot(&gram[a * d..(a + 1) * d], &v)).collect();
        let next = dot(&v, &gv);
        v = gv;
        if (next - lambda).abs() <= 1e-9 * next.abs() {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NoConvergence {
        what: "power iteration",
        iterations: POWER_MAX_ITERS,
    })
}

/// Per-task `σ_t`, `σ_max`, and `σ = Σ_t σ_t n_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub per_task: Vec<f64>,
    pub sigma_max: f64,
    pub sigma_total: f64,
}

pub fn sigma_total<T: Scalar>(ds: &FederatedDataset<T>, mbar: &Mat<T>) -> Result<SigmaSummary> {
    if mbar.rows() != ds.num_tasks() {
        return Err(Error::Dimension("M̄ does not match the task count".into()));
    }
    let per_task = ds
        .tasks()
        .iter()
        .enumerate()
        .map(|(t, task)| sigma_t(task, mbar[(t, t)].as_f64()))
        .collect::<Result<Vec<_>>>()?;
    let sigma_max = per_task.iter().copied().fold(0.0, f64::max);
    let sigma_total = per_task
        .iter()
        .zip(ds.tasks())
        .map(|(s, task)| s * task.len() as f64)
        .sum();
    Ok(SigmaSummary {
        per_task,
        sigma_max,
        sigma_total,
    })
}

/// Inputs of the non-smooth (Lipschitz loss) bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzInputs {
    pub n: f64,
    pub epsilon: f64,
    pub lipschitz: f64,
    pub sigma: f64,
    pub sigma_prime: f64,
    pub theta_bar: f64,
    /// Bound on the initial dual suboptimality; `n` when unknown.
    pub initial_suboptimality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LipschitzBound {
    pub h: u64,
    pub h0_rounds: u64,
    pub h0: u64,
}

/// `(H, H_0, h_0)` for a Lipschitz loss:
///
/// * `h_0 = ⌈[1 + ln(2n²·ΔD / (4L²σσ')) / (1 − Θ̄)]₊⌉`
/// * `H_0 = ⌈h_0 + 16L²σσ' / ((1 − Θ̄) n² ε)⌉`
/// * `H = H_0 + ⌈2 max(1, 2L²σσ'/(n²ε)) / (1 − Θ̄)⌉`
pub fn lipschitz_iteration_bound(inp: &LipschitzInputs) -> Result<LipschitzBound> {
    check_rate_inputs(inp.epsilon, inp.theta_bar)?;
    if !(inp.lipschitz > 0.0 && inp.sigma > 0.0 && inp.sigma_prime > 0.0 && inp.n > 0.0) {
        return Err(Error::Config("L, sigma, sigma_prime and n must be positive".into()));
    }
    if !(inp.initial_suboptimality > 0.0) {
        return Err(Error::Config("initial suboptimality bound must be positive".into()));
    }
    let one_minus = 1.0 - inp.theta_bar;
    let l2ss = inp.lipschitz * inp.lipschitz * inp.sigma * inp.sigma_prime;
    let n2 = inp.n * inp.n;
    let arg = 2.0 * n2 * inp.initial_suboptimality / (4.0 * l2ss);
    let h0_real = (1.0 + arg.ln() / one_minus).max(0.0);
    let h0 = ceil_nonneg(h0_real);
    let h0_rounds = ceil_nonneg(h0 as f64 + 16.0 * l2ss / (one_minus * n2 * inp.epsilon));
    let tail = ceil_nonneg((2.0 / one_minus) * (2.0 * l2ss / (n2 * inp.epsilon)).max(1.0));
    Ok(LipschitzBound {
        h: h0_rounds + tail,
        h0_rounds,
        h0,
    })
}

/// Outcome of a randomized inequality check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub pass: bool,
    /// Smallest `LHS/RHS` observed (∞ when RHS never positive).
    pub worst_ratio: f64,
    /// Smallest `LHS − RHS` observed.
    pub worst_margin: f64,
    pub trials: usize,
}

/// Both sides of `σ' Σ_t M̄_tt ‖X_tα_t‖² ≥ γ ‖Xα‖²_M` for one `α`.
pub fn sigma_prime_sides<T: Scalar>(
    ds: &FederatedDataset<T>,
    mbar: &Mat<T>,
    sigma_prime: f64,
    gamma: f64,
    alpha: &[Vec<f64>],
) -> (f64, f64) {
    let blocks: Vec<Vec<f64>> = ds
        .tasks()
        .iter()
        .zip(alpha)
        .map(|(task, a)| {
            let coeffs: Vec<T> = a.iter().map(|&x| T::of(x)).collect();
            task.combine(&coeffs).into_iter().map(|x| x.as_f64()).collect()
        })
        .collect();
    let m = blocks.len();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for t in 0..m {
        lhs += mbar[(t, t)].as_f64() * dot(&blocks[t], &blocks[t]);
        for s in 0..m {
            rhs += mbar[(t, s)].as_f64() * dot(&blocks[t], &blocks[s]);
        }
    }
    (sigma_prime * lhs, gamma * rhs)
}

/// Evaluates the safe-σ' inequality on `trials` standard-normal `α`.
pub fn verify_sigma_prime_inequality<T: Scalar>(
    ds: &FederatedDataset<T>,
    mbar: &Mat<T>,
    sigma_prime: f64,
    gamma: f64,
    trials: usize,
    seed: u64,
) -> Result<InequalityCheck> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if mbar.rows() != ds.num_tasks() {
        return Err(Error::Dimension("M̄ does not match the task count".into()));
    }
    let mut rng = stream(seed, Stream::Synthetic, u64::MAX, 0);
    let mut alpha: Vec<Vec<f64>> = ds.tasks().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut check = InequalityCheck {
        pass: true,
        worst_ratio: f64::INFINITY,
        worst_margin: f64::INFINITY,
        trials,
    };
    for _ in 0..trials {
        for a in alpha.iter_mut().flatten() {
            *a = StandardNormal.sample(&mut rng);
        }
        let (lhs, rhs) = sigma_prime_sides(ds, mbar, sigma_prime, gamma, &alpha);
        let margin = lhs - rhs;
        if rhs > 0.0 {
            check.worst_ratio = check.worst_ratio.min(lhs / rhs);
        }
        check.worst_margin = check.worst_margin.min(margin);
        if margin < -1e-9 * lhs.abs().max(rhs.abs()).max(1.0) {
            check.pass = false;
        }
    }
    Ok(check)
}

/// Per-round outcome of the decrease check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub pass: bool,
    pub rounds: usize,
    pub failures: Vec<u64>,
    /// Smallest slack relative to the round's scale.
    pub worst_relative_slack: f64,
}

/// `D(α + γΔα) ≤ (1 − γ)D(α) + γΣG_t` on every recorded round, to
/// `1e-8` times the round's objective scale.
pub fn verify_lemma_decrease(trace: &[RoundStats]) -> Result<LemmaCheck> {
    let mut check = LemmaCheck {
        pass: true,
        rounds: 0,
        failures: Vec::new(),
        worst_relative_slack: f64::INFINITY,
    };
    for s in trace {
        let rec: &LemmaRecord = s
            .lemma
            .as_ref()
            .ok_or_else(|| Error::Trace(format!("round {} has no decrease record", s.h)))?;
        let rel = rec.slack() / rec.scale();
        check.worst_relative_slack = check.worst_relative_slack.min(rel);
        check.rounds += 1;
        if rel < -1e-8 {
            check.pass = false;
            check.failures.push(s.h);
        }
    }
    Ok(check)
}

/// Measured `Θ_max`: the largest per-node average of `θ_t^h` over rounds
/// where `t` did not drop.
pub fn measured_theta_max(trace: &[RoundStats]) -> Option<f64> {
    let m = trace.iter().find_map(|s| s.theta.as_ref().map(Vec::len))?;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for s in trace {
        if let Some(theta) = &s.theta {
            for t in 0..m {
                if !s.dropped.contains(&t) {
                    sums[t] += theta[t];
                    counts[t] += 1;
                }
            }
        }
    }
    (0..m)
        .filter(|&t| counts[t] > 0)
        .map(|t| sums[t] / counts[t] as f64)
        .reduce(f64::max)
}

/// Least-squares slope of `ln(values)` against the round index, returned as
/// the per-round factor `exp(slope)`. Non-positive values are skipped.
pub fn fitted_decay_factor(values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(i, &v)| (i as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some((sxy / sxx).exp())
}
