//! Simulated-time accounting: per-round work budgets, node dropout, FLOP
//! counts, and a latency/bandwidth network model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream, StreamRng};
use crate::solver::{RoundPlan, RoundScheduler};

/// FLOPs charged per coordinate update (or per-example gradient) and feature.
pub const FLOPS_PER_UPDATE_PER_FEATURE: u64 = 4;

/// Default node clock rate, FLOPs per millisecond.
pub const DEFAULT_CLOCK_RATE: f64 = 1e5;

/// How many local updates a node may perform in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    /// Exactly `n_min` updates.
    None,
    /// Uniform in `[⌈0.9 n_min⌉, n_min]`.
    Low,
    /// Uniform in `[⌈0.1 n_min⌉, n_min]`.
    High,
    /// Exactly `k` updates.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeterogeneityPolicy {
    pub mode: Heterogeneity,
    pub n_min: usize,
}

impl HeterogeneityPolicy {
    pub fn range(&self) -> (usize, usize) {
        let n = self.n_min.max(1);
        let frac = |f: f64| ((f * n as f64).ceil() as usize).clamp(1, n);
        match self.mode {
            Heterogeneity::None => (n, n),
            Heterogeneity::Low => (frac(0.9), n),
            Heterogeneity::High => (frac(0.1), n),
            Heterogeneity::Fixed(k) => (k, k),
        }
    }
}

pub fn sample_budget(policy: &HeterogeneityPolicy, rng: &mut StreamRng) -> usize {
    let (lo, hi) = policy.range();
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    /// FLOPs per millisecond.
    pub clock_rate: f64,
    pub drop_probability: f64,
}

impl Default for NodeProfile {
    fn default() -> Self {
        NodeProfile {
            clock_rate: DEFAULT_CLOCK_RATE,
            drop_probability: 0.0,
        }
    }
}

impl NodeProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.clock_rate > 0.0 && self.clock_rate.is_finite()) {
            return Err(Error::Config(format!(
                "clock_rate {} must be positive",
                self.clock_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(Error::Config(format!(
                "drop probability {} outside [0, 1]",
                self.drop_probability
            )));
        }
        Ok(())
    }
}

/// True with probability `p_t`.
pub fn sample_drop(profile: &NodeProfile, rng: &mut StreamRng) -> bool {
    let p = profile.drop_probability;
    p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p)
}

pub fn estimate_flops(updates: usize, d: usize) -> u64 {
    updates as u64 * FLOPS_PER_UPDATE_PER_FEATURE * d as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkPreset {
    pub name: String,
    /// Milliseconds per message.
    pub latency: f64,
    /// Bytes per millisecond.
    pub bandwidth: f64,
}

impl NetworkPreset {
    pub fn wifi() -> Self {
        NetworkPreset {
            name: "wifi".into(),
            latency: 5.0,
            bandwidth: 1e4,
        }
    }

    pub fn lte() -> Self {
        NetworkPreset {
            name: "lte".into(),
            latency: 40.0,
            bandwidth: 1e3,
        }
    }

    pub fn three_g() -> Self {
        NetworkPreset {
            name: "3g".into(),
            latency: 75.0,
            bandwidth: 1e2,
        }
    }

    /// Looks up `wifi`, `lte` or `3g` (case-insensitive).
    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "wifi" => Some(Self::wifi()),
            "lte" => Some(Self::lte()),
            "3g" => Some(Self::three_g()),
            _ => None,
        }
    }

    /// A preset whose round trip costs `ratio` times one coordinate update
    /// on a `d`-dimensional problem at `clock_rate`.
    pub fn with_comm_ratio(ratio: f64, d: usize, clock_rate: f64) -> Self {
        let update_ms = estimate_flops(1, d) as f64 / clock_rate;
        let bandwidth = 1e12;
        let bytes_ms = message_bytes(d) / bandwidth;
        NetworkPreset {
            name: format!("ratio-{ratio}"),
            latency: (0.5 * ratio * update_ms - bytes_ms).max(0.0),
            bandwidth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latency >= 0.0 && self.latency.is_finite()) {
            return Err(Error::Config(format!("latency {} must be nonnegative", self.latency)));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::Config(format!("bandwidth {} must be positive", self.bandwidth)));
        }
        Ok(())
    }

    /// Down (`w_t`) plus up (`Δv_t`) for one message size.
    pub fn round_trip_ms(&self, bytes: f64) -> f64 {
        2.0 * (self.latency + bytes / self.bandwidth)
    }
}

/// One dense `d`-vector of `f64`.
pub fn message_bytes(d: usize) -> f64 {
    8.0 * d as f64
}

/// Per-node compute and communication times of one synchronous round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub compute_ms: Vec<f64>,
    pub comm_ms: f64,
    pub round_ms: f64,
    pub dropped: Vec<usize>,
}

/// Wall time of one round: the slowest live node's compute plus its round
/// trip. Dropped nodes never extend the deadline; if every node drops the
/// round still costs one round trip.
pub fn round_time(
    per_node_flops: &[u64],
    profiles: &[NodeProfile],
    preset: &NetworkPreset,
    message_bytes: f64,
    dropped: &[bool],
) -> Result<RoundTiming> {
    let m = per_node_flops.len();
    if profiles.len() != m || dropped.len() != m {
        return Err(Error::Dimension(format!(
            "{} flop counts, {} profiles, {} drop flags",
            m,
            profiles.len(),
            dropped.len()
        )));
    }
    let comm = preset.round_trip_ms(message_bytes);
    let compute: Vec<f64> = per_node_flops
        .iter()
        .zip(profiles)
        .map(|(&f, p)| f as f64 / p.clock_rate)
        .collect();
    let slowest = (0..m).filter(|&t| !dropped[t]).map(|t| compute[t]).fold(0.0, f64::max);
    Ok(RoundTiming {
        compute_ms: compute,
        comm_ms: comm,
        round_ms: slowest + comm,
        dropped: (0..m).filter(|&t| dropped[t]).collect(),
    })
}

/// Cumulative simulated time and a log of every round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub elapsed_ms: f64,
    pub log: Vec<RoundTiming>,
}

impl SimClock {
    pub fn advance(&mut self, timing: RoundTiming) -> f64 {
        self.elapsed_ms += timing.round_ms;
        self.log.push(timing);
        self.elapsed_ms
    }
}

/// Network, node profiles and message size for one simulated deployment.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemsModel {
    pub preset: NetworkPreset,
    pub profiles: Vec<NodeProfile>,
    pub dim: usize,
}

impl SystemsModel {
    pub fn new(preset: NetworkPreset, profiles: Vec<NodeProfile>, dim: usize) -> Result<Self> {
        preset.validate()?;
        for p in &profiles {
            p.validate()?;
        }
        Ok(SystemsModel { preset, profiles, dim })
    }

    /// Timing of a round given per-node update counts, dropped nodes, and
    /// relative speeds multiplying each node's clock rate.
    pub fn time_round(&self, updates: &[usize], dropped: &[usize], speeds: &[f64]) -> Result<RoundTiming> {
        let flops: Vec<u64> = updates.iter().map(|&u| estimate_flops(u, self.dim)).collect();
        let mut flags = vec![false; updates.len()];
        for &t in dropped {
            if t < flags.len() {
                flags[t] = true;
            }
        }
        let profiles: Vec<NodeProfile> = self
            .profiles
            .iter()
            .zip(speeds)
            .map(|(p, &s)| NodeProfile {
                clock_rate: p.clock_rate * s,
                ..*p
            })
            .collect();
        round_time(&flops, &profiles, &self.preset, message_bytes(self.dim), &flags)
    }
}

/// Budgets and drops drawn from reproducible `(seed, node, round)` streams.
///
/// A node's draw under the heterogeneity policy doubles as its relative
/// speed in that round (`draw / n_min`), so methods that cannot shrink
/// their work instead take longer on slow nodes. MOCHA runs
/// `⌈budget_scale · draw⌉` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemsScheduler {
    pub seed: u64,
    pub heterogeneity: Heterogeneity,
    pub drop_probabilities: Vec<f64>,
    pub budget_scale: f64,
}

impl SystemsScheduler {
    pub fn new(seed: u64, heterogeneity: Heterogeneity, drop_probabilities: Vec<f64>) -> Self {
        SystemsScheduler {
            seed,
            heterogeneity,
            drop_probabilities,
            budget_scale: 1.0,
        }
    }

    pub fn with_budget_scale(mut self, scale: f64) -> Self {
        self.budget_scale = scale;
        self
    }

    fn draws(&self, round: u64, sizes: &[usize]) -> (Vec<usize>, usize) {
        let policy = HeterogeneityPolicy {
            mode: self.heterogeneity,
            n_min: sizes.iter().copied().min().unwrap_or(1),
        };
        let draws = (0..sizes.len())
            .map(|t| sample_budget(&policy, &mut stream(self.seed, Stream::Budget, t as u64, round)))
            .collect();
        (draws, policy.n_min.max(1))
    }

    /// Relative node speeds in `round`; all 1 unless the policy is `low` or `high`.
    pub fn speeds(&self, round: u64, sizes: &[usize]) -> Vec<f64> {
        match self.heterogeneity {
            Heterogeneity::Low | Heterogeneity::High => {
                let (draws, n_min) = self.draws(round, sizes);
                draws.into_iter().map(|k| k as f64 / n_min as f64).collect()
            }
            _ => vec![1.0; sizes.len()],
        }
    }

    pub fn drops(&self, round: u64, m: usize) -> Vec<bool> {
        (0..m)
            .map(|t| {
                let profile = NodeProfile {
                    drop_probability: self.drop_probabilities.get(t).copied().unwrap_or(0.0),
                    ..NodeProfile::default()
                };
                sample_drop(&profile, &mut stream(self.seed, Stream::Drop, t as u64, round))
            })
            .collect()
    }
}

impl RoundScheduler for SystemsScheduler {
    fn plan(&self, round: u64, sizes: &[usize]) -> RoundPlan {
        let (draws, _) = self.draws(round, sizes);
        RoundPlan {
            budgets: draws
                .into_iter()
                .map(|k| (self.budget_scale * k as f64).ceil() as usize)
                .collect(),
            drops: self.drops(round, sizes.len()),
        }
    }
}
