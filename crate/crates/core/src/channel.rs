//! Bernoulli actuation channel, the operator's running-mean monitor and the
//! safe-operation region test.
//!
//! Diagonal entry `i` of a loss realization is `1` when the packet for
//! actuator `i` was delivered. Actuators may share a channel (same nominal
//! mean, same attack mean) but every actuator still draws its own Bernoulli
//! variable.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, invalid, Result};
use crate::rng::{self, Stream};

/// Diagonal of a 0/1 packet-loss matrix (`true` = delivered).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossRealization(Vec<bool>);

impl LossRealization {
    pub fn new(delivered: Vec<bool>) -> Self {
        Self(delivered)
    }

    pub fn all(m: usize, delivered: bool) -> Self {
        Self(vec![delivered; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn delivered(&self) -> &[bool] {
        &self.0
    }

    /// `V u`: delivered entries of `u`, zero elsewhere.
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            u.iter().zip(&self.0).map(|(ui, d)| if *d { *ui } else { 0.0 }),
        )
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Nominal per-actuator delivery means and the channel each actuator uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    means: Vec<f64>,
    groups: Vec<usize>,
}

impl ChannelSpec {
    /// One independent channel per actuator.
    pub fn independent(means: Vec<f64>) -> Result<Self> {
        let groups = (0..means.len()).collect();
        Self::grouped(means, groups)
    }

    /// All `m` actuators share one channel with mean `mean`.
    pub fn shared(mean: f64, m: usize) -> Result<Self> {
        Self::grouped(vec![mean; m], vec![0; m])
    }

    /// `groups[i]` is the channel index of actuator `i`; channel indices
    /// must be `0..g` and every actuator on a channel must share its mean.
    pub fn grouped(means: Vec<f64>, groups: Vec<usize>) -> Result<Self> {
        if means.is_empty() {
            return Err(invalid("M", "at least one actuator is required"));
        }
        if groups.len() != means.len() {
            return Err(dimension("channel groups", means.len(), groups.len()));
        }
        if let Some(i) = means.iter().position(|mu| !(0.0..1.0).contains(mu)) {
            return Err(invalid("M", format!("mean {} of actuator {i} is outside [0, 1)", means[i])));
        }
        let count = groups.iter().max().map_or(0, |g| g + 1);
        for g in 0..count {
            let members: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
            let Some(&first) = members.first() else {
                return Err(invalid("channel groups", format!("channel {g} has no actuators")));
            };
            if members.iter().any(|&i| means[i] != means[first]) {
                return Err(invalid("M", format!("actuators on channel {g} have different means")));
            }
        }
        Ok(Self { means, groups })
    }

    pub fn actuators(&self) -> usize {
        self.means.len()
    }

    pub fn channel_count(&self) -> usize {
        self.groups.iter().max().map_or(0, |g| g + 1)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn channel_of(&self, actuator: usize) -> usize {
        self.groups[actuator]
    }

    /// First actuator on channel `g`.
    pub fn representative(&self, g: usize) -> usize {
        self.groups.iter().position(|&x| x == g).expect("channel index in range")
    }

    pub fn channel_mean(&self, g: usize) -> f64 {
        self.means[self.representative(g)]
    }

    /// Expands one value per channel into one value per actuator.
    pub fn expand(&self, per_channel: &[f64]) -> Vec<f64> {
        self.groups.iter().map(|&g| per_channel[g]).collect()
    }
}

/// Safe-region half-widths `L` around the nominal means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSpec {
    nominal: Vec<f64>,
    half_widths: Vec<f64>,
    /// The monitor only raises alarms once `k >= arm_after`.
    arm_after: u64,
}

impl DetectionSpec {
    pub fn new(channel: &ChannelSpec, half_widths: Vec<f64>) -> Result<Self> {
        if half_widths.len() != channel.actuators() {
            return Err(dimension("L", channel.actuators(), half_widths.len()));
        }
        if let Some(i) = half_widths.iter().position(|e| !(0.0..=1.0).contains(e)) {
            return Err(invalid("L", format!("half-width {} of actuator {i} is outside [0, 1]", half_widths[i])));
        }
        for g in 0..channel.channel_count() {
            let r = channel.representative(g);
            if (0..channel.actuators())
                .any(|i| channel.channel_of(i) == g && half_widths[i] != half_widths[r])
            {
                return Err(invalid("L", format!("actuators on channel {g} have different half-widths")));
            }
        }
        Ok(Self {
            nominal: channel.means().to_vec(),
            half_widths,
            arm_after: 1,
        })
    }

    pub fn uniform(channel: &ChannelSpec, half_width: f64) -> Result<Self> {
        Self::new(channel, vec![half_width; channel.actuators()])
    }

    pub fn with_arm_after(mut self, k: u64) -> Self {
        self.arm_after = k.max(1);
        self
    }

    pub fn arm_after(&self) -> u64 {
        self.arm_after
    }

    pub fn nominal(&self) -> &[f64] {
        &self.nominal
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    /// `C(mu_i, eps_i)` intersected with `[0, 1]`.
    pub fn region(&self, actuator: usize) -> Interval {
        let mu = self.nominal[actuator];
        let eps = self.half_widths[actuator];
        Interval::new((mu - eps).max(0.0), (mu + eps).min(1.0))
    }

    pub fn regions(&self) -> Vec<Interval> {
        (0..self.nominal.len()).map(|i| self.region(i)).collect()
    }

    /// True when an armed monitor's estimate has left the safe region.
    pub fn is_alarm(&self, monitor: &MonitorState) -> bool {
        if monitor.steps() < self.arm_after {
            return false;
        }
        match monitor.estimate() {
            Some(est) => !in_safe_region(&est, &self.nominal, &self.half_widths),
            None => false,
        }
    }
}

/// Per-actuator uniform streams; a packet is delivered when its uniform
/// draw falls below the current mean. Runs that share a seed therefore share
/// uniforms, which pairs them as common random numbers.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    streams: Vec<ChaCha8Rng>,
}

impl ChannelSampler {
    pub fn new(seed: u64, realization: u64, m: usize) -> Self {
        Self {
            streams: (0..m)
                .map(|i| rng::stream(seed, realization, Stream::Channel(i)))
                .collect(),
        }
    }
}

pub fn sample_losses(means: &[f64], sampler: &mut ChannelSampler) -> LossRealization {
    assert_eq!(means.len(), sampler.streams.len(), "one mean per actuator");
    LossRealization(
        means
            .iter()
            .zip(sampler.streams.iter_mut())
            .map(|(mu, rng)| rng.random::<f64>() < *mu)
            .collect(),
    )
}

/// Running count of delivered packets per actuator.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MonitorState {
    steps: u64,
    delivered: Vec<u64>,
}

impl MonitorState {
    pub fn new(m: usize) -> Self {
        Self {
            steps: 0,
            delivered: vec![0; m],
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn counts(&self) -> &[u64] {
        &self.delivered
    }

    /// `count_i / k`; `None` before the first observation.
    pub fn estimate(&self) -> Option<Vec<f64>> {
        if self.steps == 0 {
            return None;
        }
        let k = self.steps as f64;
        Some(self.delivered.iter().map(|c| *c as f64 / k).collect())
    }
}

pub fn update_monitor(mut state: MonitorState, v: &LossRealization) -> MonitorState {
    assert_eq!(state.delivered.len(), v.len(), "monitor dimension");
    state.steps += 1;
    for (count, d) in state.delivered.iter_mut().zip(v.delivered()) {
        *count += u64::from(*d);
    }
    state
}

/// `-L <= M_hat - M <= L`, boundary included.
pub fn in_safe_region(m_hat: &[f64], nominal: &[f64], half_widths: &[f64]) -> bool {
    m_hat
        .iter()
        .zip(nominal)
        .zip(half_widths)
        .all(|((est, mu), eps)| (est - mu).abs() <= *eps)
}
