//! Closed-loop Monte-Carlo harness.
//!
//! Cost ledger: step `k` is charged
//! `x_k' Q x_k + (V_k u_k)' Psi_1 (V_k u_k) + x_{k+1}' Omega_1 x_{k+1}`,
//! with `Psi_1` and `Omega_1` the first blocks of the horizon penalties. The terminal cost of an episode is the sum of
//! its stage costs.
//!
//! Realization `r` draws its initial state, process noise and per-actuator
//! loss uniforms from separate streams keyed by `(seed, r)`. Two
//! configurations that differ only in the attack therefore see the same
//! noise and the same uniforms, which pairs them as common random numbers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack_iid::AttackContext;
use crate::attack_nonstationary::{iid_attack, nonstationary_attack, AttackSchedule};
use crate::boxqp::QpSettings;
use crate::channel::{sample_losses, update_monitor, ChannelSampler, ChannelSpec, DetectionSpec, LossRealization, MonitorState};
use crate::controller::{apply_receding_horizon, control_gain, ControllerGain, Protocol};
use crate::error::{dimension, invalid, Error, Result};
use crate::model::{build_prediction_ensemble, step_plant, PredictionEnsemble, SystemModel};
use crate::rng::{self, Stream};

/// State at which a time-invariant attack is synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    /// The plant state at attack onset.
    #[default]
    Onset,
    /// The initial-state mean, independent of the realization.
    Mean,
}

/// How a non-stationary attacker uses its horizon schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Replan {
    /// Re-synthesize from the current state every step and apply step 0.
    #[default]
    EveryStep,
    /// Synthesize once at onset and repeat the schedule.
    Tiled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttackPlan {
    None,
    /// Constant per-actuator means, for instance all-drop or all-deliver.
    Fixed(Vec<f64>),
    /// Best time-invariant means, held for the rest of the episode.
    OptimalIid { source: StateSource },
    NonStationary { replan: Replan, settings: QpSettings },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    Mean,
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub protocol: Protocol,
    pub channel: ChannelSpec,
    pub detection: DetectionSpec,
    pub attack: AttackPlan,
    pub steps: usize,
    pub seed: u64,
    /// First step governed by the attack; earlier steps use nominal means.
    pub onset: usize,
    pub initial_state: InitialState,
    pub halt_on_detect: bool,
    /// Controller sends zero inputs; used as an open-loop reference.
    pub open_loop: bool,
}

impl EpisodeConfig {
    pub fn new(protocol: Protocol, channel: ChannelSpec, detection: DetectionSpec) -> Self {
        Self {
            protocol,
            channel,
            detection,
            attack: AttackPlan::None,
            steps: 50,
            seed: 0,
            onset: 0,
            initial_state: InitialState::Mean,
            halt_on_detect: false,
            open_loop: false,
        }
    }

    pub fn with_attack(mut self, attack: AttackPlan) -> Self {
        self.attack = attack;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// `x_0 ..= x_T` (shorter when halted on detection).
    pub states: Vec<DVector<f64>>,
    /// Inputs the controller sent, before losses.
    pub inputs: Vec<DVector<f64>>,
    pub losses: Vec<LossRealization>,
    pub noises: Vec<DVector<f64>>,
    /// Means the channel used at each step.
    pub channel_means: Vec<Vec<f64>>,
    pub stage_costs: Vec<f64>,
    pub cumulative_costs: Vec<f64>,
    /// Monitor estimate after each step.
    pub estimates: Vec<Vec<f64>>,
    /// Number of observed steps when the alarm first fired.
    pub first_detection: Option<usize>,
    pub terminal_cost: f64,
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, std_error, n }
    }

    /// Mean of `a_i - b_i` over paired samples.
    pub fn paired_difference(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len(), "paired samples");
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::from_samples(&d)
    }

    /// `|mean - target| <= k * std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub realizations: usize,
    pub mean_states: Vec<DVector<f64>>,
    pub mean_cumulative_costs: Vec<f64>,
    pub terminal: MeanEstimate,
    pub terminal_costs: Vec<f64>,
    pub first_detections: Vec<Option<usize>>,
    pub detection_rate: f64,
    pub mean_first_detection: Option<f64>,
}

/// Realized cost of one open-loop execution of a horizon plan.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonOutcome {
    pub states: Vec<DVector<f64>>,
    pub cost: f64,
}

/// `x'Qx + (V u)' Psi_1 (V u) + x_next' Omega_1 x_next`.
pub fn stage_cost(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &LossRealization,
    x_next: &DVector<f64>,
) -> f64 {
    let delivered = v.apply(u);
    let n = x.len();
    let mut cost = 0.0;
    for i in 0..n {
        cost += model.q_diag[i] * x[i] * x[i] + model.omega_diag[i] * x_next[i] * x_next[i];
    }
    for (i, d) in delivered.iter().enumerate() {
        cost += model.psi_diag[i] * d * d;
    }
    cost
}

/// Any `L` with `L L' = sigma` for a symmetric positive semidefinite `sigma`.
fn covariance_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = sigma.clone().cholesky() {
        return ch.l();
    }
    let eig = sigma.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

fn gaussian(rng: &mut ChaCha8Rng, factor: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * z
}

/// A model, a controller and an episode configuration, prepared once and
/// run for any number of realizations.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: SystemModel,
    ens: PredictionEnsemble,
    gain: ControllerGain,
    cfg: EpisodeConfig,
    noise_factor: DMatrix<f64>,
    initial_factor: DMatrix<f64>,
    /// Attack schedule that does not depend on the realization.
    fixed_schedule: Option<AttackSchedule>,
}

impl Simulator {
    pub fn new(model: SystemModel, cfg: EpisodeConfig) -> Result<Self> {
        let ens = build_prediction_ensemble(&model)?;
        let m = model.input_dim();
        if cfg.channel.actuators() != m {
            return Err(dimension("M", m, cfg.channel.actuators()));
        }
        if cfg.detection.nominal() != cfg.channel.means() {
            return Err(invalid("L", "detection nominal means differ from the channel means"));
        }
        if cfg.steps == 0 {
            return Err(invalid("T", "episode length must be at least 1"));
        }
        if cfg.onset > cfg.steps {
            return Err(invalid("onset", format!("{} exceeds episode length {}", cfg.onset, cfg.steps)));
        }
        if let AttackPlan::Fixed(means) = &cfg.attack {
            if means.len() != m {
                return Err(dimension("attack means", m, means.len()));
            }
            if let Some(i) = means.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InfeasibleAttack(format!(
                    "mean {} for actuator {i} is outside [0, 1]",
                    means[i]
                )));
            }
        }
        let gain = control_gain(&ens, &model, cfg.channel.means(), cfg.protocol)?;
        let noise_factor = covariance_factor(&model.sigma_w);
        let initial_factor = covariance_factor(&model.sigma_x);
        let mut sim = Self {
            model,
            ens,
            gain,
            cfg,
            noise_factor,
            initial_factor,
            fixed_schedule: None,
        };
        if let AttackPlan::OptimalIid { source: StateSource::Mean } = sim.cfg.attack {
            let x = sim.model.x_mean.clone();
            sim.fixed_schedule = Some(sim.synthesize_iid(&x)?);
        }
        Ok(sim)
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn ensemble(&self) -> &PredictionEnsemble {
        &self.ens
    }

    pub fn gain(&self) -> &ControllerGain {
        &self.gain
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn context(&self, x: &DVector<f64>) -> Result<AttackContext<'_>> {
        AttackContext::new(&self.ens, &self.model, &self.gain, &self.cfg.channel, &self.cfg.detection, x.clone())
    }

    fn synthesize_iid(&self, x: &DVector<f64>) -> Result<AttackSchedule> {
        iid_attack(&self.context(x)?)
    }

    pub fn initial_state(&self, realization: u64) -> DVector<f64> {
        match self.cfg.initial_state {
            InitialState::Mean => self.model.x_mean.clone(),
            InitialState::Sampled => {
                let mut rng = rng::stream(self.cfg.seed, realization, Stream::InitialState);
                &self.model.x_mean + gaussian(&mut rng, &self.initial_factor)
            }
        }
    }

    /// One closed-loop episode.
    pub fn run(&self, realization: u64) -> Result<SimulationTrace> {
        let m = self.model.input_dim();
        let steps = self.cfg.steps;
        let mut noise_rng = rng::stream(self.cfg.seed, realization, Stream::ProcessNoise);
        let mut sampler = ChannelSampler::new(self.cfg.seed, realization, m);
        let mut monitor = MonitorState::new(m);
        let mut x = self.initial_state(realization);
        let mut schedule = self.fixed_schedule.clone();

        let mut trace = SimulationTrace {
            states: vec![x.clone()],
            inputs: Vec::with_capacity(steps),
            losses: Vec::with_capacity(steps),
            noises: Vec::with_capacity(steps),
            channel_means: Vec::with_capacity(steps),
            stage_costs: Vec::with_capacity(steps),
            cumulative_costs: Vec::with_capacity(steps),
            estimates: Vec::with_capacity(steps),
            first_detection: None,
            terminal_cost: 0.0,
        };
        let mut total = 0.0;
        for k in 0..steps {
            let u = if self.cfg.open_loop {
                DVector::zeros(m)
            } else {
                let seq = -self.gain.solve(&(&self.ens.f * &x));
                apply_receding_horizon(&seq, m)
            };
            let means = self.attack_means(k, &x, &mut schedule)?;
            let v = sample_losses(&means, &mut sampler);
            let w = gaussian(&mut noise_rng, &self.noise_factor);
            let x_next = step_plant(&self.model, &x, &u, &v, &w);
            let cost = stage_cost(&self.model, &x, &u, &v, &x_next);
            total += cost;
            monitor = update_monitor(monitor, &v);

            trace.inputs.push(u);
            trace.losses.push(v);
            trace.noises.push(w);
            trace.channel_means.push(means);
            trace.stage_costs.push(cost);
            trace.cumulative_costs.push(total);
            trace.estimates.push(monitor.estimate().expect("at least one step observed"));
            trace.states.push(x_next.clone());
            x = x_next;

            if trace.first_detection.is_none() && self.cfg.detection.is_alarm(&monitor) {
                trace.first_detection = Some(k + 1);
                if self.cfg.halt_on_detect {
                    break;
                }
            }
        }
        trace.terminal_cost = total;
        Ok(trace)
    }

    fn attack_means(&self, k: usize, x: &DVector<f64>, schedule: &mut Option<AttackSchedule>) -> Result<Vec<f64>> {
        if k < self.cfg.onset {
            return Ok(self.cfg.channel.means().to_vec());
        }
        match &self.cfg.attack {
            AttackPlan::None => Ok(self.cfg.channel.means().to_vec()),
            AttackPlan::Fixed(means) => Ok(means.clone()),
            AttackPlan::OptimalIid { .. } => {
                if schedule.is_none() {
                    *schedule = Some(self.synthesize_iid(x)?);
                }
                Ok(schedule.as_ref().expect("set above").step_means(0).to_vec())
            }
            AttackPlan::NonStationary { replan, settings } => match replan {
                Replan::EveryStep => {
                    let s = nonstationary_attack(&self.context(x)?, settings)?;
                    Ok(s.step_means(0).to_vec())
                }
                Replan::Tiled => {
                    if schedule.is_none() {
                        *schedule = Some(nonstationary_attack(&self.context(x)?, settings)?);
                    }
                    let s = schedule.as_ref().expect("set above");
                    Ok(s.step_means((k - self.cfg.onset) % s.horizon()).to_vec())
                }
            },
        }
    }

    /// `R` independent realizations, reduced in realization order.
    pub fn monte_carlo(&self, realizations: usize) -> Result<AggregateReport> {
        if realizations == 0 {
            return Err(invalid("R", "at least one realization is required"));
        }
        let traces: Vec<SimulationTrace> = (0..realizations as u64)
            .into_par_iter()
            .map(|r| self.run(r))
            .collect::<Result<_>>()?;

        let n = self.model.state_dim();
        let len = self.cfg.steps + 1;
        let mut state_sums = vec![DVector::zeros(n); len];
        let mut state_counts = vec![0usize; len];
        let mut cost_sums = vec![0.0; self.cfg.steps];
        let mut cost_counts = vec![0usize; self.cfg.steps];
        for t in &traces {
            for (k, s) in t.states.iter().enumerate() {
                state_sums[k] += s;
                state_counts[k] += 1;
            }
            for (k, c) in t.cumulative_costs.iter().enumerate() {
                cost_sums[k] += c;
                cost_counts[k] += 1;
            }
        }
        let mean_states = state_sums
            .into_iter()
            .zip(&state_counts)
            .take_while(|(_, c)| **c > 0)
            .map(|(s, c)| s / *c as f64)
            .collect();
        let mean_cumulative_costs = cost_sums
            .into_iter()
            .zip(&cost_counts)
            .take_while(|(_, c)| **c > 0)
            .map(|(s, c)| s / *c as f64)
            .collect();
        let terminal_costs: Vec<f64> = traces.iter().map(|t| t.terminal_cost).collect();
        let first_detections: Vec<Option<usize>> = traces.iter().map(|t| t.first_detection).collect();
        let detected: Vec<f64> = first_detections.iter().flatten().map(|k| *k as f64).collect();
        Ok(AggregateReport {
            realizations,
            mean_states,
            mean_cumulative_costs,
            terminal: MeanEstimate::from_samples(&terminal_costs),
            detection_rate: detected.len() as f64 / realizations as f64,
            mean_first_detection: (!detected.is_empty()).then(|| detected.iter().sum::<f64>() / detected.len() as f64),
            terminal_costs,
            first_detections,
        })
    }

    /// Plans once at the initial state and executes the whole horizon open
    /// loop with per-step means `means[j]`, charging the horizon cost
    /// `x_0'Q x_0 + sum_j x_{j+1}' Omega_j x_{j+1} + (V_j u_j)' Psi_j (V_j u_j)`.
    pub fn run_horizon(&self, realization: u64, means: &[Vec<f64>]) -> Result<HorizonOutcome> {
        let n = self.model.state_dim();
        let m = self.model.input_dim();
        let horizon = self.model.horizon;
        if means.len() != horizon {
            return Err(dimension("attack schedule", horizon, means.len()));
        }
        let mut noise_rng = rng::stream(self.cfg.seed, realization, Stream::ProcessNoise);
        let mut sampler = ChannelSampler::new(self.cfg.seed, realization, m);
        let mut x = self.initial_state(realization);
        let plan = -self.gain.solve(&(&self.ens.f * &x));
        let mut cost: f64 = (0..n).map(|i| self.model.q_diag[i] * x[i] * x[i]).sum();
        let mut states = vec![x.clone()];
        for (j, step_means) in means.iter().enumerate() {
            let u = plan.rows(j * m, m).into_owned();
            let v = sample_losses(step_means, &mut sampler);
            let w = gaussian(&mut noise_rng, &self.noise_factor);
            x = step_plant(&self.model, &x, &u, &v, &w);
            let delivered = v.apply(&u);
            for i in 0..n {
                cost += self.model.omega_diag[j * n + i] * x[i] * x[i];
            }
            for i in 0..m {
                cost += self.model.psi_diag[j * m + i] * delivered[i] * delivered[i];
            }
            states.push(x.clone());
        }
        Ok(HorizonOutcome { states, cost })
    }

    /// Realized horizon costs for realizations `0..R`, in order.
    pub fn horizon_costs(&self, realizations: usize, means: &[Vec<f64>]) -> Result<Vec<f64>> {
        (0..realizations as u64)
            .into_par_iter()
            .map(|r| self.run_horizon(r, means).map(|o| o.cost))
            .collect()
    }
}

/// One episode of `cfg`, realization 0.
pub fn run_episode(model: SystemModel, cfg: EpisodeConfig) -> Result<SimulationTrace> {
    Simulator::new(model, cfg)?.run(0)
}
