//! Attack synthesis and closed-loop simulation for linear plants actuated
//! over a lossy, Bernoulli packet-drop channel.
//!
//! The operator runs a receding-horizon controller whose gain depends on the
//! nominal delivery means `M` and on the acknowledgement protocol
//! ([`Protocol::TcpLike`] or [`Protocol::UdpLike`]). It monitors the running
//! mean of delivered packets and declares an attack when the estimate leaves
//! the safe region `C(M, L)`. An attacker who controls the channel statistics
//! picks the delivery means that maximize the operator's expected cost while
//! staying inside that region.
//!
//! Module map:
//!
//! - [`model`]: plant, horizon prediction matrices, weighted Gramians.
//! - [`controller`]: protocol-dependent gain and optimal input sequence.
//! - [`channel`]: Bernoulli loss sampling, running-mean monitor, safe region.
//! - [`attack_iid`]: stationary (IID) attack objectives and optimal mean.
//! - [`attack_nonstationary`]: per-step attack schedules posed as box QPs.
//! - [`boxqp`]: the box-constrained QP maximizer behind the schedules.
//! - [`cost`]: closed-form expected costs and cost increases.
//! - [`sim`]: closed-loop Monte-Carlo harness.

pub mod attack_iid;
pub mod attack_nonstationary;
pub mod boxqp;
pub mod channel;
pub mod controller;
pub mod cost;
pub mod error;
pub mod model;
pub mod rng;
pub mod sim;
#[cfg(test)]
mod testkit;

pub use attack_iid::{AttackCharacterization, AttackContext, Convexity};
pub use attack_nonstationary::AttackSchedule;
pub use boxqp::{BoxQp, QpSettings, QpSolution};
pub use channel::{ChannelSpec, DetectionSpec, Interval, LossRealization, MonitorState};
pub use controller::{ControllerGain, Protocol};
pub use cost::{CostReport, Regime};
pub use error::{Error, Result};
pub use model::{PredictionEnsemble, SystemModel};
pub use sim::{AttackPlan, EpisodeConfig, SimulationTrace, Simulator};
