//! Protocol-dependent receding-horizon controller.
//!
//! With `nu_bar` the horizon repetition of the nominal means, the optimal
//! input sequence is `Upsilon* = -G^{-1} F x` where
//!
//! ```text
//! TCP-like: G = Psi + Delta_Gamma nu_bar
//! UDP-like: G = Psi + Delta_Gamma nu_bar + (I ⊙ Delta_Gamma)(I - nu_bar)
//! ```
//!
//! `G` is only symmetric when `nu_bar` is a multiple of the identity, so it
//! is factorized with partial-pivot LU.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, invalid, Error, Result};
use crate::model::{repeat_diagonal, PredictionEnsemble, SystemModel};

/// Acknowledgement protocol of the actuation channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Delivery acknowledged; the controller knows past loss realizations.
    TcpLike,
    /// No acknowledgement; the controller knows past states only.
    UdpLike,
}

#[derive(Debug, Clone)]
pub struct ControllerGain {
    kernel: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    protocol: Protocol,
    nu_bar: DVector<f64>,
    condition: f64,
}

impl ControllerGain {
    /// The gain kernel `G`.
    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    /// Diagonal of the operator's assumed horizon mean `nu_bar` (length `N m`).
    pub fn nu_bar(&self) -> &DVector<f64> {
        &self.nu_bar
    }

    /// 2-norm condition number of `G`.
    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// `G^{-1} rhs`.
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.lu
            .solve(rhs)
            .expect("kernel was checked to be non-singular at construction")
    }
}

/// Builds `G` for the operator's nominal per-actuator means.
pub fn control_gain(
    ens: &PredictionEnsemble,
    model: &SystemModel,
    means: &[f64],
    protocol: Protocol,
) -> Result<ControllerGain> {
    if means.len() != ens.input_dim {
        return Err(dimension("M", ens.input_dim, means.len()));
    }
    if let Some(i) = means.iter().position(|mu| !(0.0..=1.0).contains(mu)) {
        return Err(invalid("M", format!("mean {} of actuator {i} is outside [0, 1]", means[i])));
    }
    let nu_bar = repeat_diagonal(means, ens.horizon);
    let nm = nu_bar.len();

    let mut kernel = ens.delta_gamma.clone();
    for (mut col, nu) in kernel.column_iter_mut().zip(nu_bar.iter()) {
        col *= *nu;
    }
    for i in 0..nm {
        kernel[(i, i)] += model.psi_diag[i];
        if protocol == Protocol::UdpLike {
            kernel[(i, i)] += ens.delta_gamma_diag[i] * (1.0 - nu_bar[i]);
        }
    }

    let sv = kernel.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !condition.is_finite() || condition > 1.0 / f64::EPSILON {
        return Err(Error::SingularGain { condition });
    }
    let lu = kernel.clone().lu();
    if !lu.is_invertible() {
        return Err(Error::SingularGain { condition });
    }
    Ok(ControllerGain {
        kernel,
        lu,
        protocol,
        nu_bar,
        condition,
    })
}

/// `Upsilon* = -G^{-1} F x`.
pub fn optimal_input_sequence(
    gain: &ControllerGain,
    ens: &PredictionEnsemble,
    x: &DVector<f64>,
) -> DVector<f64> {
    -gain.solve(&(&ens.f * x))
}

/// First `m` entries of a horizon input sequence.
pub fn apply_receding_horizon(seq: &DVector<f64>, m: usize) -> DVector<f64> {
    assert!(m > 0 && seq.len().is_multiple_of(m), "sequence length must be a multiple of m");
    seq.rows(0, m).into_owned()
}

/// `x'(Q + Delta_Phi)x + tr(Delta_Lambda Sigma_Xi)`: the expected horizon
/// cost when no input is delivered.
pub fn open_loop_cost(ens: &PredictionEnsemble, model: &SystemModel, x: &DVector<f64>) -> f64 {
    let q = DVector::from_iterator(x.len(), x.iter().zip(model.q_diag.iter()).map(|(a, b)| a * a * b));
    q.sum() + x.dot(&(&ens.delta_phi * x)) + ens.noise_cost()
}

/// Input-dependent part of the expected horizon cost when the operator
/// applies `u_star` and packets are delivered with horizon means `nu_alpha`:
///
/// `U' nu_a (2 F x + (Delta_Gamma nu_a + Psi) U)`, plus the loss-variance
/// term `U' nu_a (I ⊙ Delta_Gamma)(I - nu_a) U` for UDP-like channels.
pub fn feedback_cost_term(
    ens: &PredictionEnsemble,
    model: &SystemModel,
    protocol: Protocol,
    u_star: &DVector<f64>,
    fx: &DVector<f64>,
    nu_alpha: &DVector<f64>,
) -> f64 {
    let y = nu_alpha.component_mul(u_star);
    let mut total = 2.0 * y.dot(fx) + y.dot(&(&ens.delta_gamma * &y));
    for i in 0..u_star.len() {
        let u2 = u_star[i] * u_star[i];
        total += model.psi_diag[i] * nu_alpha[i] * u2;
        if protocol == Protocol::UdpLike {
            total += ens.delta_gamma_diag[i] * nu_alpha[i] * (1.0 - nu_alpha[i]) * u2;
        }
    }
    total
}

/// Expected horizon cost under nominal channel statistics.
pub fn nominal_expected_cost(
    ens: &PredictionEnsemble,
    model: &SystemModel,
    gain: &ControllerGain,
    x: &DVector<f64>,
) -> f64 {
    let fx = &ens.f * x;
    let u_star = -gain.solve(&fx);
    open_loop_cost(ens, model, x)
        + feedback_cost_term(ens, model, gain.protocol(), &u_star, &fx, gain.nu_bar())
}
