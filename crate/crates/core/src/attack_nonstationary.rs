//! Non-stationary attacks: one delivery mean per horizon step and channel.
//!
//! With `z` the stacked horizon means and `U` the operator's optimal
//! sequence, the input-dependent expected cost is a quadratic in `z`:
//!
//! ```text
//! UDP-like: z'(Delta_H ∘ UU')z - sum_i z_i U_i ((I ⊙ Delta_Gamma + Psi + 2 Delta_H nu_bar) U)_i
//! TCP-like: z'(Delta_Gamma ∘ UU')z - sum_i z_i U_i ((Psi + 2 Delta_Gamma nu_bar) U)_i
//! ```
//!
//! where `Delta_H` is `Delta_Gamma` with its diagonal removed. At
//! `z = alpha 1` these reduce to the IID objectives.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::attack_iid::AttackContext;
use crate::boxqp::{solve_box_qp_max, solve_iid_constrained, BoxQp, QpSettings, QpSolution, QpWinner, ScheduleVar};
use crate::channel::ChannelSpec;
use crate::controller::Protocol;
use crate::error::Result;
use crate::model::repeat_diagonal;

/// Per-step, per-actuator delivery means chosen by the attacker.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSchedule {
    /// `means[k][i]` is the mean for actuator `i` at horizon step `k`.
    pub means: Vec<Vec<f64>>,
    pub objective: f64,
    pub winner: QpWinner,
    pub stationarity: f64,
}

impl AttackSchedule {
    /// Constant schedule over `horizon` steps.
    pub fn constant(means: &[f64], horizon: usize) -> Self {
        Self {
            means: vec![means.to_vec(); horizon],
            objective: f64::NAN,
            winner: QpWinner::IidPoint,
            stationarity: f64::NAN,
        }
    }

    fn from_solution(qp: &BoxQp, sol: &QpSolution, channel: &ChannelSpec, horizon: usize) -> Self {
        let mut per_step = vec![vec![0.0; channel.channel_count()]; horizon];
        for (v, z) in qp.vars.iter().zip(sol.z.iter()) {
            per_step[v.step][v.channel] = *z;
        }
        Self {
            means: per_step.iter().map(|s| channel.expand(s)).collect(),
            objective: sol.objective,
            winner: sol.winner,
            stationarity: sol.stationarity,
        }
    }

    pub fn horizon(&self) -> usize {
        self.means.len()
    }

    pub fn step_means(&self, k: usize) -> &[f64] {
        &self.means[k]
    }

    /// Stacked diagonal of the horizon mean matrix.
    pub fn horizon_diag(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.means.iter().map(Vec::len).sum(),
            self.means.iter().flatten().copied(),
        )
    }

    /// True when every per-step mean is the same.
    pub fn is_constant(&self) -> bool {
        self.means.windows(2).all(|w| w[0] == w[1])
    }
}

/// Actuator-level quadratic and linear coefficients.
fn actuator_coefficients(ctx: &AttackContext, weight: &DMatrix<f64>, linear: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let u = ctx.u_star();
    let h = DMatrix::from_fn(u.len(), u.len(), |i, j| weight[(i, j)] * u[i] * u[j]);
    let lu = linear * u;
    let c = DVector::from_fn(u.len(), |i, _| -u[i] * lu[i]);
    (h, c)
}

/// Groups actuator-level variables into (step, channel) variables.
fn grouped_qp(ctx: &AttackContext, h: DMatrix<f64>, c: DVector<f64>) -> Result<BoxQp> {
    let channel = ctx.channel;
    let m = channel.actuators();
    let g = channel.channel_count();
    let horizon = ctx.ens.horizon;
    let d = horizon * g;
    let mut p = DMatrix::zeros(horizon * m, d);
    for k in 0..horizon {
        for i in 0..m {
            p[(k * m + i, k * g + channel.channel_of(i))] = 1.0;
        }
    }
    let pt = p.transpose();
    let hg = &pt * h * &p;
    let hg = (&hg + hg.transpose()) * 0.5;
    let cg = &pt * c;
    let mut lo = DVector::zeros(d);
    let mut hi = DVector::zeros(d);
    let mut nominal = DVector::zeros(d);
    let mut vars = Vec::with_capacity(d);
    for k in 0..horizon {
        for ch in 0..g {
            let region = ctx.detection.region(channel.representative(ch));
            lo[k * g + ch] = region.lo;
            hi[k * g + ch] = region.hi;
            nominal[k * g + ch] = channel.channel_mean(ch);
            vars.push(ScheduleVar { step: k, channel: ch });
        }
    }
    BoxQp::new(hg, cg, lo, hi, vars, nominal)
}

fn scaled_columns(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut col, v) in out.column_iter_mut().zip(s.iter()) {
        col *= *v;
    }
    out
}

pub fn build_qp_udp(ctx: &AttackContext) -> Result<BoxQp> {
    ctx.require_protocol(Protocol::UdpLike)?;
    let hollow = ctx.ens.delta_hollow();
    let mut linear = scaled_columns(&hollow, ctx.gain.nu_bar()) * 2.0;
    for i in 0..linear.nrows() {
        linear[(i, i)] += ctx.ens.delta_gamma_diag[i] + ctx.model.psi_diag[i];
    }
    let (h, c) = actuator_coefficients(ctx, &hollow, &linear);
    grouped_qp(ctx, h, c)
}

pub fn build_qp_tcp(ctx: &AttackContext) -> Result<BoxQp> {
    ctx.require_protocol(Protocol::TcpLike)?;
    let mut linear = scaled_columns(&ctx.ens.delta_gamma, ctx.gain.nu_bar()) * 2.0;
    for i in 0..linear.nrows() {
        linear[(i, i)] += ctx.model.psi_diag[i];
    }
    let (h, c) = actuator_coefficients(ctx, &ctx.ens.delta_gamma, &linear);
    grouped_qp(ctx, h, c)
}

/// The QP matching the context's protocol.
pub fn build_qp(ctx: &AttackContext) -> Result<BoxQp> {
    match ctx.protocol() {
        Protocol::UdpLike => build_qp_udp(ctx),
        Protocol::TcpLike => build_qp_tcp(ctx),
    }
}

/// Best per-step schedule over the controller horizon.
pub fn nonstationary_attack(ctx: &AttackContext, settings: &QpSettings) -> Result<AttackSchedule> {
    let qp = build_qp(ctx)?;
    let sol = solve_box_qp_max(&qp, settings);
    Ok(AttackSchedule::from_solution(&qp, &sol, ctx.channel, ctx.ens.horizon))
}

/// Best schedule that is constant in time on every channel.
pub fn iid_attack(ctx: &AttackContext) -> Result<AttackSchedule> {
    let qp = build_qp(ctx)?;
    let sol = solve_iid_constrained(&qp);
    Ok(AttackSchedule::from_solution(&qp, &sol, ctx.channel, ctx.ens.horizon))
}

/// QP objective at a constant per-actuator mean.
pub fn constant_schedule_objective(qp: &BoxQp, ctx: &AttackContext, means: &[f64]) -> f64 {
    let per_channel: Vec<f64> = (0..ctx.channel.channel_count())
        .map(|g| means[ctx.channel.representative(g)])
        .collect();
    let z = DVector::from_iterator(qp.dim(), qp.vars.iter().map(|v| per_channel[v.channel]));
    qp.objective(&z)
}

/// Horizon diagonal for a constant per-actuator mean.
pub fn constant_horizon_diag(means: &[f64], horizon: usize) -> DVector<f64> {
    repeat_diagonal(means, horizon)
}
