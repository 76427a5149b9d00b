//! Closed-form expected horizon costs and the cost increase caused by an
//! attack on the channel means.
//!
//! Every increase has the form `objective(alpha) + benefit`, where
//! `objective` is the IID attack objective and `benefit = -U' nu_bar F x`
//! is what the operator gains from feedback under nominal statistics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::attack_iid::{f_udp, f_udp_derivs, g_tcp, perfect_channel_condition_tcp, AttackContext, Convexity};
use crate::controller::{feedback_cost_term, nominal_expected_cost, open_loop_cost, ControllerGain, Protocol};
use crate::error::{dimension, Error, Result};
use crate::model::{PredictionEnsemble, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    AlphaTo0,
    Alpha1,
    AlphaMax,
    GeneralAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub regime: Regime,
    pub protocol: Protocol,
    /// Expected cost under nominal channel statistics.
    pub baseline: f64,
    /// Expected cost under attack.
    pub attacked: f64,
    pub increase: f64,
    /// Attack mean for IID regimes.
    pub alpha: Option<f64>,
    /// Regime-specific sufficient condition, where one exists: for `ALPHA_1`
    /// on UDP-like channels, `f(1) >= 0`; on TCP-like channels, `g(1) > 0`.
    pub condition_met: Option<bool>,
}

impl CostReport {
    fn new(ctx: &AttackContext, regime: Regime, alpha: Option<f64>, increase: f64) -> Self {
        let baseline = nominal_expected_cost(ctx.ens, ctx.model, ctx.gain, ctx.x());
        let attacked = baseline + increase;
        Self {
            regime,
            protocol: ctx.protocol(),
            baseline,
            attacked,
            increase: attacked - baseline,
            alpha,
            condition_met: None,
        }
    }
}

/// `-U' nu_bar F x`, the expected cost the operator saves through feedback.
pub fn feedback_benefit(ctx: &AttackContext) -> f64 {
    -ctx.u_star().dot(&ctx.gain.nu_bar().component_mul(ctx.fx()))
}

/// All packets dropped: the plant runs open loop.
pub fn cost_increase_alpha0(ctx: &AttackContext) -> CostReport {
    CostReport::new(ctx, Regime::AlphaTo0, Some(0.0), feedback_benefit(ctx))
}

/// All packets delivered on a UDP-like channel.
pub fn cost_increase_alpha1_udp(ctx: &AttackContext) -> Result<CostReport> {
    let f1 = f_udp(ctx, 1.0)?;
    let mut r = CostReport::new(ctx, Regime::Alpha1, Some(1.0), f1 + feedback_benefit(ctx));
    r.condition_met = Some(f1 >= 0.0);
    Ok(r)
}

/// Interior optimum of a concave UDP objective, `f(alpha_max) = -b^2 / 4h`
/// with `b = f'(0)` and `h` the curvature.
pub fn cost_increase_alphamax_udp(ctx: &AttackContext) -> Result<CostReport> {
    let p = f_udp_derivs(ctx)?;
    if p.classify(ctx.zero_tolerance()) != Convexity::Concave {
        return Err(Error::RegimeInapplicable(format!(
            "objective is not strictly concave (h = {:e})",
            p.curvature()
        )));
    }
    let alpha = p.vertex();
    let (region, _) = ctx.scalar_channel()?;
    if !region.contains(alpha) {
        return Err(Error::RegimeInapplicable(format!(
            "interior maximizer {alpha} lies outside [{}, {}]",
            region.lo, region.hi
        )));
    }
    let peak = -p.slope0 * p.slope0 / (4.0 * p.curvature());
    Ok(CostReport::new(ctx, Regime::AlphaMax, Some(alpha), peak + feedback_benefit(ctx)))
}

/// All packets delivered on a TCP-like channel.
pub fn cost_increase_alpha1_tcp(ctx: &AttackContext) -> Result<CostReport> {
    let cond = perfect_channel_condition_tcp(ctx)?;
    let mut r = CostReport::new(ctx, Regime::Alpha1, Some(1.0), cond.g_at_one + feedback_benefit(ctx));
    r.condition_met = Some(cond.holds_at_state);
    Ok(r)
}

/// IID attack at `alpha` through the protocol's objective.
pub fn cost_increase_alpha(ctx: &AttackContext, alpha: f64) -> Result<CostReport> {
    let objective = match ctx.protocol() {
        Protocol::UdpLike => f_udp(ctx, alpha)?,
        Protocol::TcpLike => g_tcp(ctx, alpha)?,
    };
    Ok(CostReport::new(ctx, Regime::GeneralAlpha, Some(alpha), objective + feedback_benefit(ctx)))
}

/// Expected horizon cost when the operator plans with its nominal gain and
/// the channel delivers with horizon means `nu_alpha` (length `N m`).
pub fn expected_attacked_cost(
    ens: &PredictionEnsemble,
    model: &SystemModel,
    gain: &ControllerGain,
    x: &DVector<f64>,
    nu_alpha: &DVector<f64>,
) -> Result<f64> {
    let nm = ens.horizon * ens.input_dim;
    if nu_alpha.len() != nm {
        return Err(dimension("attack means", nm, nu_alpha.len()));
    }
    let fx = &ens.f * x;
    let u_star = -gain.solve(&fx);
    Ok(open_loop_cost(ens, model, x)
        + feedback_cost_term(ens, model, gain.protocol(), &u_star, &fx, nu_alpha))
}

/// `E[c(X)]` for `X ~ (mean, cov)` and a cost `c` that is a quadratic form
/// in `x` plus a constant.
pub fn aggregate_expectation(
    cost: impl Fn(&DVector<f64>) -> f64,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> f64 {
    let n = mean.len();
    let c0 = cost(&DVector::zeros(n));
    let unit = |i: usize| DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 });
    let diag: Vec<f64> = (0..n).map(|i| cost(&unit(i)) - c0).collect();
    let mut k = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (cost(&(unit(i) + unit(j))) - c0 - diag[i] - diag[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    c0 + mean.dot(&(&k * mean)) + k.component_mul(cov).sum()
}
