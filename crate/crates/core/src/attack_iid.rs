//! Stationary (IID) attacks: the attacker replaces the channel mean with a
//! constant `alpha` for the whole run.
//!
//! Writing `U` for the operator's optimal sequence `-G^{-1} F x`, the change
//! in the input-dependent cost when the horizon mean becomes `alpha I` is
//!
//! ```text
//! UDP-like: f(a) =  U' a (a Delta_Gamma + (1 - a)(I ⊙ Delta_Gamma) + Psi - 2G) U
//! TCP-like: g(a) = -U' a (Delta_Gamma (2 nu_bar - a I) + Psi) U
//! ```
//!
//! Both are quadratics in `a` with no constant term. The attacker maximizes
//! them over the safe region `[lo, hi]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::channel::{ChannelSpec, DetectionSpec, Interval};
use crate::controller::{ControllerGain, Protocol};
use crate::error::{dimension, invalid, Error, Result};
use crate::model::{PredictionEnsemble, SystemModel};

/// Everything the attacker needs to evaluate its objective at one state.
#[derive(Debug, Clone)]
pub struct AttackContext<'a> {
    pub ens: &'a PredictionEnsemble,
    pub model: &'a SystemModel,
    pub gain: &'a ControllerGain,
    pub channel: &'a ChannelSpec,
    pub detection: &'a DetectionSpec,
    x: DVector<f64>,
    fx: DVector<f64>,
    u_star: DVector<f64>,
}

impl<'a> AttackContext<'a> {
    pub fn new(
        ens: &'a PredictionEnsemble,
        model: &'a SystemModel,
        gain: &'a ControllerGain,
        channel: &'a ChannelSpec,
        detection: &'a DetectionSpec,
        x: DVector<f64>,
    ) -> Result<Self> {
        if x.len() != ens.state_dim {
            return Err(dimension("x", ens.state_dim, x.len()));
        }
        if channel.actuators() != ens.input_dim {
            return Err(dimension("M", ens.input_dim, channel.actuators()));
        }
        if detection.nominal().len() != ens.input_dim {
            return Err(dimension("L", ens.input_dim, detection.nominal().len()));
        }
        if gain.nu_bar().len() != ens.horizon * ens.input_dim {
            return Err(dimension("gain", ens.horizon * ens.input_dim, gain.nu_bar().len()));
        }
        let fx = &ens.f * &x;
        let u_star = -gain.solve(&fx);
        Ok(Self {
            ens,
            model,
            gain,
            channel,
            detection,
            x,
            fx,
            u_star,
        })
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    /// `F x`.
    pub fn fx(&self) -> &DVector<f64> {
        &self.fx
    }

    /// The operator's optimal horizon input sequence at `x`.
    pub fn u_star(&self) -> &DVector<f64> {
        &self.u_star
    }

    pub fn protocol(&self) -> Protocol {
        self.gain.protocol()
    }

    /// Safe region and nominal mean of a single shared channel.
    pub fn scalar_channel(&self) -> Result<(Interval, f64)> {
        if self.channel.channel_count() != 1 {
            return Err(invalid(
                "M",
                format!(
                    "a scalar attack needs one shared channel, found {}",
                    self.channel.channel_count()
                ),
            ));
        }
        Ok((self.detection.region(0), self.channel.channel_mean(0)))
    }

    /// Threshold below which a curvature or slope counts as zero.
    pub fn zero_tolerance(&self) -> f64 {
        1e-12 * self.ens.delta_gamma.norm() * self.u_star.norm_squared()
    }

    pub fn require_protocol(&self, protocol: Protocol) -> Result<()> {
        if self.protocol() == protocol {
            Ok(())
        } else {
            Err(Error::ProtocolMismatch { expected: protocol })
        }
    }

    fn quad(&self, m: &DMatrix<f64>) -> f64 {
        self.u_star.dot(&(m * &self.u_star))
    }

    fn diag_quad(&self, d: impl Iterator<Item = f64>) -> f64 {
        self.u_star.iter().zip(d).map(|(u, w)| u * u * w).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Convexity {
    Concave,
    Convex,
    Linear,
}

/// `p(a) = 0.5 * second * a^2 + slope0 * a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticProfile {
    /// Constant second derivative.
    pub second: f64,
    /// First derivative at `a = 0`.
    pub slope0: f64,
}

impl QuadraticProfile {
    pub fn value(&self, alpha: f64) -> f64 {
        alpha * (0.5 * self.second * alpha + self.slope0)
    }

    pub fn derivative(&self, alpha: f64) -> f64 {
        self.slope0 + self.second * alpha
    }

    /// Half the second derivative.
    pub fn curvature(&self) -> f64 {
        0.5 * self.second
    }

    /// The stationary point `-slope0 / second`.
    pub fn vertex(&self) -> f64 {
        -self.slope0 / self.second
    }

    pub fn classify(&self, tol: f64) -> Convexity {
        let h = self.curvature();
        if h < -tol {
            Convexity::Concave
        } else if h > tol {
            Convexity::Convex
        } else {
            Convexity::Linear
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackCharacterization {
    pub protocol: Protocol,
    pub convexity: Convexity,
    /// `h_UDP` or `h_TCP`: half the objective's second derivative.
    pub curvature: f64,
    pub profile: QuadraticProfile,
    /// Interior maximizer of a concave UDP objective.
    pub alpha_max: Option<f64>,
    /// Unconstrained minimizer of a convex TCP objective (diagnostic).
    pub alpha_min: Option<f64>,
    pub region: Interval,
    pub nominal: f64,
    /// `(alpha, objective)` pairs that were compared.
    pub candidates: Vec<(f64, f64)>,
    pub alpha_star: f64,
    pub objective_star: f64,
    /// Objective is identically zero on the region; `alpha_star` is the
    /// nominal mean.
    pub flat: bool,
}

/// `f(alpha)` evaluated as the quadratic form of the assembled matrix.
pub fn f_udp(ctx: &AttackContext, alpha: f64) -> Result<f64> {
    ctx.require_protocol(Protocol::UdpLike)?;
    let nm = ctx.u_star.len();
    let mut m = &ctx.ens.delta_gamma * alpha - ctx.gain.kernel() * 2.0;
    for i in 0..nm {
        m[(i, i)] += (1.0 - alpha) * ctx.ens.delta_gamma_diag[i] + ctx.model.psi_diag[i];
    }
    Ok(alpha * ctx.quad(&m))
}

/// Derivative profile of `f`: `f'' = 2 U'(Delta_Gamma - I ⊙ Delta_Gamma)U`
/// and `f'(0) = U'(I ⊙ Delta_Gamma + Psi)U + 2 U'F x`.
pub fn f_udp_derivs(ctx: &AttackContext) -> Result<QuadraticProfile> {
    ctx.require_protocol(Protocol::UdpLike)?;
    let d = &ctx.ens.delta_gamma_diag;
    let psi = &ctx.model.psi_diag;
    let h = ctx.quad(&ctx.ens.delta_hollow());
    let slope0 = ctx.diag_quad(d.iter().zip(psi.iter()).map(|(a, b)| a + b))
        + 2.0 * ctx.u_star.dot(&ctx.fx);
    Ok(QuadraticProfile {
        second: 2.0 * h,
        slope0,
    })
}

/// Stationary point of a strictly concave `f`.
pub fn alpha_max_udp(ctx: &AttackContext) -> Result<f64> {
    let p = f_udp_derivs(ctx)?;
    match p.classify(ctx.zero_tolerance()) {
        Convexity::Concave => Ok(p.vertex()),
        c => Err(Error::DegenerateCurvature(format!(
            "UDP objective is {c:?} (h = {:e}); no interior maximizer",
            p.curvature()
        ))),
    }
}

pub fn optimal_alpha_udp(ctx: &AttackContext) -> Result<AttackCharacterization> {
    let profile = f_udp_derivs(ctx)?;
    let (region, mu) = ctx.scalar_channel()?;
    let tol = ctx.zero_tolerance();
    let convexity = profile.classify(tol);
    let mut candidates = vec![(region.lo, f_udp(ctx, region.lo)?), (region.hi, f_udp(ctx, region.hi)?)];
    let mut alpha_max = None;
    if convexity == Convexity::Concave {
        let a = profile.vertex();
        alpha_max = Some(a);
        if region.contains(a) {
            candidates.push((a, f_udp(ctx, a)?));
        }
    }
    Ok(characterize(
        Protocol::UdpLike,
        convexity,
        profile,
        alpha_max,
        None,
        region,
        mu,
        candidates,
        tol,
    ))
}

/// `g(alpha)` evaluated as the quadratic form of the assembled matrix.
pub fn g_tcp(ctx: &AttackContext, alpha: f64) -> Result<f64> {
    ctx.require_protocol(Protocol::TcpLike)?;
    let nu = ctx.gain.nu_bar();
    let mut m = ctx.ens.delta_gamma.clone();
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= 2.0 * nu[j] - alpha;
    }
    for i in 0..nu.len() {
        m[(i, i)] += ctx.model.psi_diag[i];
    }
    Ok(-alpha * ctx.quad(&m))
}

/// Derivative profile of `g`: `g'' = 2 U' Delta_Gamma U` and
/// `g'(0) = -U'(Psi + 2 Delta_Gamma nu_bar)U`.
pub fn g_tcp_derivs(ctx: &AttackContext) -> Result<QuadraticProfile> {
    ctx.require_protocol(Protocol::TcpLike)?;
    let h = ctx.quad(&ctx.ens.delta_gamma);
    let nu_u = ctx.gain.nu_bar().component_mul(&ctx.u_star);
    let slope0 = -ctx.diag_quad(ctx.model.psi_diag.iter().copied())
        - 2.0 * ctx.u_star.dot(&(&ctx.ens.delta_gamma * nu_u));
    Ok(QuadraticProfile {
        second: 2.0 * h,
        slope0,
    })
}

/// Stationary point of a strictly convex `g`, whether or not it is feasible.
pub fn alpha_min_tcp(ctx: &AttackContext) -> Result<f64> {
    let p = g_tcp_derivs(ctx)?;
    match p.classify(ctx.zero_tolerance()) {
        Convexity::Convex => Ok(p.vertex()),
        c => Err(Error::DegenerateCurvature(format!(
            "TCP objective is {c:?} (h = {:e}); no minimizer",
            p.curvature()
        ))),
    }
}

pub fn optimal_alpha_tcp(ctx: &AttackContext) -> Result<AttackCharacterization> {
    let profile = g_tcp_derivs(ctx)?;
    let (region, mu) = ctx.scalar_channel()?;
    let tol = ctx.zero_tolerance();
    let convexity = profile.classify(tol);
    let alpha_min = (convexity == Convexity::Convex).then(|| profile.vertex());
    let mut candidates = vec![(region.lo, g_tcp(ctx, region.lo)?), (region.hi, g_tcp(ctx, region.hi)?)];
    // Only reachable with a non-positive curvature, which a valid model cannot produce.
    if convexity == Convexity::Concave && region.contains(profile.vertex()) {
        let a = profile.vertex();
        candidates.push((a, g_tcp(ctx, a)?));
    }
    Ok(characterize(
        Protocol::TcpLike,
        convexity,
        profile,
        None,
        alpha_min,
        region,
        mu,
        candidates,
        tol,
    ))
}

/// Tie-aware argmax: among values within `tol` of the best, the one
/// closest to `nominal`.
pub fn select_best(candidates: &[(f64, f64)], nominal: f64, tol: f64) -> (f64, f64) {
    let best = candidates
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let slack = tol.max(1e-12 * (1.0 + best.abs()));
    candidates
        .iter()
        .filter(|c| c.1 >= best - slack)
        .min_by(|a, b| (a.0 - nominal).abs().total_cmp(&(b.0 - nominal).abs()))
        .copied()
        .expect("at least one candidate")
}

#[allow(clippy::too_many_arguments)]
fn characterize(
    protocol: Protocol,
    convexity: Convexity,
    profile: QuadraticProfile,
    alpha_max: Option<f64>,
    alpha_min: Option<f64>,
    region: Interval,
    nominal: f64,
    candidates: Vec<(f64, f64)>,
    tol: f64,
) -> AttackCharacterization {
    let flat = convexity == Convexity::Linear && profile.slope0.abs() <= tol;
    let (alpha_star, objective_star) = if flat {
        (nominal, profile.value(nominal))
    } else {
        select_best(&candidates, nominal, tol)
    };
    AttackCharacterization {
        protocol,
        convexity,
        curvature: profile.curvature(),
        profile,
        alpha_max,
        alpha_min,
        region,
        nominal,
        candidates,
        alpha_star,
        objective_star,
        flat,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerfectChannelCondition {
    pub g_at_one: f64,
    /// `g(1) > 0` at the context's state.
    pub holds_at_state: bool,
    /// `Delta_Gamma (I - 2 nu_bar) - Psi` is positive definite (symmetric
    /// part), which implies `g(1) > 0` for every state with `F x != 0`.
    pub holds_for_all_states: bool,
}

pub fn perfect_channel_condition_tcp(ctx: &AttackContext) -> Result<PerfectChannelCondition> {
    let g_at_one = g_tcp(ctx, 1.0)?;
    let nu = ctx.gain.nu_bar();
    let mut m = ctx.ens.delta_gamma.clone();
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col *= 1.0 - 2.0 * nu[j];
    }
    for i in 0..nu.len() {
        m[(i, i)] -= ctx.model.psi_diag[i];
    }
    let sym = (&m + m.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    Ok(PerfectChannelCondition {
        g_at_one,
        holds_at_state: g_at_one > 0.0,
        holds_for_all_states: min_eig > 0.0,
    })
}
