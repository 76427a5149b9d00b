#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use packetdos_core::attack_iid::AttackContext;
use packetdos_core::channel::{ChannelSpec, DetectionSpec};
use packetdos_core::controller::{control_gain, ControllerGain, Protocol};
use packetdos_core::model::{build_prediction_ensemble, PredictionEnsemble, SystemModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub model: SystemModel,
    pub ens: PredictionEnsemble,
    pub gain: ControllerGain,
    pub channel: ChannelSpec,
    pub detection: DetectionSpec,
    pub x: DVector<f64>,
}

impl Instance {
    pub fn ctx(&self) -> AttackContext<'_> {
        AttackContext::new(&self.ens, &self.model, &self.gain, &self.channel, &self.detection, self.x.clone())
            .expect("consistent instance")
    }

    /// Rescales the state so that the operator's input sequence has unit norm.
    pub fn normalized(mut self) -> Self {
        let norm = self.ctx().u_star().norm();
        if norm > 0.0 {
            self.x /= norm;
        }
        self
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize, m: usize, horizon: usize) -> SystemModel {
    let a = normal_matrix(rng, n, n) * (0.9 / (n as f64).sqrt());
    let b = normal_matrix(rng, n, m);
    let mut model = SystemModel::with_defaults(a, b, horizon);
    model.omega_diag = DVector::from_fn(horizon * n, |_, _| rng.random_range(0.5..2.0));
    model.psi_diag = DVector::from_fn(horizon * m, |_, _| rng.random_range(0.1..2.0));
    model.q_diag = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    model.sigma_w = DMatrix::identity(n, n) * 0.1;
    model
}

pub fn assemble(model: SystemModel, channel: ChannelSpec, eps: f64, x: DVector<f64>, protocol: Protocol) -> Instance {
    let ens = build_prediction_ensemble(&model).expect("valid model");
    let gain = control_gain(&ens, &model, channel.means(), protocol).expect("non-singular gain");
    let detection = DetectionSpec::uniform(&channel, eps).expect("valid half-width");
    Instance {
        model,
        ens,
        gain,
        channel,
        detection,
        x,
    }
}

/// Random instance on a single shared channel, `m <= n <= 3`, `N <= max_horizon`.
pub fn random_instance(seed: u64, protocol: Protocol, max_horizon: usize) -> Instance {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=n);
    let horizon = rng.random_range(1..=max_horizon);
    let model = random_model(&mut rng, n, m, horizon);
    let mu = rng.random_range(0.2..0.9);
    let eps = rng.random_range(0.05..0.3);
    let x = normal_vector(&mut rng, n);
    assemble(model, ChannelSpec::shared(mu, m).expect("valid mean"), eps, x, protocol)
}

/// The two-state plant used in the reference experiments.
pub fn reference_plant(horizon: usize) -> SystemModel {
    let mut model = SystemModel::with_defaults(
        DMatrix::from_row_slice(2, 2, &[1.03, 0.005, 0.35, 0.5]),
        DMatrix::identity(2, 2),
        horizon,
    );
    model.sigma_w = DMatrix::identity(2, 2) * 0.01;
    model.sigma_x = DMatrix::identity(2, 2) * 0.01;
    model.x_mean = DVector::from_vec(vec![1.0, 1.0]);
    model
}

/// `(alpha, value)` maximizing `f` on a uniform grid over `[lo, hi]` with
/// spacing at most `step`; ties go to the point nearest `nominal`.
pub fn grid_argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64, nominal: f64, tie: f64) -> (f64, f64) {
    let count = (((hi - lo) / step).ceil() as usize).max(1);
    let pts: Vec<(f64, f64)> = (0..=count)
        .map(|i| {
            let a = lo + (hi - lo) * i as f64 / count as f64;
            (a, f(a))
        })
        .collect();
    let best = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let slack = tie.max(1e-12 * (1.0 + best.abs()));
    pts.into_iter()
        .filter(|p| p.1 >= best - slack)
        .min_by(|a, b| (a.0 - nominal).abs().total_cmp(&(b.0 - nominal).abs()))
        .expect("non-empty grid")
}
