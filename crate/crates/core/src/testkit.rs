//! Random instance generation shared by the unit tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{ChannelSpec, DetectionSpec};
use crate::controller::{control_gain, ControllerGain, Protocol};
use crate::model::{build_prediction_ensemble, PredictionEnsemble, SystemModel};

pub struct Instance {
    pub model: SystemModel,
    pub ens: PredictionEnsemble,
    pub gain: ControllerGain,
    pub channel: ChannelSpec,
    pub detection: DetectionSpec,
    pub x: DVector<f64>,
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random model with `m <= n` so that `Delta_Gamma` is positive definite.
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

pub fn random_instance(seed: u64, protocol: Protocol) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3);
    let m = rng.random_range(1..=n);
    let horizon = rng.random_range(1..=4);
    let model = random_model(&mut rng, n, m, horizon);
    let mu = rng.random_range(0.2..0.9);
    let eps = rng.random_range(0.05..0.3);
    let x = normal_vector(&mut rng, n);
    assemble(model, ChannelSpec::shared(mu, m).unwrap(), eps, x, protocol)
}

pub fn assemble(
    model: SystemModel,
    channel: ChannelSpec,
    eps: f64,
    x: DVector<f64>,
    protocol: Protocol,
) -> Instance {
    let ens = build_prediction_ensemble(&model).unwrap();
    let gain = control_gain(&ens, &model, channel.means(), protocol).unwrap();
    let detection = DetectionSpec::uniform(&channel, eps).unwrap();
    Instance {
        model,
        ens,
        gain,
        channel,
        detection,
        x,
    }
}
