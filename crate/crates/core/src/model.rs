//! Plant description and horizon prediction model.
//!
//! The plant is `x[k+1] = A x[k] + B V[k] u[k] + w[k]`, where `V[k]` is the
//! diagonal 0/1 matrix of delivered packets. Stacking `N` steps gives
//!
//! ```text
//! chi = Phi x + Gamma nu Upsilon + Lambda Xi
//! ```
//!
//! with `Phi` the stacked powers of `A`, `Gamma` and `Lambda` block lower
//! triangular Toeplitz matrices, `nu` the block diagonal of loss matrices and
//! `Xi` the stacked process noise.

use nalgebra::{DMatrix, DVector};

use crate::channel::LossRealization;
use crate::error::{dimension, invalid, Result};

/// Plant, noise, penalty and horizon parameters.
///
/// `omega_diag` holds the diagonal of the horizon state penalty (length
/// `N n`) and `psi_diag` the diagonal of the horizon input penalty (length
/// `N m`). `q_diag` penalizes the current state and is independent of the
/// first block of `omega_diag`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma_w: DMatrix<f64>,
    pub x_mean: DVector<f64>,
    pub sigma_x: DMatrix<f64>,
    pub q_diag: DVector<f64>,
    pub omega_diag: DVector<f64>,
    pub psi_diag: DVector<f64>,
    pub horizon: usize,
}

impl SystemModel {
    /// Model with identity covariances and penalties and a zero initial mean.
    pub fn with_defaults(a: DMatrix<f64>, b: DMatrix<f64>, horizon: usize) -> Self {
        let n = a.nrows();
        let m = b.ncols();
        Self {
            sigma_w: DMatrix::identity(n, n),
            x_mean: DVector::zeros(n),
            sigma_x: DMatrix::identity(n, n),
            q_diag: DVector::from_element(n, 1.0),
            omega_diag: DVector::from_element(horizon * n, 1.0),
            psi_diag: DVector::from_element(horizon * m, 1.0),
            a,
            b,
            horizon,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if n == 0 {
            return Err(invalid("A", "state dimension must be positive"));
        }
        if self.a.ncols() != n {
            return Err(dimension("A", format!("{n}x{n}"), shape(&self.a)));
        }
        if self.b.nrows() != n || self.b.ncols() == 0 {
            return Err(dimension("B", format!("{n}xm, m>0"), shape(&self.b)));
        }
        let m = self.b.ncols();
        if self.horizon == 0 {
            return Err(invalid("N", "horizon must be at least 1"));
        }
        let nn = self.horizon * n;
        let nm = self.horizon * m;
        if self.sigma_w.shape() != (n, n) {
            return Err(dimension("Sigma_W", format!("{n}x{n}"), shape(&self.sigma_w)));
        }
        if self.sigma_x.shape() != (n, n) {
            return Err(dimension("Sigma_X", format!("{n}x{n}"), shape(&self.sigma_x)));
        }
        if self.x_mean.len() != n {
            return Err(dimension("X_bar", n, self.x_mean.len()));
        }
        if self.q_diag.len() != n {
            return Err(dimension("Q", n, self.q_diag.len()));
        }
        if self.omega_diag.len() != nn {
            return Err(dimension("Omega", nn, self.omega_diag.len()));
        }
        if self.psi_diag.len() != nm {
            return Err(dimension("Psi", nm, self.psi_diag.len()));
        }
        check_positive("Q", &self.q_diag)?;
        check_positive("Omega", &self.omega_diag)?;
        check_positive("Psi", &self.psi_diag)?;
        check_psd("Sigma_W", &self.sigma_w)?;
        check_psd("Sigma_X", &self.sigma_x)?;
        Ok(())
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn check_positive(field: &'static str, d: &DVector<f64>) -> Result<()> {
    match d.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(i) => Err(invalid(field, format!("diagonal entry {i} is {} (must be > 0)", d[i]))),
        None => Ok(()),
    }
}

fn check_psd(field: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(invalid(field, "matrix has non-finite entries"));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(invalid(field, "matrix is not symmetric"));
    }
    if m.clone().symmetric_eigenvalues().min() < -1e-12 * scale {
        return Err(invalid(field, "matrix is not positive semidefinite"));
    }
    Ok(())
}

/// Horizon matrices and their `Omega`-weighted products.
#[derive(Debug, Clone)]
pub struct PredictionEnsemble {
    pub horizon: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// `Phi' Omega Phi`
    pub delta_phi: DMatrix<f64>,
    /// `Gamma' Omega Gamma`
    pub delta_gamma: DMatrix<f64>,
    /// `Lambda' Omega Lambda`
    pub delta_lambda: DMatrix<f64>,
    /// `Gamma' Omega Phi`
    pub f: DMatrix<f64>,
    /// Diagonal of `delta_gamma`, i.e. the Hadamard mask `I ⊙ Delta_Gamma`.
    pub delta_gamma_diag: DVector<f64>,
    /// One diagonal block of the horizon noise covariance (`Sigma_W`).
    pub noise_block: DMatrix<f64>,
}

impl PredictionEnsemble {
    /// `Delta_Gamma - I ⊙ Delta_Gamma`, the off-diagonal part of `delta_gamma`.
    pub fn delta_hollow(&self) -> DMatrix<f64> {
        let mut h = self.delta_gamma.clone();
        h.fill_diagonal(0.0);
        h
    }

    /// Dense block-diagonal horizon noise covariance.
    pub fn sigma_xi(&self) -> DMatrix<f64> {
        let n = self.state_dim;
        let mut s = DMatrix::zeros(self.horizon * n, self.horizon * n);
        for j in 0..self.horizon {
            s.view_mut((j * n, j * n), (n, n)).copy_from(&self.noise_block);
        }
        s
    }

    /// `tr(Delta_Lambda Sigma_Xi)`, summed over diagonal blocks only.
    pub fn noise_cost(&self) -> f64 {
        let n = self.state_dim;
        (0..self.horizon)
            .map(|j| {
                let block = self.delta_lambda.view((j * n, j * n), (n, n));
                block.component_mul(&self.noise_block).sum()
            })
            .sum()
    }
}

/// Assembles `Phi`, `Gamma`, `Lambda` and the weighted Gramians.
pub fn build_prediction_ensemble(model: &SystemModel) -> Result<PredictionEnsemble> {
    model.validate()?;
    let n = model.state_dim();
    let m = model.input_dim();
    let horizon = model.horizon;

    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for i in 1..=horizon {
        let next = &powers[i - 1] * &model.a;
        powers.push(next);
    }
    let powers_b: Vec<DMatrix<f64>> = powers[..horizon].iter().map(|p| p * &model.b).collect();

    let mut phi = DMatrix::zeros(horizon * n, n);
    let mut gamma = DMatrix::zeros(horizon * n, horizon * m);
    let mut lambda = DMatrix::zeros(horizon * n, horizon * n);
    for i in 0..horizon {
        phi.view_mut((i * n, 0), (n, n)).copy_from(&powers[i + 1]);
        for j in 0..=i {
            gamma
                .view_mut((i * n, j * m), (n, m))
                .copy_from(&powers_b[i - j]);
            lambda
                .view_mut((i * n, j * n), (n, n))
                .copy_from(&powers[i - j]);
        }
    }

    let weighted = |x: &DMatrix<f64>| {
        let mut w = x.clone();
        for (mut row, om) in w.row_iter_mut().zip(model.omega_diag.iter()) {
            row *= *om;
        }
        w
    };
    let omega_phi = weighted(&phi);
    let omega_gamma = weighted(&gamma);
    let omega_lambda = weighted(&lambda);

    let delta_phi = symmetrize(phi.transpose() * &omega_phi);
    let delta_gamma = symmetrize(gamma.transpose() * &omega_gamma);
    let delta_lambda = symmetrize(lambda.transpose() * &omega_lambda);
    let f = gamma.transpose() * &omega_phi;
    let delta_gamma_diag = delta_gamma.diagonal();

    Ok(PredictionEnsemble {
        horizon,
        state_dim: n,
        input_dim: m,
        phi,
        gamma,
        lambda,
        delta_phi,
        delta_gamma,
        delta_lambda,
        f,
        delta_gamma_diag,
        noise_block: model.sigma_w.clone(),
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// One plant step: `A x + B (v ⊙ u) + w`.
pub fn step_plant(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    v: &LossRealization,
    w: &DVector<f64>,
) -> DVector<f64> {
    let n = model.state_dim();
    let m = model.input_dim();
    assert_eq!(x.len(), n, "state dimension");
    assert_eq!(u.len(), m, "input dimension");
    assert_eq!(v.len(), m, "loss realization dimension");
    assert_eq!(w.len(), n, "noise dimension");
    let delivered = v.apply(u);
    &model.a * x + &model.b * delivered + w
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityReport {
    pub reachable: bool,
    pub rank: usize,
    /// Rank required for reachability (the state dimension).
    pub required_rank: usize,
    /// Singular values at or below this threshold count as zero.
    pub tolerance: f64,
}

/// Rank test on `[B, AB, ..., A^(N-1) B]`.
pub fn check_reachable(model: &SystemModel) -> ReachabilityReport {
    let n = model.state_dim();
    let m = model.input_dim();
    let horizon = model.horizon.max(1);
    let mut ctrb = DMatrix::zeros(n, horizon * m);
    let mut block = model.b.clone();
    for j in 0..horizon {
        ctrb.view_mut((0, j * m), (n, m)).copy_from(&block);
        block = &model.a * block;
    }
    let sv = ctrb.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tolerance = (n.max(horizon * m)) as f64 * f64::EPSILON * smax;
    let rank = sv.iter().filter(|s| **s > tolerance).count();
    ReachabilityReport {
        reachable: rank == n,
        rank,
        required_rank: n,
        tolerance,
    }
}

/// Horizon diagonal: `per_block` repeated `horizon` times.
pub fn repeat_diagonal(per_block: &[f64], horizon: usize) -> DVector<f64> {
    DVector::from_iterator(
        per_block.len() * horizon,
        (0..horizon).flat_map(|_| per_block.iter().copied()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn reference_a() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.03, 0.005, 0.35, 0.5])
    }

    #[test]
    fn nilpotent_dynamics_give_zero_phi() {
        let model = SystemModel::with_defaults(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 2);
        let ens = build_prediction_ensemble(&model).unwrap();
        assert_eq!(ens.phi, DMatrix::zeros(4, 2));
        assert_eq!(ens.gamma, DMatrix::identity(4, 4));
        assert_eq!(ens.lambda, DMatrix::identity(4, 4));
    }

    #[test]
    fn scalar_powers_of_two() {
        let model = SystemModel::with_defaults(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
            3,
        );
        let ens = build_prediction_ensemble(&model).unwrap();
        assert_eq!(ens.phi.as_slice(), &[2.0, 4.0, 8.0]);
        assert_eq!(ens.gamma.row(2).iter().copied().collect::<Vec<_>>(), vec![4.0, 2.0, 1.0]);
        assert_eq!(ens.gamma[(0, 1)], 0.0);
        // direct summation of (A^i)^2
        let oracle: f64 = (1..=3).map(|i| 2f64.powi(i).powi(2)).sum();
        assert_eq!(oracle, 84.0);
        assert_close(ens.delta_phi[(0, 0)], oracle, 1e-12);
    }

    #[test]
    fn step_plant_examples() {
        let model = SystemModel::with_defaults(reference_a(), DMatrix::identity(2, 2), 1);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let u = DVector::from_vec(vec![-1.0, 0.0]);
        let w = DVector::zeros(2);
        let next = step_plant(&model, &x, &u, &LossRealization::new(vec![true, false]), &w);
        assert_close(next[0], 0.035, 1e-15);
        assert_close(next[1], 0.85, 1e-15);

        let dropped = step_plant(&model, &x, &u, &LossRealization::all(2, false), &w);
        assert_eq!(dropped, &model.a * &x);

        let zero = DVector::zeros(2);
        let delivered = step_plant(&model, &zero, &u, &LossRealization::all(2, true), &w);
        assert_eq!(delivered, &model.b * &u);
    }

    #[test]
    fn reachability_examples() {
        let eye = SystemModel::with_defaults(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 3);
        assert!(check_reachable(&eye).reachable);
        let dead = SystemModel::with_defaults(reference_a(), DMatrix::zeros(2, 2), 3);
        let report = check_reachable(&dead);
        assert!(!report.reachable);
        assert_eq!(report.rank, 0);
        let reference = SystemModel::with_defaults(reference_a(), DMatrix::identity(2, 2), 1);
        assert!(check_reachable(&reference).reachable);
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut model = SystemModel::with_defaults(reference_a(), DMatrix::identity(2, 2), 3);
        model.omega_diag = DVector::from_element(5, 1.0);
        let err = build_prediction_ensemble(&model).unwrap_err().to_string();
        assert!(err.contains("Omega"), "{err}");

        let mut model = SystemModel::with_defaults(reference_a(), DMatrix::identity(2, 2), 3);
        model.b = DMatrix::identity(3, 2);
        let err = build_prediction_ensemble(&model).unwrap_err().to_string();
        assert!(err.contains("`B`"), "{err}");

        let mut model = SystemModel::with_defaults(reference_a(), DMatrix::identity(2, 2), 3);
        model.psi_diag[4] = 0.0;
        let err = build_prediction_ensemble(&model).unwrap_err().to_string();
        assert!(err.contains("Psi"), "{err}");
    }

    #[test]
    fn gramians_are_symmetric_and_noise_trace_matches_dense() {
        let mut model = SystemModel::with_defaults(reference_a(), DMatrix::identity(2, 2), 4);
        model.sigma_w = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        model.omega_diag = DVector::from_fn(8, |i, _| 1.0 + i as f64 * 0.25);
        let ens = build_prediction_ensemble(&model).unwrap();
        for d in [&ens.delta_phi, &ens.delta_gamma, &ens.delta_lambda] {
            assert!((d - d.transpose()).amax() <= 1e-12 * d.amax());
        }
        let dense = (&ens.delta_lambda * ens.sigma_xi()).trace();
        assert_close(ens.noise_cost(), dense, 1e-10 * dense.abs());
        assert_eq!(ens.delta_hollow().diagonal(), DVector::zeros(8));
    }
}
