//! Box-constrained quadratic maximization: `max z'Hz + c'z` subject to
//! `lo <= z <= hi`, with `H` symmetric and possibly indefinite.
//!
//! When every diagonal entry of `H` is non-negative the objective is convex
//! along each coordinate, so some maximizer is a vertex of the box and
//! enumerating vertices is exact. Larger or non-conforming problems fall
//! back to multistart projected-gradient ascent.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{dimension, invalid, Result};

/// Which (horizon step, channel) a decision variable belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScheduleVar {
    pub step: usize,
    pub channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub vars: Vec<ScheduleVar>,
    /// Nominal value of each variable; used to break ties.
    pub nominal: DVector<f64>,
}

impl BoxQp {
    pub fn new(
        h: DMatrix<f64>,
        c: DVector<f64>,
        lo: DVector<f64>,
        hi: DVector<f64>,
        vars: Vec<ScheduleVar>,
        nominal: DVector<f64>,
    ) -> Result<Self> {
        let d = c.len();
        if h.shape() != (d, d) {
            return Err(dimension("H", format!("{d}x{d}"), format!("{}x{}", h.nrows(), h.ncols())));
        }
        for (field, len) in [("lo", lo.len()), ("hi", hi.len()), ("vars", vars.len()), ("nominal", nominal.len())] {
            if len != d {
                return Err(dimension(field, d, len));
            }
        }
        if (0..d).any(|i| lo[i].partial_cmp(&hi[i]).is_none_or(|o| o.is_gt())) {
            return Err(invalid("box", "lower bound exceeds upper bound"));
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-12 * (1.0 + h.amax()) {
            return Err(invalid("H", format!("not symmetric (max asymmetry {asym:e})")));
        }
        Ok(Self {
            h,
            c,
            lo,
            hi,
            vars,
            nominal,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.h * z)) + self.c.dot(z)
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h * z * 2.0 + &self.c
    }

    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| z[i].clamp(self.lo[i], self.hi[i]))
    }

    /// `max |P(z + grad) - z|`, zero at first-order stationary points.
    pub fn stationarity(&self, z: &DVector<f64>) -> f64 {
        let step = self.project(&(z + self.gradient(z)));
        (step - z).amax()
    }

    fn tolerance(&self) -> f64 {
        1e-12 * (1.0 + self.h.amax() + self.c.amax())
    }

    /// Number of channels, from the variable map.
    pub fn channel_count(&self) -> usize {
        self.vars.iter().map(|v| v.channel + 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSettings {
    /// Largest dimension solved by vertex enumeration.
    pub vertex_cap: usize,
    pub starts: usize,
    pub max_iters: usize,
    /// Stationarity tolerance relative to `1 + |c|`.
    pub tolerance: f64,
    pub seed: u64,
    /// Run multistart ascent even when vertex enumeration is exact.
    pub always_multistart: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            vertex_cap: 16,
            starts: 32,
            max_iters: 500,
            tolerance: 1e-8,
            seed: 0x5eed,
            always_multistart: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QpWinner {
    IidPoint,
    Vertex,
    Multistart,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub winner: QpWinner,
    pub stationarity: f64,
    /// Vertex enumeration ran and is known to reach the global maximum.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentRun {
    pub z: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Objective before the first and after every accepted step.
    pub history: Vec<f64>,
}

/// Projected-gradient ascent with backtracking from `start`.
pub fn projected_gradient_ascent(qp: &BoxQp, start: &DVector<f64>, settings: &QpSettings) -> AscentRun {
    let tol = settings.tolerance * (1.0 + qp.c.norm());
    let lipschitz = 2.0 * qp.h.norm();
    let mut t = if lipschitz > 0.0 {
        1.0 / lipschitz
    } else {
        1e6 / (1.0 + qp.c.amax())
    };
    let mut z = qp.project(start);
    let mut f = qp.objective(&z);
    let mut history = vec![f];
    let mut residual = qp.stationarity(&z);
    let mut iterations = 0;
    while iterations < settings.max_iters && residual > tol {
        iterations += 1;
        let g = qp.gradient(&z);
        let mut accepted = false;
        for _ in 0..60 {
            let cand = qp.project(&(&z + &g * t));
            let d = &cand - &z;
            let fc = qp.objective(&cand);
            if fc >= f + g.dot(&d) - d.norm_squared() / (2.0 * t) && fc >= f {
                z = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        history.push(f);
        residual = qp.stationarity(&z);
    }
    AscentRun {
        z,
        objective: f,
        iterations,
        residual,
        history,
    }
}

/// Best vertex by Gray-code enumeration with incremental objective updates.
fn best_vertex(qp: &BoxQp) -> DVector<f64> {
    let d = qp.dim();
    let mut z = qp.lo.clone();
    let mut hz = &qp.h * &z;
    let mut f = qp.objective(&z);
    let mut best = (f, z.clone());
    let mut at_hi = vec![false; d];
    for k in 1u64..(1u64 << d) {
        let i = k.trailing_zeros() as usize;
        let target = if at_hi[i] { qp.lo[i] } else { qp.hi[i] };
        at_hi[i] = !at_hi[i];
        let delta = target - z[i];
        if delta != 0.0 {
            f += delta * (qp.c[i] + 2.0 * hz[i]) + delta * delta * qp.h[(i, i)];
            hz.axpy(delta, &qp.h.column(i), 1.0);
            z[i] = target;
        }
        if f > best.0 {
            best = (f, z.clone());
        }
    }
    best.1
}

fn multistart_points(qp: &BoxQp, iid: &DVector<f64>, settings: &QpSettings) -> Vec<DVector<f64>> {
    let d = qp.dim();
    let mut pts = vec![
        qp.lo.clone(),
        qp.hi.clone(),
        (&qp.lo + &qp.hi) * 0.5,
        iid.clone(),
        DVector::from_fn(d, |i, _| if i % 2 == 0 { qp.lo[i] } else { qp.hi[i] }),
        DVector::from_fn(d, |i, _| if i % 2 == 0 { qp.hi[i] } else { qp.lo[i] }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    while pts.len() < settings.starts {
        pts.push(DVector::from_fn(d, |i, _| {
            qp.lo[i] + (qp.hi[i] - qp.lo[i]) * rng.random::<f64>()
        }));
    }
    pts.truncate(settings.starts.max(1));
    pts
}

/// Maximizes over the whole box; never returns less than the IID point.
pub fn solve_box_qp_max(qp: &BoxQp, settings: &QpSettings) -> QpSolution {
    let iid = solve_iid_constrained(qp);
    let mut best = (iid.objective, iid.z.clone(), QpWinner::IidPoint);
    let tol = qp.tolerance();
    let consider = |f: f64, z: DVector<f64>, w: QpWinner, best: &mut (f64, DVector<f64>, QpWinner)| {
        if f > best.0 + tol {
            *best = (f, z, w);
        }
    };

    let d = qp.dim();
    let coordinate_convex = (0..d).all(|i| qp.h[(i, i)] >= 0.0);
    let exact = d <= settings.vertex_cap && coordinate_convex;
    if d <= settings.vertex_cap {
        let v = best_vertex(qp);
        consider(qp.objective(&v), v, QpWinner::Vertex, &mut best);
    }
    if !exact || settings.always_multistart {
        let runs: Vec<AscentRun> = multistart_points(qp, &iid.z, settings)
            .par_iter()
            .map(|s| projected_gradient_ascent(qp, s, settings))
            .collect();
        for r in runs {
            consider(r.objective, r.z, QpWinner::Multistart, &mut best);
        }
    }
    let (objective, z, winner) = best;
    QpSolution {
        stationarity: qp.stationarity(&z),
        z,
        objective,
        winner,
        exact,
    }
}

/// Maximizes over schedules that are constant in time on each channel.
///
/// The reduced problem has one variable per channel and is solved exactly
/// by checking the stationary point of every face of its box.
pub fn solve_iid_constrained(qp: &BoxQp) -> QpSolution {
    let d = qp.dim();
    let g = qp.channel_count();
    let mut p = DMatrix::zeros(d, g);
    for (i, v) in qp.vars.iter().enumerate() {
        p[(i, v.channel)] = 1.0;
    }
    let h = p.transpose() * &qp.h * &p;
    let c = p.transpose() * &qp.c;
    let mut lo = DVector::from_element(g, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(g, f64::INFINITY);
    let mut nominal = DVector::zeros(g);
    for (i, v) in qp.vars.iter().enumerate() {
        lo[v.channel] = f64::max(lo[v.channel], qp.lo[i]);
        hi[v.channel] = f64::min(hi[v.channel], qp.hi[i]);
        nominal[v.channel] = qp.nominal[i];
    }
    let nominal = DVector::from_fn(g, |j, _| nominal[j].clamp(lo[j], hi[j]));
    let objective = |y: &DVector<f64>| y.dot(&(&h * y)) + c.dot(y);

    let mut candidates = vec![nominal.clone()];
    let faces = 3usize.pow(g as u32);
    for code in 0..faces {
        // Digit 0: at lo, 1: at hi, 2: free.
        let mut y = DVector::zeros(g);
        let mut free = Vec::new();
        let mut rest = code;
        for j in 0..g {
            match rest % 3 {
                0 => y[j] = lo[j],
                1 => y[j] = hi[j],
                _ => free.push(j),
            }
            rest /= 3;
        }
        if !free.is_empty() {
            let k = free.len();
            let hff = DMatrix::from_fn(k, k, |a, b| 2.0 * h[(free[a], free[b])]);
            let hy = &h * &y;
            let rhs = DVector::from_fn(k, |a, _| -(c[free[a]] + 2.0 * hy[free[a]]));
            let Some(sol) = hff.clone().lu().solve(&rhs) else { continue };
            if !sol.iter().all(|v| v.is_finite()) || (&hff * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
                continue;
            }
            let mut inside = true;
            for (a, &j) in free.iter().enumerate() {
                let slack = 1e-12 * (1.0 + lo[j].abs().max(hi[j].abs()));
                if sol[a] < lo[j] - slack || sol[a] > hi[j] + slack {
                    inside = false;
                    break;
                }
                y[j] = sol[a].clamp(lo[j], hi[j]);
            }
            if !inside {
                continue;
            }
        }
        candidates.push(y);
    }

    let values: Vec<f64> = candidates.iter().map(&objective).collect();
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let slack = qp.tolerance().max(1e-12 * (1.0 + best.abs()));
    let (idx, _) = candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| values[*i] >= best - slack)
        .map(|(i, y)| (i, (y - &nominal).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nominal is always a candidate");
    let z = &p * &candidates[idx];
    QpSolution {
        stationarity: qp.stationarity(&z),
        objective: qp.objective(&z),
        z,
        winner: QpWinner::IidPoint,
        exact: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::{prop_assert, proptest};

    fn random_qp(seed: u64, d: usize, groups: usize) -> BoxQp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let h = (&a + a.transpose()) * 0.5;
        let c = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let lo = DVector::from_fn(d, |_, _| rng.random_range(-1.0..0.0));
        let hi = DVector::from_fn(d, |i, _| lo[i] + rng.random_range(0.1..1.5));
        let vars = (0..d)
            .map(|i| ScheduleVar {
                step: i / groups,
                channel: i % groups,
            })
            .collect();
        // Constant schedules must exist: shared bounds per channel.
        let mut qp = BoxQp::new(h, c, lo, hi, vars, DVector::zeros(d)).unwrap();
        for i in 0..d {
            let k = i % groups;
            qp.lo[i] = qp.lo[k];
            qp.hi[i] = qp.hi[k];
            qp.nominal[i] = 0.5 * (qp.lo[k] + qp.hi[k]);
        }
        qp
    }

    fn psd_qp(seed: u64, d: usize) -> BoxQp {
        let mut qp = random_qp(seed, d, 1);
        qp.h = &qp.h * qp.h.transpose();
        qp
    }

    #[test]
    fn one_dimensional_problems() {
        let mk = |h: f64, c: f64| {
            BoxQp::new(
                DMatrix::from_element(1, 1, h),
                DVector::from_element(1, c),
                DVector::from_element(1, 0.0),
                DVector::from_element(1, 1.0),
                vec![ScheduleVar { step: 0, channel: 0 }],
                DVector::from_element(1, 0.5),
            )
            .unwrap()
        };
        // -z^2 + z peaks at 0.5.
        let s = solve_box_qp_max(&mk(-1.0, 1.0), &QpSettings::default());
        assert!((s.z[0] - 0.5).abs() < 1e-8 && (s.objective - 0.25).abs() < 1e-12);
        // z^2 - 0.5z: vertices give 0 and 0.5.
        let s = solve_box_qp_max(&mk(1.0, -0.5), &QpSettings::default());
        assert_eq!(s.z[0], 1.0);
        // Identically zero: nominal by tie-break.
        let s = solve_iid_constrained(&mk(0.0, 0.0));
        assert_eq!(s.z[0], 0.5);
    }

    #[test]
    fn vertex_enumeration_agrees_with_multistart_on_convex_problems() {
        let settings = QpSettings {
            always_multistart: true,
            ..QpSettings::default()
        };
        for seed in 0..20 {
            let qp = psd_qp(seed, 6);
            let v = best_vertex(&qp);
            let s = solve_box_qp_max(&qp, &settings);
            assert!(s.exact);
            assert!((qp.objective(&v) - s.objective).abs() <= 1e-10 * (1.0 + s.objective.abs()));
        }
    }

    #[test]
    fn beats_coarse_grid_on_indefinite_problems() {
        for seed in 0..4 {
            let qp = random_qp(100 + seed, 8, 2);
            let s = solve_box_qp_max(&qp, &QpSettings::default());
            let mut best = f64::NEG_INFINITY;
            let mut z = DVector::zeros(8);
            for code in 0..5usize.pow(8) {
                let mut r = code;
                for i in 0..8 {
                    z[i] = qp.lo[i] + (qp.hi[i] - qp.lo[i]) * (r % 5) as f64 / 4.0;
                    r /= 5;
                }
                best = best.max(qp.objective(&z));
            }
            assert!(s.objective >= best - 1e-9, "{} < {best}", s.objective);
        }
    }

    #[test]
    fn ascent_is_monotone_and_feasible() {
        for seed in 0..20 {
            let qp = random_qp(seed, 20, 4);
            let start = (&qp.lo + &qp.hi) * 0.5;
            let run = projected_gradient_ascent(&qp, &start, &QpSettings::default());
            assert!(run.history.windows(2).all(|w| w[1] >= w[0]));
            assert!((0..20).all(|i| qp.lo[i] <= run.z[i] && run.z[i] <= qp.hi[i]));
            assert_eq!(run.history.last().copied(), Some(run.objective));
        }
    }

    #[test]
    fn iid_constrained_is_exact_on_a_grid() {
        for seed in 0..20 {
            let qp = random_qp(seed, 6, 2);
            let s = solve_iid_constrained(&qp);
            for i in 0..6 {
                assert_eq!(s.z[i], s.z[i % 2]);
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..=200 {
                for b in 0..=200 {
                    let y = [
                        qp.lo[0] + (qp.hi[0] - qp.lo[0]) * a as f64 / 200.0,
                        qp.lo[1] + (qp.hi[1] - qp.lo[1]) * b as f64 / 200.0,
                    ];
                    let z = DVector::from_fn(6, |i, _| y[i % 2]);
                    best = best.max(qp.objective(&z));
                }
            }
            assert!(s.objective >= best - 1e-12);
        }
    }

    #[test]
    fn large_problems_use_multistart() {
        let qp = random_qp(9, 24, 3);
        let s = solve_box_qp_max(&qp, &QpSettings::default());
        assert!(!s.exact);
        assert!(s.objective >= solve_iid_constrained(&qp).objective);
    }

    #[test]
    fn rejects_malformed_problems() {
        let ok = random_qp(1, 3, 1);
        let mut h = ok.h.clone();
        h[(0, 1)] += 1.0;
        assert!(BoxQp::new(h, ok.c.clone(), ok.lo.clone(), ok.hi.clone(), ok.vars.clone(), ok.nominal.clone()).is_err());
        assert!(BoxQp::new(ok.h.clone(), ok.c.clone(), ok.hi.clone() + DVector::from_element(3, 1.0), ok.hi.clone(), ok.vars.clone(), ok.nominal.clone()).is_err());
    }

    proptest! {
        #[test]
        fn dominates_iid_and_stays_feasible(seed in 0u64..5_000, d in 1usize..10, groups in 1usize..3) {
            let groups = groups.min(d);
            let qp = random_qp(seed, d, groups);
            let full = solve_box_qp_max(&qp, &QpSettings::default());
            let iid = solve_iid_constrained(&qp);
            prop_assert!(full.objective >= iid.objective - 1e-9);
            for i in 0..d {
                prop_assert!(qp.lo[i] <= full.z[i] && full.z[i] <= qp.hi[i]);
            }
        }
    }
}
