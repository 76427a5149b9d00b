use std::path::{Path, PathBuf};

use anyhow::Result;
use packetdos_core::attack_iid::{optimal_alpha_tcp, optimal_alpha_udp};
use packetdos_core::attack_nonstationary::{build_qp, iid_attack, nonstationary_attack};
use packetdos_core::controller::nominal_expected_cost;
use packetdos_core::cost::{
    cost_increase_alpha, cost_increase_alpha0, cost_increase_alpha1_tcp, cost_increase_alpha1_udp,
    cost_increase_alphamax_udp, expected_attacked_cost,
};
use packetdos_core::sim::{AggregateReport, InitialState, MeanEstimate};
use packetdos_core::{
    AttackCharacterization, AttackContext, AttackPlan, AttackSchedule, CostReport, Error, Interval, Protocol,
    QpSettings, Regime, Simulator,
};
use serde::Serialize;

use crate::config::{AttackKind, ConfigError, Experiment, ExperimentConfig, Format};
use crate::output::{trajectory_csv, Cell, OutputDir, Table};

fn load(path: &Path) -> Result<Experiment> {
    let exp = ExperimentConfig::load(path)?.build()?;
    log::debug!("loaded {} (n = {}, m = {})", path.display(), exp.model.state_dim(), exp.model.input_dim());
    Ok(exp)
}

fn output_dir(exp: &Experiment, out: Option<&Path>) -> Result<OutputDir> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| exp.config.output.directory.clone())
        .ok_or_else(|| ConfigError(vec!["no output directory: pass --out or set output.directory".into()]))?;
    OutputDir::create(&dir)
}

fn with_overrides(mut exp: Experiment, realizations: Option<usize>, seed: Option<u64>) -> Result<Experiment> {
    if let Some(r) = realizations {
        if r == 0 {
            return Err(ConfigError(vec!["--realizations must be at least 1".into()]).into());
        }
        exp.config.simulation.realizations = r;
    }
    if let Some(s) = seed {
        exp.config.simulation.seed = s;
    }
    Ok(exp)
}

fn simulator(exp: &Experiment, kind: AttackKind) -> Result<Simulator> {
    Ok(Simulator::new(exp.model.clone(), exp.episode(kind)?)?)
}

fn context(sim: &Simulator) -> Result<AttackContext<'_>> {
    Ok(sim.context(&sim.model().x_mean)?)
}

#[derive(Serialize)]
struct SynthesisReport {
    protocol: Protocol,
    state: Vec<f64>,
    nominal_means: Vec<f64>,
    regions: Vec<Interval>,
    /// Scalar-channel characterization: curvature class, stationary point,
    /// candidate table and optimal mean.
    #[serde(skip_serializing_if = "Option::is_none")]
    iid_scalar: Option<AttackCharacterization>,
    iid: AttackSchedule,
    nonstationary: AttackSchedule,
    /// Non-stationary objective minus IID objective.
    improvement: f64,
    qp_dimension: usize,
}

pub fn synthesize(config: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let exp = load(config)?;
    let mut dir = output_dir(&exp, out)?;
    let sim = simulator(&exp, AttackKind::None)?;
    let ctx = context(&sim)?;
    let iid_scalar = if exp.channel.channel_count() == 1 {
        Some(match exp.protocol() {
            Protocol::UdpLike => optimal_alpha_udp(&ctx)?,
            Protocol::TcpLike => optimal_alpha_tcp(&ctx)?,
        })
    } else {
        None
    };
    let iid = iid_attack(&ctx)?;
    let nonstationary = nonstationary_attack(&ctx, &QpSettings::default())?;
    let report = SynthesisReport {
        protocol: exp.protocol(),
        state: ctx.x().iter().copied().collect(),
        nominal_means: exp.channel.means().to_vec(),
        regions: exp.detection.regions(),
        iid_scalar,
        improvement: nonstationary.objective - iid.objective,
        qp_dimension: build_qp(&ctx)?.dim(),
        iid,
        nonstationary,
    };
    if let Some(ch) = &report.iid_scalar {
        log::info!("optimal IID mean {} ({:?})", ch.alpha_star, ch.convexity);
    }
    dir.write_json("synthesis.json", &report)?;
    Ok(dir.written().to_vec())
}

#[derive(Serialize)]
struct SimulationSummary {
    attack: &'static str,
    protocol: Protocol,
    realizations: usize,
    seed: u64,
    steps: usize,
    terminal: MeanEstimate,
    detection_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_first_detection: Option<f64>,
}

impl SimulationSummary {
    fn new(exp: &Experiment, kind: AttackKind, agg: &AggregateReport) -> Self {
        let s = &exp.config.simulation;
        Self {
            attack: kind.name(),
            protocol: exp.protocol(),
            realizations: agg.realizations,
            seed: s.seed,
            steps: s.steps,
            terminal: agg.terminal,
            detection_rate: agg.detection_rate,
            mean_first_detection: agg.mean_first_detection,
        }
    }
}

fn realizations_csv(agg: &AggregateReport) -> Result<String> {
    let mut t = Table::new(&["realization", "terminal_cost", "first_detection"]);
    for (r, (cost, det)) in agg.terminal_costs.iter().zip(&agg.first_detections).enumerate() {
        let det = det.map_or(Cell::Empty, |k| Cell::Int(k as u64));
        t.row(&[Cell::Int(r as u64), Cell::Float(*cost), det])?;
    }
    Ok(t.into_string())
}

pub fn simulate(config: &Path, out: Option<&Path>, realizations: Option<usize>, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let exp = with_overrides(load(config)?, realizations, seed)?;
    let mut dir = output_dir(&exp, out)?;
    let kind = exp.config.attack.kind;
    let sim = simulator(&exp, kind)?;
    let agg = sim.monte_carlo(exp.config.simulation.realizations)?;
    let first = sim.run(0)?;
    let output = &exp.config.output;
    if output.wants(Format::Json) {
        dir.write_json("summary.json", &SimulationSummary::new(&exp, kind, &agg))?;
    }
    if output.wants(Format::Csv) {
        dir.write("mean_trajectory.csv", &trajectory_csv(&agg.mean_states, Some(&agg.mean_cumulative_costs))?)?;
        dir.write("realizations.csv", &realizations_csv(&agg)?)?;
        dir.write("trace_0.csv", &trajectory_csv(&first.states, Some(&first.cumulative_costs))?)?;
    }
    Ok(dir.written().to_vec())
}

#[derive(Serialize)]
struct Empirical {
    estimate: MeanEstimate,
    /// Analytic increase lies within three paired standard errors.
    within_3se: bool,
}

#[derive(Serialize)]
struct RegimeRow {
    regime: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<CostReport>,
    /// Per-step channel means over the horizon, for schedule regimes.
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<Vec<Vec<f64>>>,
    /// Why the regime was not evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical: Option<Empirical>,
}

impl RegimeRow {
    fn evaluated(regime: &'static str, report: CostReport, schedule: Vec<Vec<f64>>) -> Self {
        Self {
            regime,
            report: Some(report),
            schedule: Some(schedule),
            skipped: None,
            empirical: None,
        }
    }

    fn skipped(regime: &'static str, reason: impl Into<String>) -> Self {
        Self {
            regime,
            report: None,
            schedule: None,
            skipped: Some(reason.into()),
            empirical: None,
        }
    }
}

#[derive(Serialize)]
struct AnalysisReport {
    protocol: Protocol,
    state: Vec<f64>,
    /// Expected horizon cost under nominal channel statistics.
    baseline: f64,
    regimes: Vec<RegimeRow>,
}

/// Report for a schedule that is not one of the closed-form regimes.
fn schedule_report(ctx: &AttackContext, schedule: &AttackSchedule) -> Result<CostReport> {
    let baseline = nominal_expected_cost(ctx.ens, ctx.model, ctx.gain, ctx.x());
    let attacked = expected_attacked_cost(ctx.ens, ctx.model, ctx.gain, ctx.x(), &schedule.horizon_diag())?;
    Ok(CostReport {
        regime: Regime::GeneralAlpha,
        protocol: ctx.protocol(),
        baseline,
        attacked,
        increase: attacked - baseline,
        alpha: None,
        condition_met: None,
    })
}

fn constant(means: f64, m: usize, horizon: usize) -> Vec<Vec<f64>> {
    vec![vec![means; m]; horizon]
}

fn regime_rows(exp: &Experiment, ctx: &AttackContext) -> Result<Vec<RegimeRow>> {
    let m = exp.model.input_dim();
    let horizon = exp.model.horizon;
    let scalar = exp.channel.channel_count() == 1;
    let mut rows = vec![RegimeRow::evaluated("alpha_to_0", cost_increase_alpha0(ctx), constant(0.0, m, horizon))];

    let alpha1 = match exp.protocol() {
        Protocol::UdpLike => cost_increase_alpha1_udp(ctx)?,
        Protocol::TcpLike => cost_increase_alpha1_tcp(ctx)?,
    };
    rows.push(RegimeRow::evaluated("alpha_1", alpha1, constant(1.0, m, horizon)));

    rows.push(match (exp.protocol(), scalar) {
        (Protocol::TcpLike, _) => RegimeRow::skipped("alpha_max", "interior maximizer applies to UDP-like channels"),
        (_, false) => RegimeRow::skipped("alpha_max", "interior maximizer needs a single channel"),
        (Protocol::UdpLike, true) => match cost_increase_alphamax_udp(ctx) {
            Ok(r) => {
                let alpha = r.alpha.expect("alpha_max regime carries its mean");
                RegimeRow::evaluated("alpha_max", r, constant(alpha, m, horizon))
            }
            Err(Error::RegimeInapplicable(reason)) => RegimeRow::skipped("alpha_max", reason),
            Err(e) => return Err(e.into()),
        },
    });

    if scalar {
        let ch = match exp.protocol() {
            Protocol::UdpLike => optimal_alpha_udp(ctx)?,
            Protocol::TcpLike => optimal_alpha_tcp(ctx)?,
        };
        let r = cost_increase_alpha(ctx, ch.alpha_star)?;
        rows.push(RegimeRow::evaluated("optimal_iid", r, constant(ch.alpha_star, m, horizon)));
    } else {
        let s = iid_attack(ctx)?;
        let r = schedule_report(ctx, &s)?;
        rows.push(RegimeRow::evaluated("optimal_iid", r, s.means));
    }

    let s = nonstationary_attack(ctx, &QpSettings::default())?;
    let r = schedule_report(ctx, &s)?;
    rows.push(RegimeRow::evaluated("nonstationary", r, s.means));

    if exp.config.attack.kind == AttackKind::Fixed {
        let means = match exp.plan(AttackKind::Fixed)? {
            AttackPlan::Fixed(means) => means,
            _ => unreachable!("fixed kind yields a fixed plan"),
        };
        let s = AttackSchedule::constant(&means, horizon);
        let r = schedule_report(ctx, &s)?;
        rows.push(RegimeRow::evaluated("fixed", r, s.means));
    }
    Ok(rows)
}

/// Closed-form cost increases at the initial-state mean. With
/// `realizations`, each increase is also estimated from paired open-loop
/// horizon runs: plan once at the initial-state mean, execute the whole
/// horizon under nominal and attacked means with the same random numbers.
pub fn analyze(config: &Path, out: Option<&Path>, realizations: Option<usize>, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let mut exp = with_overrides(load(config)?, None, seed)?;
    exp.config.simulation.initial_state = InitialState::Mean;
    let mut dir = output_dir(&exp, out)?;
    let sim = simulator(&exp, AttackKind::None)?;
    let ctx = context(&sim)?;
    let baseline = nominal_expected_cost(ctx.ens, ctx.model, ctx.gain, ctx.x());
    let mut regimes = if exp.config.attack.kind == AttackKind::None {
        Vec::new()
    } else {
        regime_rows(&exp, &ctx)?
    };

    if let Some(r) = realizations {
        if r < 2 {
            return Err(ConfigError(vec!["--realizations must be at least 2 for standard errors".into()]).into());
        }
        let nominal = vec![exp.channel.means().to_vec(); exp.model.horizon];
        let base = sim.horizon_costs(r, &nominal)?;
        for row in &mut regimes {
            let (Some(schedule), Some(report)) = (&row.schedule, &row.report) else {
                continue;
            };
            let attacked = sim.horizon_costs(r, schedule)?;
            let estimate = MeanEstimate::paired_difference(&attacked, &base);
            row.empirical = Some(Empirical {
                within_3se: estimate.within(report.increase, 3.0),
                estimate,
            });
        }
    }

    let report = AnalysisReport {
        protocol: exp.protocol(),
        state: ctx.x().iter().copied().collect(),
        baseline,
        regimes,
    };
    dir.write_json("analysis.json", &report)?;
    Ok(dir.written().to_vec())
}

#[derive(Serialize)]
struct PairedDifference {
    attack: &'static str,
    reference: &'static str,
    /// Mean of `attack - reference` terminal costs over paired realizations.
    difference: MeanEstimate,
}

#[derive(Serialize)]
struct Comparison {
    protocol: Protocol,
    realizations: usize,
    seed: u64,
    attacks: Vec<SimulationSummary>,
    differences: Vec<PairedDifference>,
}

pub fn compare(
    config: &Path,
    out: Option<&Path>,
    attacks: &str,
    realizations: Option<usize>,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>> {
    let exp = with_overrides(load(config)?, realizations, seed)?;
    let mut kinds = Vec::new();
    for name in attacks.split(',').filter(|s| !s.trim().is_empty()) {
        let kind = AttackKind::parse(name).ok_or_else(|| ConfigError(vec![format!("unknown attack `{name}`")]))?;
        if !kinds.contains(&kind) {
            kinds.push(kind);
        }
    }
    if kinds.is_empty() {
        return Err(ConfigError(vec!["--attacks lists no attacks".into()]).into());
    }
    let mut dir = output_dir(&exp, out)?;
    let r = exp.config.simulation.realizations;
    let mut results = Vec::new();
    for &kind in &kinds {
        let sim = simulator(&exp, kind)?;
        let agg = sim.monte_carlo(r)?;
        log::info!("{}: terminal cost {:.4} +- {:.4}", kind.name(), agg.terminal.mean, agg.terminal.std_error);
        if exp.config.output.wants(Format::Csv) {
            let name = format!("mean_trajectory_{}.csv", kind.name());
            dir.write(&name, &trajectory_csv(&agg.mean_states, Some(&agg.mean_cumulative_costs))?)?;
        }
        results.push((kind, agg));
    }
    let mut differences = Vec::new();
    for (i, (ref_kind, ref_agg)) in results.iter().enumerate() {
        for (kind, agg) in &results[i + 1..] {
            differences.push(PairedDifference {
                attack: kind.name(),
                reference: ref_kind.name(),
                difference: MeanEstimate::paired_difference(&agg.terminal_costs, &ref_agg.terminal_costs),
            });
        }
    }
    let report = Comparison {
        protocol: exp.protocol(),
        realizations: r,
        seed: exp.config.simulation.seed,
        attacks: results.iter().map(|(k, a)| SimulationSummary::new(&exp, *k, a)).collect(),
        differences,
    };
    dir.write_json("comparison.json", &report)?;
    Ok(dir.written().to_vec())
}
