//! Experiment configuration: a JSON document with `system`, `channel`,
//! `protocol`, `attack`, `simulation` and `output` blocks.
//!
//! Diagonal matrices are given as vectors. `Omega_diag` and `Psi_diag`
//! accept either one block (length `n` or `m`, repeated over the horizon) or
//! the full horizon diagonal. Omitted penalties and covariances default to
//! identity and omitted `X_bar` to zero; these are placeholders, not values
//! tied to any particular plant.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use packetdos_core::model::repeat_diagonal;
use packetdos_core::sim::{InitialState, Replan, StateSource};
use packetdos_core::{AttackPlan, ChannelSpec, DetectionSpec, EpisodeConfig, Protocol, QpSettings, SystemModel};
use serde::{Deserialize, Serialize};

/// Invalid or unreadable configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration")?;
        for issue in &self.0 {
            write!(f, "\n  - {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn config_error(issue: impl Into<String>) -> ConfigError {
    ConfigError(vec![issue.into()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub system: SystemBlock,
    pub channel: ChannelBlock,
    pub protocol: Protocol,
    #[serde(default)]
    pub attack: AttackBlock,
    #[serde(default)]
    pub simulation: SimulationBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_W", default, skip_serializing_if = "Option::is_none")]
    pub sigma_w: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_X", default, skip_serializing_if = "Option::is_none")]
    pub sigma_x: Option<Vec<Vec<f64>>>,
    #[serde(rename = "X_bar", default, skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<Vec<f64>>,
    #[serde(rename = "Q_diag", default, skip_serializing_if = "Option::is_none")]
    pub q_diag: Option<Vec<f64>>,
    #[serde(rename = "Omega_diag", default, skip_serializing_if = "Option::is_none")]
    pub omega_diag: Option<Vec<f64>>,
    #[serde(rename = "Psi_diag", default, skip_serializing_if = "Option::is_none")]
    pub psi_diag: Option<Vec<f64>>,
    #[serde(rename = "N")]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelBlock {
    /// Per-actuator nominal delivery means, or a single mean for all.
    #[serde(rename = "M_diag")]
    pub m_diag: Vec<f64>,
    /// Per-actuator safe-region half-widths, or a single half-width for all.
    #[serde(rename = "L_diag")]
    pub l_diag: Vec<f64>,
    /// All actuators share one channel and one loss draw per step.
    #[serde(default)]
    pub shared: bool,
    /// First monitor sample count at which alarms may fire.
    #[serde(default = "one")]
    pub arm_after: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    #[default]
    None,
    Iid,
    Nonstationary,
    AllDrop,
    AllDeliver,
    Fixed,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Iid => "iid",
            AttackKind::Nonstationary => "nonstationary",
            AttackKind::AllDrop => "all_drop",
            AttackKind::AllDeliver => "all_deliver",
            AttackKind::Fixed => "fixed",
        }
    }

    /// Parses a `compare --attacks` entry; `nonstat` is accepted as shorthand.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "none" => Some(AttackKind::None),
            "iid" => Some(AttackKind::Iid),
            "nonstat" | "nonstationary" => Some(AttackKind::Nonstationary),
            "all_drop" => Some(AttackKind::AllDrop),
            "all_deliver" => Some(AttackKind::AllDeliver),
            "fixed" => Some(AttackKind::Fixed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    #[serde(default)]
    pub kind: AttackKind,
    /// Per-actuator means for `fixed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
    #[serde(default)]
    pub state_source: StateSource,
    #[serde(default)]
    pub replan: Replan,
    #[serde(default)]
    pub onset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    #[serde(rename = "T", default = "default_steps")]
    pub steps: usize,
    #[serde(rename = "R", default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default)]
    pub halt_on_detect: bool,
}

fn default_steps() -> usize {
    50
}

fn default_realizations() -> usize {
    1000
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            realizations: default_realizations(),
            seed: 0,
            initial_state: InitialState::default(),
            halt_on_detect: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: None,
            formats: default_formats(),
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, format: Format) -> bool {
        self.formats.contains(&format)
    }
}

/// Validated configuration with the library objects built from it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: SystemModel,
    pub channel: ChannelSpec,
    pub detection: DetectionSpec,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| ConfigError(e.0.into_iter().map(|i| format!("{}: {i}", path.display())).collect()))
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// Checks every block and builds the model, channel and detector.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        let mut issues = Vec::new();
        let model = match self.system.to_model() {
            Ok(m) => Some(m),
            Err(mut e) => {
                issues.append(&mut e);
                None
            }
        };
        let m = model.as_ref().map(|m| m.input_dim());
        let channel_parts = m.and_then(|m| match self.channel.build(m) {
            Ok(parts) => Some(parts),
            Err(e) => {
                issues.push(e);
                None
            }
        });
        if let Some(m) = m {
            if let Err(e) = self.attack.validate(m) {
                issues.push(e);
            }
        }
        if self.simulation.steps == 0 {
            issues.push("simulation.T must be at least 1".into());
        }
        if self.simulation.realizations == 0 {
            issues.push("simulation.R must be at least 1".into());
        }
        if self.attack.onset > self.simulation.steps {
            issues.push(format!(
                "attack.onset {} exceeds simulation.T {}",
                self.attack.onset, self.simulation.steps
            ));
        }
        if !issues.is_empty() {
            return Err(ConfigError(issues));
        }
        let (channel, detection) = channel_parts.expect("no issues recorded");
        Ok(Experiment {
            config: self.clone(),
            model: model.expect("no issues recorded"),
            channel,
            detection,
        })
    }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(format!("{field} must be a non-empty array of rows"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(format!("{field} row {i} has {} entries, expected {c}", rows[i].len()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(format!("{field} has non-finite entries"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn horizon_diag(field: &str, values: &[f64], block: usize, horizon: usize) -> Result<DVector<f64>, String> {
    if values.len() == block {
        Ok(repeat_diagonal(values, horizon))
    } else if values.len() == block * horizon {
        Ok(DVector::from_column_slice(values))
    } else {
        Err(format!(
            "{field} has {} entries, expected {block} (one block) or {} (full horizon)",
            values.len(),
            block * horizon
        ))
    }
}

impl SystemBlock {
    pub fn to_model(&self) -> Result<SystemModel, Vec<String>> {
        let mut issues = Vec::new();
        let a = matrix("A", &self.a).map_err(|e| issues.push(e)).ok();
        let b = matrix("B", &self.b).map_err(|e| issues.push(e)).ok();
        if self.horizon == 0 {
            issues.push("N must be at least 1".into());
        }
        let (Some(a), Some(b)) = (a, b) else {
            return Err(issues);
        };
        if !issues.is_empty() {
            return Err(issues);
        }
        let (n, m) = (a.nrows(), b.ncols());
        let horizon = self.horizon;
        let mut model = SystemModel::with_defaults(a, b, horizon);
        if let Some(s) = &self.sigma_w {
            matrix("Sigma_W", s).map(|s| model.sigma_w = s).unwrap_or_else(|e| issues.push(e));
        }
        if let Some(s) = &self.sigma_x {
            matrix("Sigma_X", s).map(|s| model.sigma_x = s).unwrap_or_else(|e| issues.push(e));
        }
        if let Some(x) = &self.x_bar {
            model.x_mean = DVector::from_column_slice(x);
        }
        if let Some(q) = &self.q_diag {
            model.q_diag = DVector::from_column_slice(q);
        }
        if let Some(o) = &self.omega_diag {
            horizon_diag("Omega_diag", o, n, horizon)
                .map(|o| model.omega_diag = o)
                .unwrap_or_else(|e| issues.push(e));
        }
        if let Some(p) = &self.psi_diag {
            horizon_diag("Psi_diag", p, m, horizon)
                .map(|p| model.psi_diag = p)
                .unwrap_or_else(|e| issues.push(e));
        }
        if !issues.is_empty() {
            return Err(issues);
        }
        model.validate().map_err(|e| vec![e.to_string()])?;
        Ok(model)
    }
}

fn per_actuator(field: &str, values: &[f64], m: usize) -> Result<Vec<f64>, String> {
    match values.len() {
        1 => Ok(vec![values[0]; m]),
        len if len == m => Ok(values.to_vec()),
        len => Err(format!("{field} has {len} entries, expected 1 or {m}")),
    }
}

impl ChannelBlock {
    fn build(&self, m: usize) -> Result<(ChannelSpec, DetectionSpec), String> {
        let means = per_actuator("M_diag", &self.m_diag, m)?;
        let widths = per_actuator("L_diag", &self.l_diag, m)?;
        let channel = if self.shared {
            if means.iter().any(|v| *v != means[0]) {
                return Err("a shared channel needs a single mean in M_diag".into());
            }
            ChannelSpec::shared(means[0], m)
        } else {
            ChannelSpec::independent(means)
        }
        .map_err(|e| e.to_string())?;
        let detection = DetectionSpec::new(&channel, widths)
            .map_err(|e| e.to_string())?
            .with_arm_after(self.arm_after);
        Ok((channel, detection))
    }
}

impl AttackBlock {
    fn validate(&self, m: usize) -> Result<(), String> {
        match (self.kind, &self.means) {
            (AttackKind::Fixed, None) => Err("attack.means is required for kind `fixed`".into()),
            (AttackKind::Fixed, Some(means)) => per_actuator("attack.means", means, m).map(|_| ()),
            (_, Some(_)) => Err(format!("attack.means only applies to kind `fixed`, not `{}`", self.kind.name())),
            _ => Ok(()),
        }
    }
}

impl Experiment {
    pub fn protocol(&self) -> Protocol {
        self.config.protocol
    }

    /// The library attack plan for `kind`, using this config's mode flags.
    pub fn plan(&self, kind: AttackKind) -> Result<AttackPlan, ConfigError> {
        let m = self.model.input_dim();
        let a = &self.config.attack;
        Ok(match kind {
            AttackKind::None => AttackPlan::None,
            AttackKind::Iid => AttackPlan::OptimalIid { source: a.state_source },
            AttackKind::Nonstationary => AttackPlan::NonStationary {
                replan: a.replan,
                settings: QpSettings::default(),
            },
            AttackKind::AllDrop => AttackPlan::Fixed(vec![0.0; m]),
            AttackKind::AllDeliver => AttackPlan::Fixed(vec![1.0; m]),
            AttackKind::Fixed => {
                let means = a
                    .means
                    .as_ref()
                    .ok_or_else(|| config_error("attack.means is required for kind `fixed`"))?;
                AttackPlan::Fixed(per_actuator("attack.means", means, m).map_err(config_error)?)
            }
        })
    }

    /// Episode settings for `kind`, with the config's simulation block.
    pub fn episode(&self, kind: AttackKind) -> Result<EpisodeConfig, ConfigError> {
        let s = &self.config.simulation;
        let mut cfg = EpisodeConfig::new(self.protocol(), self.channel.clone(), self.detection.clone())
            .with_attack(self.plan(kind)?);
        cfg.steps = s.steps;
        cfg.seed = s.seed;
        cfg.onset = self.config.attack.onset;
        cfg.initial_state = s.initial_state;
        cfg.halt_on_detect = s.halt_on_detect;
        Ok(cfg)
    }
}
