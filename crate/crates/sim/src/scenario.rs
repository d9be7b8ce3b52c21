//! Scenario files.
//!
//! A scenario is a TOML document; see `scenarios/scenario1.toml` for a fully
//! commented example. Devices are declared in groups that share parameters.
//! Validation errors name the offending key, e.g. `devices[0].power_budget`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use offload_core::model::{ConstraintVariant, DelayModelParams, DeviceGrid, DeviceState, GainModelParams, LinkBudget, ResourceBudgets};
use offload_core::onalgo::{DualSignal, RuleVariant, StepSchedule};
use offload_core::process::{ArrivalProcess, CostModelParams, GainLevels, LevelProcess, OutcomeModel, ProcessSpec};
use offload_core::sim::{AdmissionGate, DeviceSetup, Scenario};
use serde::{Deserialize, Serialize};

use crate::trace::read_trace;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scenario field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

fn core_err(prefix: &str, e: offload_core::Error) -> ScenarioError {
    match e {
        offload_core::Error::InvalidParameter { field, reason } => invalid(format!("{prefix}{field}"), reason),
        other => invalid(prefix.trim_end_matches('.'), other.to_string()),
    }
}

/// On-disk schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default = "default_slots")]
    pub slots: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variant: ConstraintVariant,
    #[serde(default)]
    pub signal: DualSignal,
    pub schedule: StepSchedule,
    /// Penalize offloading by the delay it adds, weighted by each group's `delay.zeta`.
    #[serde(default)]
    pub delay_aware: bool,
    pub cloudlet: CloudletSection,
    /// Recorded states for every device, replacing the generators.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    pub devices: Vec<DeviceGroup>,
}

fn default_slots() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudletSection {
    /// Average capacity, gigacycles per slot.
    pub capacity: f64,
    #[serde(default)]
    pub gate: AdmissionGate,
    /// Average link capacity (bandwidth variant).
    #[serde(default)]
    pub link_capacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceGroup {
    #[serde(default = "one")]
    pub count: usize,
    /// Average transmit power budget, watts.
    pub power_budget: f64,
    /// Power of local execution (offload-first variant), watts.
    #[serde(default)]
    pub local_power: Option<f64>,
    /// Link load of one offloaded object (bandwidth variant).
    #[serde(default)]
    pub link_size: Option<f64>,
    pub arrivals: ArrivalProcess,
    #[serde(default)]
    pub cost: CostModelParams,
    pub gain: GainModelParams,
    #[serde(default = "default_gain_levels")]
    pub gain_levels: usize,
    /// Probability that the channel, cycle and gain levels repeat from one
    /// slot to the next; zero gives i.i.d. levels.
    #[serde(default)]
    pub persistence: f64,
    #[serde(default)]
    pub delay: Option<DelayModelParams>,
}

fn one() -> usize {
    1
}

fn default_gain_levels() -> usize {
    10
}

impl ScenarioFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Build and validate the engine scenario. `base` resolves a relative trace path.
    pub fn compile(&self, base: &Path) -> Result<Scenario, ScenarioError> {
        if self.devices.is_empty() {
            return Err(invalid("devices", "at least one device group is required"));
        }
        if !(self.cloudlet.capacity.is_finite() && self.cloudlet.capacity > 0.0) {
            return Err(invalid("cloudlet.capacity", format!("{} must be > 0", self.cloudlet.capacity)));
        }
        self.schedule.validate().map_err(|e| core_err("schedule.", e))?;

        let mut devices = Vec::new();
        let mut power = Vec::new();
        let mut local_power = Vec::new();
        let mut link_size = Vec::new();
        let mut zeta: Option<f64> = None;
        for (gi, g) in self.devices.iter().enumerate() {
            let p = format!("devices[{gi}].");
            if g.count == 0 {
                return Err(invalid(format!("{p}count"), "must be >= 1"));
            }
            if !(g.power_budget.is_finite() && g.power_budget > 0.0) {
                return Err(invalid(format!("{p}power_budget"), format!("{} must be > 0", g.power_budget)));
            }
            if !(0.0..=1.0).contains(&g.persistence) {
                return Err(invalid(format!("{p}persistence"), "must lie in [0, 1]"));
            }
            g.arrivals.validate().map_err(|e| core_err(&format!("{p}arrivals."), e))?;
            let (o, po) = g.cost.power_levels().map_err(|e| core_err(&format!("{p}cost."), e))?;
            let (h, ph) = g.cost.cycle_levels().map_err(|e| core_err(&format!("{p}cost."), e))?;
            let levels = GainLevels::from_model(&g.gain, g.gain_levels).map_err(|e| core_err(&format!("{p}gain."), e))?;
            let grid = DeviceGrid::new(o, h, levels.values.clone()).map_err(|e| core_err(&p, e))?;
            let level = |probs: &[f64], name: &str| -> Result<LevelProcess, ScenarioError> {
                if g.persistence == 0.0 {
                    Ok(LevelProcess::Iid { probs: probs.to_vec() })
                } else {
                    LevelProcess::sticky(probs, g.persistence).map_err(|e| core_err(&format!("{p}{name}."), e))
                }
            };
            let process = ProcessSpec::Generated {
                arrivals: g.arrivals.clone(),
                o: level(&po, "cost")?,
                h: level(&ph, "cost")?,
                w: level(&levels.probs.clone(), "gain")?,
            };
            let outcome = OutcomeModel::from_gain_model(&g.gain, levels);
            if let Some(d) = &g.delay {
                d.validate().map_err(|e| core_err(&format!("{p}delay."), e))?;
                if self.delay_aware {
                    match zeta {
                        Some(z) if z != d.zeta => {
                            return Err(invalid(format!("{p}delay.zeta"), "all groups must share one zeta"));
                        }
                        _ => zeta = Some(d.zeta),
                    }
                }
            } else if self.delay_aware {
                return Err(invalid(format!("{p}delay"), "required when delay_aware = true"));
            }
            match self.variant {
                ConstraintVariant::OffloadFirst if g.local_power.is_none() => {
                    return Err(invalid(format!("{p}local_power"), "required by the offload-first variant"));
                }
                ConstraintVariant::Bandwidth if g.link_size.is_none() => {
                    return Err(invalid(format!("{p}link_size"), "required by the bandwidth variant"));
                }
                _ => {}
            }
            for _ in 0..g.count {
                devices.push(DeviceSetup {
                    grid: grid.clone(),
                    process: process.clone(),
                    outcome: outcome.clone(),
                    delay: g.delay.clone(),
                });
                power.push(g.power_budget);
                local_power.push(g.local_power.unwrap_or(0.0));
                link_size.push(g.link_size.unwrap_or(0.0));
            }
        }

        let mut budgets = ResourceBudgets {
            power,
            cloudlet: self.cloudlet.capacity,
            link: None,
            local_power: None,
        };
        match self.variant {
            ConstraintVariant::OffloadFirst => budgets.local_power = Some(local_power),
            ConstraintVariant::Bandwidth => {
                let capacity = self
                    .cloudlet
                    .link_capacity
                    .ok_or_else(|| invalid("cloudlet.link_capacity", "required by the bandwidth variant"))?;
                budgets.link = Some(LinkBudget {
                    capacity,
                    object_size: link_size,
                });
            }
            ConstraintVariant::Standard => {}
        }
        budgets.validate(devices.len()).map_err(|e| core_err("budgets.", e))?;

        if let Some(trace) = &self.trace {
            let path = if trace.is_absolute() { trace.clone() } else { base.join(trace) };
            let states = read_trace(&path).map_err(|e| invalid("trace", e.to_string()))?;
            attach_trace(&mut devices, states)?;
        }

        let scenario = Scenario {
            name: self.name.clone(),
            devices,
            budgets,
            variant: self.variant,
            schedule: self.schedule,
            rule: match zeta {
                Some(zeta) => RuleVariant::DelayAware { zeta },
                None => RuleVariant::AccuracyOnly,
            },
            signal: self.signal,
            gate: self.cloudlet.gate,
            slots: self.slots,
            seed: self.seed,
        };
        scenario.validate().map_err(|e| core_err("", e))?;
        Ok(scenario)
    }
}

fn attach_trace(devices: &mut [DeviceSetup], states: BTreeMap<usize, Vec<DeviceState>>) -> Result<(), ScenarioError> {
    for (n, d) in devices.iter_mut().enumerate() {
        let s = states
            .get(&n)
            .ok_or_else(|| invalid("trace", format!("no rows for device {n}")))?;
        d.process = ProcessSpec::Trace { states: s.clone() };
        d.process
            .validate(&d.grid)
            .map_err(|e| invalid("trace", format!("device {n}: {e}")))?;
    }
    if let Some(extra) = states.keys().find(|k| **k >= devices.len()) {
        return Err(invalid("trace", format!("device {extra} is not declared")));
    }
    Ok(())
}

/// Read, parse and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file = ScenarioFile::parse(&text, path)?;
    file.compile(path.parent().unwrap_or(Path::new(".")))
}
