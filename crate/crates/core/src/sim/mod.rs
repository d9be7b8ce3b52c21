//! Slotted simulation engine.
//!
//! One slot runs as: every device draws its state and decides from the
//! prices it holds, the cloudlet collects the reports, admits offloaded tasks
//! against the per-slot capacity, updates the counts and the multipliers,
//! and broadcasts the new cloudlet price and each device's count digest.
//! Devices then update their own power multiplier.
//!
//! The device and cloudlet halves are [`DeviceAgent`] and [`CloudletAgent`].
//! [`run_episode`] wires them together in one process; the distributed mode
//! in the companion crate ships the same messages over sockets, so both modes
//! execute identical arithmetic.

mod agents;
mod metrics;

pub use agents::{Broadcast, CloudletAgent, DeviceAgent, StateReport};
pub use metrics::{metrics_summary, DeviceSlot, SlotRecord, SummaryRow, Trajectory};

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::model::{ConstraintVariant, DelayModelParams, DeviceGrid, ResourceBudgets, StateDistribution, StateTable, VariantCosts};
use crate::onalgo::{DualSignal, RuleVariant, StepSchedule};
use crate::oracle::{bound_constants, solve_instance, BoundConstants, BoundReport, Instance};
use crate::process::{delay_components, OutcomeModel, ProcessSpec};

/// Default horizons at which the guarantees are evaluated.
pub const DEFAULT_CHECKPOINTS: [u64; 5] = [10, 100, 1_000, 10_000, 100_000];

/// Offloading policy run by every device.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum Policy {
    OnAlgo,
    /// Offload when the local confidence is below `threshold`.
    Ato { threshold: f64 },
    /// Offload whenever the running average power stays within budget.
    Rco,
    /// Always offload.
    Ocos,
}

impl Policy {
    pub fn label(&self) -> &'static str {
        match self {
            Policy::OnAlgo => "onalgo",
            Policy::Ato { .. } => "ato",
            Policy::Rco => "rco",
            Policy::Ocos => "ocos",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::Ato { threshold } if !(0.0..=1.0).contains(&threshold) => {
                Err(invalid("policy.threshold", "must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// How much capacity the cloudlet can spend in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum AdmissionGate {
    /// The average capacity `H` is available in every slot.
    #[default]
    PerSlot,
    /// Unused capacity carries over, up to `depth` slots' worth.
    TokenBucket { depth: f64 },
}

/// Everything a device needs to generate its slots.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSetup {
    pub grid: DeviceGrid,
    pub process: ProcessSpec,
    pub outcome: OutcomeModel,
    pub delay: Option<DelayModelParams>,
}

/// A validated simulation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub devices: Vec<DeviceSetup>,
    pub budgets: ResourceBudgets,
    pub variant: ConstraintVariant,
    pub schedule: StepSchedule,
    pub rule: RuleVariant,
    pub signal: DualSignal,
    pub gate: AdmissionGate,
    pub slots: u64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(invalid("devices", "at least one device is required"));
        }
        self.budgets.validate(self.devices.len())?;
        self.costs()?;
        self.schedule.validate()?;
        for d in &self.devices {
            d.process.validate(&d.grid)?;
            if d.outcome.levels.values.len() != d.grid.num_gain_levels() {
                return Err(Error::DimensionMismatch {
                    what: "gain levels",
                    expected: d.grid.num_gain_levels(),
                    got: d.outcome.levels.values.len(),
                });
            }
            if let Some(p) = &d.delay {
                p.validate()?;
            }
        }
        if let RuleVariant::DelayAware { zeta } = self.rule {
            if !(0.0..=1.0).contains(&zeta) {
                return Err(invalid("zeta", "must lie in [0, 1]"));
            }
        }
        if let AdmissionGate::TokenBucket { depth } = self.gate {
            if !(depth.is_finite() && depth >= 1.0) {
                return Err(invalid("gate.depth", "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn table(&self) -> Result<StateTable> {
        StateTable::new(self.devices.iter().map(|d| d.grid.clone()).collect())
    }

    pub fn costs(&self) -> Result<VariantCosts> {
        VariantCosts::new(&self.budgets, self.variant, self.devices.len())
    }

    /// Stationary state distribution of every device's generator.
    pub fn true_distribution(&self) -> Result<StateDistribution> {
        let rows = self
            .devices
            .iter()
            .map(|d| d.process.stationary(&d.grid))
            .collect::<Result<Vec<_>>>()?;
        StateDistribution::new(rows)
    }

    /// Any device shares the link by airtime.
    pub fn csma(&self) -> bool {
        self.devices.iter().any(|d| d.delay.as_ref().is_some_and(|p| p.csma))
    }

    /// Per-device delay penalties, when they do not change over time.
    pub fn static_penalties(&self) -> Result<Option<Vec<f64>>> {
        if matches!(self.rule, RuleVariant::AccuracyOnly) {
            return Ok(Some(alloc::vec![0.0; self.devices.len()]));
        }
        if self.csma() {
            return Ok(None);
        }
        let mut out = Vec::with_capacity(self.devices.len());
        for d in &self.devices {
            let terms = match &d.delay {
                Some(p) => Some(delay_components(p, 1.0)?),
                None => None,
            };
            out.push(self.rule.penalty(terms.as_ref()));
        }
        Ok(Some(out))
    }

    /// The offline program the run is compared against.
    pub fn instance(&self) -> Result<Option<Instance>> {
        let Some(pen) = self.static_penalties()? else {
            return Ok(None);
        };
        let inst = Instance::new(self.table()?, self.true_distribution()?, self.budgets.clone(), self.variant)?;
        Ok(Some(inst.with_penalties(&pen)))
    }

    /// Offline optimum and bound constants, shared by every seed of a sweep.
    pub fn oracle(&self) -> Result<Option<RunOracle>> {
        let Some(instance) = self.instance()? else {
            return Ok(None);
        };
        let solution = solve_instance(&instance)?;
        let constants = bound_constants(&instance, &self.schedule);
        Ok(Some(RunOracle {
            instance,
            objective_star: solution.objective,
            constants,
        }))
    }
}

/// Ground truth for evaluating one scenario's runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOracle {
    pub instance: Instance,
    pub objective_star: f64,
    pub constants: BoundConstants,
}

/// Knobs of a single run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub record_trajectory: bool,
    /// Horizons for the guarantee checks; the final slot is always included.
    pub checkpoints: Vec<u64>,
    /// Evaluate the guarantees (OnAlgo only).
    pub oracle: Option<RunOracle>,
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    /// `None` for an empty run.
    pub summary: Option<SummaryRow>,
    pub bounds: Option<BoundReport>,
}

/// Serve offloaded requests greedily in device order while they fit the
/// slot capacity. Returns the served devices.
pub fn admit_tasks(requests: &[(usize, f64)], capacity: f64) -> Vec<usize> {
    let mut ordered: Vec<(usize, f64)> = requests.to_vec();
    ordered.sort_by_key(|r| r.0);
    crate::baselines::ocos_schedule(&ordered, capacity)
        .into_iter()
        .map(|i| ordered[i].0)
        .collect()
}

/// Run `scenario.slots` slots of `policy` in-process.
pub fn run_episode(scenario: &Scenario, policy: Policy, seed: u64, options: RunOptions) -> Result<Episode> {
    scenario.validate()?;
    let mut devices = (0..scenario.num_devices())
        .map(|n| DeviceAgent::new(scenario, n, policy, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut cloudlet = CloudletAgent::new(scenario, policy, seed, options)?;
    for (d, b) in devices.iter_mut().zip(cloudlet.start()) {
        d.apply_broadcast(&b)?;
    }
    let mut reports = Vec::with_capacity(devices.len());
    for _ in 0..scenario.slots {
        reports.clear();
        for d in devices.iter_mut() {
            reports.push(d.begin_slot()?);
        }
        let out = cloudlet.handle_slot(&reports)?;
        for (d, b) in devices.iter_mut().zip(&out) {
            d.apply_broadcast(b)?;
        }
    }
    cloudlet.finish()
}
