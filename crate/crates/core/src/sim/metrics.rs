use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Policy, Scenario};
use crate::error::{Error, Result};
use crate::model::{DualVector, ResourceBudgets};
use crate::oracle::positive_norm;

/// One device in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceSlot {
    pub state_index: usize,
    pub has_task: bool,
    pub o: f64,
    pub h: f64,
    pub w: f64,
    pub offloaded: bool,
    pub served: bool,
    /// Realized improvement credited to the device.
    pub gain: f64,
    /// Power drawn in the slot.
    pub power: f64,
    pub d_local: f64,
    /// Link load of the slot.
    pub link: f64,
    /// Task completion delay, when a delay model is configured.
    pub delay: Option<f64>,
}

/// One slot across all devices.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlotRecord {
    pub t: u64,
    /// Multipliers that priced the slot (OnAlgo only).
    pub dual: Option<DualVector>,
    pub devices: Vec<DeviceSlot>,
}

/// Slot-by-slot record of a run.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    /// Slots executed, whether or not they were recorded.
    pub num_slots: u64,
    pub slots: Vec<SlotRecord>,
    /// Multipliers after the last slot (OnAlgo only).
    pub final_dual: Option<DualVector>,
}

impl Trajectory {
    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Aggregate metrics of one run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SummaryRow {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub slots: u64,
    pub tasks: u64,
    /// Mean per-task accuracy: local confidence plus the realized
    /// improvement of served tasks.
    pub accuracy: f64,
    pub offload_fraction: f64,
    /// Served over offloaded tasks.
    pub served_fraction: f64,
    /// Time-average power, averaged over devices.
    pub mean_power: f64,
    /// Largest time-average power over budget ratio.
    pub max_power_ratio: f64,
    pub device_power: Vec<f64>,
    /// Time-average offloaded cycles per slot.
    pub cloud_load: f64,
    pub cloud_load_ratio: f64,
    /// Served cycles over available capacity.
    pub cloud_utilization: f64,
    pub link_load: Option<f64>,
    /// Norm of the positive part of the time-averaged constraint vector.
    pub violation_norm: f64,
    pub mean_delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Metrics {
    slots: u64,
    tasks: u64,
    offloaded: u64,
    served: u64,
    accuracy: f64,
    energy: Vec<f64>,
    demand: f64,
    served_cycles: f64,
    link: f64,
    delay: f64,
    delayed_tasks: u64,
}

impl Metrics {
    pub(crate) fn new(devices: usize) -> Self {
        Self {
            slots: 0,
            tasks: 0,
            offloaded: 0,
            served: 0,
            accuracy: 0.0,
            energy: vec![0.0; devices],
            demand: 0.0,
            served_cycles: 0.0,
            link: 0.0,
            delay: 0.0,
            delayed_tasks: 0,
        }
    }

    pub(crate) fn record(&mut self, slot: &SlotRecord) {
        self.slots += 1;
        for (n, d) in slot.devices.iter().enumerate() {
            self.energy[n] += d.power;
            if !d.has_task {
                continue;
            }
            self.tasks += 1;
            self.accuracy += d.d_local + d.gain;
            if d.offloaded {
                self.offloaded += 1;
                self.demand += d.h;
                self.link += d.link;
            }
            if d.served {
                self.served += 1;
                self.served_cycles += d.h;
            }
            if let Some(v) = d.delay {
                self.delay += v;
                self.delayed_tasks += 1;
            }
        }
    }

    pub(crate) fn summary(
        &self,
        scenario: &str,
        policy: Policy,
        seed: u64,
        budgets: &ResourceBudgets,
        link_capacity: Option<f64>,
    ) -> SummaryRow {
        let t = self.slots as f64;
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let device_power: Vec<f64> = self.energy.iter().map(|e| e / t).collect();
        let cloud_load = self.demand / t;
        let mut g: Vec<f64> = device_power.iter().zip(&budgets.power).map(|(p, b)| p - b).collect();
        g.push(cloud_load - budgets.cloudlet);
        let link_load = link_capacity.map(|cap| {
            let l = self.link / t;
            g.push(l - cap);
            l
        });
        SummaryRow {
            scenario: String::from(scenario),
            policy: String::from(policy.label()),
            seed,
            slots: self.slots,
            tasks: self.tasks,
            accuracy: if self.tasks == 0 { 0.0 } else { self.accuracy / self.tasks as f64 },
            offload_fraction: ratio(self.offloaded, self.tasks),
            served_fraction: ratio(self.served, self.offloaded),
            mean_power: device_power.iter().sum::<f64>() / device_power.len() as f64,
            max_power_ratio: device_power
                .iter()
                .zip(&budgets.power)
                .map(|(p, b)| p / b)
                .fold(0.0, f64::max),
            cloud_load,
            cloud_load_ratio: cloud_load / budgets.cloudlet,
            cloud_utilization: self.served_cycles / (t * budgets.cloudlet),
            link_load,
            violation_norm: positive_norm(&g),
            mean_delay: if self.delayed_tasks == 0 {
                None
            } else {
                Some(self.delay / self.delayed_tasks as f64)
            },
            device_power,
        }
    }
}

/// Recompute the summary of a recorded run.
pub fn metrics_summary(trajectory: &Trajectory, scenario: &Scenario, policy: Policy, seed: u64) -> Result<SummaryRow> {
    if trajectory.slots.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let nd = scenario.num_devices();
    let mut m = Metrics::new(nd);
    for s in &trajectory.slots {
        if s.devices.len() != nd {
            return Err(Error::DimensionMismatch {
                what: "trajectory devices",
                expected: nd,
                got: s.devices.len(),
            });
        }
        m.record(s);
    }
    let costs = scenario.costs()?;
    Ok(m.summary(&scenario.name, policy, seed, &scenario.budgets, costs.link_capacity))
}
