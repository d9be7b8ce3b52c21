#![allow(dead_code)]

use offload_core::model::{ConstraintVariant, DelayModelParams, DeviceGrid, ResourceBudgets};
use offload_core::onalgo::{DualSignal, RuleVariant, StepSchedule};
use offload_core::process::{GainLevels, OutcomeModel, ProcessSpec};
use offload_core::sim::{AdmissionGate, DeviceSetup, Scenario};

pub fn outcome(w: &[f64]) -> OutcomeModel {
    OutcomeModel {
        levels: GainLevels::bare(w.to_vec()),
        noise_scale: 0.12,
        cloud_accuracy_mean: 0.9,
        cloud_accuracy_std: 0.05,
    }
}

pub fn device(task_prob: f64) -> DeviceSetup {
    let o = vec![0.13, 0.3, 0.45];
    let h = vec![0.35, 0.45, 0.55];
    let w = vec![0.0, 0.05, 0.1, 0.2, 0.3];
    DeviceSetup {
        grid: DeviceGrid::new(o, h, w.clone()).unwrap(),
        process: ProcessSpec::iid(task_prob, vec![0.3, 0.4, 0.3], vec![0.25, 0.5, 0.25], vec![0.2; 5]),
        outcome: outcome(&w),
        delay: None,
    }
}

pub fn delay(zeta: f64) -> DelayModelParams {
    DelayModelParams {
        cycles_per_task: 0.441,
        device_speed: 0.441 / 2.537,
        cloud_speed: 0.441 / 0.191,
        object_size: 3072.0,
        channel_rate: 1.0,
        bandwidth: 3072.0 / 0.157,
        zeta,
        csma: false,
    }
}

pub fn scenario(n: usize, slots: u64) -> Scenario {
    Scenario {
        name: "small".into(),
        devices: (0..n).map(|i| device(0.5 + 0.1 * i as f64)).collect(),
        budgets: ResourceBudgets::new(vec![0.08; n], 0.4).unwrap(),
        variant: ConstraintVariant::Standard,
        schedule: StepSchedule::PowerDecay { a: 2.0, beta: 0.5 },
        rule: RuleVariant::AccuracyOnly,
        signal: DualSignal::Expected,
        gate: AdmissionGate::PerSlot,
        slots,
        seed: 7,
    }
}
