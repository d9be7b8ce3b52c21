//! Ground-truth side of the simulator: the offline optimum, the constants of
//! the regret and violation guarantees, and their per-run evaluation.
//!
//! Everything here may use the true state distribution; none of it feeds back
//! into the online policy.

mod bounds;
mod offline;

pub use bounds::{theorem1_report, BoundReport, BoundTracker, CheckpointReport, LemmaStatus, SlotInput};
pub use offline::{brute_force_instance, solve_instance, OfflineSolution, BRUTE_FORCE_LIMIT};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{
    constraint_values, ConstraintVariant, DualVector, PolicyTable, ResourceBudgets, StateDistribution, StateTable,
    VariantCosts,
};
use crate::onalgo::{offloads, state_price, StepSchedule};

/// A fully specified offloading program: grids, true distribution, budgets
/// and the gain of offloading each state.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub table: StateTable,
    pub dist: StateDistribution,
    pub budgets: ResourceBudgets,
    pub variant: ConstraintVariant,
    pub costs: VariantCosts,
    /// Gain of offloading per device and local state. Equals the `w` grid
    /// unless a fixed delay penalty has been applied; may then be negative.
    pub gains: Vec<Vec<f64>>,
}

impl Instance {
    pub fn new(
        table: StateTable,
        dist: StateDistribution,
        budgets: ResourceBudgets,
        variant: ConstraintVariant,
    ) -> Result<Self> {
        let n = table.num_devices();
        let costs = VariantCosts::new(&budgets, variant, n)?;
        if dist.num_devices() != n {
            return Err(Error::DimensionMismatch {
                what: "distribution rows",
                expected: n,
                got: dist.num_devices(),
            });
        }
        for (i, g) in table.devices.iter().enumerate() {
            if dist.row(i).len() != g.num_states() {
                return Err(Error::DimensionMismatch {
                    what: "distribution row",
                    expected: g.num_states(),
                    got: dist.row(i).len(),
                });
            }
        }
        let gains = table
            .devices
            .iter()
            .map(|g| (0..g.num_states()).map(|k| g.values(k).2).collect())
            .collect();
        Ok(Self {
            table,
            dist,
            budgets,
            variant,
            costs,
            gains,
        })
    }

    /// Subtract a fixed per-device penalty from every task-state gain.
    pub fn with_penalties(mut self, penalties: &[f64]) -> Self {
        for (row, p) in self.gains.iter_mut().zip(penalties) {
            for g in row.iter_mut().skip(1) {
                *g -= p;
            }
        }
        self
    }

    /// `Σ gain y ρ` (maximization form).
    pub fn objective(&self, policy: &PolicyTable) -> Result<f64> {
        self.objective_with(policy, &self.dist)
    }

    pub fn objective_with(&self, policy: &PolicyTable, dist: &StateDistribution) -> Result<f64> {
        if policy.num_devices() != self.table.num_devices() {
            return Err(Error::DimensionMismatch {
                what: "policy rows",
                expected: self.table.num_devices(),
                got: policy.num_devices(),
            });
        }
        let mut s = 0.0;
        for (n, g) in self.gains.iter().enumerate() {
            for k in 1..g.len() {
                s += g[k] * policy.get(n, k) * dist.prob(n, k);
            }
        }
        Ok(s)
    }

    pub fn constraints(&self, policy: &PolicyTable) -> Result<Vec<f64>> {
        constraint_values(policy, &self.dist, &self.table, &self.budgets, self.variant)
    }

    pub fn constraints_with(&self, policy: &PolicyTable, dist: &StateDistribution) -> Result<Vec<f64>> {
        constraint_values(policy, dist, &self.table, &self.budgets, self.variant)
    }
}

/// Solve the offline program for the true distribution.
pub fn solve_offline(
    table: &StateTable,
    dist: &StateDistribution,
    budgets: &ResourceBudgets,
    variant: ConstraintVariant,
) -> Result<OfflineSolution> {
    let inst = Instance::new(table.clone(), dist.clone(), budgets.clone(), variant)?;
    solve_instance(&inst)
}

/// Grid-search counterpart of [`solve_offline`], for cross-checking.
pub fn brute_force_offline(
    table: &StateTable,
    dist: &StateDistribution,
    budgets: &ResourceBudgets,
    variant: ConstraintVariant,
    grid_step: Option<f64>,
) -> Result<(PolicyTable, f64, f64)> {
    let inst = Instance::new(table.clone(), dist.clone(), budgets.clone(), variant)?;
    brute_force_instance(&inst, grid_step)
}

/// Constants of the regret and violation guarantees.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundConstants {
    /// Bound on `|f_t(y)|`.
    pub sigma_f: f64,
    /// Bound on `||g_t(y)||`.
    pub sigma_g: f64,
    /// Slater margin of `y = 0`, worst case over distributions.
    pub q: f64,
    /// Bound on the multiplier norm.
    pub lambda_max: f64,
}

/// Constants for an instance. Both bounds hold for every `y ∈ [0,1]` and every
/// state distribution, so they cover the empirical proxies as well.
pub fn bound_constants(inst: &Instance, schedule: &StepSchedule) -> BoundConstants {
    let nd = inst.table.num_devices();
    let sigma_f: f64 = inst
        .gains
        .iter()
        .map(|row| row.iter().skip(1).fold(0.0_f64, |m, g| m.max(g.abs())))
        .sum();
    let mut sq = 0.0;
    let mut q = f64::INFINITY;
    for n in 0..nd {
        let b = inst.budgets.power[n];
        let nu = inst.costs.local_power[n];
        let top = inst.table.device(n).max_o().max(nu);
        let m = b.max(top - b);
        sq += m * m;
        q = q.min(b - nu);
    }
    let h = inst.budgets.cloudlet;
    let total_h: f64 = inst.table.devices.iter().map(|g| g.max_h()).sum();
    let m = h.max(total_h - h);
    sq += m * m;
    q = q.min(h);
    if let Some(cap) = inst.costs.link_capacity {
        let total_l: f64 = inst.costs.link_size.iter().sum();
        let m = cap.max(total_l - cap);
        sq += m * m;
        q = q.min(cap);
    }
    let sigma_g = libm::sqrt(sq);
    let a1 = schedule.first_step();
    let lambda_max = 2.0 * sigma_f / q + a1 * sigma_g * sigma_g / (2.0 * q) + a1 * sigma_g;
    BoundConstants {
        sigma_f,
        sigma_g,
        q,
        lambda_max,
    }
}

/// Minimizer of the true Lagrangian at `dual`: offload exactly the states with
/// positive probability whose gain beats the price.
pub fn per_slot_z(inst: &Instance, dual: &DualVector) -> PolicyTable {
    let rows = inst
        .table
        .devices
        .iter()
        .enumerate()
        .map(|(n, g)| {
            (0..g.num_states())
                .map(|k| {
                    if k == 0 || inst.dist.prob(n, k) <= 0.0 {
                        return 0.0;
                    }
                    let (o, h, _) = g.values(k);
                    if offloads(inst.gains[n][k], 0.0, state_price(dual, &inst.costs, n, o, h)) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    PolicyTable::new(rows).expect("binary rows")
}

/// The three error aggregates of one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorTerms {
    /// `ε_t(z) - ε_t(y)` where `ε_t(y) = f_t(y) - f(y)`.
    pub eps_diff: f64,
    /// `λ^T δ_t(z)` where `δ_t(y) = g_t(y) - g(y)`.
    pub lambda_delta_z: f64,
    /// `||δ_t(y)||`
    pub delta_y_norm: f64,
}

/// Error terms from their definitions, with `f = -objective`.
pub fn error_terms(
    inst: &Instance,
    z: &PolicyTable,
    y: &PolicyTable,
    dual: &DualVector,
    empirical: &StateDistribution,
) -> Result<ErrorTerms> {
    let eps = |p: &PolicyTable| -> Result<f64> {
        Ok(-inst.objective_with(p, empirical)? + inst.objective(p)?)
    };
    let delta = |p: &PolicyTable| -> Result<Vec<f64>> {
        let gt = inst.constraints_with(p, empirical)?;
        let g = inst.constraints(p)?;
        Ok(gt.iter().zip(&g).map(|(a, b)| a - b).collect())
    };
    let dz = delta(z)?;
    let dy = delta(y)?;
    Ok(ErrorTerms {
        eps_diff: eps(z)? - eps(y)?,
        lambda_delta_z: dual.dot(&dz),
        delta_y_norm: libm::sqrt(dy.iter().map(|x| x * x).sum()),
    })
}

/// `||[v]^+||`
pub fn positive_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x.max(0.0) * x.max(0.0)).sum())
}

/// `lhs <= rhs` up to floating-point noise.
pub fn holds(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + 1e-9 * 1.0_f64.max(lhs.abs()).max(rhs.abs())
}

pub(crate) fn zeros_like(inst: &Instance) -> Vec<f64> {
    vec![0.0; inst.costs.num_constraints(inst.table.num_devices())]
}
