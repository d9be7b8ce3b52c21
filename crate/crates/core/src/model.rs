//! Domain types and the exact objective/constraint functions of the
//! offloading program.
//!
//! The joint system state is never materialized. Every function of the
//! program is a sum of per-device terms, so each device carries its own
//! product grid of power cost `o`, cloudlet cycles `h` and gain `w`, and all
//! distributions are per-device marginals over that grid. Local state `0` is
//! the idle state (no task this slot); task states are numbered from 1.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};

/// Index of the idle (no task) local state on every device.
pub const IDLE_STATE: usize = 0;

/// Tolerance used when validating that probability rows sum to one.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// What a device observes in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceState {
    pub o_level: usize,
    pub h_level: usize,
    pub w_level: usize,
    pub has_task: bool,
}

impl DeviceState {
    pub const IDLE: DeviceState = DeviceState {
        o_level: 0,
        h_level: 0,
        w_level: 0,
        has_task: false,
    };

    pub fn task(o_level: usize, h_level: usize, w_level: usize) -> Self {
        Self {
            o_level,
            h_level,
            w_level,
            has_task: true,
        }
    }
}

/// Quantized cost and gain levels of one device.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceGrid {
    /// Transmit power per offloaded task, watts.
    pub o_values: Vec<f64>,
    /// Cloudlet cycles per offloaded task, gigacycles.
    pub h_values: Vec<f64>,
    /// Weighted improvement gains in `[0, 1]`.
    pub w_values: Vec<f64>,
}

fn check_grid(name: &'static str, values: &[f64], upper: Option<f64>) -> Result<()> {
    if values.is_empty() {
        return Err(invalid(name, "grid is empty"));
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() || *v < 0.0 {
            return Err(invalid(name, format!("level {i} = {v} must be finite and >= 0")));
        }
        if let Some(hi) = upper {
            if *v > hi {
                return Err(invalid(name, format!("level {i} = {v} exceeds {hi}")));
            }
        }
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(name, "grid must be strictly increasing"));
    }
    Ok(())
}

impl DeviceGrid {
    pub fn new(o_values: Vec<f64>, h_values: Vec<f64>, w_values: Vec<f64>) -> Result<Self> {
        check_grid("o_values", &o_values, None)?;
        check_grid("h_values", &h_values, None)?;
        check_grid("w_values", &w_values, Some(1.0))?;
        Ok(Self {
            o_values,
            h_values,
            w_values,
        })
    }

    /// Number of local states including the idle state.
    pub fn num_states(&self) -> usize {
        1 + self.num_cells() * self.w_values.len()
    }

    /// Number of `(o, h)` cost cells; each cell holds one state per gain level.
    pub fn num_cells(&self) -> usize {
        self.o_values.len() * self.h_values.len()
    }

    pub fn num_gain_levels(&self) -> usize {
        self.w_values.len()
    }

    pub fn state_index(&self, state: &DeviceState) -> Result<usize> {
        if !state.has_task {
            return Ok(IDLE_STATE);
        }
        let check = |dimension, level: usize, size: usize| {
            if level >= size {
                Err(Error::LevelOutOfRange {
                    dimension,
                    level,
                    size,
                })
            } else {
                Ok(())
            }
        };
        check("o", state.o_level, self.o_values.len())?;
        check("h", state.h_level, self.h_values.len())?;
        check("w", state.w_level, self.w_values.len())?;
        let cell = state.o_level * self.h_values.len() + state.h_level;
        Ok(1 + cell * self.w_values.len() + state.w_level)
    }

    pub fn state_at(&self, index: usize) -> DeviceState {
        match self.cell_of(index) {
            None => DeviceState::IDLE,
            Some((cell, w_level)) => DeviceState::task(
                cell / self.h_values.len(),
                cell % self.h_values.len(),
                w_level,
            ),
        }
    }

    /// `(cell, gain level)` of a task state, `None` for the idle state.
    pub fn cell_of(&self, index: usize) -> Option<(usize, usize)> {
        if index == IDLE_STATE || index >= self.num_states() {
            return None;
        }
        let k = index - 1;
        Some((k / self.w_values.len(), k % self.w_values.len()))
    }

    /// `(o, h)` of a cost cell.
    pub fn cell_costs(&self, cell: usize) -> (f64, f64) {
        let nh = self.h_values.len();
        (self.o_values[cell / nh], self.h_values[cell % nh])
    }

    /// `(o, h, w)` of a local state; all zero for the idle state.
    pub fn values(&self, index: usize) -> (f64, f64, f64) {
        match self.cell_of(index) {
            None => (0.0, 0.0, 0.0),
            Some((cell, wl)) => {
                let (o, h) = self.cell_costs(cell);
                (o, h, self.w_values[wl])
            }
        }
    }

    pub fn max_o(&self) -> f64 {
        *self.o_values.last().expect("validated non-empty")
    }

    pub fn max_h(&self) -> f64 {
        *self.h_values.last().expect("validated non-empty")
    }

    pub fn max_w(&self) -> f64 {
        *self.w_values.last().expect("validated non-empty")
    }
}

/// Per-device state grids.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateTable {
    pub devices: Vec<DeviceGrid>,
}

impl StateTable {
    pub fn new(devices: Vec<DeviceGrid>) -> Result<Self> {
        if devices.is_empty() {
            return Err(invalid("devices", "at least one device is required"));
        }
        Ok(Self { devices })
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn device(&self, n: usize) -> &DeviceGrid {
        &self.devices[n]
    }
}

/// Shared wireless link constraint (bandwidth variant).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinkBudget {
    /// Average link capacity per slot.
    pub capacity: f64,
    /// Size of one object sent by each device, same unit as `capacity`.
    pub object_size: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResourceBudgets {
    /// Average transmit power budget of each device, watts.
    pub power: Vec<f64>,
    /// Average cloudlet capacity, gigacycles per slot.
    pub cloudlet: f64,
    pub link: Option<LinkBudget>,
    /// Power drawn by local classification when a task is kept on the device
    /// (offload-first variant), watts.
    pub local_power: Option<Vec<f64>>,
}

impl ResourceBudgets {
    pub fn new(power: Vec<f64>, cloudlet: f64) -> Result<Self> {
        let b = Self {
            power,
            cloudlet,
            link: None,
            local_power: None,
        };
        b.validate(b.power.len())?;
        Ok(b)
    }

    pub fn validate(&self, num_devices: usize) -> Result<()> {
        if self.power.len() != num_devices {
            return Err(Error::DimensionMismatch {
                what: "power budgets",
                expected: num_devices,
                got: self.power.len(),
            });
        }
        for (n, b) in self.power.iter().enumerate() {
            if !(b.is_finite() && *b > 0.0) {
                return Err(invalid(format!("power[{n}]"), format!("budget {b} must be > 0")));
            }
        }
        if !(self.cloudlet.is_finite() && self.cloudlet > 0.0) {
            return Err(invalid("cloudlet", format!("capacity {} must be > 0", self.cloudlet)));
        }
        if let Some(link) = &self.link {
            if !(link.capacity.is_finite() && link.capacity > 0.0) {
                return Err(invalid("link.capacity", "must be > 0"));
            }
            if link.object_size.len() != num_devices {
                return Err(Error::DimensionMismatch {
                    what: "link object sizes",
                    expected: num_devices,
                    got: link.object_size.len(),
                });
            }
            if link.object_size.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(invalid("link.object_size", "sizes must be >= 0"));
            }
        }
        if let Some(nu) = &self.local_power {
            if nu.len() != num_devices {
                return Err(Error::DimensionMismatch {
                    what: "local power",
                    expected: num_devices,
                    got: nu.len(),
                });
            }
            for (n, (v, b)) in nu.iter().zip(&self.power).enumerate() {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(invalid(format!("local_power[{n}]"), "must be >= 0"));
                }
                // y = 0 must stay strictly feasible even if every slot has a task.
                if v >= b {
                    return Err(invalid(
                        format!("local_power[{n}]"),
                        format!("{v} must be below the power budget {b}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Which constraint set the program uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ConstraintVariant {
    /// Device power budgets and the cloudlet capacity.
    #[default]
    Standard,
    /// Standard plus a shared link capacity.
    Bandwidth,
    /// Devices pay `local_power` for every task they keep local.
    OffloadFirst,
}

/// Per-device coefficients a constraint variant adds to the price of offloading.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantCosts {
    /// Power spent on a task that stays local (`ν`); zero unless offload-first.
    pub local_power: Vec<f64>,
    /// Link usage of an offloaded task; zero unless bandwidth.
    pub link_size: Vec<f64>,
    pub link_capacity: Option<f64>,
}

impl VariantCosts {
    pub fn new(budgets: &ResourceBudgets, variant: ConstraintVariant, num_devices: usize) -> Result<Self> {
        budgets.validate(num_devices)?;
        let zeros = vec![0.0; num_devices];
        match variant {
            ConstraintVariant::Standard => Ok(Self {
                local_power: zeros.clone(),
                link_size: zeros,
                link_capacity: None,
            }),
            ConstraintVariant::Bandwidth => {
                let link = budgets
                    .link
                    .as_ref()
                    .ok_or(Error::MissingVariantParameter("link"))?;
                Ok(Self {
                    local_power: zeros,
                    link_size: link.object_size.clone(),
                    link_capacity: Some(link.capacity),
                })
            }
            ConstraintVariant::OffloadFirst => {
                let nu = budgets
                    .local_power
                    .as_ref()
                    .ok_or(Error::MissingVariantParameter("local_power"))?;
                Ok(Self {
                    local_power: nu.clone(),
                    link_size: zeros,
                    link_capacity: None,
                })
            }
        }
    }

    pub fn has_link(&self) -> bool {
        self.link_capacity.is_some()
    }

    /// Number of constraints: one per device, the cloudlet, and the link if present.
    pub fn num_constraints(&self, num_devices: usize) -> usize {
        num_devices + 1 + usize::from(self.has_link())
    }
}

/// Offloading probabilities `y[n][k]` per device and local state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyTable {
    rows: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (n, row) in rows.iter().enumerate() {
            for (k, y) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(y) {
                    return Err(invalid(format!("y[{n}][{k}]"), format!("{y} outside [0, 1]")));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn zeros(table: &StateTable) -> Self {
        Self::filled(table, 0.0)
    }

    /// Offload every task state.
    pub fn ones(table: &StateTable) -> Self {
        let mut p = Self::filled(table, 1.0);
        for row in &mut p.rows {
            row[IDLE_STATE] = 0.0;
        }
        p
    }

    fn filled(table: &StateTable, value: f64) -> Self {
        Self {
            rows: table
                .devices
                .iter()
                .map(|g| vec![value; g.num_states()])
                .collect(),
        }
    }

    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.rows[n][k]
    }

    pub fn set(&mut self, n: usize, k: usize, y: f64) {
        assert!((0.0..=1.0).contains(&y), "offloading probability {y} outside [0, 1]");
        self.rows[n][k] = y;
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_devices(&self) -> usize {
        self.rows.len()
    }

    /// `alpha * self + (1 - alpha) * other`.
    pub fn blend(&self, other: &PolicyTable, alpha: f64) -> PolicyTable {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (alpha * x + (1.0 - alpha) * y).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        PolicyTable { rows }
    }
}

/// Per-device probability distribution over local states.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateDistribution {
    rows: Vec<Vec<f64>>,
}

impl StateDistribution {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (n, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(invalid(format!("rho[{n}]"), "probabilities must be >= 0"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > PROB_TOLERANCE {
                return Err(invalid(format!("rho[{n}]"), format!("sums to {s}, expected 1")));
            }
        }
        Ok(Self { rows })
    }

    /// All mass on the given local state of each device.
    pub fn point_masses(table: &StateTable, states: &[usize]) -> Result<Self> {
        if states.len() != table.num_devices() {
            return Err(Error::DimensionMismatch {
                what: "point masses",
                expected: table.num_devices(),
                got: states.len(),
            });
        }
        let rows = table
            .devices
            .iter()
            .zip(states)
            .map(|(g, &k)| {
                let mut r = vec![0.0; g.num_states()];
                r[k] = 1.0;
                r
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn prob(&self, n: usize, k: usize) -> f64 {
        self.rows[n][k]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_devices(&self) -> usize {
        self.rows.len()
    }

    /// Probability that device `n` has a task in a slot.
    pub fn task_prob(&self, n: usize) -> f64 {
        1.0 - self.rows[n][IDLE_STATE]
    }
}

/// Multipliers for the device power budgets, the cloudlet capacity and the
/// optional link capacity. All components stay non-negative.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DualVector {
    pub lambda: Vec<f64>,
    pub mu: f64,
    /// Link multiplier; stays zero when the program has no link constraint.
    pub link: f64,
}

impl DualVector {
    pub fn zeros(num_devices: usize) -> Self {
        Self {
            lambda: vec![0.0; num_devices],
            mu: 0.0,
            link: 0.0,
        }
    }

    pub fn new(lambda: Vec<f64>, mu: f64) -> Result<Self> {
        let d = Self { lambda, mu, link: 0.0 };
        if d.components().any(|x| !(x.is_finite() && x >= 0.0)) {
            return Err(invalid("dual", "multipliers must be finite and >= 0"));
        }
        Ok(d)
    }

    pub fn components(&self) -> impl Iterator<Item = f64> + '_ {
        self.lambda
            .iter()
            .copied()
            .chain(core::iter::once(self.mu))
            .chain(core::iter::once(self.link))
    }

    pub fn norm_sq(&self) -> f64 {
        self.components().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    /// Inner product with a constraint vector laid out as
    /// `[g_1..g_N, g_cloudlet, (g_link)]`.
    pub fn dot(&self, g: &[f64]) -> f64 {
        let n = self.lambda.len();
        let mut s = 0.0;
        for i in 0..n {
            s += self.lambda[i] * g[i];
        }
        s += self.mu * g[n];
        if g.len() > n + 1 {
            s += self.link * g[n + 1];
        }
        s
    }
}

/// Running per-device state counts; frequencies are `count / slots` exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmpiricalDistribution {
    counts: Vec<Vec<u64>>,
    slots: u64,
}

impl EmpiricalDistribution {
    pub fn new(table: &StateTable) -> Self {
        Self {
            counts: table
                .devices
                .iter()
                .map(|g| vec![0; g.num_states()])
                .collect(),
            slots: 0,
        }
    }

    /// Record one slot: the local state index observed on each device.
    pub fn observe(&mut self, states: &[usize]) -> Result<()> {
        if states.len() != self.counts.len() {
            return Err(Error::DimensionMismatch {
                what: "observation",
                expected: self.counts.len(),
                got: states.len(),
            });
        }
        for (n, &k) in states.iter().enumerate() {
            if k >= self.counts[n].len() {
                return Err(Error::LevelOutOfRange {
                    dimension: "local state",
                    level: k,
                    size: self.counts[n].len(),
                });
            }
        }
        for (row, &k) in self.counts.iter_mut().zip(states) {
            row[k] += 1;
        }
        self.slots += 1;
        Ok(())
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    pub fn count(&self, n: usize, k: usize) -> u64 {
        self.counts[n][k]
    }

    pub fn counts(&self, n: usize) -> &[u64] {
        &self.counts[n]
    }

    pub fn frequency(&self, n: usize, k: usize) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.counts[n][k] as f64 / self.slots as f64
        }
    }

    /// Current frequencies; `None` before the first observation.
    pub fn frequencies(&self) -> Option<StateDistribution> {
        if self.slots == 0 {
            return None;
        }
        let t = self.slots as f64;
        Some(StateDistribution {
            rows: self
                .counts
                .iter()
                .map(|r| r.iter().map(|&c| c as f64 / t).collect())
                .collect(),
        })
    }
}

/// How predicted gains, predictor confidence and realized gains are generated.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GainModelParams {
    /// Risk-aversion weight `v >= 0` applied to the predictor confidence.
    pub risk_aversion: f64,
    /// Support and probabilities of the predicted improvement.
    pub predicted: Vec<f64>,
    pub predicted_probs: Vec<f64>,
    /// Support and probabilities of the normalized predictor confidence.
    pub confidence: Vec<f64>,
    pub confidence_probs: Vec<f64>,
    /// Relative standard deviation of the realized improvement around the prediction.
    pub noise_scale: f64,
    /// Cloudlet classifier confidence, normal then clamped to `[0, 1]`.
    pub cloud_accuracy_mean: f64,
    pub cloud_accuracy_std: f64,
}

impl GainModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.risk_aversion.is_finite() && self.risk_aversion >= 0.0) {
            return Err(invalid("risk_aversion", "must be >= 0"));
        }
        check_support("predicted", &self.predicted, &self.predicted_probs)?;
        check_support("confidence", &self.confidence, &self.confidence_probs)?;
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(invalid("noise_scale", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.cloud_accuracy_mean) {
            return Err(invalid("cloud_accuracy_mean", "must lie in [0, 1]"));
        }
        if !(self.cloud_accuracy_std.is_finite() && self.cloud_accuracy_std >= 0.0) {
            return Err(invalid("cloud_accuracy_std", "must be >= 0"));
        }
        Ok(())
    }
}

fn check_support(name: &'static str, values: &[f64], probs: &[f64]) -> Result<()> {
    if values.is_empty() || values.len() != probs.len() {
        return Err(invalid(name, "support and probabilities must be non-empty and of equal length"));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid(name, "values must lie in [0, 1]"));
    }
    check_probabilities(name, probs)
}

pub(crate) fn check_probabilities(name: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(invalid(name, "probabilities must be non-empty and >= 0"));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-12 * probs.len().max(1) as f64 + 1e-12 {
        return Err(invalid(name, format!("probabilities sum to {s}, expected 1")));
    }
    Ok(())
}

/// Processing and transmission delay model of the delay-aware objective.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DelayModelParams {
    /// Cycles per task (`k`).
    pub cycles_per_task: f64,
    /// Device processing speed, cycles per second.
    pub device_speed: f64,
    /// Cloudlet processing speed, cycles per second.
    pub cloud_speed: f64,
    /// Object size, bytes.
    pub object_size: f64,
    /// Channel rate factor `r`.
    pub channel_rate: f64,
    /// Link bandwidth, bytes per second.
    pub bandwidth: f64,
    /// Accuracy/delay weight in `[0, 1]`.
    pub zeta: f64,
    /// Share the link by airtime among offloading devices.
    pub csma: bool,
}

impl DelayModelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cycles_per_task", self.cycles_per_task),
            ("device_speed", self.device_speed),
            ("cloud_speed", self.cloud_speed),
            ("object_size", self.object_size),
            ("channel_rate", self.channel_rate),
            ("bandwidth", self.bandwidth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("{v} must be > 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(invalid("zeta", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Risk-adjusted improvement `max(0, phi_pred - v * sigma)`.
pub fn compute_gain(phi_pred: f64, sigma: f64, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&phi_pred) {
        return Err(invalid("phi_pred", format!("{phi_pred} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(invalid("sigma", format!("{sigma} outside [0, 1]")));
    }
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid("v", format!("{v} must be >= 0")));
    }
    // A cloudlet that is not expected to help gets zero weight.
    Ok((phi_pred - v * sigma).max(0.0))
}

fn check_shapes(policy: &PolicyTable, dist: &StateDistribution, table: &StateTable) -> Result<()> {
    let n = table.num_devices();
    for (what, got) in [("policy rows", policy.num_devices()), ("distribution rows", dist.num_devices())] {
        if got != n {
            return Err(Error::DimensionMismatch { what, expected: n, got });
        }
    }
    for (i, g) in table.devices.iter().enumerate() {
        let k = g.num_states();
        if policy.row(i).len() != k {
            return Err(Error::DimensionMismatch {
                what: "policy row",
                expected: k,
                got: policy.row(i).len(),
            });
        }
        if dist.row(i).len() != k {
            return Err(Error::DimensionMismatch {
                what: "distribution row",
                expected: k,
                got: dist.row(i).len(),
            });
        }
    }
    Ok(())
}

/// Expected accuracy improvement `sum_n sum_k w y rho`. The minimization form
/// used by the bound evaluator is its negation.
pub fn objective_value(policy: &PolicyTable, dist: &StateDistribution, table: &StateTable) -> Result<f64> {
    check_shapes(policy, dist, table)?;
    let mut total = 0.0;
    for (n, grid) in table.devices.iter().enumerate() {
        for k in 1..grid.num_states() {
            let (_, _, w) = grid.values(k);
            total += w * policy.get(n, k) * dist.prob(n, k);
        }
    }
    Ok(total)
}

/// Constraint functions `g(y)`: one entry per device power budget, then the
/// cloudlet capacity, then the link capacity for the bandwidth variant.
/// Non-positive entries mean the constraint is met.
pub fn constraint_values(
    policy: &PolicyTable,
    dist: &StateDistribution,
    table: &StateTable,
    budgets: &ResourceBudgets,
    variant: ConstraintVariant,
) -> Result<Vec<f64>> {
    check_shapes(policy, dist, table)?;
    let n_dev = table.num_devices();
    let costs = VariantCosts::new(budgets, variant, n_dev)?;
    let mut g = vec![0.0; costs.num_constraints(n_dev)];
    let mut cloud = 0.0;
    let mut link = 0.0;
    for (n, grid) in table.devices.iter().enumerate() {
        let nu = costs.local_power[n];
        let mut power = 0.0;
        for k in 1..grid.num_states() {
            let (o, h, _) = grid.values(k);
            let y = policy.get(n, k);
            let rho = dist.prob(n, k);
            power += (y * o + (1.0 - y) * nu) * rho;
            cloud += y * h * rho;
            link += y * costs.link_size[n] * rho;
        }
        g[n] = power - budgets.power[n];
    }
    g[n_dev] = cloud - budgets.cloudlet;
    if let Some(cap) = costs.link_capacity {
        g[n_dev + 1] = link - cap;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state_instance() -> (StateTable, StateDistribution) {
        let grid = DeviceGrid::new(vec![1.0], vec![1.0], vec![0.2, 0.8]).unwrap();
        let table = StateTable::new(vec![grid]).unwrap();
        let dist = StateDistribution::new(vec![vec![0.0, 0.5, 0.5]]).unwrap();
        (table, dist)
    }

    #[test]
    fn gain_examples() {
        assert_abs_diff_eq!(compute_gain(0.4, 0.2, 1.0).unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(compute_gain(0.1, 0.3, 1.0).unwrap(), 0.0);
        assert_eq!(compute_gain(0.5, 0.9, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn gain_rejects_out_of_range() {
        assert!(compute_gain(1.1, 0.1, 1.0).is_err());
        assert!(compute_gain(0.5, -0.1, 1.0).is_err());
        assert!(compute_gain(0.5, 0.1, -1.0).is_err());
    }

    #[test]
    fn objective_examples() {
        let (table, dist) = two_state_instance();
        let zero = PolicyTable::zeros(&table);
        assert_eq!(objective_value(&zero, &dist, &table).unwrap(), 0.0);
        let full = PolicyTable::ones(&table);
        assert_abs_diff_eq!(objective_value(&full, &dist, &table).unwrap(), 0.5, epsilon = 1e-15);
        // local states: 1 -> w = 0.2, 2 -> w = 0.8
        let mixed = PolicyTable::new(vec![vec![0.0, 0.5, 1.0]]).unwrap();
        assert_abs_diff_eq!(objective_value(&mixed, &dist, &table).unwrap(), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn objective_rejects_mismatched_shapes() {
        let (table, _) = two_state_instance();
        let bad = StateDistribution::new(vec![vec![1.0, 0.0]]).unwrap();
        let err = objective_value(&PolicyTable::zeros(&table), &bad, &table).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn constraint_examples() {
        let (table, dist) = two_state_instance();
        let budgets = ResourceBudgets::new(vec![0.75], 10.0).unwrap();
        let g = constraint_values(&PolicyTable::zeros(&table), &dist, &table, &budgets, ConstraintVariant::Standard)
            .unwrap();
        assert_eq!(g, vec![-0.75, -10.0]);

        let single = StateTable::new(vec![DeviceGrid::new(vec![1.0], vec![1.0], vec![0.5]).unwrap()]).unwrap();
        let rho = StateDistribution::new(vec![vec![0.0, 1.0]]).unwrap();
        let g = constraint_values(&PolicyTable::ones(&single), &rho, &single, &budgets, ConstraintVariant::Standard)
            .unwrap();
        assert_abs_diff_eq!(g[0], 0.25, epsilon = 1e-15);

        let mut b = ResourceBudgets::new(vec![0.5], 10.0).unwrap();
        b.local_power = Some(vec![0.3]);
        let g = constraint_values(&PolicyTable::zeros(&single), &rho, &single, &b, ConstraintVariant::OffloadFirst)
            .unwrap();
        assert_abs_diff_eq!(g[0], -0.2, epsilon = 1e-15);
    }

    #[test]
    fn variant_parameters_are_required() {
        let (table, dist) = two_state_instance();
        let budgets = ResourceBudgets::new(vec![0.75], 10.0).unwrap();
        let p = PolicyTable::zeros(&table);
        assert_eq!(
            constraint_values(&p, &dist, &table, &budgets, ConstraintVariant::Bandwidth).unwrap_err(),
            Error::MissingVariantParameter("link")
        );
        assert_eq!(
            constraint_values(&p, &dist, &table, &budgets, ConstraintVariant::OffloadFirst).unwrap_err(),
            Error::MissingVariantParameter("local_power")
        );
    }

    #[test]
    fn bandwidth_adds_link_row() {
        let (table, dist) = two_state_instance();
        let mut budgets = ResourceBudgets::new(vec![0.75], 10.0).unwrap();
        budgets.link = Some(LinkBudget {
            capacity: 2.0,
            object_size: vec![3.0],
        });
        let g = constraint_values(&PolicyTable::ones(&table), &dist, &table, &budgets, ConstraintVariant::Bandwidth)
            .unwrap();
        assert_eq!(g.len(), 3);
        assert_abs_diff_eq!(g[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn grid_validation() {
        assert!(DeviceGrid::new(vec![], vec![1.0], vec![0.1]).is_err());
        assert!(DeviceGrid::new(vec![0.2, 0.1], vec![1.0], vec![0.1]).is_err());
        assert!(DeviceGrid::new(vec![0.1], vec![1.0], vec![0.1, 1.2]).is_err());
        assert!(DeviceGrid::new(vec![-0.1], vec![1.0], vec![0.1]).is_err());
        assert!(ResourceBudgets::new(vec![-1.0], 1.0).is_err());
        assert!(ResourceBudgets::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn state_indexing_round_trips() {
        let g = DeviceGrid::new(vec![0.1, 0.2], vec![1.0, 2.0, 3.0], vec![0.0, 0.5]).unwrap();
        assert_eq!(g.num_states(), 13);
        for k in 0..g.num_states() {
            assert_eq!(g.state_index(&g.state_at(k)).unwrap(), k);
        }
        assert_eq!(g.values(0), (0.0, 0.0, 0.0));
        let s = DeviceState::task(1, 2, 1);
        assert_eq!(g.values(g.state_index(&s).unwrap()), (0.2, 3.0, 0.5));
        assert!(g.state_index(&DeviceState::task(2, 0, 0)).is_err());
    }

    #[test]
    fn empirical_counts() {
        let g = DeviceGrid::new(vec![0.1], vec![1.0], vec![0.5]).unwrap();
        let table = StateTable::new(vec![g]).unwrap();
        let mut e = EmpiricalDistribution::new(&table);
        assert!(e.frequencies().is_none());
        for k in [0, 0, 1] {
            e.observe(&[k]).unwrap();
        }
        let f = e.frequencies().unwrap();
        assert_eq!(f.row(0), &[2.0 / 3.0, 1.0 / 3.0]);
        assert!(e.observe(&[2]).is_err());
        assert_eq!(e.slots(), 3);
    }

    #[test]
    fn empirical_single_observation_is_point_mass() {
        let g = DeviceGrid::new(vec![0.1], vec![1.0], vec![0.2, 0.5]).unwrap();
        let table = StateTable::new(vec![g]).unwrap();
        let mut e = EmpiricalDistribution::new(&table);
        e.observe(&[2]).unwrap();
        assert_eq!(e.frequencies().unwrap().row(0), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn slater_point_is_strictly_feasible() {
        let (table, dist) = two_state_instance();
        let budgets = ResourceBudgets::new(vec![0.3], 0.7).unwrap();
        let g = constraint_values(&PolicyTable::zeros(&table), &dist, &table, &budgets, ConstraintVariant::Standard)
            .unwrap();
        assert!(g.iter().all(|x| *x < 0.0));
    }
}
