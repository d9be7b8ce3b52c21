//! The online policy: threshold rule, projected dual updates and step sizes.
//!
//! A device offloads a task when its (possibly delay-penalized) gain beats
//! the resource price `λ_n (o - ν_n) + μ h + κ ℓ_n`. Ties keep the task local.
//!
//! Within a cost cell `(o, h)` the rule is monotone in the gain, so the
//! policy row of a device is a set of per-cell cut indices into the sorted
//! gain grid: every gain level at or above the cut offloads. [`StateCounts`]
//! keeps per-cell suffix sums of the state counts so loads under the current
//! policy cost one pass over the cells instead of one over all states.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::model::{
    DeviceGrid, DeviceState, DualVector, PolicyTable, ResourceBudgets, StateDistribution, StateTable, VariantCosts,
    IDLE_STATE,
};
use crate::process::DelayTerms;

/// Dual step sizes `a_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum StepSchedule {
    Constant { a: f64 },
    /// `a / t^beta`
    PowerDecay { a: f64, beta: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { a } | StepSchedule::PowerDecay { a, .. } if !(a.is_finite() && a > 0.0) => {
                Err(invalid("step.a", "base step must be > 0"))
            }
            StepSchedule::PowerDecay { beta, .. } if !(beta > 0.0 && beta <= 1.0) => {
                Err(invalid("step.beta", "decay exponent must lie in (0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// `a_t` for `t >= 1`.
    pub fn step_size(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::ZeroSlot);
        }
        Ok(self.step_unchecked(t))
    }

    fn step_unchecked(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { a } => a,
            StepSchedule::PowerDecay { a, beta } => {
                if beta == 0.5 {
                    a / libm::sqrt(t as f64)
                } else {
                    a / libm::pow(t as f64, beta)
                }
            }
        }
    }

    /// `a_{t-1}` with the convention `a_0 = a_1`.
    pub fn previous_step(&self, t: u64) -> f64 {
        self.step_unchecked(t.saturating_sub(1).max(1))
    }

    pub fn first_step(&self) -> f64 {
        self.step_unchecked(1)
    }
}

/// Which gain the threshold rule compares against the resource price.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum RuleVariant {
    #[default]
    AccuracyOnly,
    /// Gain minus `zeta` times the extra delay of offloading.
    DelayAware { zeta: f64 },
}

impl RuleVariant {
    /// Amount subtracted from every gain of a device this slot.
    pub fn penalty(&self, delay: Option<&DelayTerms>) -> f64 {
        match (self, delay) {
            (RuleVariant::DelayAware { zeta }, Some(d)) => zeta * d.offload_overhead(),
            _ => 0.0,
        }
    }
}

/// The threshold test itself; every decision in the crate goes through it.
#[inline]
pub fn offloads(w: f64, penalty: f64, price: f64) -> bool {
    w - penalty > price
}

/// Resource price of offloading a task with costs `(o, h)` from device `n`.
#[inline]
pub fn state_price(dual: &DualVector, costs: &VariantCosts, n: usize, o: f64, h: f64) -> f64 {
    dual.lambda[n] * (o - costs.local_power[n]) + dual.mu * h + dual.link * costs.link_size[n]
}

/// Decision for one observed state. Idle slots never offload.
pub fn offload_decide(
    dual: &DualVector,
    n: usize,
    state: &DeviceState,
    grid: &DeviceGrid,
    costs: &VariantCosts,
    penalty: f64,
) -> Result<bool> {
    if !state.has_task {
        return Ok(false);
    }
    let k = grid.state_index(state)?;
    let (o, h, w) = grid.values(k);
    Ok(offloads(w, penalty, state_price(dual, costs, n, o, h)))
}

/// `[x + a g]^+`
#[inline]
pub fn projected_step(x: f64, step: f64, g: f64) -> f64 {
    (x + step * g).max(0.0)
}

/// Power multiplier update given the device's load under the current policy.
pub fn device_dual_update(lambda: f64, step: f64, load: f64, budget: f64) -> f64 {
    projected_step(lambda, step, load - budget)
}

/// Cloudlet multiplier update given the total expected cycle load.
pub fn cloudlet_dual_update(mu: f64, step: f64, load: f64, capacity: f64) -> f64 {
    projected_step(mu, step, load - capacity)
}

/// Offloading decision of the rule for every local state of device `n`.
pub fn policy_row_from_rule(
    dual: &DualVector,
    n: usize,
    grid: &DeviceGrid,
    costs: &VariantCosts,
    penalty: f64,
) -> Vec<f64> {
    let mut row = vec![0.0; grid.num_states()];
    for (k, y) in row.iter_mut().enumerate().skip(1) {
        let (o, h, w) = grid.values(k);
        if offloads(w, penalty, state_price(dual, costs, n, o, h)) {
            *y = 1.0;
        }
    }
    row
}

/// Rule applied to every device.
pub fn policy_from_rule(dual: &DualVector, table: &StateTable, costs: &VariantCosts, penalties: &[f64]) -> PolicyTable {
    let rows = table
        .devices
        .iter()
        .enumerate()
        .map(|(n, g)| policy_row_from_rule(dual, n, g, costs, penalties[n]))
        .collect();
    PolicyTable::new(rows).expect("rule rows are binary")
}

/// Expected power load `Σ (y o + (1 - y) ν) ρ` of one device.
pub fn expected_device_load(row_y: &[f64], row_rho: &[f64], grid: &DeviceGrid, local_power: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..grid.num_states() {
        let (o, _, _) = grid.values(k);
        s += (row_y[k] * o + (1.0 - row_y[k]) * local_power) * row_rho[k];
    }
    s
}

/// Expected cycle load `Σ_n Σ y h ρ` at the cloudlet.
pub fn expected_cloud_load(policy: &PolicyTable, dist: &StateDistribution, table: &StateTable) -> f64 {
    let mut s = 0.0;
    for (n, g) in table.devices.iter().enumerate() {
        for k in 1..g.num_states() {
            let (_, h, _) = g.values(k);
            s += policy.get(n, k) * h * dist.prob(n, k);
        }
    }
    s
}

/// Cost cells of one device in the form the fast path needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCells {
    /// `o - ν` per cell.
    pub net_power: Vec<f64>,
    pub cycles: Vec<f64>,
    pub gains: Vec<f64>,
    pub local_power: f64,
    pub link_size: f64,
}

impl DeviceCells {
    pub fn new(grid: &DeviceGrid, costs: &VariantCosts, n: usize) -> Self {
        let nu = costs.local_power[n];
        let cells = grid.num_cells();
        let mut net_power = Vec::with_capacity(cells);
        let mut cycles = Vec::with_capacity(cells);
        for c in 0..cells {
            let (o, h) = grid.cell_costs(c);
            net_power.push(o - nu);
            cycles.push(h);
        }
        Self {
            net_power,
            cycles,
            gains: grid.w_values.clone(),
            local_power: nu,
            link_size: costs.link_size[n],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.net_power.len()
    }

    /// Local state index of `(cell, gain level)`.
    #[inline]
    pub fn state(&self, cell: usize, w_level: usize) -> usize {
        1 + cell * self.gains.len() + w_level
    }

    /// Price of a cell given the device's multipliers.
    #[inline]
    pub fn price(&self, lambda: f64, mu: f64, link: f64, cell: usize) -> f64 {
        lambda * self.net_power[cell] + mu * self.cycles[cell] + link * self.link_size
    }

    /// First gain level that offloads in each cell.
    pub fn cuts_into(&self, lambda: f64, mu: f64, link: f64, penalty: f64, out: &mut Vec<usize>) {
        out.clear();
        for c in 0..self.num_cells() {
            let price = self.price(lambda, mu, link, c);
            out.push(self.gains.partition_point(|&w| !offloads(w, penalty, price)));
        }
    }

    /// Decision for local state `k` under `cuts`.
    #[inline]
    pub fn decide(&self, cuts: &[usize], k: usize) -> bool {
        match k.checked_sub(1) {
            None => false,
            Some(i) => {
                let nw = self.gains.len();
                i % nw >= cuts[i / nw]
            }
        }
    }

    /// Number of offloading states under `cuts`.
    pub fn offloading_states(&self, cuts: &[usize]) -> usize {
        cuts.iter().map(|&c| self.gains.len() - c).sum()
    }

    /// Expand cuts into a full binary policy row.
    pub fn row_from_cuts(&self, cuts: &[usize]) -> Vec<f64> {
        let nw = self.gains.len();
        let mut row = vec![0.0; 1 + self.num_cells() * nw];
        for (c, &cut) in cuts.iter().enumerate() {
            for wl in cut..nw {
                row[self.state(c, wl)] = 1.0;
            }
        }
        row
    }
}

/// Integer state counts of one device with per-cell suffix sums over the
/// gain levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateCounts {
    counts: Vec<u64>,
    /// `suffix[c][i]` = count of cell `c` states with gain level `>= i`.
    suffix: Vec<Vec<u64>>,
    tasks: u64,
    slots: u64,
    levels: usize,
}

impl StateCounts {
    pub fn new(grid: &DeviceGrid) -> Self {
        let nw = grid.num_gain_levels();
        Self {
            counts: vec![0; grid.num_states()],
            suffix: vec![vec![0; nw + 1]; grid.num_cells()],
            tasks: 0,
            slots: 0,
            levels: nw,
        }
    }

    /// Rebuild from raw counts.
    pub fn from_counts(grid: &DeviceGrid, counts: &[u64]) -> Result<Self> {
        if counts.len() != grid.num_states() {
            return Err(Error::DimensionMismatch {
                what: "state counts",
                expected: grid.num_states(),
                got: counts.len(),
            });
        }
        let mut s = Self::new(grid);
        s.counts.copy_from_slice(counts);
        let nw = s.levels;
        for (c, suf) in s.suffix.iter_mut().enumerate() {
            for wl in (0..nw).rev() {
                suf[wl] = suf[wl + 1] + counts[1 + c * nw + wl];
            }
            s.tasks += suf[0];
        }
        s.slots = s.tasks + counts[IDLE_STATE];
        Ok(s)
    }

    pub fn observe(&mut self, k: usize) -> Result<()> {
        if k >= self.counts.len() {
            return Err(Error::LevelOutOfRange {
                dimension: "local state",
                level: k,
                size: self.counts.len(),
            });
        }
        self.counts[k] += 1;
        self.slots += 1;
        if k != IDLE_STATE {
            let c = (k - 1) / self.levels;
            let wl = (k - 1) % self.levels;
            for v in &mut self.suffix[c][..=wl] {
                *v += 1;
            }
            self.tasks += 1;
        }
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    pub fn tasks(&self) -> u64 {
        self.tasks
    }

    #[inline]
    pub fn suffix(&self, cell: usize, cut: usize) -> u64 {
        self.suffix[cell][cut]
    }

    /// Offloaded-state count sums under `cuts`: `(Σ (o-ν) n, Σ h n, Σ n)`.
    pub fn offloaded_sums(&self, cells: &DeviceCells, cuts: &[usize]) -> (f64, f64, f64) {
        let (mut p, mut h, mut m) = (0.0, 0.0, 0.0);
        for (c, &cut) in cuts.iter().enumerate() {
            let s = self.suffix[c][cut];
            if s != 0 {
                let s = s as f64;
                p += cells.net_power[c] * s;
                h += cells.cycles[c] * s;
                m += s;
            }
        }
        (p, h, m)
    }

    /// Empirical power load of the device under `cuts`.
    pub fn power_load(&self, cells: &DeviceCells, cuts: &[usize]) -> f64 {
        let (p, _, _) = self.offloaded_sums(cells, cuts);
        (p + cells.local_power * self.tasks as f64) / self.slots as f64
    }
}

/// Power, cycles and link load of one realized slot: `(y(o-ν)+ν, y h, y ℓ)`
/// for a task, zeros when idle.
pub fn realized_loads(cells: &DeviceCells, k: usize, offloaded: bool) -> (f64, f64, f64) {
    match k.checked_sub(1) {
        None => (0.0, 0.0, 0.0),
        Some(idx) => {
            let c = idx / cells.gains.len();
            let y = if offloaded { 1.0 } else { 0.0 };
            (y * cells.net_power[c] + cells.local_power, y * cells.cycles[c], y * cells.link_size)
        }
    }
}

/// Which constraint signal drives the dual updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum DualSignal {
    /// Full policy row weighted by the running state frequencies.
    #[default]
    Expected,
    /// Only this slot's realized decision and state.
    Realized,
}

/// Centralized OnAlgo state covering every device.
#[derive(Debug, Clone)]
pub struct OnAlgoState {
    pub dual: DualVector,
    pub counts: Vec<StateCounts>,
    pub t: u64,
    pub schedule: StepSchedule,
    pub rule: RuleVariant,
    pub signal: DualSignal,
    cells: Vec<DeviceCells>,
    budgets: ResourceBudgets,
    link_capacity: Option<f64>,
    cuts: Vec<Vec<usize>>,
}

/// Per-slot loads computed from the policy used in that slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotLoads {
    pub device_power: Vec<f64>,
    pub cloud: f64,
    pub link: f64,
}

impl OnAlgoState {
    pub fn new(
        table: &StateTable,
        budgets: &ResourceBudgets,
        costs: &VariantCosts,
        schedule: StepSchedule,
        rule: RuleVariant,
    ) -> Result<Self> {
        schedule.validate()?;
        budgets.validate(table.num_devices())?;
        let n = table.num_devices();
        Ok(Self {
            dual: DualVector::zeros(n),
            counts: table.devices.iter().map(StateCounts::new).collect(),
            t: 0,
            schedule,
            rule,
            signal: DualSignal::Expected,
            cells: table
                .devices
                .iter()
                .enumerate()
                .map(|(i, g)| DeviceCells::new(g, costs, i))
                .collect(),
            budgets: budgets.clone(),
            link_capacity: costs.link_capacity,
            cuts: vec![Vec::new(); n],
        })
    }

    pub fn cells(&self, n: usize) -> &DeviceCells {
        &self.cells[n]
    }

    /// Cuts of the current slot's policy (valid after [`Self::prepare`]).
    pub fn cuts(&self, n: usize) -> &[usize] {
        &self.cuts[n]
    }

    pub fn all_cuts(&self) -> &[Vec<usize>] {
        &self.cuts
    }

    /// Fix the slot's policy from the current prices.
    pub fn prepare(&mut self, penalties: &[f64]) {
        for (n, cells) in self.cells.iter().enumerate() {
            cells.cuts_into(self.dual.lambda[n], self.dual.mu, self.dual.link, penalties[n], &mut self.cuts[n]);
        }
    }

    /// Decision for local state `k` of device `n` under the prepared policy.
    pub fn decision(&self, n: usize, k: usize) -> bool {
        self.cells[n].decide(&self.cuts[n], k)
    }

    /// Record slot observations and apply the dual updates for the prepared
    /// policy. Returns the loads that drove the updates.
    pub fn observe_and_update(&mut self, states: &[usize], decisions: &[bool]) -> Result<SlotLoads> {
        if states.len() != self.counts.len() || decisions.len() != self.counts.len() {
            return Err(Error::DimensionMismatch {
                what: "slot observations",
                expected: self.counts.len(),
                got: states.len().min(decisions.len()),
            });
        }
        for (c, &k) in self.counts.iter_mut().zip(states) {
            c.observe(k)?;
        }
        self.t += 1;
        let a = self.schedule.step_size(self.t)?;
        let n = self.counts.len();
        let mut loads = SlotLoads {
            device_power: vec![0.0; n],
            cloud: 0.0,
            link: 0.0,
        };
        let mut cloud_sum = 0.0;
        let mut link_sum = 0.0;
        for i in 0..n {
            let cells = &self.cells[i];
            match self.signal {
                DualSignal::Expected => {
                    let (p, h, m) = self.counts[i].offloaded_sums(cells, &self.cuts[i]);
                    let t = self.counts[i].slots() as f64;
                    loads.device_power[i] = (p + cells.local_power * self.counts[i].tasks() as f64) / t;
                    cloud_sum += h;
                    link_sum += m * cells.link_size;
                }
                DualSignal::Realized => {
                    let (p, h, l) = realized_loads(cells, states[i], decisions[i]);
                    loads.device_power[i] = p;
                    cloud_sum += h;
                    link_sum += l;
                }
            }
        }
        let denom = match self.signal {
            DualSignal::Expected => self.t as f64,
            DualSignal::Realized => 1.0,
        };
        loads.cloud = cloud_sum / denom;
        loads.link = link_sum / denom;
        for i in 0..n {
            self.dual.lambda[i] = device_dual_update(self.dual.lambda[i], a, loads.device_power[i], self.budgets.power[i]);
        }
        self.dual.mu = cloudlet_dual_update(self.dual.mu, a, loads.cloud, self.budgets.cloudlet);
        if let Some(cap) = self.link_capacity {
            self.dual.link = projected_step(self.dual.link, a, loads.link - cap);
        }
        Ok(loads)
    }

    /// One full slot: prepare the policy, decide, observe and update.
    pub fn step(&mut self, states: &[usize], penalties: &[f64]) -> Result<Vec<bool>> {
        self.prepare(penalties);
        let decisions: Vec<bool> = states.iter().enumerate().map(|(n, &k)| self.decision(n, k)).collect();
        self.observe_and_update(states, &decisions)?;
        Ok(decisions)
    }
}
