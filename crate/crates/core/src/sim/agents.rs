use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::metrics::{DeviceSlot, Metrics, SlotRecord, Trajectory};
use super::{admit_tasks, AdmissionGate, Episode, Policy, RunOptions, Scenario};
use crate::baselines::{ato_decide, rco_decide, EnergyLedger};
use crate::error::{Error, Result};
use crate::model::{DelayModelParams, DeviceGrid, DeviceState, DualVector, ResourceBudgets};
use crate::onalgo::{device_dual_update, realized_loads, DeviceCells, DualSignal, OnAlgoState, RuleVariant, StateCounts, StepSchedule};
use crate::oracle::{BoundTracker, SlotInput};
use crate::process::{csma_shares, delay_components, DelayTerms, DeviceProcess};

/// What a device tells the cloudlet about slot `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateReport {
    pub t: u64,
    pub device: usize,
    pub has_task: bool,
    pub o_level: usize,
    pub h_level: usize,
    pub w_level: usize,
    pub decision: bool,
    /// Local classifier confidence, for accuracy accounting.
    pub d_local: f64,
    /// Realized improvement if the cloudlet serves the task.
    pub phi: f64,
}

impl StateReport {
    pub fn state(&self) -> DeviceState {
        if self.has_task {
            DeviceState::task(self.o_level, self.h_level, self.w_level)
        } else {
            DeviceState::IDLE
        }
    }
}

/// What the cloudlet sends one device after slot `t` (`t = 0` starts the run).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Broadcast {
    pub t: u64,
    pub device: usize,
    /// Cloudlet price for the next slot.
    pub mu: f64,
    /// Link price for the next slot.
    pub link: f64,
    /// Airtime share for the next slot.
    pub share: f64,
    /// Updated `(local state, count)` entries of the recipient's state counts.
    pub digest: Vec<(usize, u64)>,
}

fn delay_terms(params: Option<&DelayModelParams>, share: f64) -> Result<Option<DelayTerms>> {
    params.map(|p| delay_components(p, share)).transpose()
}

/// Device half of a run.
#[derive(Debug, Clone)]
pub struct DeviceAgent {
    id: usize,
    policy: Policy,
    process: DeviceProcess,
    grid: DeviceGrid,
    cells: DeviceCells,
    raw: Vec<u64>,
    counts: StateCounts,
    schedule: StepSchedule,
    rule: RuleVariant,
    signal: DualSignal,
    delay: Option<DelayModelParams>,
    budget: f64,
    lambda: f64,
    mu: f64,
    link: f64,
    share: f64,
    t: u64,
    started: bool,
    ledger: EnergyLedger,
    cuts: Vec<usize>,
    pending: Option<(usize, bool)>,
}

impl DeviceAgent {
    pub fn new(scenario: &Scenario, id: usize, policy: Policy, seed: u64) -> Result<Self> {
        policy.validate()?;
        let setup = scenario.devices.get(id).ok_or(Error::DimensionMismatch {
            what: "device id",
            expected: scenario.num_devices(),
            got: id,
        })?;
        let costs = scenario.costs()?;
        Ok(Self {
            id,
            policy,
            process: DeviceProcess::new(id, seed, &setup.process, &setup.grid, setup.outcome.clone())?,
            cells: DeviceCells::new(&setup.grid, &costs, id),
            raw: vec![0; setup.grid.num_states()],
            counts: StateCounts::new(&setup.grid),
            grid: setup.grid.clone(),
            schedule: scenario.schedule,
            rule: scenario.rule,
            signal: scenario.signal,
            delay: setup.delay.clone(),
            budget: scenario.budgets.power[id],
            lambda: 0.0,
            mu: 0.0,
            link: 0.0,
            share: 1.0,
            t: 0,
            started: false,
            ledger: EnergyLedger::new(),
            cuts: Vec::new(),
            pending: None,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    /// Draw the next slot and decide.
    pub fn begin_slot(&mut self) -> Result<StateReport> {
        let t = self.t + 1;
        if !self.started || self.pending.is_some() {
            return Err(Error::Desync { device: self.id, slot: t });
        }
        let draw = self.process.next_state(t)?;
        let k = self.grid.state_index(&draw.state)?;
        let has_task = draw.state.has_task;
        let decision = match self.policy {
            Policy::OnAlgo => {
                let terms = delay_terms(self.delay.as_ref(), self.share)?;
                let pen = self.rule.penalty(terms.as_ref());
                self.cells.cuts_into(self.lambda, self.mu, self.link, pen, &mut self.cuts);
                self.cells.decide(&self.cuts, k)
            }
            Policy::Ato { threshold } => has_task && ato_decide(draw.outcome.d_local, threshold),
            Policy::Rco => has_task && rco_decide(&self.ledger, self.grid.values(k).0, self.budget),
            Policy::Ocos => has_task,
        };
        self.pending = Some((k, decision));
        Ok(StateReport {
            t,
            device: self.id,
            has_task,
            o_level: draw.state.o_level,
            h_level: draw.state.h_level,
            w_level: draw.state.w_level,
            decision,
            d_local: draw.outcome.d_local,
            phi: draw.outcome.phi,
        })
    }

    /// Close the pending slot with the cloudlet's reply.
    pub fn apply_broadcast(&mut self, b: &Broadcast) -> Result<()> {
        if b.device != self.id {
            return Err(Error::UnexpectedReport(alloc::format!(
                "broadcast for device {} delivered to device {}",
                b.device,
                self.id
            )));
        }
        if b.t == 0 {
            if self.started {
                return Err(Error::Desync { device: self.id, slot: 0 });
            }
            self.started = true;
        } else {
            let Some((k, decision)) = self.pending.take() else {
                return Err(Error::Desync { device: self.id, slot: b.t });
            };
            if b.t != self.t + 1 {
                return Err(Error::Desync { device: self.id, slot: b.t });
            }
            self.t = b.t;
            for &(s, c) in &b.digest {
                let slot = self.raw.get_mut(s).ok_or(Error::LevelOutOfRange {
                    dimension: "local state",
                    level: s,
                    size: self.grid.num_states(),
                })?;
                *slot = c;
            }
            self.counts = StateCounts::from_counts(&self.grid, &self.raw)?;
            if self.counts.slots() != self.t {
                return Err(Error::Desync { device: self.id, slot: b.t });
            }
            let (spent, _, _) = realized_loads(&self.cells, k, decision);
            self.ledger.record(spent);
            if self.policy == Policy::OnAlgo {
                let a = self.schedule.step_size(self.t)?;
                let load = match self.signal {
                    DualSignal::Expected => self.counts.power_load(&self.cells, &self.cuts),
                    DualSignal::Realized => spent,
                };
                self.lambda = device_dual_update(self.lambda, a, load, self.budget);
            }
        }
        self.mu = b.mu;
        self.link = b.link;
        self.share = b.share;
        Ok(())
    }
}

/// Cloudlet half of a run: admission, bookkeeping, the cloudlet price, and a
/// shadow copy of every device's multiplier used to check that the devices
/// follow the rule.
#[derive(Debug, Clone)]
pub struct CloudletAgent {
    scenario_name: String,
    policy: Policy,
    seed: u64,
    grids: Vec<DeviceGrid>,
    cells: Vec<DeviceCells>,
    raw: Vec<Vec<u64>>,
    delay: Vec<Option<DelayModelParams>>,
    rule: RuleVariant,
    budgets: ResourceBudgets,
    link_capacity: Option<f64>,
    gate: AdmissionGate,
    tokens: f64,
    shadow: OnAlgoState,
    tracker: Option<BoundTracker>,
    csma: bool,
    shares: Vec<f64>,
    penalties: Vec<f64>,
    t: u64,
    metrics: Metrics,
    trajectory: Trajectory,
    record: bool,
    started: bool,
    states: Vec<usize>,
    decisions: Vec<bool>,
}

impl CloudletAgent {
    pub fn new(scenario: &Scenario, policy: Policy, seed: u64, options: RunOptions) -> Result<Self> {
        scenario.validate()?;
        policy.validate()?;
        let n = scenario.num_devices();
        let table = scenario.table()?;
        let costs = scenario.costs()?;
        let mut shadow = OnAlgoState::new(&table, &scenario.budgets, &costs, scenario.schedule, scenario.rule)?;
        shadow.signal = scenario.signal;
        let cells: Vec<DeviceCells> = (0..n).map(|i| DeviceCells::new(table.device(i), &costs, i)).collect();
        let csma = scenario.csma();
        let tracker = match (&options.oracle, policy) {
            (Some(o), Policy::OnAlgo) if !csma && scenario.signal == DualSignal::Expected => Some(BoundTracker::new(
                &o.instance,
                o.objective_star,
                o.constants,
                scenario.schedule,
                options.checkpoints.clone(),
            )?),
            _ => None,
        };
        let shares = if csma {
            let mut cuts = Vec::new();
            let sums: Vec<[f64; 1]> = cells
                .iter()
                .map(|c| {
                    c.cuts_into(0.0, 0.0, 0.0, 0.0, &mut cuts);
                    [c.offloading_states(&cuts) as f64]
                })
                .collect();
            csma_shares(&sums)
        } else {
            vec![1.0; n]
        };
        let mut agent = Self {
            scenario_name: scenario.name.clone(),
            policy,
            seed,
            raw: table.devices.iter().map(|g| vec![0; g.num_states()]).collect(),
            grids: table.devices,
            cells,
            delay: scenario.devices.iter().map(|d| d.delay.clone()).collect(),
            rule: scenario.rule,
            budgets: scenario.budgets.clone(),
            link_capacity: costs.link_capacity,
            gate: scenario.gate,
            tokens: 0.0,
            shadow,
            tracker,
            csma,
            shares,
            penalties: vec![0.0; n],
            t: 0,
            metrics: Metrics::new(n),
            trajectory: Trajectory::default(),
            record: options.record_trajectory,
            started: false,
            states: vec![0; n],
            decisions: vec![false; n],
        };
        agent.refresh_penalties()?;
        Ok(agent)
    }

    pub fn num_devices(&self) -> usize {
        self.grids.len()
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    pub fn dual(&self) -> &DualVector {
        &self.shadow.dual
    }

    fn refresh_penalties(&mut self) -> Result<()> {
        for n in 0..self.grids.len() {
            let terms = delay_terms(self.delay[n].as_ref(), self.shares[n])?;
            self.penalties[n] = self.rule.penalty(terms.as_ref());
        }
        Ok(())
    }

    /// Start-of-run broadcasts (`t = 0`).
    pub fn start(&mut self) -> Vec<Broadcast> {
        self.started = true;
        (0..self.grids.len())
            .map(|n| Broadcast {
                t: 0,
                device: n,
                mu: self.shadow.dual.mu,
                link: self.shadow.dual.link,
                share: self.shares[n],
                digest: Vec::new(),
            })
            .collect()
    }

    /// Process all reports of the next slot, ordered by device.
    pub fn handle_slot(&mut self, reports: &[StateReport]) -> Result<Vec<Broadcast>> {
        let nd = self.grids.len();
        let t = self.t + 1;
        if !self.started {
            return Err(Error::UnexpectedReport(String::from("report before start")));
        }
        if reports.len() != nd {
            return Err(Error::DimensionMismatch {
                what: "slot reports",
                expected: nd,
                got: reports.len(),
            });
        }
        for (n, r) in reports.iter().enumerate() {
            if r.device != n || r.t != t {
                return Err(Error::UnexpectedReport(alloc::format!(
                    "expected slot {t} from device {n}, got slot {} from device {}",
                    r.t,
                    r.device
                )));
            }
            if r.decision && !r.has_task {
                return Err(Error::UnexpectedReport(alloc::format!("device {n} offloads without a task")));
            }
            self.states[n] = self.grids[n].state_index(&r.state())?;
            self.decisions[n] = r.decision;
        }

        let onalgo = self.policy == Policy::OnAlgo;
        if onalgo {
            self.shadow.prepare(&self.penalties);
            for n in 0..nd {
                if self.shadow.decision(n, self.states[n]) != self.decisions[n] {
                    return Err(Error::Desync { device: n, slot: t });
                }
            }
        }
        let before = if onalgo { Some(self.shadow.dual.clone()) } else { None };

        let capacity = self.budgets.cloudlet;
        let slot_capacity = match self.gate {
            AdmissionGate::PerSlot => capacity,
            AdmissionGate::TokenBucket { depth } => {
                self.tokens = (self.tokens + capacity).min(depth * capacity);
                self.tokens
            }
        };
        let requests: Vec<(usize, f64)> = (0..nd)
            .filter(|&n| self.decisions[n])
            .map(|n| (n, self.grids[n].values(self.states[n]).1))
            .collect();
        let served = admit_tasks(&requests, slot_capacity);

        let mut devices = Vec::with_capacity(nd);
        for (n, r) in reports.iter().enumerate() {
            let k = self.states[n];
            let (o, h, w) = self.grids[n].values(k);
            let is_served = served.contains(&n);
            let (power, _, _) = realized_loads(&self.cells[n], k, r.decision);
            let delay = match (r.has_task, delay_terms(self.delay[n].as_ref(), self.shares[n])?) {
                (true, Some(d)) => {
                    let mut v = d.local;
                    if r.decision {
                        v += d.transmission;
                    }
                    if is_served {
                        v += d.cloud;
                    }
                    Some(v)
                }
                _ => None,
            };
            devices.push(DeviceSlot {
                state_index: k,
                has_task: r.has_task,
                o,
                h,
                w,
                offloaded: r.decision,
                served: is_served,
                gain: if is_served { r.phi } else { 0.0 },
                power,
                d_local: r.d_local,
                link: if r.decision { self.cells[n].link_size } else { 0.0 },
                delay,
            });
        }
        if let AdmissionGate::TokenBucket { .. } = self.gate {
            for d in devices.iter().filter(|d| d.served) {
                self.tokens -= d.h;
            }
        }
        let record = SlotRecord {
            t,
            dual: before.clone(),
            devices,
        };
        self.metrics.record(&record);
        if self.record {
            self.trajectory.slots.push(record);
        }

        self.shadow.observe_and_update(&self.states, &self.decisions)?;
        if let (Some(tr), Some(before)) = (self.tracker.as_mut(), before.as_ref()) {
            tr.record(SlotInput {
                dual_before: before,
                dual_after: &self.shadow.dual,
                cuts: self.shadow.all_cuts(),
                counts: &self.shadow.counts,
                states: &self.states,
            })?;
        }
        for n in 0..nd {
            self.raw[n][self.states[n]] += 1;
        }
        if self.csma {
            let sums: Vec<[f64; 1]> = (0..nd)
                .map(|n| {
                    if onalgo {
                        [self.cells[n].offloading_states(self.shadow.cuts(n)) as f64]
                    } else {
                        [if self.decisions[n] { 1.0 } else { 0.0 }]
                    }
                })
                .collect();
            self.shares = csma_shares(&sums);
            self.refresh_penalties()?;
        }
        self.t = t;
        Ok((0..nd)
            .map(|n| Broadcast {
                t,
                device: n,
                mu: self.shadow.dual.mu,
                link: self.shadow.dual.link,
                share: self.shares[n],
                digest: vec![(self.states[n], self.raw[n][self.states[n]])],
            })
            .collect())
    }

    /// Close the run.
    pub fn finish(self) -> Result<Episode> {
        let mut trajectory = self.trajectory;
        trajectory.num_slots = self.t;
        trajectory.final_dual = if self.policy == Policy::OnAlgo {
            Some(self.shadow.dual.clone())
        } else {
            None
        };
        let summary = if self.t == 0 {
            None
        } else {
            Some(self.metrics.summary(
                &self.scenario_name,
                self.policy,
                self.seed,
                &self.budgets,
                self.link_capacity,
            ))
        };
        let bounds = self.tracker.map(|tr| tr.finish(&self.shadow.dual));
        Ok(Episode {
            trajectory,
            summary,
            bounds,
        })
    }
}
