//! Per-run evaluation of the optimality-gap and constraint-violation
//! guarantees, and of the lemmas they are built from.
//!
//! Sign conventions: `f = -(expected gain)`, `ε_t(y) = f_t(y) - f(y)`,
//! `δ_t(y) = g_t(y) - g(y)`, where the `_t` versions use the running
//! empirical distribution and the plain ones the true distribution. The
//! violation side is measured on the positive part of the averaged
//! constraint vector; satisfied constraints contribute nothing.
//!
//! [`BoundTracker`] is fed one slot at a time with the policy the slot used
//! (as per-cell cuts), the multipliers before and after the update, and the
//! running counts. It keeps all cumulative sums, checks both lemmas at every
//! slot and the two theorem inequalities at the requested checkpoints.

use alloc::vec;
use alloc::vec::Vec;

use super::{holds, positive_norm, zeros_like, BoundConstants, Instance};
use crate::error::{Error, Result};
use crate::model::DualVector;
use crate::onalgo::{DeviceCells, StateCounts, StepSchedule};

/// Inequalities evaluated at one horizon `T`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CheckpointReport {
    #[cfg_attr(feature = "serde", serde(rename = "T"))]
    pub t: u64,
    pub gap_lhs: f64,
    pub gap_rhs: f64,
    pub gap_holds: bool,
    pub viol_lhs: f64,
    pub viol_rhs: f64,
    pub viol_holds: bool,
    #[cfg_attr(feature = "serde", serde(rename = "C_T"))]
    pub c_t: f64,
    pub lambda_norm_max: f64,
    /// `σ_g² / (2T) Σ a_t`
    pub gap_step_sum: f64,
    /// `1/(2T) Σ ||λ_t||² (1/a_t - 1/a_{t-1})`
    pub gap_step_ratio: f64,
    /// `-||λ_{T+1}||² / (2 T a_T)`
    pub gap_terminal: f64,
    /// `||λ_{T+1}|| / (T a_T)`
    pub viol_terminal: f64,
    /// `1/T Σ ||λ_t|| (1/a_{t-1} - 1/a_t)`
    pub viol_step_ratio: f64,
    /// `1/T Σ ||δ_t(y_t)||`
    pub viol_delta: f64,
    /// Norm of the averaged constraint vector including satisfied entries.
    pub viol_full_norm: f64,
    /// Time-averaged constraint vector `1/T Σ g(y_t)`.
    pub avg_constraints: Vec<f64>,
}

/// Outcome of a per-slot inequality over a run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LemmaStatus {
    /// Smallest `rhs - lhs` seen.
    pub min_slack: f64,
    pub violations: u64,
    pub first_violation: Option<u64>,
}

impl Default for LemmaStatus {
    fn default() -> Self {
        Self {
            min_slack: f64::INFINITY,
            violations: 0,
            first_violation: None,
        }
    }
}

impl LemmaStatus {
    fn check(&mut self, t: u64, lhs: f64, rhs: f64) {
        self.min_slack = self.min_slack.min(rhs - lhs);
        if !holds(lhs, rhs) {
            self.violations += 1;
            self.first_violation.get_or_insert(t);
        }
    }

    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Everything the evaluator reports for one run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundReport {
    pub constants: BoundConstants,
    /// Offline optimum in minimization form, `f(y*)`.
    pub f_star: f64,
    pub checkpoints: Vec<CheckpointReport>,
    pub complementary_slackness: LemmaStatus,
    pub saddle_point: LemmaStatus,
    pub lambda_norm_max: f64,
    pub lambda_bound_holds: bool,
}

impl BoundReport {
    /// Every inequality held.
    pub fn all_hold(&self) -> bool {
        self.theorem_holds()
            && self.complementary_slackness.holds()
            && self.saddle_point.holds()
            && self.lambda_bound_holds
    }

    pub fn theorem_holds(&self) -> bool {
        self.checkpoints.iter().all(|c| c.gap_holds && c.viol_holds)
    }
}

/// One slot as seen by the evaluator.
#[derive(Debug, Clone, Copy)]
pub struct SlotInput<'a> {
    /// Multipliers that priced this slot's decisions.
    pub dual_before: &'a DualVector,
    /// Multipliers after this slot's update.
    pub dual_after: &'a DualVector,
    /// Offloading cuts per device and cell under `dual_before`.
    pub cuts: &'a [Vec<usize>],
    /// Counts including this slot.
    pub counts: &'a [StateCounts],
    /// Local state observed on each device this slot.
    pub states: &'a [usize],
}

#[derive(Debug, Clone)]
struct DeviceTruth {
    cells: DeviceCells,
    /// Per cell suffix sums of true probability and probability times gain.
    rho_suffix: Vec<Vec<f64>>,
    rho_gain_suffix: Vec<Vec<f64>>,
    task_prob: f64,
    /// Per cell suffix sums of counts times gain.
    count_gain_suffix: Vec<Vec<f64>>,
    gains: Vec<f64>,
    zero_prob: Vec<bool>,
    /// Zero-probability states that have been observed.
    seen_zero: Vec<usize>,
}

/// Incremental evaluator; see the module docs.
#[derive(Debug, Clone)]
pub struct BoundTracker {
    constants: BoundConstants,
    schedule: StepSchedule,
    f_star: f64,
    power: Vec<f64>,
    cloudlet: f64,
    link_capacity: Option<f64>,
    devices: Vec<DeviceTruth>,
    checkpoints: Vec<u64>,
    next_checkpoint: usize,

    t: u64,
    sum_f: f64,
    sum_g: Vec<f64>,
    sum_c: f64,
    sum_a: f64,
    sum_lsq_ratio: f64,
    sum_l_ratio: f64,
    sum_delta: f64,
    sum_neg_lambda_g: f64,
    sum_lagrangian: f64,
    sum_saddle_rhs: f64,
    lambda_norm_max: f64,
    last_step: f64,
    g_t: Vec<f64>,
    g: Vec<f64>,
    dz: Vec<f64>,

    reports: Vec<CheckpointReport>,
    slackness: LemmaStatus,
    saddle: LemmaStatus,
}

impl BoundTracker {
    /// `objective_star` is the offline optimum in maximization form.
    pub fn new(
        inst: &Instance,
        objective_star: f64,
        constants: BoundConstants,
        schedule: StepSchedule,
        mut checkpoints: Vec<u64>,
    ) -> Result<Self> {
        schedule.validate()?;
        checkpoints.sort_unstable();
        checkpoints.dedup();
        checkpoints.retain(|t| *t > 0);
        let mut devices = Vec::with_capacity(inst.table.num_devices());
        for (n, grid) in inst.table.devices.iter().enumerate() {
            let cells = DeviceCells::new(grid, &inst.costs, n);
            let nw = grid.num_gain_levels();
            let rho = inst.dist.row(n);
            let mut rho_suffix = vec![vec![0.0; nw + 1]; grid.num_cells()];
            let mut rho_gain_suffix = vec![vec![0.0; nw + 1]; grid.num_cells()];
            for c in 0..grid.num_cells() {
                for wl in (0..nw).rev() {
                    let k = cells.state(c, wl);
                    rho_suffix[c][wl] = rho_suffix[c][wl + 1] + rho[k];
                    rho_gain_suffix[c][wl] = rho_gain_suffix[c][wl + 1] + rho[k] * inst.gains[n][k];
                }
            }
            devices.push(DeviceTruth {
                rho_suffix,
                rho_gain_suffix,
                task_prob: inst.dist.task_prob(n),
                count_gain_suffix: vec![vec![0.0; nw + 1]; grid.num_cells()],
                gains: inst.gains[n].clone(),
                zero_prob: rho.iter().map(|p| *p <= 0.0).collect(),
                seen_zero: Vec::new(),
                cells,
            });
        }
        let zeros = zeros_like(inst);
        Ok(Self {
            constants,
            schedule,
            f_star: -objective_star,
            power: inst.budgets.power.clone(),
            cloudlet: inst.budgets.cloudlet,
            link_capacity: inst.costs.link_capacity,
            devices,
            checkpoints,
            next_checkpoint: 0,
            t: 0,
            sum_f: 0.0,
            sum_g: zeros.clone(),
            sum_c: 0.0,
            sum_a: 0.0,
            sum_lsq_ratio: 0.0,
            sum_l_ratio: 0.0,
            sum_delta: 0.0,
            sum_neg_lambda_g: 0.0,
            sum_lagrangian: 0.0,
            sum_saddle_rhs: 0.0,
            lambda_norm_max: 0.0,
            last_step: 0.0,
            g_t: zeros.clone(),
            g: zeros.clone(),
            dz: zeros,
            reports: Vec::new(),
            slackness: LemmaStatus::default(),
            saddle: LemmaStatus::default(),
        })
    }

    pub fn slots(&self) -> u64 {
        self.t
    }

    /// Feed one slot.
    pub fn record(&mut self, input: SlotInput<'_>) -> Result<()> {
        let nd = self.devices.len();
        if input.cuts.len() != nd || input.counts.len() != nd || input.states.len() != nd {
            return Err(Error::DimensionMismatch {
                what: "bound tracker slot",
                expected: nd,
                got: input.cuts.len().min(input.counts.len()).min(input.states.len()),
            });
        }
        self.t += 1;
        let t = self.t;
        let tf = t as f64;
        let lam = input.dual_before;

        let (mut emp_cloud, mut true_cloud, mut emp_cloud_z) = (0.0, 0.0, 0.0);
        let (mut emp_link, mut true_link, mut emp_link_z) = (0.0, 0.0, 0.0);
        let (mut f_emp, mut f_true, mut eps_diff) = (0.0, 0.0, 0.0);
        let mut f_emp_z = 0.0;

        for (n, dev) in self.devices.iter_mut().enumerate() {
            let k = input.states[n];
            if let Some(i) = k.checked_sub(1) {
                let nw = dev.cells.gains.len();
                let (c, wl) = (i / nw, i % nw);
                let g = dev.gains[k];
                for v in &mut dev.count_gain_suffix[c][..=wl] {
                    *v += g;
                }
                if dev.zero_prob[k] && !dev.seen_zero.contains(&k) {
                    dev.seen_zero.push(k);
                }
            }
            let counts = &input.counts[n];
            let cuts = &input.cuts[n];
            let cells = &dev.cells;
            let (mut ep, mut tp, mut eh, mut th, mut em, mut tm, mut ew, mut tw) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for (c, &cut) in cuts.iter().enumerate() {
                let s = counts.suffix(c, cut) as f64;
                let r = dev.rho_suffix[c][cut];
                ep += cells.net_power[c] * s;
                tp += cells.net_power[c] * r;
                eh += cells.cycles[c] * s;
                th += cells.cycles[c] * r;
                em += s;
                tm += r;
                ew += dev.count_gain_suffix[c][cut];
                tw += dev.rho_gain_suffix[c][cut];
            }
            // Offloaded states the true distribution never produces: in y but not in z.
            let (mut cp, mut ch, mut cm, mut cw) = (0.0, 0.0, 0.0, 0.0);
            for &k in &dev.seen_zero {
                let i = k - 1;
                let nw = cells.gains.len();
                let (c, wl) = (i / nw, i % nw);
                if wl >= cuts[c] {
                    let s = counts.counts()[k] as f64;
                    cp += cells.net_power[c] * s;
                    ch += cells.cycles[c] * s;
                    cm += s;
                    cw += dev.gains[k] * s;
                }
            }
            let fixed_emp = cells.local_power * counts.tasks() as f64;
            let fixed_true = cells.local_power * dev.task_prob;
            let load_t = (ep + fixed_emp) / tf;
            let load = tp + fixed_true;
            self.g_t[n] = load_t - self.power[n];
            self.g[n] = load - self.power[n];
            self.dz[n] = (ep - cp + fixed_emp) / tf - load;

            emp_cloud += eh;
            true_cloud += th;
            emp_cloud_z += eh - ch;
            emp_link += em * cells.link_size;
            true_link += tm * cells.link_size;
            emp_link_z += (em - cm) * cells.link_size;
            f_emp -= ew / tf;
            f_emp_z -= (ew - cw) / tf;
            f_true -= tw;
            eps_diff += cw / tf;
        }
        self.g_t[nd] = emp_cloud / tf - self.cloudlet;
        self.g[nd] = true_cloud - self.cloudlet;
        self.dz[nd] = emp_cloud_z / tf - true_cloud;
        if let Some(cap) = self.link_capacity {
            self.g_t[nd + 1] = emp_link / tf - cap;
            self.g[nd + 1] = true_link - cap;
            self.dz[nd + 1] = emp_link_z / tf - true_link;
        }

        let lam_g_t = lam.dot(&self.g_t);
        let lam_dz = lam.dot(&self.dz);
        let delta_y: f64 = libm::sqrt(self.g_t.iter().zip(&self.g).map(|(a, b)| (a - b) * (a - b)).sum());
        let eps_z = f_emp_z - f_true;

        let a = self.schedule.step_size(t)?;
        let a_prev = self.schedule.previous_step(t);
        let nrm = lam.norm();
        let after = input.dual_after.norm();
        self.lambda_norm_max = self.lambda_norm_max.max(nrm).max(after);

        self.sum_f += f_true;
        for (s, g) in self.sum_g.iter_mut().zip(&self.g) {
            *s += g;
        }
        self.sum_c += eps_diff + lam_dz;
        self.sum_a += a;
        self.last_step = a;
        self.sum_lsq_ratio += nrm * nrm * (1.0 / a - 1.0 / a_prev);
        self.sum_l_ratio += nrm * (1.0 / a_prev - 1.0 / a);
        self.sum_delta += delta_y;
        self.sum_neg_lambda_g -= lam_g_t;
        self.sum_lagrangian += f_emp + lam_g_t;
        self.sum_saddle_rhs += eps_z + lam_dz;

        let sg2 = self.constants.sigma_g * self.constants.sigma_g;
        let slackness_rhs = 0.5 * sg2 * self.sum_a + 0.5 * self.sum_lsq_ratio - after * after / (2.0 * a);
        self.slackness.check(t, self.sum_neg_lambda_g, slackness_rhs);
        self.saddle
            .check(t, self.sum_lagrangian / tf - self.f_star, self.sum_saddle_rhs / tf);

        while self.next_checkpoint < self.checkpoints.len() && self.checkpoints[self.next_checkpoint] < t {
            self.next_checkpoint += 1;
        }
        if self.next_checkpoint < self.checkpoints.len() && self.checkpoints[self.next_checkpoint] == t {
            let rep = self.checkpoint(a, after);
            self.reports.push(rep);
            self.next_checkpoint += 1;
        }
        Ok(())
    }

    fn checkpoint(&self, a_t: f64, after: f64) -> CheckpointReport {
        let tf = self.t as f64;
        let sg2 = self.constants.sigma_g * self.constants.sigma_g;
        let c_t = self.sum_c / tf;
        let gap_lhs = self.sum_f / tf - self.f_star;
        let gap_step_sum = sg2 * self.sum_a / (2.0 * tf);
        let gap_step_ratio = self.sum_lsq_ratio / (2.0 * tf);
        let gap_terminal = -after * after / (2.0 * tf * a_t);
        let gap_rhs = c_t + gap_step_sum + gap_step_ratio + gap_terminal;
        let avg: Vec<f64> = self.sum_g.iter().map(|s| s / tf).collect();
        let viol_lhs = positive_norm(&avg);
        let viol_terminal = after / (tf * a_t);
        let viol_step_ratio = self.sum_l_ratio / tf;
        let viol_delta = self.sum_delta / tf;
        let viol_rhs = viol_terminal + viol_step_ratio + viol_delta;
        CheckpointReport {
            t: self.t,
            gap_lhs,
            gap_rhs,
            gap_holds: holds(gap_lhs, gap_rhs),
            viol_lhs,
            viol_rhs,
            viol_holds: holds(viol_lhs, viol_rhs),
            c_t,
            lambda_norm_max: self.lambda_norm_max,
            gap_step_sum,
            gap_step_ratio,
            gap_terminal,
            viol_terminal,
            viol_step_ratio,
            viol_delta,
            viol_full_norm: libm::sqrt(avg.iter().map(|x| x * x).sum()),
            avg_constraints: avg,
        }
    }

    /// Close the run. The final slot is always reported as a checkpoint.
    pub fn finish(mut self, final_dual: &DualVector) -> BoundReport {
        if self.t > 0 && self.reports.last().map(|r| r.t) != Some(self.t) {
            let rep = self.checkpoint(self.last_step, final_dual.norm());
            self.reports.push(rep);
        }
        BoundReport {
            constants: self.constants,
            f_star: self.f_star,
            checkpoints: self.reports,
            complementary_slackness: self.slackness,
            saddle_point: self.saddle,
            lambda_norm_max: self.lambda_norm_max,
            lambda_bound_holds: holds(self.lambda_norm_max, self.constants.lambda_max),
        }
    }
}

/// Evaluate a recorded run from scratch. `penalties` are the per-device
/// delay penalties the run used (zeros for the accuracy-only rule) and
/// `inst` must carry the matching effective gains.
pub fn theorem1_report(
    trajectory: &crate::sim::Trajectory,
    inst: &Instance,
    penalties: &[f64],
    objective_star: f64,
    constants: BoundConstants,
    schedule: StepSchedule,
    checkpoints: Vec<u64>,
) -> Result<BoundReport> {
    let mut tracker = BoundTracker::new(inst, objective_star, constants, schedule, checkpoints)?;
    let nd = inst.table.num_devices();
    let cells: Vec<DeviceCells> = inst
        .table
        .devices
        .iter()
        .enumerate()
        .map(|(n, g)| DeviceCells::new(g, &inst.costs, n))
        .collect();
    if penalties.len() != nd {
        return Err(Error::DimensionMismatch {
            what: "penalties",
            expected: nd,
            got: penalties.len(),
        });
    }
    let mut counts: Vec<StateCounts> = inst.table.devices.iter().map(StateCounts::new).collect();
    let mut cuts = vec![Vec::new(); nd];
    let final_dual = trajectory.final_dual.as_ref().ok_or(Error::EmptyTrajectory)?;
    let mut states = vec![0usize; nd];
    for (i, slot) in trajectory.slots.iter().enumerate() {
        if slot.devices.len() != nd {
            return Err(Error::DimensionMismatch {
                what: "trajectory devices",
                expected: nd,
                got: slot.devices.len(),
            });
        }
        let dual = slot.dual.as_ref().ok_or(Error::UnexpectedReport("trajectory slot without multipliers".into()))?;
        for n in 0..nd {
            cells[n].cuts_into(dual.lambda[n], dual.mu, dual.link, penalties[n], &mut cuts[n]);
            states[n] = slot.devices[n].state_index;
            counts[n].observe(states[n])?;
        }
        let after = match trajectory.slots.get(i + 1) {
            Some(next) => next.dual.as_ref().unwrap_or(final_dual),
            None => final_dual,
        };
        tracker.record(SlotInput {
            dual_before: dual,
            dual_after: after,
            cuts: &cuts,
            counts: &counts,
            states: &states,
        })?;
    }
    Ok(tracker.finish(final_dual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstraintVariant, DeviceGrid, EmpiricalDistribution, ResourceBudgets, StateDistribution, StateTable};
    use crate::onalgo::{policy_from_rule, OnAlgoState, RuleVariant};
    use crate::oracle::{bound_constants, error_terms, per_slot_z, solve_instance};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(variant: ConstraintVariant) -> Instance {
        let g0 = DeviceGrid::new(vec![0.2, 0.6], vec![0.3, 0.7], vec![0.1, 0.4, 0.9]).unwrap();
        let g1 = DeviceGrid::new(vec![0.5], vec![0.2, 0.5], vec![0.0, 0.3, 0.6, 0.8]).unwrap();
        let table = StateTable::new(vec![g0.clone(), g1.clone()]).unwrap();
        // last state of device 1 has probability zero
        let mut r0: Vec<f64> = (0..g0.num_states()).map(|k| 1.0 + k as f64).collect();
        let mut r1: Vec<f64> = (0..g1.num_states()).map(|k| 2.0 + (k % 3) as f64).collect();
        *r1.last_mut().unwrap() = 0.0;
        for r in [&mut r0, &mut r1] {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|x| *x /= s);
        }
        let dist = StateDistribution::new(vec![r0, r1]).unwrap();
        let mut budgets = ResourceBudgets::new(vec![0.15, 0.1], 0.25).unwrap();
        match variant {
            ConstraintVariant::Bandwidth => {
                budgets.link = Some(crate::model::LinkBudget {
                    capacity: 0.4,
                    object_size: vec![0.5, 0.8],
                })
            }
            ConstraintVariant::OffloadFirst => budgets.local_power = Some(vec![0.05, 0.02]),
            ConstraintVariant::Standard => {}
        }
        Instance::new(table, dist, budgets, variant).unwrap()
    }

    /// Accumulates every quantity straight from the definitions.
    fn slow_run(inst: &Instance, schedule: StepSchedule, seq: &[Vec<usize>], checkpoints: &[u64]) -> BoundReport {
        let sol = solve_instance(inst).unwrap();
        let consts = bound_constants(inst, &schedule);
        let f_star = -sol.objective;
        let mut st = OnAlgoState::new(&inst.table, &inst.budgets, &inst.costs, schedule, RuleVariant::AccuracyOnly).unwrap();
        let mut emp = EmpiricalDistribution::new(&inst.table);
        let zeros = vec![0.0; inst.table.num_devices()];
        let m = inst.costs.num_constraints(inst.table.num_devices());
        let (mut sf, mut sg, mut sc, mut sa, mut slsq, mut sl, mut sd) = (0.0, vec![0.0; m], 0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut l1, mut l_sum, mut l3) = (0.0, 0.0, 0.0);
        let mut slackness = LemmaStatus::default();
        let mut saddle = LemmaStatus::default();
        let mut reports = Vec::new();
        let mut lnmax: f64 = 0.0;
        for (i, states) in seq.iter().enumerate() {
            let t = i as u64 + 1;
            let tf = t as f64;
            let lam = st.dual.clone();
            let y = policy_from_rule(&lam, &inst.table, &inst.costs, &zeros);
            st.step(states, &zeros).unwrap();
            emp.observe(states).unwrap();
            let rho_t = emp.frequencies().unwrap();
            let z = per_slot_z(inst, &lam);
            let e = error_terms(inst, &z, &y, &lam, &rho_t).unwrap();
            let f_y = -inst.objective(&y).unwrap();
            let ft_y = -inst.objective_with(&y, &rho_t).unwrap();
            let ft_z = -inst.objective_with(&z, &rho_t).unwrap();
            let f_z = -inst.objective(&z).unwrap();
            let g_y = inst.constraints(&y).unwrap();
            let gt_y = inst.constraints_with(&y, &rho_t).unwrap();
            let a = schedule.step_size(t).unwrap();
            let ap = schedule.previous_step(t);
            let n = lam.norm();
            let after = st.dual.norm();
            lnmax = lnmax.max(n).max(after);
            sf += f_y;
            sg.iter_mut().zip(&g_y).for_each(|(s, g)| *s += g);
            sc += e.eps_diff + e.lambda_delta_z;
            sa += a;
            slsq += n * n * (1.0 / a - 1.0 / ap);
            sl += n * (1.0 / ap - 1.0 / a);
            sd += e.delta_y_norm;
            l1 -= lam.dot(&gt_y);
            l_sum += ft_y + lam.dot(&gt_y);
            let dz: f64 = e.lambda_delta_z;
            l3 += (ft_z - f_z) + dz;
            let sg2 = consts.sigma_g * consts.sigma_g;
            slackness.check(t, l1, 0.5 * sg2 * sa + 0.5 * slsq - after * after / (2.0 * a));
            saddle.check(t, l_sum / tf - f_star, l3 / tf);
            if checkpoints.contains(&t) || t == seq.len() as u64 {
                let avg: Vec<f64> = sg.iter().map(|s| s / tf).collect();
                let gap_lhs = sf / tf - f_star;
                let gap_rhs = sc / tf + sg2 * sa / (2.0 * tf) + slsq / (2.0 * tf) - after * after / (2.0 * tf * a);
                let viol_lhs = crate::oracle::positive_norm(&avg);
                let viol_rhs = after / (tf * a) + sl / tf + sd / tf;
                reports.push(CheckpointReport {
                    t,
                    gap_lhs,
                    gap_rhs,
                    gap_holds: holds(gap_lhs, gap_rhs),
                    viol_lhs,
                    viol_rhs,
                    viol_holds: holds(viol_lhs, viol_rhs),
                    c_t: sc / tf,
                    lambda_norm_max: lnmax,
                    gap_step_sum: sg2 * sa / (2.0 * tf),
                    gap_step_ratio: slsq / (2.0 * tf),
                    gap_terminal: -after * after / (2.0 * tf * a),
                    viol_terminal: after / (tf * a),
                    viol_step_ratio: sl / tf,
                    viol_delta: sd / tf,
                    viol_full_norm: libm::sqrt(avg.iter().map(|x| x * x).sum()),
                    avg_constraints: avg,
                });
            }
        }
        BoundReport {
            constants: consts,
            f_star,
            checkpoints: reports,
            complementary_slackness: slackness,
            saddle_point: saddle,
            lambda_norm_max: lnmax,
            lambda_bound_holds: holds(lnmax, consts.lambda_max),
        }
    }

    fn fast_run(inst: &Instance, schedule: StepSchedule, seq: &[Vec<usize>], checkpoints: &[u64]) -> BoundReport {
        let sol = solve_instance(inst).unwrap();
        let consts = bound_constants(inst, &schedule);
        let mut tr = BoundTracker::new(inst, sol.objective, consts, schedule, checkpoints.to_vec()).unwrap();
        let mut st = OnAlgoState::new(&inst.table, &inst.budgets, &inst.costs, schedule, RuleVariant::AccuracyOnly).unwrap();
        let zeros = vec![0.0; inst.table.num_devices()];
        for states in seq {
            let before = st.dual.clone();
            st.step(states, &zeros).unwrap();
            tr.record(SlotInput {
                dual_before: &before,
                dual_after: &st.dual,
                cuts: st.all_cuts(),
                counts: &st.counts,
                states,
            })
            .unwrap();
        }
        tr.finish(&st.dual)
    }

    fn sequence(inst: &Instance, len: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len)
            .map(|_| {
                inst.table
                    .devices
                    .iter()
                    .map(|g| rng.random_range(0..g.num_states()))
                    .collect()
            })
            .collect()
    }

    fn assert_close(a: &BoundReport, b: &BoundReport) {
        assert_eq!(a.checkpoints.len(), b.checkpoints.len());
        for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
            assert_eq!(x.t, y.t);
            for (p, q) in [
                (x.gap_lhs, y.gap_lhs),
                (x.gap_rhs, y.gap_rhs),
                (x.viol_lhs, y.viol_lhs),
                (x.viol_rhs, y.viol_rhs),
                (x.c_t, y.c_t),
                (x.lambda_norm_max, y.lambda_norm_max),
            ] {
                assert_relative_eq!(p, q, epsilon = 1e-10, max_relative = 1e-9);
            }
            assert_eq!(x.gap_holds, y.gap_holds);
            assert_eq!(x.viol_holds, y.viol_holds);
        }
        assert_relative_eq!(
            a.complementary_slackness.min_slack,
            b.complementary_slackness.min_slack,
            epsilon = 1e-10,
            max_relative = 1e-9
        );
        assert_relative_eq!(a.saddle_point.min_slack, b.saddle_point.min_slack, epsilon = 1e-10, max_relative = 1e-9);
        assert_eq!(a.all_hold(), b.all_hold());
    }

    #[test]
    fn tracker_matches_definitions() {
        let cps = [1, 5, 10, 50, 200];
        for variant in [ConstraintVariant::Standard, ConstraintVariant::Bandwidth, ConstraintVariant::OffloadFirst] {
            let inst = instance(variant);
            for (seed, schedule) in [
                (1, StepSchedule::Constant { a: 0.5 }),
                (2, StepSchedule::PowerDecay { a: 2.0, beta: 0.5 }),
            ] {
                let seq = sequence(&inst, 300, seed);
                assert_close(&fast_run(&inst, schedule, &seq, &cps), &slow_run(&inst, schedule, &seq, &cps));
            }
        }
    }

    #[test]
    fn idle_run_has_zero_gap() {
        let mut inst = instance(ConstraintVariant::Standard);
        inst.dist = StateDistribution::point_masses(&inst.table, &[0, 0]).unwrap();
        let seq = vec![vec![0, 0]; 50];
        let r = fast_run(&inst, StepSchedule::Constant { a: 0.3 }, &seq, &[1, 10, 50]);
        assert!(r.all_hold());
        for c in &r.checkpoints {
            assert_eq!(c.lambda_norm_max, 0.0);
            assert_eq!(c.gap_lhs, 0.0);
            assert!(c.gap_rhs >= 0.0);
        }
        // T = 1, λ_1 = 0: the complementary-slackness sum starts at zero
        let one = fast_run(&inst, StepSchedule::Constant { a: 0.3 }, &seq[..1], &[1]);
        assert!(one.complementary_slackness.min_slack >= 0.0);
    }
}
