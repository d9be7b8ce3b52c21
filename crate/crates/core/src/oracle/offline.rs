//! Offline benchmark: the offloading LP solved with the true distribution.
//!
//! The cloudlet (and link) constraints couple the devices; everything else is
//! separable. For fixed coupling multipliers each device solves a one-constraint
//! fractional knapsack exactly by sweeping the breakpoints of its own power
//! multiplier. The coupling multipliers are found by bisection, and the two
//! bracketing solutions are mixed so the coupling constraint is met exactly.

use alloc::vec;
use alloc::vec::Vec;

use super::Instance;
use crate::error::{invalid, Error, Result};
use crate::model::PolicyTable;

/// Optimal offline policy and its objective (expected gain, maximization form).
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSolution {
    pub policy: PolicyTable,
    pub objective: f64,
    /// Cloudlet multiplier at the optimum.
    pub mu: f64,
    /// Link multiplier at the optimum (zero without a link constraint).
    pub link: f64,
}

const MAX_ITERS: usize = 200;
const RESIDUAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Relaxed {
    rows: Vec<Vec<f64>>,
    cloud: f64,
    link: f64,
}

impl Relaxed {
    fn mix(&self, other: &Relaxed, theta: f64) -> Relaxed {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (theta * x + (1.0 - theta) * y).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        Relaxed {
            rows,
            cloud: theta * self.cloud + (1.0 - theta) * other.cloud,
            link: theta * self.link + (1.0 - theta) * other.link,
        }
    }
}

/// Maximize `Σ v y` subject to `Σ p y <= cap`, `y ∈ [0,1]`. Weights may be
/// negative (keeping such an item frees capacity). Requires `cap >= Σ_{p<0} p`.
pub(crate) fn knapsack(values: &[f64], weights: &[f64], cap: f64, y: &mut [f64]) {
    let mut usage = 0.0;
    for k in 0..values.len() {
        let take = values[k] > 0.0;
        y[k] = if take { 1.0 } else { 0.0 };
        if take {
            usage += weights[k];
        }
    }
    if usage <= cap {
        return;
    }
    // Items whose status flips as the power multiplier rises: positive-value
    // consumers leave, non-positive-value producers join.
    let mut events: Vec<(f64, usize)> = (0..values.len())
        .filter(|&k| (weights[k] > 0.0 && values[k] > 0.0) || (weights[k] < 0.0 && values[k] <= 0.0))
        .map(|k| (values[k] / weights[k], k))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut i = 0;
    while i < events.len() {
        let r = events[i].0;
        let mut j = i;
        let (mut buys, mut sells) = (0.0, 0.0);
        while j < events.len() && events[j].0 == r {
            let k = events[j].1;
            if weights[k] > 0.0 {
                buys += weights[k];
            } else {
                sells += weights[k];
            }
            j += 1;
        }
        let after = usage - buys + sells;
        if after <= cap {
            // Every item in the group is indifferent at this price; blend them
            // until the capacity is met exactly.
            let mut excess = usage - cap;
            for &(_, k) in &events[i..j] {
                if weights[k] < 0.0 && excess > 0.0 {
                    let theta = (excess / -weights[k]).min(1.0);
                    y[k] = theta;
                    excess -= theta * -weights[k];
                }
            }
            for &(_, k) in events[i..j].iter().rev() {
                if weights[k] > 0.0 && excess > 0.0 {
                    let drop = (excess / weights[k]).min(1.0);
                    y[k] = 1.0 - drop;
                    excess -= drop * weights[k];
                }
            }
            return;
        }
        for &(_, k) in &events[i..j] {
            y[k] = if weights[k] > 0.0 { 0.0 } else { 1.0 };
        }
        usage = after;
        i = j;
    }
}

fn solve_devices(inst: &Instance, mu: f64, link: f64) -> Relaxed {
    let mut rows = Vec::with_capacity(inst.table.num_devices());
    let (mut cloud, mut link_use) = (0.0, 0.0);
    for (n, grid) in inst.table.devices.iter().enumerate() {
        let ks = grid.num_states();
        let nu = inst.costs.local_power[n];
        let ell = inst.costs.link_size[n];
        let rho = inst.dist.row(n);
        let mut values = vec![0.0; ks - 1];
        let mut weights = vec![0.0; ks - 1];
        let mut fixed = 0.0;
        for k in 1..ks {
            let (o, h, _) = grid.values(k);
            let r = rho[k];
            values[k - 1] = (inst.gains[n][k] - mu * h - link * ell) * r;
            weights[k - 1] = (o - nu) * r;
            fixed += nu * r;
        }
        let cap = inst.budgets.power[n] - fixed;
        let mut y = vec![0.0; ks - 1];
        knapsack(&values, &weights, cap, &mut y);
        let mut row = vec![0.0; ks];
        row[1..].copy_from_slice(&y);
        for k in 1..ks {
            let (_, h, _) = grid.values(k);
            cloud += row[k] * h * rho[k];
            link_use += row[k] * ell * rho[k];
        }
        rows.push(row);
    }
    Relaxed {
        rows,
        cloud,
        link: link_use,
    }
}

/// Bisection on one coupling multiplier. `usage` picks the coupled resource.
fn bisect<F, U>(solve: F, usage: U, cap: f64) -> (Relaxed, f64)
where
    F: Fn(f64) -> Relaxed,
    U: Fn(&Relaxed) -> f64,
{
    let at_zero = solve(0.0);
    if usage(&at_zero) <= cap {
        return (at_zero, 0.0);
    }
    let mut lo = 0.0;
    let mut lo_sol = at_zero;
    let mut hi = 1.0;
    let mut hi_sol = solve(hi);
    let mut guard = 0;
    while usage(&hi_sol) > cap && guard < 200 {
        lo = hi;
        lo_sol = hi_sol;
        hi *= 2.0;
        hi_sol = solve(hi);
        guard += 1;
    }
    for _ in 0..MAX_ITERS {
        if hi - lo <= 1e-12 * hi.max(1.0) || (usage(&hi_sol) - cap).abs() < RESIDUAL_TOL * 1e-3 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let sol = solve(mid);
        if usage(&sol) > cap {
            lo = mid;
            lo_sol = sol;
        } else {
            hi = mid;
            hi_sol = sol;
        }
    }
    let (u_lo, u_hi) = (usage(&lo_sol), usage(&hi_sol));
    if u_lo - u_hi <= 0.0 || cap - u_hi <= 0.0 {
        return (hi_sol, hi);
    }
    let theta = ((cap - u_hi) / (u_lo - u_hi)).clamp(0.0, 1.0);
    (lo_sol.mix(&hi_sol, theta), 0.5 * (lo + hi))
}

/// Solve the offline program of an instance.
pub fn solve_instance(inst: &Instance) -> Result<OfflineSolution> {
    let h = inst.budgets.cloudlet;
    let solve_cloud = |link: f64| bisect(|mu| solve_devices(inst, mu, link), |r| r.cloud, h);
    let (relaxed, mu, link) = match inst.costs.link_capacity {
        None => {
            let (r, mu) = solve_cloud(0.0);
            (r, mu, 0.0)
        }
        Some(cap) => {
            let (r, link) = bisect(|k| solve_cloud(k).0, |r| r.link, cap);
            let mu = solve_cloud(link).1;
            (r, mu, link)
        }
    };
    let policy = PolicyTable::new(relaxed.rows)?;
    let objective = inst.objective(&policy)?;
    Ok(OfflineSolution {
        policy,
        objective,
        mu,
        link,
    })
}

/// Candidate grid steps, finest first.
const BRUTE_STEPS: [f64; 7] = [0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0];
/// Largest number of grid points brute force will visit.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Exhaustive grid search over the offloading probabilities of every state
/// with positive probability. `step = None` picks the finest step that keeps
/// the search within [`BRUTE_FORCE_LIMIT`] points. Returns the best feasible
/// policy, its objective and the step used.
pub fn brute_force_instance(inst: &Instance, step: Option<f64>) -> Result<(PolicyTable, f64, f64)> {
    let mut vars: Vec<(usize, usize)> = Vec::new();
    for (n, g) in inst.table.devices.iter().enumerate() {
        for k in 1..g.num_states() {
            if inst.dist.prob(n, k) > 0.0 {
                vars.push((n, k));
            }
        }
    }
    let dims = vars.len() as f64;
    let points = |s: f64| libm::pow(libm::round(1.0 / s) + 1.0, dims);
    let step = match step {
        Some(s) => {
            if !(s > 0.0 && s <= 1.0) {
                return Err(invalid("grid_step", "must lie in (0, 1]"));
            }
            if points(s) > BRUTE_FORCE_LIMIT {
                return Err(Error::InstanceTooLarge { points: points(s) });
            }
            s
        }
        None => *BRUTE_STEPS
            .iter()
            .find(|s| points(**s) <= BRUTE_FORCE_LIMIT)
            .ok_or(Error::InstanceTooLarge { points: points(1.0) })?,
    };
    let m = libm::round(1.0 / step) as usize;
    let levels: Vec<f64> = (0..=m).map(|i| (i as f64 / m as f64).min(1.0)).collect();

    // Per-variable contributions, so each grid point costs one pass.
    let nd = inst.table.num_devices();
    let ncons = inst.costs.num_constraints(nd);
    let mut obj_coef = Vec::with_capacity(vars.len());
    let mut con_coef: Vec<(usize, f64, f64, f64)> = Vec::with_capacity(vars.len());
    let mut base = vec![0.0; ncons];
    for n in 0..nd {
        base[n] = -inst.budgets.power[n];
        for k in 1..inst.table.device(n).num_states() {
            base[n] += inst.costs.local_power[n] * inst.dist.prob(n, k);
        }
    }
    base[nd] = -inst.budgets.cloudlet;
    if let Some(cap) = inst.costs.link_capacity {
        base[nd + 1] = -cap;
    }
    for &(n, k) in &vars {
        let (o, h, _) = inst.table.device(n).values(k);
        let r = inst.dist.prob(n, k);
        obj_coef.push(inst.gains[n][k] * r);
        con_coef.push((n, (o - inst.costs.local_power[n]) * r, h * r, inst.costs.link_size[n] * r));
    }

    let mut idx = vec![0usize; vars.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut g = vec![0.0; ncons];
    loop {
        g.copy_from_slice(&base);
        let mut obj = 0.0;
        for (v, &i) in idx.iter().enumerate() {
            let y = levels[i];
            if y == 0.0 {
                continue;
            }
            obj += obj_coef[v] * y;
            let (n, p, c, l) = con_coef[v];
            g[n] += p * y;
            g[nd] += c * y;
            if ncons > nd + 1 {
                g[nd + 1] += l * y;
            }
        }
        if g.iter().all(|x| *x <= 1e-12) && best.as_ref().map_or(true, |(b, _)| obj > *b) {
            best = Some((obj, idx.clone()));
        }
        // odometer
        let mut d = 0;
        loop {
            if d == idx.len() {
                let (_, choice) = best.expect("the all-zero point is feasible");
                let mut policy = PolicyTable::zeros(&inst.table);
                for (v, &(n, k)) in vars.iter().enumerate() {
                    policy.set(n, k, levels[choice[v]]);
                }
                let objective = inst.objective(&policy)?;
                return Ok((policy, objective, step));
            }
            idx[d] += 1;
            if idx[d] <= m {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_knapsack(values: &[f64], weights: &[f64], cap: f64) -> f64 {
        let n = values.len();
        let steps = 20;
        let mut best = f64::NEG_INFINITY;
        let mut idx = vec![0usize; n];
        loop {
            let (mut v, mut w) = (0.0, 0.0);
            for i in 0..n {
                let y = idx[i] as f64 / steps as f64;
                v += values[i] * y;
                w += weights[i] * y;
            }
            if w <= cap + 1e-12 {
                best = best.max(v);
            }
            let mut d = 0;
            loop {
                if d == n {
                    return best;
                }
                idx[d] += 1;
                if idx[d] <= steps {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    #[test]
    fn knapsack_with_producers() {
        let values = [0.5, 0.3, -0.1, -0.2, 0.0];
        let weights = [0.4, 0.5, -0.3, -0.1, 0.2];
        for cap in [0.05, 0.2, 0.45, 1.0] {
            let mut y = [0.0; 5];
            knapsack(&values, &weights, cap, &mut y);
            let v: f64 = values.iter().zip(&y).map(|(a, b)| a * b).sum();
            let w: f64 = weights.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!(w <= cap + 1e-12);
            let brute = brute_knapsack(&values, &weights, cap);
            assert!(v >= brute - 1e-12, "cap {cap}: {v} < {brute}");
        }
    }
}
