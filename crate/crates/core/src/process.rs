//! Seeded generators for task arrivals and for the power, cycle and gain
//! levels of each device, plus the measured cost and delay models.
//!
//! Every device owns independent ChaCha8 substreams, one per process kind,
//! derived from the master seed and the device index. Adding a device never
//! perturbs the sequences of the others.

use alloc::vec;
use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::model::{
    check_probabilities, DelayModelParams, DeviceGrid, DeviceState, EmpiricalDistribution, GainModelParams, StateTable,
    IDLE_STATE,
};

/// Coefficients of the fitted transmit-power curve, highest power first.
pub const TX_POWER_COEFFS: [f64; 3] = [-0.00037, 0.0214, 0.1277];

/// Transmit power in watts at the given rate in Mbps.
pub fn tx_power(rate_mbps: f64) -> Result<f64> {
    tx_power_with(&TX_POWER_COEFFS, rate_mbps)
}

/// Quadratic power curve `c0 r^2 + c1 r + c2`, clamped at zero.
pub fn tx_power_with(coeffs: &[f64; 3], rate_mbps: f64) -> Result<f64> {
    if !(rate_mbps.is_finite() && rate_mbps >= 0.0) {
        return Err(invalid("rate", "rate must be finite and >= 0"));
    }
    let [a, b, c] = *coeffs;
    Ok((a * rate_mbps * rate_mbps + b * rate_mbps + c).max(0.0))
}

/// Measured power and cycle statistics used to build the `o` and `h` grids.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CostModelParams {
    pub power_coeffs: [f64; 3],
    /// Channel rates a device may see, Mbps, with their probabilities.
    pub rates: Vec<f64>,
    pub rate_probs: Vec<f64>,
    /// Cloudlet cycles per task, gigacycles.
    pub cycles_mean: f64,
    pub cycles_std: f64,
    /// Number of equal-width bins covering the truncated cycle distribution.
    pub cycle_bins: usize,
}

impl Default for CostModelParams {
    fn default() -> Self {
        Self {
            power_coeffs: TX_POWER_COEFFS,
            rates: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
            rate_probs: vec![1.0 / 6.0; 6],
            cycles_mean: 0.441,
            cycles_std: 0.090,
            cycle_bins: 10,
        }
    }
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        if self.rates.len() != self.rate_probs.len() || self.rates.is_empty() {
            return Err(invalid("rates", "rates and rate_probs must be non-empty and of equal length"));
        }
        check_probabilities("rate_probs", &self.rate_probs)?;
        for r in &self.rates {
            tx_power_with(&self.power_coeffs, *r)?;
        }
        if !(self.cycles_mean.is_finite() && self.cycles_mean > 0.0) {
            return Err(invalid("cycles_mean", "must be > 0"));
        }
        if !(self.cycles_std.is_finite() && self.cycles_std >= 0.0) {
            return Err(invalid("cycles_std", "must be >= 0"));
        }
        if self.cycle_bins == 0 {
            return Err(invalid("cycle_bins", "must be >= 1"));
        }
        Ok(())
    }

    /// Power levels and their probabilities. Rates mapping to the same power
    /// are merged.
    pub fn power_levels(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(self.rates.len());
        for (r, p) in self.rates.iter().zip(&self.rate_probs) {
            pairs.push((tx_power_with(&self.power_coeffs, *r)?, *p));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut values: Vec<f64> = Vec::new();
        let mut probs: Vec<f64> = Vec::new();
        for (o, p) in pairs {
            match values.last() {
                Some(last) if *last == o => *probs.last_mut().expect("parallel vectors") += p,
                _ => {
                    values.push(o);
                    probs.push(p);
                }
            }
        }
        Ok((values, probs))
    }

    /// Cycle levels: bin midpoints of a normal truncated at three standard
    /// deviations and at zero, with the bin masses as probabilities.
    pub fn cycle_levels(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.validate()?;
        let (m, s) = (self.cycles_mean, self.cycles_std);
        if s == 0.0 {
            return Ok((vec![m], vec![1.0]));
        }
        let lo = (m - 3.0 * s).max(0.0);
        let hi = m + 3.0 * s;
        let cdf = |x: f64| 0.5 * (1.0 + libm::erf((x - m) / (s * core::f64::consts::SQRT_2)));
        let bins = self.cycle_bins;
        let width = (hi - lo) / bins as f64;
        let mut values = Vec::with_capacity(bins);
        let mut masses = Vec::with_capacity(bins);
        for i in 0..bins {
            let a = lo + width * i as f64;
            let b = if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 };
            values.push(0.5 * (a + b));
            masses.push(cdf(b) - cdf(a));
        }
        let total: f64 = masses.iter().sum();
        let probs = masses.iter().map(|p| p / total).collect();
        Ok((values, probs))
    }
}

/// The three delay terms of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DelayTerms {
    /// Local processing delay.
    pub local: f64,
    /// Cloudlet processing delay.
    pub cloud: f64,
    /// Transmission delay.
    pub transmission: f64,
}

impl DelayTerms {
    /// Extra delay an offloaded task incurs over local execution.
    pub fn offload_overhead(&self) -> f64 {
        self.cloud + self.transmission
    }
}

/// Delay terms of one device. `share` is the fraction of the link the device
/// gets under CSMA and is ignored otherwise; a zero share means no device
/// transmits and the transmission delay is zero.
pub fn delay_components(params: &DelayModelParams, share: f64) -> Result<DelayTerms> {
    params.validate()?;
    let local = params.cycles_per_task / params.device_speed;
    let cloud = params.cycles_per_task / params.cloud_speed;
    let transmission = if params.csma {
        if !(0.0..=1.0).contains(&share) {
            return Err(invalid("share", "link share must lie in [0, 1]"));
        }
        if share == 0.0 {
            0.0
        } else {
            params.object_size / (params.channel_rate * params.bandwidth * share)
        }
    } else {
        params.object_size / (params.channel_rate * params.bandwidth)
    };
    Ok(DelayTerms {
        local,
        cloud,
        transmission,
    })
}

/// Airtime share of each device: its summed offloading probabilities over the
/// sum across all devices. All zero when nobody offloads.
pub fn csma_shares<R: AsRef<[f64]>>(rows: &[R]) -> Vec<f64> {
    let sums: Vec<f64> = rows.iter().map(|r| r.as_ref().iter().sum()).collect();
    let total: f64 = sums.iter().sum();
    if total <= 0.0 {
        return vec![0.0; sums.len()];
    }
    sums.iter().map(|s| s / total).collect()
}

/// Record one slot of observations.
pub fn empirical_update(
    dist: &mut EmpiricalDistribution,
    table: &StateTable,
    observed: &[DeviceState],
) -> Result<()> {
    if observed.len() != table.num_devices() {
        return Err(Error::DimensionMismatch {
            what: "observation",
            expected: table.num_devices(),
            got: observed.len(),
        });
    }
    let mut idx = Vec::with_capacity(observed.len());
    for (grid, s) in table.devices.iter().zip(observed) {
        idx.push(grid.state_index(s)?);
    }
    dist.observe(&idx)
}

/// When a device has a task.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum ArrivalProcess {
    /// A task in each slot independently with probability `p`.
    Bernoulli { p: f64 },
    /// Bursts separated by exponential gaps; one task per slot inside a burst.
    Bursty {
        bursts_per_minute: f64,
        min_duration_s: f64,
        max_duration_s: f64,
        slot_seconds: f64,
    },
}

impl ArrivalProcess {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArrivalProcess::Bernoulli { p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid("task_prob", "must lie in [0, 1]"));
                }
            }
            ArrivalProcess::Bursty {
                bursts_per_minute,
                slot_seconds,
                ..
            } => {
                if !(bursts_per_minute.is_finite() && bursts_per_minute > 0.0) {
                    return Err(invalid("bursts_per_minute", "must be > 0"));
                }
                if !(slot_seconds.is_finite() && slot_seconds > 0.0) {
                    return Err(invalid("slot_seconds", "must be > 0"));
                }
                self.duration_slots()?;
            }
        }
        Ok(())
    }

    fn duration_slots(&self) -> Result<(u64, u64)> {
        match *self {
            ArrivalProcess::Bursty {
                min_duration_s,
                max_duration_s,
                slot_seconds,
                ..
            } => {
                let lo = libm::ceil(min_duration_s / slot_seconds - 1e-9);
                let hi = libm::floor(max_duration_s / slot_seconds + 1e-9);
                if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
                    return Err(invalid(
                        "burst_duration",
                        "duration range must cover at least one whole slot",
                    ));
                }
                Ok((lo as u64, hi as u64))
            }
            ArrivalProcess::Bernoulli { .. } => Ok((1, 1)),
        }
    }

    /// Long-run fraction of slots with a task.
    pub fn task_probability(&self) -> Result<f64> {
        self.validate()?;
        match *self {
            ArrivalProcess::Bernoulli { p } => Ok(p),
            ArrivalProcess::Bursty {
                bursts_per_minute,
                slot_seconds,
                ..
            } => {
                let (lo, hi) = self.duration_slots()?;
                let on = 0.5 * (lo + hi) as f64;
                let mean_gap_s = 60.0 / bursts_per_minute;
                // floor of an exponential is geometric
                let off = 1.0 / libm::expm1(slot_seconds / mean_gap_s);
                Ok(on / (on + off))
            }
        }
    }
}

/// How one level dimension evolves.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum LevelProcess {
    /// Drawn independently for every task.
    Iid { probs: Vec<f64> },
    /// Row-stochastic chain stepped once per slot, starting at `initial`.
    Markov { transition: Vec<Vec<f64>>, initial: usize },
}

impl LevelProcess {
    /// Chain that stays put with probability `stay` and otherwise redraws from `probs`.
    pub fn sticky(probs: &[f64], stay: f64) -> Result<Self> {
        check_probabilities("probs", probs)?;
        if !(0.0..=1.0).contains(&stay) {
            return Err(invalid("stay", "must lie in [0, 1]"));
        }
        let k = probs.len();
        let transition = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| (1.0 - stay) * probs[j] + if i == j { stay } else { 0.0 })
                    .collect()
            })
            .collect();
        let initial = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok(LevelProcess::Markov { transition, initial })
    }

    pub fn num_levels(&self) -> usize {
        match self {
            LevelProcess::Iid { probs } => probs.len(),
            LevelProcess::Markov { transition, .. } => transition.len(),
        }
    }

    pub fn validate(&self, name: &'static str, levels: usize) -> Result<()> {
        if self.num_levels() != levels {
            return Err(Error::DimensionMismatch {
                what: name,
                expected: levels,
                got: self.num_levels(),
            });
        }
        match self {
            LevelProcess::Iid { probs } => check_probabilities(name, probs),
            LevelProcess::Markov { transition, initial } => {
                for row in transition {
                    if row.len() != levels {
                        return Err(Error::DimensionMismatch {
                            what: name,
                            expected: levels,
                            got: row.len(),
                        });
                    }
                    check_probabilities(name, row)?;
                }
                if *initial >= levels {
                    return Err(Error::LevelOutOfRange {
                        dimension: name,
                        level: *initial,
                        size: levels,
                    });
                }
                Ok(())
            }
        }
    }

    /// Long-run level frequencies. For a chain this is the Cesaro limit from
    /// the initial level, found by iterating the lazy chain `(P + I) / 2`.
    pub fn stationary(&self) -> Vec<f64> {
        match self {
            LevelProcess::Iid { probs } => probs.clone(),
            LevelProcess::Markov { transition, initial } => {
                let k = transition.len();
                let mut pi = vec![0.0; k];
                pi[*initial] = 1.0;
                let mut next = vec![0.0; k];
                for _ in 0..1_000_000 {
                    for v in next.iter_mut() {
                        *v = 0.0;
                    }
                    for (i, row) in transition.iter().enumerate() {
                        let half = 0.5 * pi[i];
                        next[i] += half;
                        for (j, p) in row.iter().enumerate() {
                            next[j] += half * p;
                        }
                    }
                    let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
                    core::mem::swap(&mut pi, &mut next);
                    if diff < 1e-15 {
                        break;
                    }
                }
                let s: f64 = pi.iter().sum();
                pi.iter().map(|p| p / s).collect()
            }
        }
    }
}

/// Stochastic description of one device's state sequence.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum ProcessSpec {
    Generated {
        arrivals: ArrivalProcess,
        o: LevelProcess,
        h: LevelProcess,
        w: LevelProcess,
    },
    /// Recorded states, one per slot starting at slot 1.
    Trace { states: Vec<DeviceState> },
}

impl ProcessSpec {
    /// I.i.d. levels with Bernoulli arrivals.
    pub fn iid(task_prob: f64, o: Vec<f64>, h: Vec<f64>, w: Vec<f64>) -> Self {
        ProcessSpec::Generated {
            arrivals: ArrivalProcess::Bernoulli { p: task_prob },
            o: LevelProcess::Iid { probs: o },
            h: LevelProcess::Iid { probs: h },
            w: LevelProcess::Iid { probs: w },
        }
    }

    pub fn validate(&self, grid: &DeviceGrid) -> Result<()> {
        match self {
            ProcessSpec::Generated { arrivals, o, h, w } => {
                arrivals.validate()?;
                o.validate("o process", grid.o_values.len())?;
                h.validate("h process", grid.h_values.len())?;
                w.validate("w process", grid.w_values.len())
            }
            ProcessSpec::Trace { states } => {
                if states.is_empty() {
                    return Err(invalid("trace", "trace has no slots"));
                }
                for s in states {
                    grid.state_index(s)?;
                }
                Ok(())
            }
        }
    }

    /// Long-run distribution over the device's local states.
    pub fn stationary(&self, grid: &DeviceGrid) -> Result<Vec<f64>> {
        self.validate(grid)?;
        let mut row = vec![0.0; grid.num_states()];
        match self {
            ProcessSpec::Generated { arrivals, o, h, w } => {
                let p_on = arrivals.task_probability()?;
                let (po, ph, pw) = (o.stationary(), h.stationary(), w.stationary());
                row[IDLE_STATE] = 1.0 - p_on;
                for (oi, a) in po.iter().enumerate() {
                    for (hi, b) in ph.iter().enumerate() {
                        for (wi, c) in pw.iter().enumerate() {
                            let k = grid.state_index(&DeviceState::task(oi, hi, wi))?;
                            row[k] = p_on * a * b * c;
                        }
                    }
                }
            }
            ProcessSpec::Trace { states } => {
                let inc = 1.0 / states.len() as f64;
                for s in states {
                    row[grid.state_index(s)?] += inc;
                }
            }
        }
        Ok(row)
    }
}

/// Predicted-gain levels of a device and, for each level, the (prediction,
/// confidence) pairs that map onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct GainLevels {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
    preimages: Vec<Vec<(f64, f64)>>,
    weights: Vec<Vec<f64>>,
}

impl GainLevels {
    /// Push the predicted-improvement and confidence distributions through
    /// the gain formula and quantize onto `levels` evenly spaced values
    /// between zero and the largest attainable gain.
    pub fn from_model(params: &GainModelParams, levels: usize) -> Result<Self> {
        params.validate()?;
        if levels == 0 {
            return Err(invalid("gain_levels", "must be >= 1"));
        }
        let mut raw = Vec::new();
        let mut w_max: f64 = 0.0;
        for (phi, pp) in params.predicted.iter().zip(&params.predicted_probs) {
            for (sig, ps) in params.confidence.iter().zip(&params.confidence_probs) {
                let g = crate::model::compute_gain(*phi, *sig, params.risk_aversion)?;
                w_max = w_max.max(g);
                raw.push((g, *phi, *sig, pp * ps));
            }
        }
        let values: Vec<f64> = if w_max == 0.0 || levels == 1 {
            vec![w_max]
        } else {
            (0..levels).map(|i| w_max * i as f64 / (levels - 1) as f64).collect()
        };
        let mut probs = vec![0.0; values.len()];
        let mut preimages = vec![Vec::new(); values.len()];
        let mut weights = vec![Vec::new(); values.len()];
        for (g, phi, sig, p) in raw {
            let i = if values.len() == 1 {
                0
            } else {
                libm::round(g / w_max * (values.len() - 1) as f64) as usize
            };
            probs[i] += p;
            if p > 0.0 {
                preimages[i].push((phi, sig));
                weights[i].push(p);
            }
        }
        Ok(Self {
            values,
            probs,
            preimages,
            weights,
        })
    }

    /// Levels with no generative model behind them: each level is its own
    /// prediction at full confidence.
    pub fn bare(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            probs: vec![1.0 / n as f64; n],
            preimages: vec![Vec::new(); n],
            weights: vec![Vec::new(); n],
            values,
        }
    }
}

/// Classifier-level detail of one task, used only for accuracy accounting and
/// for the confidence-threshold baseline.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskOutcome {
    pub phi_pred: f64,
    pub sigma: f64,
    /// Realized improvement if the cloudlet classifies the task.
    pub phi: f64,
    pub d_cloud: f64,
    /// Local classifier confidence.
    pub d_local: f64,
}

/// What a device sees in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotDraw {
    pub state: DeviceState,
    pub outcome: TaskOutcome,
}

/// Parameters for realizing task outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub levels: GainLevels,
    pub noise_scale: f64,
    pub cloud_accuracy_mean: f64,
    pub cloud_accuracy_std: f64,
}

impl OutcomeModel {
    pub fn from_gain_model(params: &GainModelParams, levels: GainLevels) -> Self {
        Self {
            levels,
            noise_scale: params.noise_scale,
            cloud_accuracy_mean: params.cloud_accuracy_mean,
            cloud_accuracy_std: params.cloud_accuracy_std,
        }
    }
}

const STREAM_ARRIVALS: u64 = 0;
const STREAM_O: u64 = 1;
const STREAM_H: u64 = 2;
const STREAM_W: u64 = 3;
const STREAM_AUX: u64 = 4;

fn substream(seed: u64, device: usize, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(device as u64 * 8 + kind);
    rng
}

#[derive(Debug, Clone)]
enum LevelSampler {
    Iid(WeightedIndex<f64>),
    Markov { rows: Vec<WeightedIndex<f64>>, current: usize },
}

impl LevelSampler {
    fn new(p: &LevelProcess) -> Result<Self> {
        let bad = |_| invalid("probs", "cannot sample from this distribution");
        match p {
            LevelProcess::Iid { probs } => Ok(LevelSampler::Iid(WeightedIndex::new(probs).map_err(bad)?)),
            LevelProcess::Markov { transition, initial } => {
                let rows = transition
                    .iter()
                    .map(|r| WeightedIndex::new(r).map_err(bad))
                    .collect::<Result<Vec<_>>>()?;
                Ok(LevelSampler::Markov {
                    rows,
                    current: *initial,
                })
            }
        }
    }

    /// Advance one slot (chains only).
    fn tick(&mut self, rng: &mut ChaCha8Rng, first: bool) {
        if let LevelSampler::Markov { rows, current } = self {
            if !first {
                *current = rows[*current].sample(rng);
            }
        }
    }

    fn level(&mut self, rng: &mut ChaCha8Rng) -> usize {
        match self {
            LevelSampler::Iid(d) => d.sample(rng),
            LevelSampler::Markov { current, .. } => *current,
        }
    }
}

#[derive(Debug, Clone)]
enum Source {
    Generated {
        arrivals: ArrivalProcess,
        duration: (u64, u64),
        burst_left: u64,
        gap_left: u64,
        o: LevelSampler,
        h: LevelSampler,
        w: LevelSampler,
    },
    Trace(Vec<DeviceState>),
}

/// State generator of one device.
#[derive(Debug, Clone)]
pub struct DeviceProcess {
    device: usize,
    source: Source,
    outcome: OutcomeModel,
    conditional: Vec<Option<WeightedIndex<f64>>>,
    arrivals_rng: ChaCha8Rng,
    o_rng: ChaCha8Rng,
    h_rng: ChaCha8Rng,
    w_rng: ChaCha8Rng,
    aux_rng: ChaCha8Rng,
    last_slot: u64,
}

impl DeviceProcess {
    pub fn new(device: usize, seed: u64, spec: &ProcessSpec, grid: &DeviceGrid, outcome: OutcomeModel) -> Result<Self> {
        spec.validate(grid)?;
        if outcome.levels.values.len() != grid.w_values.len() {
            return Err(Error::DimensionMismatch {
                what: "gain levels",
                expected: grid.w_values.len(),
                got: outcome.levels.values.len(),
            });
        }
        let source = match spec {
            ProcessSpec::Generated { arrivals, o, h, w } => Source::Generated {
                arrivals: arrivals.clone(),
                duration: arrivals.duration_slots()?,
                burst_left: 0,
                gap_left: 0,
                o: LevelSampler::new(o)?,
                h: LevelSampler::new(h)?,
                w: LevelSampler::new(w)?,
            },
            ProcessSpec::Trace { states } => Source::Trace(states.clone()),
        };
        let conditional = outcome
            .levels
            .weights
            .iter()
            .map(|w| if w.is_empty() { None } else { WeightedIndex::new(w).ok() })
            .collect();
        let mut p = Self {
            device,
            source,
            outcome,
            conditional,
            arrivals_rng: substream(seed, device, STREAM_ARRIVALS),
            o_rng: substream(seed, device, STREAM_O),
            h_rng: substream(seed, device, STREAM_H),
            w_rng: substream(seed, device, STREAM_W),
            aux_rng: substream(seed, device, STREAM_AUX),
            last_slot: 0,
        };
        if let Source::Generated {
            arrivals: arrivals @ ArrivalProcess::Bursty { .. },
            gap_left,
            ..
        } = &mut p.source
        {
            *gap_left = draw_gap(arrivals, &mut p.arrivals_rng);
        }
        Ok(p)
    }

    pub fn device(&self) -> usize {
        self.device
    }

    /// Draw slot `t`. Slots must be requested in order starting at 1.
    pub fn next_state(&mut self, t: u64) -> Result<SlotDraw> {
        if t == 0 {
            return Err(Error::ZeroSlot);
        }
        if t != self.last_slot + 1 {
            return Err(invalid("slot", "slots must be drawn consecutively from 1"));
        }
        self.last_slot = t;
        let state = match &mut self.source {
            Source::Trace(states) => {
                *states.get((t - 1) as usize).ok_or(Error::TraceExhausted {
                    device: self.device,
                    slot: t,
                })?
            }
            Source::Generated {
                arrivals,
                duration,
                burst_left,
                gap_left,
                o,
                h,
                w,
            } => {
                let first = t == 1;
                o.tick(&mut self.o_rng, first);
                h.tick(&mut self.h_rng, first);
                w.tick(&mut self.w_rng, first);
                let has_task = match arrivals {
                    ArrivalProcess::Bernoulli { p } => self.arrivals_rng.random_bool(*p),
                    ArrivalProcess::Bursty { .. } => {
                        if *burst_left == 0 && *gap_left == 0 {
                            *burst_left = self.arrivals_rng.random_range(duration.0..=duration.1);
                        }
                        if *burst_left > 0 {
                            *burst_left -= 1;
                            if *burst_left == 0 {
                                *gap_left = draw_gap(arrivals, &mut self.arrivals_rng);
                            }
                            true
                        } else {
                            *gap_left -= 1;
                            false
                        }
                    }
                };
                if has_task {
                    DeviceState::task(o.level(&mut self.o_rng), h.level(&mut self.h_rng), w.level(&mut self.w_rng))
                } else {
                    DeviceState::IDLE
                }
            }
        };
        let outcome = if state.has_task {
            self.realize(state.w_level)
        } else {
            TaskOutcome::default()
        };
        Ok(SlotDraw { state, outcome })
    }

    fn realize(&mut self, w_level: usize) -> TaskOutcome {
        let rng = &mut self.aux_rng;
        let (phi_pred, sigma) = match &self.conditional[w_level] {
            Some(d) => self.outcome.levels.preimages[w_level][d.sample(rng)],
            None => (self.outcome.levels.values[w_level], 0.0),
        };
        let z: f64 = rng.sample(StandardNormal);
        let phi = (phi_pred * (1.0 + self.outcome.noise_scale * z)).clamp(0.0, 1.0);
        let z: f64 = rng.sample(StandardNormal);
        let d_cloud =
            (self.outcome.cloud_accuracy_mean + self.outcome.cloud_accuracy_std * z).clamp(0.0, 1.0);
        let phi = phi.min(d_cloud);
        TaskOutcome {
            phi_pred,
            sigma,
            phi,
            d_cloud,
            d_local: d_cloud - phi,
        }
    }
}

fn draw_gap(arrivals: &ArrivalProcess, rng: &mut ChaCha8Rng) -> u64 {
    match *arrivals {
        ArrivalProcess::Bursty {
            bursts_per_minute,
            slot_seconds,
            ..
        } => {
            let e: f64 = rng.sample(Exp1);
            let gap_s = e * 60.0 / bursts_per_minute;
            libm::floor(gap_s / slot_seconds) as u64
        }
        ArrivalProcess::Bernoulli { .. } => 0,
    }
}
