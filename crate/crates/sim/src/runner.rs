//! Experiment plans, run execution and report files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use offload_core::onalgo::StepSchedule;
use offload_core::oracle::BoundReport;
use offload_core::sim::{run_episode, Episode, Policy, RunOptions, RunOracle, Scenario, SummaryRow, Trajectory, DEFAULT_CHECKPOINTS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::{load_scenario, ScenarioError};

/// Execution mode of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Sim,
    WireCloudlet,
    WireDevice,
}

/// On-disk schema of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    /// Scenario files, relative to the plan file.
    pub scenarios: Vec<PathBuf>,
    pub policies: Vec<Policy>,
    /// Explicit seeds; otherwise `1..=seed_count`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub seed_count: Option<u64>,
    #[serde(default)]
    pub checkpoints: Option<Vec<u64>>,
    /// Overrides every scenario's horizon.
    #[serde(default)]
    pub slots: Option<u64>,
    /// Run OnAlgo once per schedule instead of with the scenario's own.
    #[serde(default)]
    pub schedules: Option<Vec<StepSchedule>>,
    #[serde(default)]
    pub record_trajectory: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub mode: Mode,
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("cannot read plan {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse plan {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("scenario {path}: {source}")]
    Scenario {
        path: PathBuf,
        #[source]
        source: ScenarioError,
    },
}

/// A validated plan.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub scenarios: Vec<Scenario>,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<u64>,
    pub schedules: Option<Vec<StepSchedule>>,
    pub record_trajectory: bool,
    pub output_dir: Option<PathBuf>,
    pub mode: Mode,
}

impl ExperimentPlan {
    pub fn from_file(file: PlanFile, base: &Path) -> Result<Self, PlanError> {
        if file.scenarios.is_empty() {
            return Err(PlanError::Usage("plan lists no scenarios".into()));
        }
        if file.policies.is_empty() {
            return Err(PlanError::Usage("plan lists no policies".into()));
        }
        for p in &file.policies {
            p.validate().map_err(|e| PlanError::Usage(e.to_string()))?;
        }
        let seeds = match (&file.seeds, file.seed_count) {
            (Some(s), _) => s.clone(),
            (None, Some(n)) => (1..=n).collect(),
            (None, None) => (1..=20).collect(),
        };
        if seeds.is_empty() {
            return Err(PlanError::Usage("plan lists no seeds".into()));
        }
        if let Some(s) = &file.schedules {
            if s.is_empty() {
                return Err(PlanError::Usage("`schedules` is empty".into()));
            }
            for sc in s {
                sc.validate().map_err(|e| PlanError::Usage(e.to_string()))?;
            }
        }
        let mut scenarios = Vec::new();
        for rel in &file.scenarios {
            let path = if rel.is_absolute() { rel.clone() } else { base.join(rel) };
            let mut s = load_scenario(&path).map_err(|source| PlanError::Scenario { path: path.clone(), source })?;
            if let Some(t) = file.slots {
                s.slots = t;
            }
            scenarios.push(s);
        }
        Ok(Self {
            scenarios,
            policies: file.policies,
            seeds,
            checkpoints: file.checkpoints.unwrap_or_else(|| DEFAULT_CHECKPOINTS.to_vec()),
            schedules: file.schedules,
            record_trajectory: file.record_trajectory,
            output_dir: file.output_dir,
            mode: file.mode,
        })
    }

    /// Every run of the plan in a fixed order.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for (si, s) in self.scenarios.iter().enumerate() {
            for &seed in &self.seeds {
                for &policy in &self.policies {
                    match (&self.schedules, policy) {
                        (Some(list), Policy::OnAlgo) if list.len() > 1 => {
                            for (k, sched) in list.iter().enumerate() {
                                out.push(RunSpec::new(si, s, policy, seed, Some((k, *sched))));
                            }
                        }
                        (Some(list), _) => out.push(RunSpec::new(si, s, policy, seed, Some((0, list[0])))),
                        (None, _) => out.push(RunSpec::new(si, s, policy, seed, None)),
                    }
                }
            }
        }
        out
    }

    /// The scenario a run executes.
    pub fn scenario_for(&self, run: &RunSpec) -> Scenario {
        let mut s = self.scenarios[run.scenario].clone();
        s.schedule = run.schedule;
        s
    }
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan, PlanError> {
    let text = std::fs::read_to_string(path).map_err(|source| PlanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: PlanFile = toml::from_str(&text).map_err(|e| PlanError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    ExperimentPlan::from_file(file, path.parent().unwrap_or(Path::new(".")))
}

/// One (scenario, policy, schedule, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub id: String,
    pub scenario: usize,
    pub scenario_name: String,
    pub policy: Policy,
    pub seed: u64,
    pub schedule: StepSchedule,
}

/// Policy name as used in run ids; ATO carries its threshold.
pub fn policy_tag(p: &Policy) -> String {
    match *p {
        Policy::Ato { threshold } => format!("ato-{threshold}"),
        other => other.label().to_string(),
    }
}

fn schedule_label(s: &StepSchedule) -> String {
    match *s {
        StepSchedule::Constant { a } => format!("const-{a}"),
        StepSchedule::PowerDecay { a, beta } => format!("decay-{a}-{beta}"),
    }
}

impl RunSpec {
    fn new(si: usize, s: &Scenario, policy: Policy, seed: u64, sched: Option<(usize, StepSchedule)>) -> Self {
        let schedule = sched.map_or(s.schedule, |(_, x)| x);
        let tag = match sched {
            Some(_) if policy == Policy::OnAlgo => format!("_{}", schedule_label(&schedule)),
            _ => String::new(),
        };
        Self {
            id: format!("{}_{}{}_seed{}", s.name, policy_tag(&policy), tag, seed),
            scenario: si,
            scenario_name: s.name.clone(),
            policy,
            seed,
            schedule,
        }
    }
}

/// Outcome of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub spec: RunSpec,
    pub episode: Episode,
    pub partial: bool,
}

/// Summary line as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub run: String,
    pub schedule: String,
    pub partial: bool,
    pub bounds_hold: Option<bool>,
    #[serde(flatten)]
    pub row: SummaryRow,
}

/// Offline optimum and constants per (scenario, schedule), computed once.
pub fn oracles(plan: &ExperimentPlan, runs: &[RunSpec]) -> anyhow::Result<HashMap<(usize, String), Option<RunOracle>>> {
    let mut out = HashMap::new();
    for r in runs.iter().filter(|r| r.policy == Policy::OnAlgo) {
        let key = (r.scenario, schedule_label(&r.schedule));
        if let std::collections::hash_map::Entry::Vacant(e) = out.entry(key) {
            e.insert(plan.scenario_for(r).oracle()?);
        }
    }
    Ok(out)
}

pub fn run_options(plan: &ExperimentPlan, run: &RunSpec, oracles: &HashMap<(usize, String), Option<RunOracle>>) -> RunOptions {
    RunOptions {
        record_trajectory: plan.record_trajectory,
        checkpoints: plan.checkpoints.clone(),
        oracle: oracles
            .get(&(run.scenario, schedule_label(&run.schedule)))
            .cloned()
            .flatten(),
    }
}

/// Execute every run in-process, in parallel across runs.
pub fn execute_sim(plan: &ExperimentPlan) -> anyhow::Result<Vec<RunOutput>> {
    let runs = plan.runs();
    let oracles = oracles(plan, &runs)?;
    runs.into_par_iter()
        .map(|spec| {
            let scenario = plan.scenario_for(&spec);
            let episode = run_episode(&scenario, spec.policy, spec.seed, run_options(plan, &spec, &oracles))
                .map_err(|e| anyhow::anyhow!("run {}: {e}", spec.id))?;
            Ok(RunOutput {
                spec,
                episode,
                partial: false,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ComparisonRow<'a> {
    scenario: &'a str,
    seed: u64,
    policy: String,
    schedule: String,
    slots: u64,
    tasks: u64,
    accuracy: f64,
    offload_fraction: f64,
    served_fraction: f64,
    mean_power: f64,
    max_power_ratio: f64,
    cloud_load: f64,
    cloud_load_ratio: f64,
    cloud_utilization: f64,
    violation_norm: f64,
    mean_delay: Option<f64>,
    bounds_hold: Option<bool>,
}

#[derive(Debug, Serialize)]
struct TrajectoryRow {
    slot: u64,
    device: usize,
    o: f64,
    h: f64,
    w: f64,
    offloaded: u8,
    served: u8,
    gain: f64,
    power: f64,
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &t.slots {
        for (n, d) in s.devices.iter().enumerate() {
            w.serialize(TrajectoryRow {
                slot: s.t,
                device: n,
                o: d.o,
                h: d.h,
                w: d.w,
                offloaded: d.offloaded as u8,
                served: d.served as u8,
                gain: d.gain,
                power: d.power,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// What the report files say about the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub runs: usize,
    pub bound_reports: usize,
    pub bound_failures: usize,
    pub partial_runs: usize,
}

impl Verdict {
    pub fn success(&self) -> bool {
        self.bound_failures == 0 && self.partial_runs == 0
    }
}

fn bounds_hold(b: &Option<BoundReport>) -> Option<bool> {
    b.as_ref().map(BoundReport::all_hold)
}

/// Write `summary.json`, `comparison.csv`, `bounds_<run>.json` and, when
/// recorded, `trajectory_<run>.csv`.
pub fn write_outputs(dir: &Path, outputs: &[RunOutput]) -> anyhow::Result<Verdict> {
    std::fs::create_dir_all(dir)?;
    let mut summary = Vec::new();
    let mut verdict = Verdict {
        runs: outputs.len(),
        bound_reports: 0,
        bound_failures: 0,
        partial_runs: 0,
    };
    let mut cmp = csv::Writer::from_path(dir.join("comparison.csv"))?;
    for o in outputs {
        let hold = bounds_hold(&o.episode.bounds);
        if o.partial {
            verdict.partial_runs += 1;
        }
        if let Some(b) = &o.episode.bounds {
            verdict.bound_reports += 1;
            if !b.all_hold() {
                verdict.bound_failures += 1;
            }
            let text = serde_json::to_string_pretty(b)?;
            std::fs::write(dir.join(format!("bounds_{}.json", o.spec.id)), text + "\n")?;
        }
        if !o.episode.trajectory.slots.is_empty() {
            write_trajectory(&dir.join(format!("trajectory_{}.csv", o.spec.id)), &o.episode.trajectory)?;
        }
        let Some(row) = &o.episode.summary else {
            continue;
        };
        cmp.serialize(ComparisonRow {
            scenario: &row.scenario,
            seed: row.seed,
            policy: policy_tag(&o.spec.policy),
            schedule: schedule_label(&o.spec.schedule),
            slots: row.slots,
            tasks: row.tasks,
            accuracy: row.accuracy,
            offload_fraction: row.offload_fraction,
            served_fraction: row.served_fraction,
            mean_power: row.mean_power,
            max_power_ratio: row.max_power_ratio,
            cloud_load: row.cloud_load,
            cloud_load_ratio: row.cloud_load_ratio,
            cloud_utilization: row.cloud_utilization,
            violation_norm: row.violation_norm,
            mean_delay: row.mean_delay,
            bounds_hold: hold,
        })?;
        summary.push(SummaryRecord {
            run: o.spec.id.clone(),
            schedule: schedule_label(&o.spec.schedule),
            partial: o.partial,
            bounds_hold: hold,
            row: SummaryRow {
                policy: policy_tag(&o.spec.policy),
                ..row.clone()
            },
        });
    }
    cmp.flush()?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(verdict)
}
