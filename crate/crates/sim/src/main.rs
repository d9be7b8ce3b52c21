use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use offload_sim::runner::{self, execute_sim, write_outputs, ExperimentPlan, Mode, RunOutput};
use offload_sim::wire::{run_cloudlet, run_device, WireConfig};

#[derive(Parser)]
#[command(name = "offload-sim", version, about = "Edge offloading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment plan.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Plan file (TOML).
    #[arg(long)]
    plan: PathBuf,
    /// Output directory; defaults to the plan's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the plan's mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Cloudlet address to listen on (wire-cloudlet).
    #[arg(long)]
    listen: Option<String>,
    /// Cloudlet address to connect to (wire-device).
    #[arg(long)]
    connect: Option<String>,
    /// Device to play (wire-device); all devices when omitted.
    #[arg(long)]
    device: Option<usize>,
    /// Run this single seed instead of the plan's list.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Seconds to wait for peers to join.
    #[arg(long, default_value_t = 30)]
    join_timeout: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(args: RunArgs) -> anyhow::Result<bool> {
    let mut plan = runner::load_plan(&args.plan)?;
    if let Some(s) = args.seed_override {
        plan.seeds = vec![s];
    }
    let mode = args.mode.unwrap_or(plan.mode);
    let cfg = WireConfig {
        join_timeout: std::time::Duration::from_secs(args.join_timeout),
        ..WireConfig::default()
    };
    if mode == Mode::WireDevice {
        let addr = args.connect.context("--connect is required in wire-device mode")?;
        return devices(&plan, &addr, args.device, &cfg).map(|()| true);
    }
    let out = match (&args.out, &plan.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => args.plan.parent().unwrap_or(std::path::Path::new(".")).join(o),
        (None, None) => bail!("no output directory: pass --out or set `output_dir`"),
    };
    let outputs = match mode {
        Mode::Sim => execute_sim(&plan)?,
        Mode::WireCloudlet => {
            let addr = args.listen.context("--listen is required in wire-cloudlet mode")?;
            cloudlet(&plan, &addr, &cfg)?
        }
        Mode::WireDevice => unreachable!(),
    };
    let verdict = write_outputs(&out, &outputs)?;
    eprintln!(
        "{} runs, {} bound reports, {} failing, {} partial -> {}",
        verdict.runs,
        verdict.bound_reports,
        verdict.bound_failures,
        verdict.partial_runs,
        out.display()
    );
    Ok(verdict.success())
}

fn cloudlet(plan: &ExperimentPlan, addr: &str, cfg: &WireConfig) -> anyhow::Result<Vec<RunOutput>> {
    let listener = TcpListener::bind(addr).with_context(|| format!("cannot listen on {addr}"))?;
    let runs = plan.runs();
    let oracles = runner::oracles(plan, &runs)?;
    let mut outputs = Vec::new();
    for spec in runs {
        let scenario = plan.scenario_for(&spec);
        let options = runner::run_options(plan, &spec, &oracles);
        let r = run_cloudlet(&listener, &scenario, spec.policy, spec.seed, options, cfg)
            .with_context(|| format!("run {}", spec.id))?;
        if let Some(e) = &r.error {
            eprintln!("run {} aborted: {e}", spec.id);
        }
        outputs.push(RunOutput {
            spec,
            episode: r.episode,
            partial: r.partial,
        });
    }
    Ok(outputs)
}

fn devices(plan: &ExperimentPlan, addr: &str, only: Option<usize>, cfg: &WireConfig) -> anyhow::Result<()> {
    for spec in plan.runs() {
        let scenario = plan.scenario_for(&spec);
        let ids: Vec<usize> = match only {
            Some(d) if d >= scenario.num_devices() => {
                bail!("device {d} does not exist in scenario {}", scenario.name)
            }
            Some(d) => vec![d],
            None => (0..scenario.num_devices()).collect(),
        };
        std::thread::scope(|s| {
            let handles: Vec<_> = ids
                .iter()
                .map(|&d| {
                    let scenario = &scenario;
                    let spec = &spec;
                    s.spawn(move || run_device(addr, scenario, d, spec.policy, spec.seed, cfg))
                })
                .collect();
            for (d, h) in ids.iter().zip(handles) {
                h.join()
                    .map_err(|_| anyhow::anyhow!("device {d} panicked"))?
                    .with_context(|| format!("run {} device {d}", spec.id))?;
            }
            Ok::<(), anyhow::Error>(())
        })?;
    }
    Ok(())
}
