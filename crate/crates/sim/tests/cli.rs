mod common;

use std::path::Path;
use std::process::Command;

use common::bundled;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_offload-sim"))
}

fn write_plan(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("plan.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn scenario_list() -> String {
    format!("scenarios = [{:?}, {:?}]", bundled("scenario1"), bundled("scenario2"))
}

fn run(plan: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    bin()
        .args(["run", "--plan"])
        .arg(plan)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn onalgo_plan_writes_holding_bound_reports() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        &format!("{}\npolicies = [{{ kind = \"on-algo\" }}]\nseeds = [1]\nslots = 10000\n", scenario_list()),
    );
    let out = dir.path().join("out");
    let o = run(&plan, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in ["scenario1", "scenario2"] {
        let text = std::fs::read_to_string(out.join(format!("bounds_{s}_onalgo_seed1.json"))).unwrap();
        let b: serde_json::Value = serde_json::from_str(&text).unwrap();
        let cps = b["checkpoints"].as_array().unwrap();
        let ts: Vec<u64> = cps.iter().map(|c| c["T"].as_u64().unwrap()).collect();
        assert_eq!(ts, vec![10, 100, 1000, 10000]);
        assert!(cps.iter().all(|c| c["gap_holds"] == true && c["viol_holds"] == true));
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 2);
    assert!(summary[0]["bounds_hold"] == true && summary[0]["partial"] == false);
}

#[test]
fn four_policies_give_four_rows_per_scenario_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        &format!(
            "{}\npolicies = [{{ kind = \"on-algo\" }}, {{ kind = \"ato\", threshold = 0.7 }}, {{ kind = \"rco\" }}, {{ kind = \"ocos\" }}]\nseeds = [1, 2]\nslots = 500\nrecord_trajectory = true\n",
            scenario_list()
        ),
    );
    let out = dir.path().join("out");
    assert!(run(&plan, &out, &[]).status.success());
    let mut rdr = csv::Reader::from_path(out.join("comparison.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 16);
    for s in ["scenario1", "scenario2"] {
        for seed in ["1", "2"] {
            let n = rows.iter().filter(|r| &r[0] == s && &r[1] == seed).count();
            assert_eq!(n, 4);
        }
    }
    let t = std::fs::read_to_string(out.join("trajectory_scenario2_ocos_seed2.csv")).unwrap();
    assert!(t.starts_with("slot,device,o,h,w,offloaded,served,gain,power\n"));
    assert_eq!(t.lines().count(), 1 + 500 * 4);
}

#[test]
fn reruns_produce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        &format!(
            "{}\npolicies = [{{ kind = \"on-algo\" }}, {{ kind = \"rco\" }}]\nseed_count = 3\nslots = 2000\nrecord_trajectory = true\nschedules = [{{ kind = \"constant\", a = 0.5 }}, {{ kind = \"power-decay\", a = 2.0, beta = 0.5 }}]\n",
            scenario_list()
        ),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&plan, &a, &[]).status.success());
    assert!(run(&plan, &b, &[]).status.success());
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 10);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
    assert!(a.join("bounds_scenario1_onalgo_const-0.5_seed3.json").exists());
}

#[test]
fn usage_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), &format!("{}\npolicies = []\n", scenario_list()));
    let o = run(&plan, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no policies"));

    let plan = write_plan(dir.path(), "scenarios = [\"missing.toml\"]\npolicies = [{ kind = \"rco\" }]\n");
    assert_eq!(run(&plan, &dir.path().join("out"), &[]).status.code(), Some(2));

    let plan = write_plan(dir.path(), &format!("{}\npolicies = [{{ kind = \"rco\" }}]\n", scenario_list()));
    let o = run(&plan, &dir.path().join("out"), &["--mode", "wire-cloudlet"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--listen"));
}

#[test]
fn seed_override_runs_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        &format!("{}\npolicies = [{{ kind = \"rco\" }}]\nslots = 100\n", scenario_list()),
    );
    let out = dir.path().join("out");
    assert!(run(&plan, &out, &["--seed-override", "9"]).status.success());
    let rows = csv::Reader::from_path(out.join("comparison.csv")).unwrap().records().count();
    assert_eq!(rows, 2);
}

#[test]
fn wire_mode_over_two_processes_matches_sim_mode() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(
        dir.path(),
        &format!(
            "scenarios = [{:?}]\npolicies = [{{ kind = \"on-algo\" }}, {{ kind = \"ocos\" }}]\nseeds = [4]\nslots = 300\n",
            bundled("scenario2")
        ),
    );
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let wire = dir.path().join("wire");
    let mut cloudlet = bin()
        .args(["run", "--mode", "wire-cloudlet", "--listen", &addr, "--plan"])
        .arg(&plan)
        .arg("--out")
        .arg(&wire)
        .spawn()
        .unwrap();
    let devices = bin()
        .args(["run", "--mode", "wire-device", "--connect", &addr, "--plan"])
        .arg(&plan)
        .output()
        .unwrap();
    assert!(devices.status.success(), "{}", String::from_utf8_lossy(&devices.stderr));
    assert!(cloudlet.wait().unwrap().success());
    let sim = dir.path().join("sim");
    assert!(run(&plan, &sim, &[]).status.success());
    for f in ["summary.json", "comparison.csv", "bounds_scenario2_onalgo_seed4.json"] {
        assert_eq!(std::fs::read(wire.join(f)).unwrap(), std::fs::read(sim.join(f)).unwrap(), "{f}");
    }
}
