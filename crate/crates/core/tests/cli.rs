use std::path::Path;
use std::process::Command;

fn spoq(args: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_spoq"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
        .status;
    status.code().unwrap()
}

fn generate(dir: &Path, name: &str, seed: &str) -> String {
    let path = dir.join(name).to_str().unwrap().to_string();
    assert_eq!(spoq(&["generate", "--small", "--seed", seed, "--out", &path]), 0);
    path
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.txt", "4");
    let b = generate(dir.path(), "b.txt", "4");
    let c = generate(dir.path(), "c.txt", "5");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn solve_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "inst.txt", "0");
    let out = dir.path().join("run");
    let code = spoq(&["solve", "--instance", &inst, "--penalty", "spoq", "--p", "0.75", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["solver_id"], "trvmfb");
    assert_eq!(report["stop_reason"], "converged");
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,objective,"));
    assert!(trace.lines().count() > 1);
}

#[test]
fn exit_codes_separate_iteration_caps_from_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "inst.txt", "0");
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    assert_eq!(spoq(&["solve", "--instance", &inst, "--max-outer", "1", "--eps", "0", "--out", out]), 2);
    assert_eq!(spoq(&["solve", "--instance", "/nonexistent/file", "--out", out]), 3);
    assert_eq!(spoq(&["solve", "--instance", &inst, "--penalty", "cauchy", "--out", out]), 3);
    assert_eq!(spoq(&["solve", "--instance", &inst, "--gamma", "2.5", "--out", out]), 3);
    assert_eq!(spoq(&["solve", "--instance", &inst, "--penalty", "l1", "--solver", "trvmfb", "--out", out]), 3);
    assert_eq!(spoq(&["frobnicate"]), 3);
}

#[test]
fn benchmark_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    std::fs::write(
        &plan,
        "preset = \"small\"\nseeds = 2\nnoise_percent = [0.1]\n\n[[penalty]]\nkind = \"l1\"\n\n\
         [[penalty]]\nkind = \"spoq\"\np = 0.75\nq = 2\nalpha = 7e-7\nbeta = 3e-3\neta = 0.1\n",
    )
    .unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        assert_eq!(
            spoq(&["benchmark", "--plan", plan.to_str().unwrap(), "--jobs", "2", "--out", out.to_str().unwrap()]),
            0
        );
        out
    };
    let a = run("first");
    let b = run("second");
    for file in ["runs.csv", "table.csv", "failures.csv"] {
        assert_eq!(
            std::fs::read_to_string(a.join(file)).unwrap(),
            std::fs::read_to_string(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let runs = std::fs::read_to_string(a.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2);
    let header = runs.lines().next().unwrap();
    for col in ["seed", "config_hash", "solver_id"] {
        assert!(header.split(',').any(|c| c == col), "{header}");
    }
    // the written plan replays the same run
    let c = dir.path().join("third");
    assert_eq!(
        spoq(&["benchmark", "--plan", a.join("plan.toml").to_str().unwrap(), "--out", c.to_str().unwrap()]),
        0
    );
    assert_eq!(
        std::fs::read_to_string(a.join("table.csv")).unwrap(),
        std::fs::read_to_string(c.join("table.csv")).unwrap()
    );
}

#[test]
fn empty_plan_gives_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    std::fs::write(&plan, "preset = \"small\"\nseeds = 0\n").unwrap();
    let out = dir.path().join("out");
    assert_eq!(spoq(&["benchmark", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
    assert_eq!(std::fs::read_to_string(out.join("runs.csv")).unwrap().lines().count(), 1);
}

#[test]
fn defaults_print_a_loadable_plan() {
    let out = Command::new(env!("CARGO_BIN_EXE_spoq")).args(["defaults", "--small"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let plan = spoq::cli::ExperimentPlan::from_toml(&text).unwrap();
    assert_eq!(plan, spoq::cli::ExperimentPlan::small());
}

#[test]
fn gridsearch_writes_best_config() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "inst.txt", "0");
    let out = dir.path().join("grid");
    let code = spoq(&[
        "gridsearch", "--instance", &inst, "--penalty", "welsch", "--points", "3", "--min-exp", "-1",
        "--max-exp", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(out.join("grid.csv")).unwrap().lines().count(), 4);
    let best: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("best.json")).unwrap()).unwrap();
    assert!(best["snr_db"].as_f64().unwrap().is_finite());
}
