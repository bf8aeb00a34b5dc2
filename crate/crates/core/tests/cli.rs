use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use heatprobe::run::RunReport;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn plan(name: &str) -> PathBuf {
    workspace().join("plans").join(format!("{name}.toml"))
}

fn heatprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatprobe"))
        .args(args)
        .env_remove("HEATPROBE_WORKERS")
        .output()
        .expect("spawn heatprobe")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn reference_plans_validate() {
    for name in ["static-ball", "drifting-ball", "linear-approach", "no-contact", "minimal"] {
        let p = plan(name);
        let o = heatprobe(&["validate", "--plan", p.to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        assert_eq!(stdout(&o).trim(), "ok");
    }
}

/// Copies the scenario next to a plan written from `plan_text`.
fn scratch_plan(dir: &Path, plan_text: &str, scenario_text: Option<&str>) -> PathBuf {
    let scenario = scenario_text
        .map(str::to_owned)
        .unwrap_or_else(|| fs::read_to_string(workspace().join("scenarios/minimal.toml")).unwrap());
    fs::write(dir.join("scenario.toml"), scenario).unwrap();
    let path = dir.join("plan.toml");
    fs::write(&path, plan_text).unwrap();
    path
}

const MINIMAL: &str = r#"
name = "scratch"
scenario = "scenario.toml"
seed = 3

[grid]
n = 12
steps = 24

[ladders]
tau = [8.0, 12.0, 16.0]
mu = [2.0]
theta = [0.5]
t_prime = [1.0]
"#;

#[test]
fn invalid_plans_are_rejected_with_reasons() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (MINIMAL.replace("mu = [2.0]", "mu = [2.5]"), "quarter"),
        (MINIMAL.replace("theta = [0.5]", "theta = [1.0]"), "open interval"),
        (MINIMAL.replace("tau = [8.0, 12.0, 16.0]", "tau = [12.0, 8.0, 16.0]"), "increasing"),
    ];
    for (text, needle) in cases {
        let p = scratch_plan(dir.path(), &text, None);
        let o = heatprobe(&["validate", "--plan", p.to_str().unwrap()]);
        assert!(!o.status.success());
        assert!(stderr(&o).contains(needle), "expected {needle:?} in {}", stderr(&o));
    }
}

#[test]
fn needle_inside_the_body_at_start_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fs::read_to_string(workspace().join("scenarios/minimal.toml"))
        .unwrap()
        .replace("[[-0.15, 0.5, 0.5], [0.1, 0.5, 0.5]]", "[[0.05, 0.5, 0.5], [0.1, 0.5, 0.5]]");
    let p = scratch_plan(dir.path(), MINIMAL, Some(&scenario));
    let o = heatprobe(&["validate", "--plan", p.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("t <= 0"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let p = scratch_plan(dir.path(), &MINIMAL.replace("steps = 24", "steps = \"many\""), None);
    let o = heatprobe(&["validate", "--plan", p.to_str().unwrap()]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("grid.steps") && err.contains("line 8"), "{err}");
}

#[test]
fn minimal_plan_gives_zero_indicators_and_no_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = heatprobe(&["run", "--plan", plan("minimal").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("reconstruction.json")).unwrap()).unwrap();
    assert!(!report.samples.is_empty());
    assert!(report.samples.iter().all(|c| c.sample.i_boundary.is_zero()));
    assert!(report.distances.is_empty() && report.searches.is_empty());
    let csv = fs::read_to_string(out.join("indicators.csv")).unwrap();
    assert!(csv.lines().filter(|l| !l.starts_with('#')).skip(1).all(|l| l.split(',').nth(5) == Some("0")));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fs::read_to_string(workspace().join("scenarios/static-ball.toml")).unwrap();
    let text = MINIMAL.replace("seed = 3", "seed = 3\nnoise = 0.01\nsnapshots = true");
    let p = scratch_plan(dir.path(), &text, Some(&scenario));
    let mut runs = Vec::new();
    for (k, workers) in ["1", "2", "1"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let o = heatprobe(&["run", "--plan", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", workers]);
        assert!(o.status.success(), "{}", stderr(&o));
        runs.push(out);
    }
    let mut files: Vec<String> = fs::read_dir(runs[0].join("snapshots"))
        .unwrap()
        .map(|e| format!("snapshots/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    files.sort();
    files.extend(["indicators.csv", "reconstruction.json"].map(String::from));
    for f in &files {
        let a = fs::read(runs[0].join(f)).unwrap();
        for r in &runs[1..] {
            assert!(a == fs::read(r.join(f)).unwrap(), "{f} differs");
        }
    }
    let (field, meta) = heatprobe::solver::read_snapshot(&runs[0].join("snapshots/needle0_tau8")).unwrap();
    assert_eq!(meta.levels, field.levels.len());

    let other = dir.path().join("seeded");
    let o = heatprobe(&["run", "--plan", p.to_str().unwrap(), "--out", other.to_str().unwrap(), "--seed", "99"]);
    assert!(o.status.success());
    assert_ne!(
        fs::read(runs[0].join("indicators.csv")).unwrap(),
        fs::read(other.join("indicators.csv")).unwrap(),
        "the seed drives the measurement noise"
    );
}

#[test]
fn every_output_carries_the_plan_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(heatprobe(&["run", "--plan", plan("minimal").to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());
    let report: RunReport = serde_json::from_str(&fs::read_to_string(out.join("reconstruction.json")).unwrap()).unwrap();
    assert_eq!(report.plan.name, "minimal");
    let hash = report.plan_hash;
    assert_eq!(hash.len(), 64);
    assert!(fs::read_to_string(out.join("indicators.csv")).unwrap().contains(&hash));
    for svg in fs::read_dir(out.join("plots")).unwrap() {
        assert!(fs::read_to_string(svg.unwrap().path()).unwrap().contains(&hash));
    }
}

#[test]
fn plot_and_report_read_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(heatprobe(&["run", "--plan", plan("minimal").to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());
    fs::remove_dir_all(out.join("plots")).unwrap();
    let o = heatprobe(&["plot", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(out.join("plots")).unwrap().count(), 4);
    let o = heatprobe(&["report", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("plan minimal"));
}

#[test]
fn failed_runs_leave_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("snapshots"), "in the way").unwrap();
    let p = scratch_plan(dir.path(), &MINIMAL.replace("seed = 3", "seed = 3\nsnapshots = true"), None);
    let o = heatprobe(&["run", "--plan", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let diag = fs::read_to_string(out.join("diagnostics.txt")).unwrap();
    assert!(diag.contains("plan_hash") && diag.contains("error"), "{diag}");
}
