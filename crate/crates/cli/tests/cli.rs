use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

const BIN: &str = env!("CARGO_BIN_EXE_sensorsim");

fn sensorsim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_plan(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("plan.json");
    fs::write(
        &path,
        r#"{
  "series": [{"label": "[1-2]", "changes": 5, "requests": 1}],
  "runs_per_series": 2,
  "base_seed": 7,
  "world": {"n_resources": 50, "horizon": 20000, "measurement_interval": 1000},
  "strategies": ["robot", "sensors"]
}"#,
    )
    .unwrap();
    path
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(sensorsim(&["frobnicate"]).status.code(), Some(2));
    let o = sensorsim(&["simulate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn simulate_writes_runs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path());
    let out = dir.path().join("out");
    let o = sensorsim(&["simulate", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("[1-2] robot: freshness_last_half="));
    assert!(stdout.contains("[1-2] sensors: freshness_last_half="));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "series-1-2_run1_robot.csv",
            "series-1-2_run1_sensors.csv",
            "series-1-2_run2_robot.csv",
            "series-1-2_run2_sensors.csv",
            "summary.csv"
        ]
    );
    let run = fs::read_to_string(out.join("series-1-2_run1_robot.csv")).unwrap();
    assert_eq!(run.lines().next(), Some("t,freshness_pct,bytes_cumulative"));
    assert_eq!(run.lines().count(), 21);
}

#[test]
fn bad_plan_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    let text = fs::read_to_string(tiny_plan(dir.path()))
        .unwrap()
        .replace("\"runs_per_series\": 2", "\"runs_per_series\": 0");
    fs::write(&path, text).unwrap();
    let o = sensorsim(&["simulate", "--plan", path.to_str().unwrap(), "--out", "/nonexistent/x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("runs_per_series"));

    let text = fs::read_to_string(&path).unwrap().replace("\"base_seed\"", "\"base_sead\"");
    fs::write(&path, text).unwrap();
    let o = sensorsim(&["simulate", "--plan", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("base_sead"));
}

#[test]
fn missing_plan_file_is_a_runtime_error() {
    let o = sensorsim(&["simulate", "--plan", "/nonexistent/plan.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub");
    let o = sensorsim(&["simulate", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn environment_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path());
    let out = dir.path().join("env-out");
    let o = Command::new(BIN)
        .args(["simulate", "--plan", plan.to_str().unwrap()])
        .env("SENSORSIM_OUT", &out)
        .env("SENSORSIM_STRATEGIES", "sensors")
        .env("SENSORSIM_RUNS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("series-1-2_run1_sensors.csv").exists());
    assert!(!out.join("series-1-2_run1_robot.csv").exists());
}

#[test]
fn report_prints_grids_and_rejects_bad_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let plan = tiny_plan(dir.path());
    let out = dir.path().join("out");
    let o = sensorsim(&["simulate", "--plan", plan.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());

    let o = sensorsim(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.matches("(%)").count(), 2);
    assert_eq!(text.matches("(Gb)").count(), 2);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = sensorsim(&["report", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no run CSVs"));

    fs::write(out.join("series-1-2_run1_robot.csv"), "t,freshness_pct,bytes_cumulative\n1,abc,3\n").unwrap();
    let o = sensorsim(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("series-1-2_run1_robot.csv"));
}

#[test]
fn selftest_passes() {
    let o = sensorsim(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8(o.stdout).unwrap().contains("selftest: PASS"));
}

#[test]
fn bind_failure_exits_1() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = sensorsim(&["robotd", "--listen", &addr]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot bind"));
    let o = sensorsim(&[
        "sensor-proxy",
        "--listen",
        &addr,
        "--origin",
        "http://127.0.0.1:1",
        "--robot",
        "http://127.0.0.1:1",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[cfg(unix)]
#[test]
fn sigterm_prints_counters_and_exits_0() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(BIN)
        .args([
            "sensor-proxy",
            "--listen",
            &format!("127.0.0.1:{port}"),
            "--origin",
            "http://127.0.0.1:1",
            "--robot",
            "http://127.0.0.1:1",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // wait until the proxy logs that it is listening
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    while err.read_line(&mut line).unwrap() > 0 && !line.contains("sensor proxy up") {
        line.clear();
    }
    std::thread::sleep(Duration::from_millis(50));
    let killed = Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    assert!(killed.success());
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("sensor-proxy stopped: requests=0 fingerprints=0 notifications=0 overflows=0"));
}
