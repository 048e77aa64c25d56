use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn orca() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_orca"));
    for v in ["ORCA_API_BASE", "ORCA_API_KEY", "ORCA_MODEL"] {
        c.env_remove(v);
    }
    c
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn header(path: &Path) -> Value {
    let text = std::fs::read_to_string(path).unwrap();
    let line: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    line["header"].clone()
}

const GARDEN: &str = include_str!("../../core/tasks/garden_transplant.yaml");

#[test]
fn run_writes_a_trace_with_its_invocation() {
    let dir = tempfile::tempdir().unwrap();
    let task = dir.path().join("garden.yaml");
    std::fs::write(&task, GARDEN).unwrap();
    let out = dir.path().join("t.jsonl");
    let args = ["run", "--task", task.to_str().unwrap(), "--policy", "orca", "--seed", "7", "--p-wrong", "0.3"];
    let stdout = ok(&orca()
        .args(args)
        .args(["--n-retry", "2", "--backend", "scripted", "--out", out.to_str().unwrap()])
        .output()
        .unwrap());
    assert!(stdout.contains("garden-transplant orca seed 7"), "{stdout}");
    let h = header(&out);
    let invocation = h["invocation"].as_str().unwrap();
    assert!(invocation.contains("--seed 7") && invocation.contains("--p-wrong 0.3"), "{invocation}");
    assert_eq!(h["seed"], 7);

    // The same invocation reproduces the same episode.
    let again = ok(&orca().args(args).output().unwrap());
    let written = std::fs::read_to_string(&out).unwrap();
    assert_eq!(written.lines().skip(1).collect::<Vec<_>>(), again.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn run_accepts_builtin_task_ids_and_streams_to_stdout() {
    let stdout = ok(&orca().args(["run", "--task", "office-print", "--policy", "open-loop"]).output().unwrap());
    let first: Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(first["header"]["policy"], "open_loop");
    assert!(stdout.lines().count() > 2);
}

#[test]
fn invalid_combinations_fail_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.jsonl");
    let cases: [&[&str]; 4] = [
        &["run", "--task", "kitchen-tea", "--max-turns", "2"],
        &["run", "--task", "kitchen-tea", "--p-wrong", "1.5"],
        &["run", "--task", "no-such-task"],
        &["run", "--task", "kitchen-tea", "--policy", "greedy"],
    ];
    for args in cases {
        let o = orca().args(args).args(["--out", out.to_str().unwrap()]).output().unwrap();
        assert!(!o.status.success(), "{args:?}");
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    }
    assert!(!out.exists());
    let o = orca().args(["run", "--task", "kitchen-tea", "--frobnicate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn remote_backend_needs_its_environment() {
    let o = orca().args(["run", "--task", "kitchen-tea", "--backend", "remote"]).output().unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    for v in ["ORCA_API_BASE", "ORCA_API_KEY", "ORCA_MODEL"] {
        assert!(err.contains(v), "{err}");
    }
    let dir = tempfile::tempdir().unwrap();
    let o = orca()
        .args(["bench", "--suite", "desk", "--backend", "remote", "--out", dir.path().join("t").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(!dir.path().join("t").exists());
}

#[test]
fn validate_task_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.yaml");
    std::fs::write(&good, GARDEN).unwrap();
    let stdout = ok(&orca().args(["validate-task", good.to_str().unwrap()]).output().unwrap());
    assert!(stdout.contains("ok (garden-transplant, 5 subgoals)"), "{stdout}");

    let bad = dir.path().join("bad.yaml");
    std::fs::write(&bad, GARDEN.replace("avatars: [A]", "avatars: []").replace("id: sg2", "id: sg1")).unwrap();
    let o = orca().args(["validate-task", bad.to_str().unwrap()]).output().unwrap();
    assert!(!o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("avatars"), "{stdout}");
    assert!(stdout.contains("duplicate subgoal id `sg1`"), "{stdout}");
}

#[test]
fn bench_then_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    let t = traces.to_str().unwrap();
    let args = ["bench", "--suite", "desk", "--policy", "orca,open_loop", "--seeds", "0..2", "--p-wrong", "0.3"];
    let stdout = ok(&orca().args(args).args(["--jobs", "2", "--out", t]).output().unwrap());
    assert!(stdout.starts_with("40 written, 0 already present, 0 failed"), "{stdout}");
    let h = header(&traces.join("orca/kitchen-tea/1.jsonl"));
    assert!(h["invocation"].as_str().unwrap().contains("--seeds 0..2"));
    let stdout = ok(&orca().args(args).args(["--jobs", "2", "--out", t]).output().unwrap());
    assert!(stdout.starts_with("0 written, 40 already present"), "{stdout}");

    let ann = dir.path().join("ann.jsonl");
    let record = serde_json::json!({
        "annotator_id": "ann1", "case_id": "kitchen-tea-s0",
        "pps": {"orca": 5, "open_loop": 3}, "best": "orca", "worst": "open_loop", "timestamp": 1
    });
    std::fs::write(&ann, format!("{record}\n")).unwrap();
    let report = dir.path().join("report.json");
    let stdout = ok(&orca()
        .args(["metrics", "--traces", t, "--annotations", ann.to_str().unwrap(), "--out", report.to_str().unwrap()])
        .output()
        .unwrap());
    assert!(stdout.contains("TSR (%)") && stdout.contains("BWS (%)"), "{stdout}");
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["cases"], 20);
    assert_eq!(json["annotations"], 1);

    // Default report location is inside the trace directory.
    ok(&orca().args(["metrics", "--traces", t]).output().unwrap());
    assert!(traces.join("metrics.json").exists());
}

#[test]
fn bench_suite_file_with_a_broken_task_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.yaml"), "task_id: broken\n").unwrap();
    let suite = dir.path().join("suite.yaml");
    std::fs::write(&suite, "suite_id: mini\ntasks: [kitchen-tea, broken.yaml]\npolicies: [orca]\nseeds: [0]\n").unwrap();
    let traces = dir.path().join("traces");
    let o = orca()
        .args(["bench", "--suite", suite.to_str().unwrap(), "--out", traces.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("1 written, 0 already present, 1 failed"));
    assert!(traces.join("orca/kitchen-tea/0.jsonl").exists());
    assert!(traces.join("errors.jsonl").exists());
}

fn http_get(port: u16, path: &str) -> Option<(u16, String)> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut text = String::new();
    s.read_to_string(&mut text).ok()?;
    let status = text.split_whitespace().nth(1)?.parse().ok()?;
    let body = text.split_once("\r\n\r\n")?.1.to_string();
    Some((status, body))
}

struct Killed(std::process::Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_answers_case_requests() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    ok(&orca()
        .args(["bench", "--suite", "desk", "--seeds", "0", "--out", traces.to_str().unwrap()])
        .output()
        .unwrap());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let _server = Killed(
        orca()
            .args(["serve", "--port", &port.to_string(), "--data-dir", dir.path().join("data").to_str().unwrap()])
            .args(["--traces", traces.to_str().unwrap()])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(20);
    let (status, body) = loop {
        if let Some(r) = http_get(port, "/api/cases") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(100));
    };
    assert_eq!(status, 200);
    let index: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(index["cases"].as_array().unwrap().len(), 10);
    let (status, _) = http_get(port, "/api/cases/nope").unwrap();
    assert_eq!(status, 404);
    assert!(dir.path().join("data/salt").exists());
}
