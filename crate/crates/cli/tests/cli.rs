use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use swarmform::load_scenario;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_swarmform"));
    c.env_remove("SWARMFORM_LOG");
    c
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copy of a bundled scenario with a different tick budget.
fn with_max_ticks(dir: &Path, name: &str, max_ticks: u64) -> PathBuf {
    let mut cfg = load_scenario(&fs::read_to_string(scenarios().join(name)).unwrap()).unwrap();
    cfg.sim.max_ticks = max_ticks;
    let path = dir.join(format!("{max_ticks}_{name}"));
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_run_writes_trace_and_metrics_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("arrowhead36.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = run(&["run", "--scenario", s(&scenario), "--out", s(dir)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let trace = fs::read(a.join("trace.jsonl")).unwrap();
    assert_eq!(trace, fs::read(b.join("trace.jsonl")).unwrap());
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header = lines.next().unwrap();
    for col in ["completion_tick", "collisions", "messages_sent", "messages_lost", "max_terminal_error_m", "timeout_flag"] {
        assert!(header.split(',').any(|h| h == col), "missing column {col}");
    }
    assert_eq!(lines.count(), 1);
}

#[test]
fn missing_scenario_names_the_path() {
    let o = run(&["run", "--scenario", "no/such/scenario.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no/such/scenario.json"));
}

#[test]
fn forced_timeout_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = with_max_ticks(tmp.path(), "arrowhead36.json", 10);
    let o = run(&["run", "--scenario", s(&scenario), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let metrics = fs::read_to_string(tmp.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().contains(",true,"));
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("prepositioned36.json");
    let out = tmp.path().join("nested/out");
    let args = ["run", "--scenario", s(&scenario), "--out", s(&out)];
    assert_eq!(code(&run(&args)), 0);
    let before = fs::read(out.join("trace.jsonl")).unwrap();
    let o = run(&args);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"));
    assert_eq!(fs::read(out.join("trace.jsonl")).unwrap(), before);
    let mut forced = args.to_vec();
    forced.extend(["--force", "--seed", "9"]);
    assert_eq!(code(&run(&forced)), 0);
}

#[test]
fn invalid_overrides_are_config_errors() {
    let scenario = scenarios().join("prepositioned36.json");
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", "--scenario", s(&scenario), "--loss", "1.5", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("loss"), "{}", stderr(&o));
    let o = run(&["run", "--scenario", s(&scenario), "--estimator", "kalman"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn validate_accepts_every_bundled_scenario() {
    let mut args = vec!["validate".to_owned()];
    for entry in fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            args.push("--scenario".into());
            args.push(path.to_str().unwrap().into());
        }
    }
    assert!(args.len() > 2);
    let o = bin().args(&args).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn validate_rejects_a_broken_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{"initial_poses": [], "targets": [[0.1, 0.0]]}"#).unwrap();
    let o = run(&["validate", "--scenario", s(&path)]);
    assert_eq!(code(&o), 1);
}

fn sweep_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("sweep.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn sweep_covers_the_cross_product_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("prepositioned36.json");
    let o = run(&["sweep", "--scenario", s(&scenario), "--loss", "0,0.2", "--seed", "1-5", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = sweep_rows(tmp.path());
    assert_eq!(rows.len(), 10);
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[1].clone(), r[0].clone())).collect();
    let expected: Vec<(String, String)> = ["0.0", "0.2"]
        .iter()
        .flat_map(|p| (1..=5).map(move |s| (p.to_string(), s.to_string())))
        .collect();
    assert_eq!(keys, expected);
}

#[test]
fn sweep_with_a_timeout_flags_the_row_and_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = with_max_ticks(tmp.path(), "arrowhead36.json", 5);
    let o = run(&["sweep", "--scenario", s(&scenario), "--loss", "0", "--seed", "1,2", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(sweep_rows(tmp.path()).iter().all(|r| r[7] == "true"));
}

#[test]
fn render_writes_one_frame_per_stride() {
    let tmp = tempfile::tempdir().unwrap();
    // Ticks 0 through 1000 are recorded.
    let scenario = with_max_ticks(tmp.path(), "arrowhead36.json", 1001);
    let run_dir = tmp.path().join("run");
    assert_eq!(code(&run(&["run", "--scenario", s(&scenario), "--out", s(&run_dir)])), 2);
    let frames = tmp.path().join("frames");
    let o = run(&["render", "--trace", s(&run_dir.join("trace.jsonl")), "--stride", "200", "--out", s(&frames)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> =
        fs::read_dir(&frames).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    let expected: Vec<String> = (0..=5).map(|k| format!("frame_{:06}.svg", k * 200)).collect();
    assert_eq!(names, expected);
}

fn attr(tag: &str, name: &str) -> f64 {
    let key = format!(" {name}=\"");
    let start = tag.find(&key).unwrap() + key.len();
    tag[start..].split('"').next().unwrap().parse().unwrap()
}

#[test]
fn final_frame_of_a_completed_run_has_every_robot_in_a_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("prepositioned36.json");
    let run_dir = tmp.path().join("run");
    assert_eq!(code(&run(&["run", "--scenario", s(&scenario), "--out", s(&run_dir)])), 0);
    let frames = tmp.path().join("frames");
    let o = run(&["render", "--trace", s(&run_dir.join("trace.jsonl")), "--out", s(&frames)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = fs::read_to_string(frames.join("frame_000000.svg")).unwrap();
    let cells: Vec<(f64, f64, f64)> = svg
        .lines()
        .filter(|l| l.contains("class=\"target\""))
        .map(|l| (attr(l, "x"), attr(l, "y"), attr(l, "width")))
        .collect();
    let robots: Vec<(f64, f64)> =
        svg.lines().filter(|l| l.starts_with("<circle")).map(|l| (attr(l, "cx"), attr(l, "cy"))).collect();
    assert_eq!(robots.len(), 36);
    for (cx, cy) in robots {
        assert!(cells.iter().any(|&(x, y, w)| cx >= x && cx <= x + w && cy >= y && cy <= y + w));
    }
}

#[test]
fn render_rejects_empty_and_malformed_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = run(&["render", "--trace", s(&empty), "--out", s(&tmp.path().join("f1"))]);
    assert_eq!(code(&o), 1);

    let run_dir = tmp.path().join("run");
    let scenario = scenarios().join("prepositioned36.json");
    assert_eq!(code(&run(&["run", "--scenario", s(&scenario), "--out", s(&run_dir)])), 0);
    let text = fs::read_to_string(run_dir.join("trace.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[4] = "{\"tick\": oops}";
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n")).unwrap();
    let o = run(&["render", "--trace", s(&bad), "--out", s(&tmp.path().join("f2"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
}
