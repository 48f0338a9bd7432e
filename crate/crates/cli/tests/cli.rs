use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn modar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = modar(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"{
  "scenario": {"name": "OCCLUSION_CORRIDOR", "frame_count": 40},
  "seed": 9,
  "detector": {"kind": "ORACLE"},
  "modar": {"mode": "OFFLINE", "past_offsets": 8, "future_offsets": 8, "trajectories": 2},
  "fusion": {"strategy": "EARLY_LATE"},
  "targets": [10, 20, 30]
}"#;

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p).into_iter().map(|f| Path::new(p.file_name().unwrap()).join(f)));
        } else {
            out.push(PathBuf::from(p.file_name().unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_then_detect_writes_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let d = tmp.path().join("d");
    let (c, ds) = (cfg.to_str().unwrap(), d.to_str().unwrap());
    ok(&["simulate", "--config", c, "--out", ds]);
    ok(&["detect", "--config", c, "--in", ds, "--out", ds]);
    assert!(d.join("detections.json").exists());
}

#[test]
fn pipeline_equals_manual_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let c = cfg.to_str().unwrap();
    let auto = tmp.path().join("auto");
    let manual = tmp.path().join("manual");
    ok(&["pipeline", "--config", c, "--out", auto.to_str().unwrap()]);
    let m = manual.to_str().unwrap();
    for stage in ["simulate", "detect", "track", "forecast", "modar", "fuse", "eval"] {
        ok(&[stage, "--config", c, "--in", m, "--out", m]);
    }
    let auto_files = files(&auto);
    assert!(auto_files.contains(&PathBuf::from("modar.jsonl")));
    for f in &auto_files {
        assert_eq!(
            std::fs::read(auto.join(f)).unwrap(),
            std::fs::read(manual.join(f)).unwrap(),
            "{f:?} differs"
        );
    }
    assert!(manual.join("forecasts.jsonl").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let c = cfg.to_str().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--config", c, "--out", a.to_str().unwrap(), "--seed", "1"]);
    ok(&["simulate", "--config", c, "--out", b.to_str().unwrap(), "--seed", "2"]);
    let frames = |d: &Path| std::fs::read(d.join("sequence").join("frames.jsonl")).unwrap();
    assert_ne!(frames(&a), frames(&b));
}

#[test]
fn eval_on_empty_boxes_reports_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"scenario": {"name": "STATIONARY_LOT", "frame_count": 5}, "fusion": {"strategy": "LIDAR_ONLY"}}"#,
    );
    let d = tmp.path().join("d");
    let (c, ds) = (cfg.to_str().unwrap(), d.to_str().unwrap());
    ok(&["simulate", "--config", c, "--out", ds]);
    std::fs::write(d.join("boxes.jsonl"), "").unwrap();
    ok(&["eval", "--config", c, "--out", ds]);
    let csv = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    let row = csv.lines().find(|l| l.starts_with("VEHICLE,L2,ALL,")).unwrap();
    assert!(row.starts_with("VEHICLE,L2,ALL,0.000000,0.000000,0,0,"), "{row}");
}

#[test]
fn config_errors_exit_2_with_pointer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"modar": {"mode": "ONLINE", "future_offsets": 4}}"#);
    let out = modar(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/modar/future_offsets"));
    let cfg = write_config(tmp.path(), r#"{"fusion": {"strategy": "MID"}}"#);
    let out = modar(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/fusion/strategy"));
}

#[test]
fn missing_inputs_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = modar(&["detect", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_combines_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for (i, past) in [2, 6].iter().enumerate() {
        let body = SMALL.replace("\"past_offsets\": 8", &format!("\"past_offsets\": {past}"));
        let cfg = tmp.path().join(format!("c{i}.json"));
        std::fs::write(&cfg, body).unwrap();
        let d = tmp.path().join(format!("run{i}"));
        ok(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        dirs.push(d.to_str().unwrap().to_string());
    }
    let rep = tmp.path().join("report");
    let mut args = vec!["report", "--out", rep.to_str().unwrap()];
    args.extend(dirs.iter().map(String::as_str));
    ok(&args);
    assert_eq!(std::fs::read_to_string(rep.join("summary.csv")).unwrap().lines().count(), 3);
    assert!(rep.join("aph_vs_modar.svg").exists());
}
