use std::path::Path;
use std::process::{Command, Output};

fn smat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smat")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, scans: usize) -> String {
    let cfg = dir.join("scene.toml");
    std::fs::write(&cfg, format!("scan_count = {scans}\nagent_count = 6\nseed = 21\n")).unwrap();
    let data = dir.join("data");
    let o = smat(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    data.to_string_lossy().into_owned()
}

#[test]
fn unknown_mode_is_rejected() {
    let o = smat(&["--mode", "sideways", "ablate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sideways"));
}

#[test]
fn missing_input_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = smat(&["run", "--input", missing.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("smat: ") && err.contains("poses.txt"), "{err}");
}

#[test]
fn bad_scene_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scene.toml");
    std::fs::write(&cfg, "corridor_length = -3.0\n").unwrap();
    let o = smat(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corridor_length"));
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 10);
    let p = |f: &str| format!("{data}/{f}");
    let o = smat(&["eval-map", "--map", &p("gt_static.map"), "--gt-static", &p("gt_static.map"), "--gt-dynamic", &p("gt_dynamic.map")]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "PR 100.00 RR 100.00 F1 1.0000");
    let o = smat(&["eval-mot", "--gt", &p("gt_tracks.txt"), "--pred", &p("gt_tracks.txt")]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("MOTA 1.0000 IDF1 1.0000 HOTA 1.0000"), "{}", stdout(&o));
}

#[test]
fn run_writes_outputs_and_nav_step_reads_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 30);
    let out = dir.path().join("out");
    let o = smat(&["run", "--input", &data, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["map.map", "tracks.txt", "report.txt", "timing.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.starts_with("SMAT-REPORT v1"));
    let o = smat(&["nav-step", "--map", out.join("map.map").to_str().unwrap(), "--position", "5,0", "--reference", "1,0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.starts_with("viewpoint ") || text.starts_with("exploration exhausted"), "{text}");
}

#[test]
fn ablate_lists_every_mode_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scene.toml");
    std::fs::write(&cfg, "scan_count = 25\nagent_count = 5\n").unwrap();
    let o = smat(&["ablate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6, "{text}");
    assert!(lines[0].starts_with("mode"));
    let modes: Vec<&str> = lines[1..].iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(modes, ["front_end_only", "back_end_only", "visibility_only", "occupancy_only", "full"]);
}
