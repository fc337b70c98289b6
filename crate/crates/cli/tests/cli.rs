use std::path::Path;
use std::process::{Command, Output};

use howseg_core::io::{read_scene_file, write_scene_file};
use howseg_core::scene::FrameParts;
use howseg_core::SceneFrame;

fn howseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_howseg"))
        .args(args)
        .env_remove("HOWSEG_PORT")
        .output()
        .expect("spawn howseg")
}

fn synth(out: &Path, seed: &str) {
    let o = howseg(&["synth", "--base", "3", "--novel", "1", "--points-per-class", "40", "--seed", seed, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

/// CSV body without the trailing wall-time column.
fn rows_without_time(stdout: &[u8]) -> Vec<String> {
    String::from_utf8(stdout.to_vec())
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn synth_writes_readable_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.hows"), dir.path().join("b.hows"));
    synth(&a, "1");
    synth(&b, "1");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let frame = read_scene_file(&a).unwrap();
    assert_eq!(frame.len(), 160);
    assert_eq!(frame.base_class_count(), 3);
}

#[test]
fn synth_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.hows");
    let o = howseg(&["synth", "--points-per-class", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    assert_eq!(howseg(&["synth", "--base", "many"]).status.code(), Some(1));
}

#[test]
fn run_reports_within_budget_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.hows");
    synth(&scene, "4");
    let args = ["run", scene.to_str().unwrap(), "--strategy", "ioncoc", "--budget", "10", "--protos", "8"];
    let first = howseg(&args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let rows = rows_without_time(&first.stdout);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("scene,strategy,budget,clicks_used,mIoU_b,mIoU_n,mIoU_a,HM"));
    let fields: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(&fields[..3], ["s", "ioncoc", "10"]);
    assert!(fields[3].parse::<usize>().unwrap() <= 10);
    assert_eq!(rows, rows_without_time(&howseg(&args).stdout));
}

#[test]
fn run_json_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.hows");
    let report = dir.path().join("r.json");
    synth(&scene, "2");
    let o = howseg(&["run", scene.to_str().unwrap(), "--strategy", "ococ", "--budget", "20", "--format", "json", "--out", report.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v[0]["strategy"], "ococ");
    assert_eq!(v[0]["clicks_used"], 4);
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.hows");
    synth(&scene, "0");
    let path = scene.to_str().unwrap();
    assert_eq!(howseg(&["run", path, "--budget", "0"]).status.code(), Some(1));
    assert_eq!(howseg(&["run", path, "--strategy", "greedy"]).status.code(), Some(1));
    assert_eq!(howseg(&["run", "/nonexistent/s.hows"]).status.code(), Some(2));

    std::fs::write(dir.path().join("junk.hows"), b"not a scene").unwrap();
    assert_eq!(howseg(&["run", dir.path().join("junk.hows").to_str().unwrap()]).status.code(), Some(2));

    let parts = read_scene_file(&scene).unwrap().into_parts();
    let unlabeled = SceneFrame::new(FrameParts { gt_labels: None, ..parts }).unwrap();
    let bare = dir.path().join("bare.hows");
    write_scene_file(&unlabeled, &bare).unwrap();
    assert_eq!(howseg(&["run", bare.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn ablate_single_scene_grid() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("only.hows"), "3");
    let o = howseg(&["ablate", dir.path().to_str().unwrap(), "--protos", "4,8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = rows_without_time(&o.stdout);
    assert_eq!(rows.len(), 1 + 5 + 2);
    let budgets: Vec<&str> = rows[1..6].iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(budgets, ["0", "5", "10", "20", "30"]);
    assert!(rows[1].starts_with("budget,0,30,1,0.0,"));
    assert!(rows[6].starts_with("protos,20,4,1,"));
    assert!(rows[7].starts_with("protos,20,8,1,"));
}

#[test]
fn ablate_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(howseg(&["ablate", dir.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    assert_eq!(howseg(&["--help"]).status.code(), Some(0));
    assert_eq!(howseg(&[]).status.code(), Some(1));
}
