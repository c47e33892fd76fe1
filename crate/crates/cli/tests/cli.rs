use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "\
[grid]
background_levels = 5
initial_level = 3
truth_cells = 48
[physics]
wind = 20.0, 0.0
[inverse]
beta = 100.0
[detectors]
ring = 0.3, 12
[refinement]
cycles = 2
";

fn infomesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infomesh"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.ini");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn records(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join("manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn reruns_reproduce_every_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_scenario(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (dir, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let out = infomesh(&[
            "--scenario",
            &scn,
            "--seed",
            seed,
            "--out",
            dir.to_str().unwrap(),
            "invert",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ma = fs::read(a.join("manifest.jsonl")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.jsonl")).unwrap());
    assert_ne!(ma, fs::read(c.join("manifest.jsonl")).unwrap());

    let artifacts: Vec<Value> = records(&a).into_iter().filter(|r| r["kind"] == "artifact").collect();
    assert!(artifacts.iter().any(|r| r["path"] == "invert/q.vtk"));
    for r in artifacts {
        let bytes = fs::read(a.join(r["path"].as_str().unwrap())).unwrap();
        assert_eq!(r["bytes"], bytes.len());
    }
}

#[test]
fn global_refinement_quadruples_leaves() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_scenario(tmp.path(), SMALL);
    let out = tmp.path().join("g");
    let status = infomesh(&[
        "--scenario",
        &scn,
        "--out",
        out.to_str().unwrap(),
        "spectrum",
        "--criterion",
        "global",
    ]);
    assert!(status.status.success());
    let cycles: Vec<Value> = records(&out).into_iter().filter(|r| r["kind"] == "cycle").collect();
    let leaves: Vec<u64> = cycles.iter().map(|r| r["leaves"].as_u64().unwrap()).collect();
    assert_eq!(leaves, [64, 256, 1024]);
    let mins: Vec<f64> = cycles.iter().map(|r| r["min_eigenvalue"].as_f64().unwrap()).collect();
    for w in mins.windows(2) {
        assert!((3.0..=6.0).contains(&(w[0] / w[1])));
    }
    assert!(out.join("spectrum-global/cycle-2/spectrum.csv").exists());
}

#[test]
fn info_loop_stays_symmetric() {
    let tmp = tempfile::tempdir().unwrap();
    let scn = write_scenario(tmp.path(), SMALL);
    let out = tmp.path().join("i");
    assert!(
        infomesh(&["--scenario", &scn, "--out", out.to_str().unwrap(), "refine-loop"])
            .status
            .success()
    );
    let cycles: Vec<Value> = records(&out).into_iter().filter(|r| r["kind"] == "cycle").collect();
    assert_eq!(cycles.len(), 3);
    let leaves: Vec<u64> = cycles.iter().map(|r| r["leaves"].as_u64().unwrap()).collect();
    assert!(leaves.windows(2).all(|w| w[1] > w[0]));
    assert!(cycles.iter().all(|r| r["mirror_symmetric"] == true));
    let mesh = fs::read_to_string(out.join("refine-loop-info/cycle-0/mesh.csv")).unwrap();
    assert_eq!(mesh.lines().next(), Some("leaf_id,level,x_min,y_min,size,area"));
}

#[test]
fn scenario_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_scenario(tmp.path(), "[physics]\ndiffusion = banana\n");
    let out = infomesh(&[
        "--scenario",
        &bad,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
        "forward",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let crime = write_scenario(
        tmp.path(),
        "[grid]\nbackground_levels = 5\ninitial_level = 3\ntruth_cells = 32\n",
    );
    let dir = tmp.path().join("crime");
    let out = infomesh(&["--scenario", &crime, "--out", dir.to_str().unwrap(), "forward"]);
    assert_eq!(out.status.code(), Some(2));
    let out = infomesh(&[
        "--scenario",
        &crime,
        "--out",
        dir.to_str().unwrap(),
        "--allow-inverse-crime",
        "forward",
    ]);
    assert!(out.status.success());
}

#[test]
fn missing_scenario_file_is_an_io_error() {
    let out = infomesh(&["--scenario", "/nonexistent/scenario.ini", "forward"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn findim_demo_reports_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = infomesh(&["--out", tmp.path().to_str().unwrap(), "findim-demo"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 5);
    assert!(!text.contains("FAIL"));
}
