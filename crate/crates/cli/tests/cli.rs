use std::path::Path;
use std::process::{Command, Output};

use endorecon_core::io::save_mesh;
use endorecon_core::mesh::cube_mesh;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_endorecon"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for c in ["synth", "train", "render", "extract-mesh", "close-mesh", "simulate", "evaluate"] {
        assert!(text.contains(c), "{c} missing from help");
    }
}

#[test]
fn missing_dataset_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train", "--data", s(&dir.path().join("nope")), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("meta.json"));
}

#[test]
fn invalid_scene_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "width = 0\n").unwrap();
    let out = run(&["synth", "--out", s(&dir.path().join("d")), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn open_mesh_cannot_be_simulated() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = cube_mesh([0.0; 3], [0.1; 3]);
    m.faces.pop();
    let path = dir.path().join("open.ply");
    save_mesh(&m, &path).unwrap();
    let out = run(&["simulate", "--mesh", s(&path), "--steps", "1", "--out", s(&dir.path().join("sim"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unstable_time_step_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cube.ply");
    save_mesh(&cube_mesh([0.0; 3], [0.1; 3]), &path).unwrap();
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, "dt = 1.0\nsteps = 2\n").unwrap();
    let out = run(&["simulate", "--mesh", s(&path), "--config", s(&cfg), "--out", s(&dir.path().join("sim"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn close_then_simulate_a_small_surface() {
    let dir = tempfile::tempdir().unwrap();
    // a 4x4 vertex height field, open towards +z
    let mut v = Vec::new();
    for y in 0..4 {
        for x in 0..4 {
            v.push([x as f64 * 0.02, y as f64 * 0.02, 0.3 + 0.002 * (x + y) as f64]);
        }
    }
    let mut f = Vec::new();
    for y in 0..3u32 {
        for x in 0..3u32 {
            let a = y * 4 + x;
            f.push([a, a + 4, a + 1]);
            f.push([a + 1, a + 4, a + 5]);
        }
    }
    let open = endorecon_core::mesh::TriMesh::new(v, f).unwrap();
    let input = dir.path().join("open.ply");
    save_mesh(&open, &input).unwrap();
    let closed = dir.path().join("closed.ply");
    let report = dir.path().join("report.json");
    let out = run(&[
        "close-mesh", "--in", s(&input), "--offset", "0.03", "--out", s(&closed), "--report", s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["watertight"], true);
    assert_eq!(r["components"][0]["euler_characteristic"], 2);

    let sim = dir.path().join("sim");
    let out = run(&["--sequential", "simulate", "--mesh", s(&closed), "--steps", "20", "--probe", "--ply", "--out", s(&sim)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sim.join("simulation.json")).unwrap()).unwrap();
    assert!(summary["particles"].as_u64().unwrap() > 0);
    assert!(sim.join("particles_000000.bin").is_file());
    assert!(sim.join("particles_000020.ply").is_file());
}

#[test]
fn thickness_and_offset_conflict() {
    let out = run(&["close-mesh", "--in", "a.ply", "--thickness", "1", "--offset", "1", "--out", "b.ply"]);
    assert_eq!(out.status.code(), Some(2));
}
