use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use previz_core::inpaint::{read_latent, write_latent, write_schedule, Latent, NoiseSchedule};
use previz_core::silhouette::io::write_soft_mask;
use previz_core::silhouette::SoftMask;

fn previz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_previz"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("PREVIZ_CONFIG")
        .env_remove("PREVIZ_OUT")
        .env_remove("PREVIZ_SEED")
        .env_remove("PREVIZ_JOBS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn demo_inputs(root: &Path) -> PathBuf {
    let o = previz(&["demo", "--no-run", "--out", root.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    PathBuf::from(stdout(&o).trim())
}

#[test]
fn version_lists_schemas() {
    let o = previz(&["--version"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["camera 1", "contact 1", "manifest 1", "script 1", "latent 1", "depth 1", "pose 1", "placement 1", "placement-trace csv"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn run_equals_the_subcommand_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_inputs(tmp.path());
    let c = config.to_str().unwrap();

    let runs = tmp.path().join("runs");
    let o = previz(&["run", "--config", c, "--out", runs.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = PathBuf::from(stdout(&o).trim());
    assert!(run_dir.starts_with(&runs));

    let steps = tmp.path().join("steps");
    let s = steps.to_str().unwrap();
    for cmd in ["parse", "refine-pose", "place", "export-plan", "eval"] {
        let o = previz(&[cmd, "--config", c, "--out", s]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    for f in [
        "script.txt",
        "plan.json",
        "manifest.json",
        "metrics.json",
        "poses.bin",
        "keyframe_01/pose.json",
        "keyframe_01/pose_trace.csv",
        "keyframe_01/placement.json",
        "keyframe_01/placement_trace.csv",
        "keyframe_01/human.obj",
        "keyframe_01/preview.png",
    ] {
        let a = fs::read(run_dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        let b = fs::read(steps.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert!(a == b, "{f} differs between run and subcommands");
    }
}

#[test]
fn missing_mesh_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let config = demo_inputs(tmp.path());
    fs::remove_file(config.parent().unwrap().join("human.obj")).unwrap();
    let o = previz(&["run", "--config", config.to_str().unwrap(), "--out", tmp.path().join("runs").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("human.obj"), "{}", stderr(&o));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn parse_reports_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.txt");
    fs::write(&good, "kitchen\n---\n1. [INTERACTIVE] grab the mug @ mug | contacts: right hand->handle\n").unwrap();
    let o = previz(&["parse", good.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), fs::read_to_string(&good).unwrap());

    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "kitchen\n---\n1. [INTERACTIVE] grab the mug @ mug | contacts: right hand->handle\n3. [INTERACTIVE] drink @ mug | contacts: head->rim\n").unwrap();
    let o = previz(&["parse", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(10));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn inpaint_loop_keeps_the_known_region() {
    let tmp = tempfile::tempdir().unwrap();
    let z0 = Latent::new(1, 2, 2, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    write_latent(&z0, &tmp.path().join("z0.bin")).unwrap();
    // generate the top-left latent cell only
    let mut values = vec![0.0; 16];
    for y in 0..2 {
        for x in 0..2 {
            values[y * 4 + x] = 1.0;
        }
    }
    write_soft_mask(&SoftMask::new(4, 4, values).unwrap(), &tmp.path().join("m.png")).unwrap();
    write_schedule(&NoiseSchedule::linear(10, 1e-4, 0.02).unwrap(), &tmp.path().join("s.json")).unwrap();
    for (flag, dir) in [(None, "default"), (Some("--literal-paper-renoise"), "literal")] {
        let out = tmp.path().join(dir);
        let path = |f: &str| tmp.path().join(f).to_str().unwrap().to_owned();
        let (z, m, sched, o) = (path("z0.bin"), path("m.png"), path("s.json"), out.to_str().unwrap().to_owned());
        let mut args = vec!["inpaint-loop", "--latent", &z, "--mask", &m, "--schedule", &sched, "--dilation", "0", "--out", &o];
        args.extend(flag);
        let o = previz(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        let latent = read_latent(&out.join("latent.bin")).unwrap();
        assert_eq!(&latent.data()[1..], &z0.data()[1..]);
        assert_eq!(fs::read_dir(out.join("masks")).unwrap().count(), 11);
    }
}

#[test]
fn standalone_eval_and_env_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("floor.obj");
    fs::write(
        &scene,
        "v -2 0 -2\nv 2 0 -2\nv 2 0 2\nv -2 0 2\nv -2 -0.5 -2\nv 2 -0.5 -2\nv 2 -0.5 2\nv -2 -0.5 2\n\
         f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5\nf 2 3 7\nf 2 7 6\nf 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8\n",
    )
    .unwrap();
    let bodies = tmp.path().join("bodies");
    fs::create_dir(&bodies).unwrap();
    for (name, y) in [("a.obj", 0.01), ("b.obj", 1.0)] {
        fs::write(bodies.join(name), format!("v 0 {y} 0\nv 0.1 {y} 0\nv 0 {} 0.1\nf 1 2 3\n", y + 0.1)).unwrap();
    }
    let out = tmp.path().join("eval");
    let o = Command::new(env!("CARGO_BIN_EXE_previz"))
        .args(["eval", "--scene", scene.to_str().unwrap(), "--bodies", bodies.to_str().unwrap()])
        .env("PREVIZ_OUT", &out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report["contact"], 0.5);
    assert_eq!(report["non_collision"], 1.0);
    assert_eq!(report["clip"], "unavailable");
}
