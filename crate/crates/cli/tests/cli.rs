use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use afford_core::manifest::{read_rgb_png, write_rgb_png};
use afford_core::overlay::PEAK_COLOR;
use afford_core::sim::geometry::Pose;
use afford_core::sim::{render, ObjectLibrary, SimConfig, SimScene};
use tempfile::TempDir;

const FAST: &str = "seed = 3\n[pipeline.train]\nepochs = 30\nlearning_rate = 0.5\nbatch_size = 8\nclip_norm = 1.0\n";

fn afford(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afford"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn afford")
}

fn ok(out: &Output) {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Trained {
    dir: TempDir,
}

impl Trained {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

/// Mug and cup seed data, augmented and trained once for the whole file.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        fs::write(d.join("config.toml"), FAST).unwrap();
        for args in [
            &["--config", "config.toml", "gen-data", "--out", "seed", "--shapes", "mug,cup"][..],
            &["--config", "config.toml", "augment", "--manifest", "seed/manifest.jsonl", "--out", "aug"],
            &["--config", "config.toml", "train", "--manifest", "aug/manifest.jsonl", "--out", "ck/decoder.ckpt"],
        ] {
            ok(&afford(d, args));
        }
        Trained { dir }
    })
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                stack.push(e);
            } else {
                let rel = e.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&e).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn predict_on_a_mug_scene_points_at_the_handle() {
    let t = trained();
    let lib = ObjectLibrary::bundled().unwrap();
    let mug = lib.shape("mug").unwrap();
    let obj = lib.instantiate(mug, Pose { x: 0.01, y: -0.01, yaw_deg: 20.0 }, 1.0, [60, 110, 200]);
    let scene = SimScene::new(&SimConfig::default(), vec![obj], 5);
    let rendered = render(&scene);
    let image = t.path("mug_scene.png");
    write_rgb_png(&rendered.image, &image).unwrap();

    let out = afford(
        t.dir.path(),
        &[
            "--config", "config.toml", "predict", "--checkpoint", "ck/decoder.ckpt", "--image",
            "mug_scene.png", "--instruction", "pick up the cup with hot coffee", "--out",
            "mug_overlay.png", "--opacity", "1",
        ],
    );
    ok(&out);
    let overlay = read_rgb_png(&t.path("mug_overlay.png")).unwrap();
    assert_eq!(overlay.dims(), rendered.image.dims());
    let handle = rendered.part_mask(0, "handle").unwrap();
    let (h, w) = overlay.dims();
    let hottest: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| overlay.get(r, c) == PEAK_COLOR)
        .collect();
    // The head runs at half resolution, so the maximum is a small block.
    assert!(!hottest.is_empty() && hottest.len() <= 4, "{hottest:?}");
    for &(r, c) in &hottest {
        assert!(handle.get(r, c), "hottest pixel {:?} not on the handle", (r, c));
    }
    let (r, c) = hottest[0];
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["pixel"], serde_json::json!([r, c]));
}

#[test]
fn identical_runs_give_identical_artifacts() {
    let t = trained();
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("config.toml"), FAST).unwrap();
    ok(&afford(d.path(), &["--config", "config.toml", "gen-data", "--out", "seed", "--shapes", "mug,cup"]));
    ok(&afford(
        d.path(),
        &["--config", "config.toml", "augment", "--manifest", "seed/manifest.jsonl", "--out", "aug"],
    ));
    assert_eq!(tree_bytes(&d.path().join("seed")), tree_bytes(&t.path("seed")));
    assert_eq!(tree_bytes(&d.path().join("aug")), tree_bytes(&t.path("aug")));
    ok(&afford(
        d.path(),
        &["--config", "config.toml", "train", "--manifest", "aug/manifest.jsonl", "--out", "c.ckpt"],
    ));
    assert_eq!(
        fs::read(d.path().join("c.ckpt")).unwrap(),
        fs::read(t.path("ck/decoder.ckpt")).unwrap()
    );
    // A different seed changes the data.
    ok(&afford(d.path(), &["--config", "config.toml", "--seed", "9", "gen-data", "--out", "other", "--shapes", "mug"]));
    let first = "assets/00000_mug_0.rgb.png";
    assert_ne!(
        fs::read(d.path().join("other").join(first)).unwrap(),
        fs::read(t.path("seed").join(first)).unwrap()
    );
}

#[test]
fn evaluate_writes_table_and_log() {
    let t = trained();
    let d = TempDir::new().unwrap();
    let ckpt = t.path("ck/decoder.ckpt");
    let out = afford(
        d.path(),
        &["evaluate", "--client", "stub", "--checkpoint", ckpt.to_str().unwrap(), "--out", "eval"],
    );
    ok(&out);
    let tsv = fs::read_to_string(d.path().join("eval/results.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "method\tScene 1\tScene 2\tScene 3\tScene 4\tScene 5\tScene 6\tOverall");
    assert!(lines[1].starts_with("ours\t"));
    assert!(lines[2].starts_with("bbox-center\t"));
    assert_eq!(lines[3], "oracle\t100% (20/20)\t100% (20/20)\t100% (20/20)\t100% (20/20)\t100% (20/20)\t100% (20/20)\t100% (120/120)");
    let log = fs::read_to_string(d.path().join("eval/tasks.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 360);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["success"].is_boolean() && v["reason"].is_string());
    }
    assert_eq!(String::from_utf8_lossy(&out.stdout), tsv);
}

#[test]
fn train_on_empty_manifest_fails_with_empty_dataset() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("m.jsonl"), "").unwrap();
    let out = afford(d.path(), &["train", "--manifest", "m.jsonl", "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    let log: serde_json::Value = serde_json::from_str(stderr(&out).trim()).unwrap();
    assert_eq!(log["error"], "EmptyDataset");
    assert_eq!(log["command"], "train");
    assert!(!d.path().join("x.ckpt").exists());
}

#[test]
fn usage_errors_exit_two_and_name_the_flag() {
    let d = TempDir::new().unwrap();
    let cases: [(&[&str], &str); 6] = [
        (&["predict", "--image", "a.png", "--out", "o.png"], "--instruction"),
        (&["predict", "--image", "a.png", "--instruction", "x", "--out", "o.png", "--opacity", "2"], "--opacity"),
        (&["--encoder", "big", "gen-data", "--out", "x"], "--encoder"),
        (&["--seed", "minus", "gen-data", "--out", "x"], "--seed"),
        (&["train", "--out", "x.ckpt"], "--manifest"),
        (&["gen-data"], "--out"),
    ];
    for (args, flag) in cases {
        let out = afford(d.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = stderr(&out);
        assert!(err.contains(flag), "{args:?}: {err}");
        assert!(err.contains("Usage"), "{args:?}: {err}");
    }
    assert_eq!(afford(d.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_config_is_a_usage_error() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("c.toml"), "sede = 1\n").unwrap();
    let out = afford(d.path(), &["--config", "c.toml", "gen-data", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--config"));
    fs::write(d.path().join("c.toml"), "[paths]\ndataset = \"missing.jsonl\"\n").unwrap();
    let out = afford(d.path(), &["--config", "c.toml", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("paths.dataset"));
}

#[test]
fn config_paths_stand_in_for_flags() {
    let t = trained();
    let d = TempDir::new().unwrap();
    fs::create_dir(d.path().join("ck")).unwrap();
    let cfg = format!(
        "{FAST}[paths]\ndataset = \"{}\"\ncheckpoints = \"ck\"\n",
        t.path("seed/manifest.jsonl").display()
    );
    fs::write(d.path().join("c.toml"), cfg).unwrap();
    ok(&afford(d.path(), &["--config", "c.toml", "train"]));
    assert!(d.path().join("ck/decoder.ckpt").is_file());
    ok(&afford(d.path(), &["--config", "c.toml", "visualize", "--out", "vis"]));
    let n = fs::read_dir(d.path().join("vis")).unwrap().count();
    assert_eq!(n, 6);
}

#[test]
fn stub_plan_prints_the_decision_record() {
    let d = TempDir::new().unwrap();
    fs::write(
        d.path().join("scene.json"),
        r#"{"height": 96, "width": 96, "objects": [{"category": "cup", "bbox": [10, 10, 50, 60]}]}"#,
    )
    .unwrap();
    let out = afford(
        d.path(),
        &["plan", "--scene", "scene.json", "--instruction", "push the coffee cup to left", "--out", "d.json"],
    );
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("{action: push, target: \"cup\", end: (30, 0)"), "{text}");
    let d_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(d_json["action"], "push");
}

#[test]
fn unavailable_backends_are_pipeline_errors() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("scene.json"), r#"{"height": 96, "width": 96, "objects": []}"#).unwrap();
    let out = afford(d.path(), &["--client", "live", "plan", "--scene", "scene.json", "--instruction", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("LiveClientUnavailable"));

    let t = trained();
    let out = afford(
        t.dir.path(),
        &[
            "--encoder", "adapter", "predict", "--checkpoint", "ck/decoder.ckpt", "--image",
            "seed/assets/00000_mug_0.rgb.png", "--instruction", "x", "--out", "never.png",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("\"Unavailable\""), "{}", stderr(&out));
}

#[test]
fn simulate_records_one_task() {
    let t = trained();
    let d = TempDir::new().unwrap();
    let ckpt = t.path("ck/decoder.ckpt");
    ok(&afford(
        d.path(),
        &["simulate", "--checkpoint", ckpt.to_str().unwrap(), "--task", "s1-t01", "--out", "sim"],
    ));
    for f in ["s1-t01.before.png", "s1-t01.overlay.png", "s1-t01.after.png", "steps.jsonl"] {
        assert!(d.path().join("sim").join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(d.path().join("sim/steps.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(log.trim()).unwrap();
    assert_eq!(v["task"], "s1-t01");
    assert_eq!(v["method"], "ours");
    let out = afford(
        d.path(),
        &["simulate", "--checkpoint", ckpt.to_str().unwrap(), "--task", "s9-t99", "--out", "sim"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("UnknownTask"));
}
