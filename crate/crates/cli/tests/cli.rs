use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3
num_classes = 4
views = "car6"

[generator]
resolution = 16
latent_dim = 8
split_index = 2
channel_base = 64
channel_max = 8
num_views = 6
mapping_layers = 2
mapping_lr_multiplier = 0.01

[encoder]
channels = 4

[synth]
count = 12
num_meshes = 1

[eval]
holdout = 4
render_size = 32
extra_cameras = [{ name = "quarter", forward = [-0.7071067811865476, 0.0, -0.7071067811865476], up = [0.0, 1.0, 0.0] }]

[stage1]
batch_size = 2
max_steps = 2

[stage2]
batch_size = 2
max_steps = 2

[stage3]
batch_size = 2
max_steps = 2
"#;

fn semtex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semtex"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = semtex(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["synth-data", "parametrize", "train", "generate", "evaluate", "export"] {
        assert!(text.contains(cmd), "help lacks {cmd}");
    }
    assert_eq!(semtex(dir.path(), &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(semtex(dir.path(), &["train", "--stage", "4"]).status.code(), Some(1));
    assert_eq!(semtex(dir.path(), &["generate", "--mesh", "m.obj"]).status.code(), Some(1));
    assert_eq!(semtex(dir.path(), &[]).status.code(), Some(1));
}

#[test]
fn stage_two_without_stage_one_fails_at_runtime() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = semtex(dir.path(), &["--config", "tiny.toml", "train", "--stage", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage-1 checkpoint"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "nonsense = 1\n").unwrap();
    let o = semtex(dir.path(), &["--config", "bad.toml", "synth-data"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn end_to_end_tiny_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let ok = |args: &[&str]| {
        let o = semtex(d, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        o
    };
    let c = ["--config", "tiny.toml"];
    ok(&[&c[..], &["synth-data", "--out", "data"]].concat());
    assert!(d.join("data/images/00000.png").exists());
    assert!(d.join("data/meshes/vehicle_00.obj").exists());
    for stage in ["1", "2", "3"] {
        ok(&[&c[..], &["train", "--stage", stage]].concat());
    }
    let run = d.join("runs/desk");
    assert!(run.join("config.resolved").exists());
    assert!(run.join("checkpoints/stage3.ckpt").exists());
    assert!(run.join("samples/stage1").is_dir());

    let mesh = "data/meshes/vehicle_00.obj";
    ok(&[&c[..], &["parametrize", "--mesh", mesh, "--out", "param"]].concat());
    let seg_files: Vec<_> = std::fs::read_dir(d.join("param/seg")).unwrap().collect();
    assert_eq!(seg_files.len(), 6);
    assert!(d.join("param/atlas.json").exists());

    ok(&[&c[..], &["generate", "--unconditional", "--mesh", mesh]].concat());
    let sample = run.join("samples/unconditional_seed3");
    assert!(sample.join("textured.obj").exists());
    assert_eq!(std::fs::read_dir(sample.join("textures")).unwrap().count(), 6);
    let first = std::fs::read(sample.join("textured.png")).unwrap();
    ok(&[&c[..], &["generate", "--unconditional", "--mesh", mesh]].concat());
    assert_eq!(std::fs::read(sample.join("textured.png")).unwrap(), first);

    ok(&[&c[..], &["generate", "--conditional", "--style", "data/images/00001.png", "--mesh", mesh]].concat());
    assert!(run.join("samples/conditional_seed3/textured.mtl").exists());

    // five maps for a six-view preset
    std::fs::create_dir_all(d.join("five")).unwrap();
    for e in std::fs::read_dir(d.join("param/seg")).unwrap().take(5) {
        let p = e.unwrap().path();
        std::fs::copy(&p, d.join("five").join(p.file_name().unwrap())).unwrap();
    }
    let o = semtex(
        d,
        &[&c[..], &["generate", "--conditional", "--style", "data/images/00001.png", "--mesh", mesh, "--seg-dir", "five"]].concat(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("expected 6"), "{}", stderr(&o));

    ok(&[&c[..], &["evaluate"]].concat());
    let report = std::fs::read_to_string(run.join("report.txt")).unwrap();
    for key in ["fid", "kid", "miou", "pixel_accuracy", "n_real", "n_fake", "extractor_id"] {
        assert!(report.lines().any(|l| l.starts_with(&format!("{key} ="))), "{key} missing:\n{report}");
    }

    ok(&[&c[..], &["export", "--mesh", mesh, "--textures", sample.join("textures").to_str().unwrap(), "--out", "exp"]].concat());
    assert!(d.join("exp/textured.obj").exists());
    assert_eq!(std::fs::read_dir(d.join("exp/renders")).unwrap().count(), 7);
    assert!(d.join("exp/renders/quarter.png").exists());
}
