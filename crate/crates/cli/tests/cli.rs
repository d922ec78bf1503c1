use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn volsr(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_volsr"));
    c.args(args).env("RUST_LOG", "warn").env_remove("VOLSR_OUT");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn total_line(text: &str) -> u64 {
    let line = text.lines().find(|l| l.starts_with("total ")).expect("total line");
    line.split_whitespace().last().unwrap().parse().unwrap()
}

#[test]
fn params_reproduces_published_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = volsr(&["params", "--family", "srcnn", "--mode", "2.5d", "--out", out], &[]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let text = stdout(&o);
    assert_eq!(total_line(&text), 88_385);
    assert!(text.contains("first-layer delta vs 2D: 31104"), "{text}");
    assert!(dir.path().join("params.record.json").exists());

    let o = volsr(&["params", "--family", "edsr", "--mode", "3d", "--out", out], &[]);
    assert_eq!(total_line(&stdout(&o)), 3_655_169);

    let o = volsr(&["params", "--family", "esrgan", "--mode", "2d", "--out", out], &[]);
    let text = stdout(&o);
    assert_eq!(total_line(&text), 16_695_681);
    assert!(text.contains("generator + discriminator: 31193930"), "{text}");
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(volsr(&["params", "--family", "vgg", "--mode", "2d"], &[]).status.code(), Some(1));
    assert_eq!(volsr(&["frobnicate"], &[]).status.code(), Some(1));
    assert_eq!(volsr(&["--help"], &[]).status.code(), Some(0));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\n[train]\nsteps = 3\nepochs = 2\n").unwrap();
    let o = volsr(&["dataset", "--config", cfg.to_str().unwrap(), "--out", out], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochs"));

    let cfg = dir.path().join("no-network.toml");
    fs::write(&cfg, "seed = 1\n").unwrap();
    let o = volsr(&["train", "--config", cfg.to_str().unwrap(), "--manifest", "m.json", "--out", out], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = volsr(
        &[
            "infer",
            "--checkpoint",
            dir.path().join("missing.volsr").to_str().unwrap(),
            "--input",
            "x.json",
            "--out",
            dir.path().to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

const SMALL: &str = r#"
seed = 4

[phantom]
dims = [16, 32, 32]
part_shape = "cylinder"
margin = 3.0

[phantom.pores]
count = 6
min_diameter_vox = 1.5
max_diameter_vox = 4.0
max_aspect = 1.2

[dataset]
n_train_parts = 1
n_test_parts = 1

[network]
family = "srcnn"
dimensionality = "2.5d"
srcnn_kernels = [3, 3, 3]
features = 8
srcnn_mid_features = 4

[train]
steps = 3
batch_size = 2
hr_patch = 8
patch_stride = 8
max_patches = 20

[tiles]
tile_yx = [24, 24]
overlap_yx = [4, 4]
z_chunk = 8
blend = "center_crop"
"#;

#[test]
fn small_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let sub = |name: &str| dir.path().join(name).to_str().unwrap().to_string();

    let data = sub("data");
    let o = volsr(&["dataset", "--config", cfg, "--out", &data], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(volsr(&["dataset", "--config", cfg, "--out", &data], &[]).status.code(), Some(1));
    let manifest_a = fs::read(dir.path().join("data/manifest.json")).unwrap();
    assert_eq!(volsr(&["dataset", "--config", cfg, "--out", &data, "--overwrite"], &[]).status.code(), Some(0));
    assert_eq!(manifest_a, fs::read(dir.path().join("data/manifest.json")).unwrap());
    let other = sub("data-seed9");
    assert_eq!(volsr(&["dataset", "--config", cfg, "--out", &other, "--seed", "9"], &[]).status.code(), Some(0));
    assert_ne!(manifest_a, fs::read(dir.path().join("data-seed9/manifest.json")).unwrap());

    let manifest = sub("data/manifest.json");
    let model = sub("model");
    let o = volsr(&["train", "--config", cfg, "--manifest", &manifest, "--out", &model], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = sub("model/model.volsr");
    assert!(dir.path().join("model/history.csv").exists());

    let infer = sub("infer");
    let args = ["infer", "--config", cfg, "--checkpoint", &ckpt, "--manifest", &manifest, "--part", "part-001", "--out", &infer];
    assert_eq!(volsr(&args, &[]).status.code(), Some(0));
    let first = fs::read(dir.path().join("infer/sr.raw")).unwrap();
    assert_eq!(volsr(&args, &[]).status.code(), Some(1));
    let mut again = args.to_vec();
    again.push("--overwrite");
    assert_eq!(volsr(&again, &[]).status.code(), Some(0));
    assert_eq!(first, fs::read(dir.path().join("infer/sr.raw")).unwrap());

    let eval = sub("eval");
    let o = volsr(&["eval", "--config", cfg, "--manifest", &manifest, "--checkpoint", &ckpt, "--out", &eval], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["psnr.csv", "psnr.png", "detection.csv", "detection.png", "eval.record.json"] {
        assert!(dir.path().join("eval").join(f).exists(), "{f}");
    }
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("model/train.record.json")).unwrap()).unwrap();
    assert_eq!(record["master_seed"], 4);
    assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = volsr(&["report", "--skip-training"], &[("VOLSR_OUT", dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let report = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("| srcnn | 2.5d | 88385 | 31104 |"), "{report}");
    assert!(dir.path().join("report.record.json").exists());
}
