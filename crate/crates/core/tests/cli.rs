use std::path::Path;
use std::process::{Command, Output};

use pfpn::checkpoint::Checkpoint;
use pfpn::data::{
    generate_synthetic, load_prediction, save_prediction, save_rgb, write_dataset, SyntheticSpec,
};
use pfpn::maps::SaliencyMap;
use pfpn::metrics::MetricsReport;
use pfpn::tensor::{Shape, Tensor};

const SMALL: [&str; 8] = [
    "--data.synthetic.num_samples=8",
    "--data.synthetic.canvas_size=64",
    "--model.input_size=32",
    "--model.tm1_channels=4",
    "--augment.resize=36",
    "--augment.crop=32",
    "--train.max_iterations=3",
    "--train.batch_size=2",
];

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfpn"))
        .args(args)
        .current_dir(dir)
        .env_remove("PFPN_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "pfpn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn train_small(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["train", "-o", out];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args, dir);
}

fn write_test_set(dir: &Path, n: usize) {
    let samples = generate_synthetic(&SyntheticSpec {
        num_samples: n,
        canvas_size: 64,
        seed: 9,
        ..SyntheticSpec::default()
    })
    .unwrap();
    write_dataset(dir, &samples).unwrap();
}

#[test]
fn every_subcommand_has_help() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in ["train", "ablate", "predict", "eval", "plot", "synth"] {
        let out = ok(&[sub, "--help"], tmp.path());
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("Usage"), "{sub}");
        assert!(text.contains("--help") && text.contains("Options"), "{sub}");
    }
    let top = ok(&["--help"], tmp.path());
    let text = String::from_utf8_lossy(&top.stdout);
    for sub in ["train", "ablate", "predict", "eval", "plot"] {
        assert!(text.contains(sub));
    }
}

#[test]
fn usage_and_config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(run(&["predict"], tmp.path()).status.code(), Some(1));

    std::fs::write(tmp.path().join("bad.toml"), "[model]\nnum_fmps = 2\n").unwrap();
    let out = run(&["train", "-c", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("num_fmps"), "{}", stderr(&out));

    let out = run(&["train", "--model.num_levels=0"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(
        &["predict", "-k", "missing.ckpt", "-i", "x.png", "-o", "p"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing.ckpt"));
}

#[test]
fn override_reaches_the_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    train_small(tmp.path(), "run", &["--model.num_fpms=3"]);
    let ckpt = Checkpoint::load(&tmp.path().join("run/model.ckpt")).unwrap();
    assert_eq!(ckpt.config.num_fpms, 3);
    assert_eq!(ckpt.step, 3);
    let resolved = std::fs::read_to_string(tmp.path().join("run/config.toml")).unwrap();
    assert!(resolved.contains("num_fpms = 3"));
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("run/train_log.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    train_small(tmp.path(), "a", &[]);
    train_small(tmp.path(), "b", &[]);
    let a = std::fs::read(tmp.path().join("a/model.ckpt")).unwrap();
    let b = std::fs::read(tmp.path().join("b/model.ckpt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train"];
    args.extend(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_pfpn"))
        .args(&args)
        .current_dir(tmp.path())
        .env("PFPN_OUTPUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("from_env/model.ckpt").exists());
}

#[test]
fn predict_directory_and_single_large_image() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    train_small(d, "run", &[]);
    write_test_set(&d.join("set"), 3);
    ok(
        &[
            "predict",
            "-k",
            "run/model.ckpt",
            "-i",
            "set/images",
            "-o",
            "p1",
        ],
        d,
    );
    ok(
        &[
            "predict",
            "-k",
            "run/model.ckpt",
            "-i",
            "set/images",
            "-o",
            "p2",
        ],
        d,
    );
    let mut names: Vec<String> = std::fs::read_dir(d.join("p1"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["syn_00000.png", "syn_00001.png", "syn_00002.png"]);
    for n in &names {
        assert_eq!(
            std::fs::read(d.join("p1").join(n)).unwrap(),
            std::fs::read(d.join("p2").join(n)).unwrap()
        );
        let p = load_prediction(&d.join("p1").join(n)).unwrap();
        assert_eq!(p.resolution(), (64, 64));
    }

    let big = Tensor::from_fn(Shape::new(1, 3, 512, 512), |_, c, y, x| {
        ((x + 2 * y + c * 50) % 256) as f64 / 255.0
    });
    save_rgb(&d.join("big.png"), &big).unwrap();
    ok(
        &[
            "predict",
            "-k",
            "run/model.ckpt",
            "-i",
            "big.png",
            "-o",
            "p3",
        ],
        d,
    );
    assert_eq!(
        load_prediction(&d.join("p3/big.png")).unwrap().resolution(),
        (512, 512)
    );
}

#[test]
fn eval_reports_perfect_and_inverted_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_test_set(&d.join("set"), 4);
    ok(
        &[
            "eval",
            "-p",
            "set/masks",
            "-m",
            "set/masks",
            "-r",
            "perfect.json",
        ],
        d,
    );
    let perfect = MetricsReport::load(&d.join("perfect.json")).unwrap();
    assert_eq!((perfect.mae, perfect.max_f), (0.0, 1.0));
    assert!((perfect.s_measure - 1.0).abs() < 1e-12);
    assert_eq!(perfect.label.as_deref(), Some("masks"));

    std::fs::create_dir(d.join("inv")).unwrap();
    for e in std::fs::read_dir(d.join("set/masks")).unwrap() {
        let path = e.unwrap().path();
        let m = load_prediction(&path).unwrap();
        let inv = SaliencyMap::new(
            m.height(),
            m.width(),
            m.values().iter().map(|v| 1.0 - v).collect(),
        )
        .unwrap();
        save_prediction(&d.join("inv").join(path.file_name().unwrap()), &inv).unwrap();
    }
    ok(
        &["eval", "-p", "inv", "-m", "set/masks", "-r", "inv.json"],
        d,
    );
    let inv = MetricsReport::load(&d.join("inv.json")).unwrap();
    assert_eq!(inv.mae, 1.0);
    assert!(inv.max_f < 0.5);
}

#[test]
fn eval_names_unmatched_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_test_set(&d.join("set"), 3);
    std::fs::create_dir(d.join("pred")).unwrap();
    std::fs::copy(
        d.join("set/masks/syn_00000.png"),
        d.join("pred/syn_00000.png"),
    )
    .unwrap();
    std::fs::copy(d.join("set/masks/syn_00001.png"), d.join("pred/other.png")).unwrap();
    let out = run(
        &["eval", "-p", "pred", "-m", "set/masks", "-r", "r.json"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(
        err.contains("other") && err.contains("syn_00001") && err.contains("syn_00002"),
        "{err}"
    );

    std::fs::create_dir(d.join("empty")).unwrap();
    let out = run(
        &["eval", "-p", "empty", "-m", "set/masks", "-r", "r.json"],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("r.json").exists());
}

#[test]
fn plot_lists_every_report_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_test_set(&d.join("set"), 3);
    for label in ["a", "b", "c"] {
        ok(
            &[
                "eval",
                "-p",
                "set/masks",
                "-m",
                "set/masks",
                "-r",
                &format!("{label}.json"),
                "-l",
                label,
            ],
            d,
        );
    }
    ok(&["plot", "a.json", "b.json", "c.json", "-o", "one.svg"], d);
    ok(&["plot", "a.json", "b.json", "c.json", "-o", "two.svg"], d);
    let one = std::fs::read_to_string(d.join("one.svg")).unwrap();
    assert_eq!(one.matches("class=\"legend-entry\"").count(), 3);
    assert_eq!(one, std::fs::read_to_string(d.join("two.svg")).unwrap());
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        &[
            "synth",
            "-o",
            "data",
            "--data.synthetic.num_samples=5",
            "--data.synthetic.canvas_size=64",
        ],
        tmp.path(),
    );
    let set = pfpn::data::load_dataset(&tmp.path().join("data")).unwrap();
    assert_eq!(set.len(), 5);
}

#[test]
fn inputs_are_not_modified() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_test_set(&d.join("set"), 2);
    let before = std::fs::read(d.join("set/masks/syn_00000.png")).unwrap();
    ok(
        &["eval", "-p", "set/masks", "-m", "set/masks", "-r", "r.json"],
        d,
    );
    assert_eq!(
        std::fs::read(d.join("set/masks/syn_00000.png")).unwrap(),
        before
    );
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["ablation.toml", "quick.toml"] {
        let cfg = pfpn::config::RunConfig::load(Some(&dir.join(name)), &[]).unwrap();
        cfg.validate().unwrap();
    }
}
