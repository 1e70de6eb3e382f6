use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spd_align::bench::{ExperimentConfig, ShiftSpec, TargetTransform};
use spd_align::random::{rng, standard_normal_matrix};
use spd_align::trainer::{MlpParams, TrainConfig};
use spd_align::FeatureBatch;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spd-align"));
    cmd.env_remove("SPD_ALIGN_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spd-align")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn random_features(dir: &Path, name: &str, rows: usize, cols: usize, seed: u64, classes: Option<usize>) -> PathBuf {
    let x = standard_normal_matrix(&mut rng(seed), rows, cols);
    let labels = classes.map(|k| (0..rows).map(|i| i % k).collect());
    let batch = match labels {
        Some(l) => FeatureBatch::with_labels(x, l).unwrap(),
        None => FeatureBatch::new(x),
    };
    let p = dir.join(name);
    batch.write_csv(&p).unwrap();
    p
}

fn values(out: &Output) -> Vec<(String, f64)> {
    stdout(out)
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn help_exits_zero_everywhere() {
    for sub in [None, Some("dist"), Some("align"), Some("grad-check"), Some("train"), Some("bench")] {
        let mut args: Vec<&str> = sub.into_iter().collect();
        args.push("--help");
        let out = run(&args);
        assert_eq!(code(&out), 0, "{args:?}");
        assert!(stdout(&out).contains("Usage"), "{args:?}");
    }
}

#[test]
fn unknown_flag_prints_usage_and_fails_validation() {
    let out = run(&["dist", "--a", "x", "--b", "y", "--frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("Usage"));
    assert!(stdout(&out).is_empty());
    assert_eq!(code(&run(&["transmogrify"])), 1);
}

#[test]
fn dist_matrix_mode_diagonal_example() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "4,0\n0,1\n");
    let b = write(dir.path(), "b.csv", "1,0\n0,1\n");
    let out = run(&["dist", "--a", s(&a), "--b", s(&b), "--metric", "logE"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = values(&out);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].0, "logE");
    assert!((v[0].1 - 4f64.ln()).abs() < 1e-11);
    // 12 significant digits
    assert_eq!(stdout(&out).trim(), "logE,1.38629436112");
}

#[test]
fn dist_all_gives_five_lines_and_identical_inputs_give_zero() {
    let dir = tempfile::tempdir().unwrap();
    let f = random_features(dir.path(), "f.csv", 30, 4, 1, None);
    let out = run(&["dist", "--a", s(&f), "--b", s(&f), "--metric", "all"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v = values(&out);
    let names: Vec<&str> = v.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(names, ["euclidean", "logE", "affine", "jeffrey", "stein"]);
    assert!(v.iter().all(|(_, x)| x.abs() < 1e-9), "{v:?}");
}

#[test]
fn dist_feature_rows_use_regularized_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let f = random_features(dir.path(), "f.csv", 40, 3, 2, Some(2));
    let g = random_features(dir.path(), "g.csv", 25, 3, 3, None);
    let out = run(&["dist", "--a", s(&f), "--b", s(&g), "--metric", "euclidean"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cf = spd_align::batch_covariance(&FeatureBatch::read_csv(&f).unwrap(), 1e-5).unwrap();
    let cg = spd_align::batch_covariance(&FeatureBatch::read_csv(&g).unwrap(), 1e-5).unwrap();
    let expected = (cf.as_matrix() - cg.as_matrix()).norm();
    assert!((values(&out)[0].1 - expected).abs() < 1e-10 * expected.max(1.0));
}

#[test]
fn dist_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.csv", "1,0\n0,1\n");
    let garbage = write(dir.path(), "bad.csv", "1,0\n0,banana\n");
    let indefinite = write(dir.path(), "indef.csv", "1,2\n2,1\n");
    let wide = write(dir.path(), "wide.csv", "1,0,0\n0,1,0\n0,0,1\n");
    let missing = dir.path().join("nope.csv");

    assert_eq!(code(&run(&["dist", "--a", s(&garbage), "--b", s(&good)])), 1);
    assert_eq!(code(&run(&["dist", "--a", s(&good), "--b", s(&wide)])), 1);
    assert_eq!(code(&run(&["dist", "--a", s(&good), "--b", s(&good), "--metric", "cosine"])), 1);
    assert_eq!(code(&run(&["dist", "--a", s(&indefinite), "--b", s(&good)])), 2);
    assert_eq!(code(&run(&["dist", "--a", s(&missing), "--b", s(&good)])), 3);
}

#[test]
fn align_self_is_near_identity_and_report_has_eight_values() {
    let dir = tempfile::tempdir().unwrap();
    let src = random_features(dir.path(), "src.csv", 50, 5, 4, Some(3));
    let out_csv = dir.path().join("aligned.csv");
    let report = dir.path().join("report.json");
    let out = run(&[
        "align", "--source", s(&src), "--target", s(&src), "--out", s(&out_csv), "--report", s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let before = FeatureBatch::read_csv(&src).unwrap();
    let after = FeatureBatch::read_csv(&out_csv).unwrap();
    assert_eq!(after.labels(), before.labels());
    assert!((after.rows() - before.rows()).amax() < 1e-6);

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    for side in ["before", "after"] {
        let obj = json[side].as_object().unwrap();
        assert_eq!(obj.len(), 4, "{side}");
        assert!(obj.values().all(|v| v.as_f64().unwrap() < 1e-6));
    }
}

#[test]
fn align_reduces_dissimilarities_below_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let src = random_features(dir.path(), "src.csv", 60, 4, 5, None);
    let x = standard_normal_matrix(&mut rng(6), 80, 4) * 3.0;
    let tgt = dir.path().join("tgt.csv");
    FeatureBatch::new(x).write_csv(&tgt).unwrap();
    let report = dir.path().join("r.json");
    let out = run(&[
        "align", "--source", s(&src), "--target", s(&tgt),
        "--out", s(&dir.path().join("o.csv")), "--report", s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["before"]["log_euclidean"].as_f64().unwrap() > 1.0);
    for v in json["after"].as_object().unwrap().values() {
        assert!(v.as_f64().unwrap() < 1e-6, "{json}");
    }
}

#[test]
fn align_rank_deficient_without_ridge_is_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    // third column duplicates the first
    let src = write(dir.path(), "src.csv", "1,2,1\n2,0,2\n0,1,0\n3,3,3\n-1,4,-1\n");
    let tgt = random_features(dir.path(), "tgt.csv", 20, 3, 7, None);
    let out = run(&[
        "align", "--source", s(&src), "--target", s(&tgt),
        "--out", s(&dir.path().join("o.csv")), "--report", s(&dir.path().join("r.json")), "--gamma", "0",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("positive definite"), "{}", stderr(&out));
    assert!(!dir.path().join("o.csv").exists());
}

#[test]
fn grad_check_coral_passes() {
    let out = run(&["grad-check", "--loss", "coral"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).starts_with("max_rel_err="));
}

#[test]
fn grad_check_exit_status_tracks_threshold() {
    for (loss, threshold) in [("coral", 1e-7), ("log", 1e-5)] {
        for seed in ["0", "3"] {
            let out = run(&["grad-check", "--loss", loss, "--trials", "20", "--seed", seed]);
            let err: f64 = stdout(&out).trim().strip_prefix("max_rel_err=").unwrap().parse().unwrap();
            let expected = if err < threshold { 0 } else { 2 };
            assert_eq!(code(&out), expected, "{loss} seed {seed}: {err}");
        }
    }
}

#[test]
fn grad_check_validation() {
    assert_eq!(code(&run(&["grad-check", "--loss", "coral", "--dim", "1"])), 1);
    assert_eq!(code(&run(&["grad-check", "--loss", "hinge"])), 1);
    assert_eq!(code(&run(&["grad-check", "--loss", "coral", "--dim", "two"])), 1);
}

struct TrainFiles {
    _dir: tempfile::TempDir,
    root: PathBuf,
    source: PathBuf,
    target: PathBuf,
}

fn train_files() -> TrainFiles {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let source = random_features(&root, "source.csv", 48, 4, 8, Some(3));
    let target = random_features(&root, "target.csv", 40, 4, 9, None);
    TrainFiles { _dir: dir, root, source, target }
}

fn train_run(f: &TrainFiles, config: &Path, tag: &str) -> (Output, PathBuf, PathBuf) {
    let trace = f.root.join(format!("trace_{tag}.csv"));
    let params = f.root.join(format!("params_{tag}.json"));
    let out = run(&[
        "train", "--config", s(config), "--source", s(&f.source), "--target", s(&f.target),
        "--trace", s(&trace), "--params-out", s(&params),
    ]);
    (out, trace, params)
}

#[test]
fn train_zero_epochs_writes_header_and_initial_params() {
    let f = train_files();
    let cfg = write(&f.root, "cfg.json", r#"{"epochs": 0, "hidden_dims": [6], "seed": 11}"#);
    let (out, trace, params) = train_run(&f, &cfg, "a");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&trace).unwrap(), "step,epoch,loss_class,loss_align_weighted,lr\n");

    let init = MlpParams::init(4, &[6], 3, &mut rng(11)).unwrap();
    let written: MlpParams = serde_json::from_str(&fs::read_to_string(&params).unwrap()).unwrap();
    assert_eq!(written, init);
}

#[test]
fn train_is_byte_deterministic_and_reports_losses() {
    let f = train_files();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        hidden_dims: vec![8, 4],
        seed: 5,
        ..TrainConfig::default()
    };
    let cfg_path = write(&f.root, "cfg.json", &serde_json::to_string(&cfg).unwrap());
    let (a, trace_a, params_a) = train_run(&f, &cfg_path, "a");
    let (b, trace_b, params_b) = train_run(&f, &cfg_path, "b");
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(fs::read(&trace_a).unwrap(), fs::read(&trace_b).unwrap());
    assert_eq!(fs::read(&params_a).unwrap(), fs::read(&params_b).unwrap());
    assert_eq!(stdout(&a), stdout(&b));
    let text = stdout(&a);
    assert!(text.contains("loss_class=") && text.contains("loss_align_weighted="), "{text}");
    // 3 epochs × min(48, 40) / 8 steps
    assert_eq!(fs::read_to_string(&trace_a).unwrap().lines().count(), 1 + 3 * 5);
}

#[test]
fn train_rejects_bad_configs() {
    let f = train_files();
    let malformed = write(&f.root, "bad.json", "{\"epochs\": 3,");
    assert_eq!(code(&train_run(&f, &malformed, "m").0), 1);
    let unknown = write(&f.root, "unknown.json", r#"{"epoch": 3}"#);
    assert_eq!(code(&train_run(&f, &unknown, "u").0), 1);
    let odd = write(&f.root, "odd.json", r#"{"batch_size": 7}"#);
    assert_eq!(code(&train_run(&f, &odd, "o").0), 1);
    let missing = f.root.join("absent.json");
    assert_eq!(code(&train_run(&f, &missing, "x").0), 3);
}

fn small_experiment(transform: TargetTransform) -> ExperimentConfig {
    ExperimentConfig {
        shift: ShiftSpec {
            num_classes: 3,
            samples_per_class: 60,
            input_dim: 6,
            transform,
            ..ShiftSpec::strong_shift()
        },
        train: TrainConfig {
            epochs: 3,
            batch_size: 32,
            hidden_dims: vec![12, 6],
            ..TrainConfig::default()
        },
    }
}

fn bench_run(spec: Option<&Path>, out_dir: &Path, threads: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.arg("bench").arg("--out-dir").arg(out_dir);
    if let Some(p) = spec {
        cmd.arg("--spec").arg(p);
    }
    if let Some(t) = threads {
        cmd.env("SPD_ALIGN_THREADS", t);
    }
    cmd.output().unwrap()
}

/// `(mode, accuracy, gain)` rows of the printed table.
fn table(out: &Output) -> Vec<(String, f64, f64)> {
    stdout(out)
        .lines()
        .skip(1)
        .map(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            (cols[0].to_string(), cols[1].parse().unwrap(), cols[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn bench_emits_files_and_consistent_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        &serde_json::to_string(&small_experiment(TargetTransform::RotationScale {
            max_angle: 0.4,
            scale_min: 0.5,
            scale_max: 2.0,
            translation_norm: 0.0,
        }))
        .unwrap(),
    );
    let out_dir = dir.path().join("out");
    let out = bench_run(Some(&spec), &out_dir, None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["report.json", "trace_baseline.csv", "trace_coral.csv", "trace_log.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let rows = table(&out);
    assert_eq!(rows.iter().map(|r| r.0.as_str()).collect::<Vec<_>>(), ["baseline", "coral", "log"]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let acc: Vec<f64> = json["modes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["target_accuracy"].as_f64().unwrap())
        .collect();
    for (row, a) in rows.iter().zip(&acc) {
        assert!((row.1 - 100.0 * a).abs() < 0.006);
        assert!((row.2 - 100.0 * (a - acc[0])).abs() < 0.006);
    }
    assert_eq!(rows[0].2, 0.0);
}

#[test]
fn bench_is_deterministic_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        &serde_json::to_string(&small_experiment(TargetTransform::Identity)).unwrap(),
    );
    let one = dir.path().join("one");
    let again = dir.path().join("again");
    let three = dir.path().join("three");
    assert_eq!(code(&bench_run(Some(&spec), &one, None)), 0);
    assert_eq!(code(&bench_run(Some(&spec), &again, Some("1"))), 0);
    assert_eq!(code(&bench_run(Some(&spec), &three, Some("3"))), 0);
    for name in ["report.json", "trace_baseline.csv", "trace_coral.csv", "trace_log.csv"] {
        let reference = fs::read(one.join(name)).unwrap();
        assert_eq!(reference, fs::read(again.join(name)).unwrap(), "{name}");
        assert_eq!(reference, fs::read(three.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn bench_no_shift_gains_within_two_points() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        &serde_json::to_string(&ExperimentConfig::no_shift()).unwrap(),
    );
    let out = bench_run(Some(&spec), &dir.path().join("out"), None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for (mode, _, gain) in table(&out) {
        assert!(gain.abs() <= 2.0, "{mode}: {gain}");
    }
}

#[test]
fn bench_default_strong_shift_log_gain_is_nonnegative() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench_run(None, &dir.path().join("out"), None);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rows = table(&out);
    assert_eq!(rows.len(), 3);
    assert!(rows[2].2 >= 0.0, "{rows:?}");
}

#[test]
fn bench_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let malformed = write(dir.path(), "bad.json", "{\"shift\": ");
    assert_eq!(code(&bench_run(Some(&malformed), &dir.path().join("a"), None)), 1);
    let singular = write(
        dir.path(),
        "singular.json",
        r#"{"shift": {"input_dim": 2, "transform": {"kind": "explicit", "matrix": [[1, 2], [2, 4]], "translation": [0, 0]}}}"#,
    );
    assert_eq!(code(&bench_run(Some(&singular), &dir.path().join("b"), None)), 1);
    assert_eq!(code(&bench_run(None, &dir.path().join("c"), Some("zero"))), 1);
    // output directory below a regular file cannot be created
    let small = write(
        dir.path(),
        "small.json",
        &serde_json::to_string(&small_experiment(TargetTransform::Identity)).unwrap(),
    );
    let blocker = write(dir.path(), "file", "");
    assert_eq!(code(&bench_run(Some(&small), &blocker.join("x"), None)), 3);
}
