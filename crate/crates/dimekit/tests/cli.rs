//! End-to-end tests of the `dimekit` binary: every subcommand runs as a
//! child process exactly as a user would invoke it.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dimekit")
}

/// Shared tiny-model overrides keeping the child processes fast.
fn tiny_sets() -> Vec<String> {
    [
        "model.hidden_dim=8",
        "model.out_emb_dim=8",
        "model.triplet_dim=4",
        "model.num_blocks=1",
        "model.basis.num_radial=4",
        "model.basis.num_spherical=3",
        "train.max_steps=4",
        "train.batch_size=4",
        "train.warmup_steps=10",
        "train.val_interval=4",
    ]
    .iter()
    .flat_map(|s| ["--set".to_string(), s.to_string()])
    .collect()
}

fn run(args: &[&str], extra: &[String]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args).args(extra).env_remove("DIMEKIT_LOG");
    cmd.output().expect("failed to launch dimekit")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Generate a small dataset into `dir/data`, returning the dataset path.
fn gen_dataset(dir: &Path, seed: u64) -> PathBuf {
    let data = dir.join("data");
    let sets: Vec<String> = [
        "toy.steps_per_trajectory=2000",
        "toy.snapshots_per_trajectory=4",
        "toy.initial_separation=6.0",
        "toy.relative_ke_ev=1.0",
        "gen.train_trajectories=3",
        "gen.val_trajectories=2",
        "gen.test_trajectories=2",
    ]
    .iter()
    .flat_map(|s| ["--set".to_string(), s.to_string()])
    .collect();
    let out = run(
        &["gen-toy", "--out", data.to_str().unwrap(), "--seed", &seed.to_string()],
        &sets,
    );
    assert_ok(&out, "gen-toy");
    data
}

fn train_model(data: &Path, out_dir: &Path, seed: u64) {
    let out = run(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
            "--threads",
            "1",
        ],
        &tiny_sets(),
    );
    assert_ok(&out, "train");
}

#[test]
fn gen_toy_then_predict_emits_one_energy_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path(), 11);
    let run_dir = dir.path().join("run");
    train_model(&data, &run_dir, 5);

    let test_file = data.join("test.extxyz");
    let n_records = std::fs::read_to_string(&test_file)
        .unwrap()
        .lines()
        .filter(|l| l.trim().parse::<usize>().is_ok())
        .count();
    assert!(n_records > 0, "test split is empty");

    let ckpt = run_dir.join("model.ckpt");
    let forces_out = dir.path().join("pred.extxyz");
    let out = run(
        &[
            "predict",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            test_file.to_str().unwrap(),
            "--forces-out",
            forces_out.to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out, "predict");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let energies: Vec<f64> = stdout
        .lines()
        .map(|l| l.parse::<f64>().expect("stdout line is not a number"))
        .collect();
    assert_eq!(energies.len(), n_records, "one energy per input record");
    assert!(energies.iter().all(|e| e.is_finite()));

    // the labelled output parses back with the input's atom counts and
    // forces on every record
    let inputs = dimekit::data::read_extxyz_file(&test_file).unwrap();
    let labelled = dimekit::data::read_extxyz_file(&forces_out).unwrap();
    assert_eq!(labelled.len(), n_records);
    for ((cfg, input), e) in labelled.iter().zip(&inputs).zip(&energies) {
        assert_eq!(cfg.len(), input.len(), "atom count must round-trip");
        assert_eq!(cfg.atomic_numbers, input.atomic_numbers);
        assert_eq!(cfg.energy, Some(*e));
        assert!(cfg.forces.is_some());
    }
}

#[test]
fn eval_metrics_csv_matches_the_golden_schema() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path(), 12);
    let run_dir = dir.path().join("run");
    train_model(&data, &run_dir, 6);

    let out = run(
        &[
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--split",
            "test",
            "--checkpoint",
            run_dir.join("model.ckpt").to_str().unwrap(),
        ],
        &[],
    );
    assert_ok(&out, "eval");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let golden = include_str!("golden/eval_metrics_schema.csv");
    let got: Vec<&str> = stdout.lines().collect();
    let want: Vec<&str> = golden.lines().collect();
    assert_eq!(got.len(), want.len(), "row count differs from the schema:\n{stdout}");
    assert_eq!(got[0], want[0], "header row");
    for (g, w) in got.iter().zip(&want).skip(1) {
        let (name, value) = g.split_once(',').expect("metric rows are name,value");
        assert_eq!(name, *w, "metric name order");
        let v: f64 = value.parse().expect("metric value is not a number");
        assert!(v.is_finite());
    }
}

#[test]
fn identical_seeds_give_bitwise_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path(), 13);
    let run_a = dir.path().join("a");
    let run_b = dir.path().join("b");
    train_model(&data, &run_a, 7);
    train_model(&data, &run_b, 7);
    let ckpt_a = std::fs::read(run_a.join("model.ckpt")).unwrap();
    let ckpt_b = std::fs::read(run_b.join("model.ckpt")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between identical runs");
    let log_a = std::fs::read(run_a.join("train_log.csv")).unwrap();
    let log_b = std::fs::read(run_b.join("train_log.csv")).unwrap();
    assert_eq!(log_a, log_b, "training logs differ between identical runs");

    // a different seed must actually change the parameters
    let run_c = dir.path().join("c");
    train_model(&data, &run_c, 8);
    let ckpt_c = std::fs::read(run_c.join("model.ckpt")).unwrap();
    assert_ne!(ckpt_a, ckpt_c, "seed change left the checkpoint untouched");
}

#[test]
fn unknown_flags_and_bad_paths_exit_one_with_a_message() {
    let out = run(&["gen-toy", "--bogus-flag"], &[]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("Usage"), "stderr should show usage:\n{stderr}");
    assert!(out.stdout.is_empty(), "bad invocations must not write to stdout");

    let out = run(&["definitely-not-a-command"], &[]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(
        &["eval", "--data", "/no/such/dir", "--checkpoint", "/no/such.ckpt"],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("does not exist"), "stderr: {stderr}");

    let out = run(&["train", "--data", "/no/such/dir"], &[]);
    assert_eq!(out.status.code(), Some(1), "train without --out or data");

    let out = run(&["gen-toy"], &[]);
    assert_eq!(out.status.code(), Some(1), "gen-toy requires --out");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("--out"), "stderr: {stderr}");
}

#[test]
fn help_and_version_exit_zero() {
    let out = run(&["--help"], &[]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for sub in ["gen-toy", "train", "eval", "predict", "ensemble-train", "calibrate", "bench", "stats"] {
        assert!(stdout.contains(sub), "--help should list {sub}");
    }
    let out = run(&["--version"], &[]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn logging_goes_to_stderr_and_data_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path(), 14);
    let mut cmd = Command::new(bin());
    cmd.args(["stats", "--data", data.to_str().unwrap(), "--split", "train"])
        .args(["--set", "stats.bins=4"])
        .env("DIMEKIT_LOG", "info");
    let out = cmd.output().unwrap();
    assert_ok(&out, "stats");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("bin_lo,bin_hi,count"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 3, "histogram row: {line}");
        cols[0].parse::<f64>().unwrap();
        cols[1].parse::<f64>().unwrap();
        cols[2].parse::<usize>().unwrap();
    }
    assert!(stderr.contains("residual per atom"), "info log on stderr: {stderr}");
}

#[test]
fn ensemble_train_then_calibrate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_dataset(dir.path(), 15);
    let ens_dir = dir.path().join("ens");
    let mut args: Vec<String> = [
        "ensemble-train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ens_dir.to_str().unwrap(),
        "--seed",
        "9",
        "--members",
        "2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(tiny_sets());
    let out = run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>(), &[]);
    assert_ok(&out, "ensemble-train");
    assert!(ens_dir.join("ensemble.toml").exists());
    assert!(ens_dir.join("member_0.ckpt").exists());
    assert!(ens_dir.join("member_1.ckpt").exists());

    let cal_dir = dir.path().join("cal");
    let out = run(
        &[
            "calibrate",
            "--data",
            data.to_str().unwrap(),
            "--split",
            "test",
            "--ensemble",
            ens_dir.to_str().unwrap(),
            "--out",
            cal_dir.to_str().unwrap(),
            "--threads",
            "2",
        ],
        &[],
    );
    assert_ok(&out, "calibrate");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("metric,value,n_samples\n"), "stdout: {stdout}");
    assert!(stdout.contains("rho_energy_sigma_energy,"));
    assert!(stdout.contains("rho_force_sigma_force,"));
    let identity_row = stdout
        .lines()
        .find(|l| l.starts_with("cov_identity_residual,"))
        .expect("ensemble calibrate reports the variance-gradient identity residual");
    let residual: f64 = identity_row.split(',').nth(1).unwrap().parse().unwrap();
    assert!(residual.is_finite() && residual >= 0.0, "row: {identity_row}");
    let samples = std::fs::read_to_string(cal_dir.join("calibration_samples.csv")).unwrap();
    assert!(samples.starts_with("sample_id,delta_E,sigma_E\n"));

    // both uncertainty sources at once is an input error
    let out = run(
        &[
            "calibrate",
            "--data",
            data.to_str().unwrap(),
            "--ensemble",
            ens_dir.to_str().unwrap(),
            "--checkpoint",
            ens_dir.join("member_0.ckpt").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_reports_both_combination_kinds() {
    let out = run(
        &["bench"],
        &[
            "--set".into(),
            "bench.n_edges=64".into(),
            "--set".into(),
            "bench.n_triplets=2000".into(),
            "--set".into(),
            "bench.repeats=1".into(),
            "--set".into(),
            "model.hidden_dim=16".into(),
            "--set".into(),
            "model.triplet_dim=8".into(),
        ],
    );
    assert_ok(&out, "bench");
    let stdout = String::from_utf8(out.stdout).unwrap();
    for key in [
        "hadamard_seconds_per_pass",
        "hadamard_ns_per_triplet",
        "hadamard_flops_per_triplet",
        "bilinear_seconds_per_pass",
        "bilinear_ns_per_triplet",
        "bilinear_flops_per_triplet",
        "wall_time_ratio",
        "flop_ratio",
    ] {
        assert!(stdout.contains(&format!("{key},")), "missing {key} in:\n{stdout}");
    }
}
