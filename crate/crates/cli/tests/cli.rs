use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = r#"
[data]
builtin = "toy"

[task]
kind = "generative"

[layout]
test_len = 50
valid_len = 50
k = 4
transient = 50

[search]
reservoir_size = 20
leaking_rates = [0.3, 0.8]
spectral_radii = [0.9]
betas = [1e-8, 1e-4]

[run]
schemes = ["sv", "kfold-cv", "kstep-av"]
seeds = [1, 2]
output_dir = "out"
"#;

fn esncv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esncv"))
        .args(args)
        .current_dir(dir)
        .env_remove("ESNCV_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn toy_config_runs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.toml"), TOY).unwrap();
    let first = esncv(&["run", "toy.toml"], dir.path());
    assert!(first.status.success(), "{}", stderr(&first));
    let report = fs::read(dir.path().join("out/report.csv")).unwrap();
    let md = fs::read(dir.path().join("out/report.md")).unwrap();
    assert!(dir.path().join("out/timing.csv").exists());

    let text = String::from_utf8(report.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // SV: as-is and retrain; two k-split schemes: retrain, average, best.
    assert_eq!(lines.len(), 1 + 2 + 3 + 3);
    assert!(lines[0].starts_with("scheme,finalize,seeds,valid_error,test_nrmse"));
    assert!(lines[1].starts_with("SV,as-is,2,"));
    assert!(!text.contains("seconds"));

    let second = esncv(&["run", "toy.toml"], dir.path());
    assert!(second.status.success());
    assert_eq!(fs::read(dir.path().join("out/report.csv")).unwrap(), report);
    assert_eq!(fs::read(dir.path().join("out/report.md")).unwrap(), md);
}

#[test]
fn thread_count_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.toml"), TOY).unwrap();
    let a = esncv(&["run", "toy.toml", "--threads", "1"], dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let one = fs::read(dir.path().join("out/report.csv")).unwrap();
    let b = esncv(&["run", "toy.toml", "--threads", "3"], dir.path());
    assert!(b.status.success());
    assert_eq!(fs::read(dir.path().join("out/report.csv")).unwrap(), one);
}

#[test]
fn output_dir_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.toml"), TOY.replace("\"kfold-cv\", \"kstep-av\"", "")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_esncv"))
        .args(["run", "toy.toml", "--seed", "7"])
        .current_dir(dir.path())
        .env("ESNCV_OUTPUT_DIR", dir.path().join("elsewhere"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let report = fs::read_to_string(dir.path().join("elsewhere/report.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("SV,as-is,1,"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn misspelled_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), TOY.replace("reservoir_size", "reservior_size")).unwrap();
    let out = esncv(&["run", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error[config]:"), "{err}");
    assert!(err.contains("reservior_size"), "{err}");
    assert!(err.contains("line 15"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_values_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    for (from, to) in [
        ("betas = [1e-8, 1e-4]", "betas = [-1.0]"),
        ("kind = \"generative\"", "kind = \"regression\""),
        ("schemes = [\"sv\", \"kfold-cv\", \"kstep-av\"]", "schemes = [\"holdout\"]"),
        ("test_len = 50", "test_len = 5000"),
    ] {
        fs::write(dir.path().join("bad.toml"), TOY.replace(from, to)).unwrap();
        let out = esncv(&["run", "bad.toml"], dir.path());
        assert_eq!(out.status.code(), Some(2), "{to}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error[config]:"));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        TOY.replace("builtin = \"toy\"", "path = \"nowhere.csv\""),
    )
    .unwrap();
    let out = esncv(&["run", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("error[data]:"));
}

#[test]
fn validate_plan_labour_preset() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("labour.toml"),
        "[task]\nkind = \"generative\"\n[layout]\npreset = \"table1:labour\"\n[run]\nschemes = [\"kfold-cv\", \"sv\"]\n",
    )
    .unwrap();
    let out = esncv(&["validate-plan", "labour.toml"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("KFoldCV: 34 splits"), "{text}");
    assert!(text.contains("SV: 1 splits"), "{text}");
    assert_eq!(text.matches("  split ").count(), 35);
    assert_eq!(text.matches("invariants: ok").count(), 2);
}

#[test]
fn validate_plan_rejects_overlap() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("overlap.toml"),
        "[task]\nkind = \"generative\"\n[layout]\ntest_len = 10\ntotal_steps = 100\n\
         [[layout.splits]]\ntrain = [[0, 50]]\nvalid = [40, 60]\n[run]\nschemes = [\"kfold-cv\"]\n",
    )
    .unwrap();
    let out = esncv(&["validate-plan", "overlap.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("train-valid-overlap"), "{}", stderr(&out));
}

#[test]
fn bench_engines_agree_and_counts_differ() {
    let dir = tempfile::tempdir().unwrap();
    let out = esncv(
        &["bench", "--steps", "2000", "--size", "15", "--folds", "2,4", "--reps", "1", "--out", "b"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let driven = |k: &str, engine: &str| -> u64 {
        rows.iter().find(|r| r[0] == k && r[1] == engine).unwrap()[4].parse().unwrap()
    };
    assert_eq!(driven("2", "efficient"), 2000);
    assert_eq!(driven("4", "efficient"), 2000);
    assert_eq!(driven("2", "naive"), 2 * 2000);
    assert_eq!(driven("4", "naive"), 4 * 2000);
    for r in &rows {
        let diff: f64 = r[6].parse().unwrap();
        assert!(diff < 1e-9, "{r:?}");
    }
}

#[test]
fn usage_errors_exit_two_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(esncv(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(esncv(&["run"], dir.path()).status.code(), Some(2));
    assert_eq!(esncv(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(esncv(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = esncv(&["validate-plan", root.join("labour-plan.toml").to_str().unwrap()], &root);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = esncv(&["validate-plan", root.join("toy.toml").to_str().unwrap()], &root);
    assert!(out.status.success(), "{}", stderr(&out));
}
