//! End-to-end checks of the `pactest` binary: exit codes, config
//! precedence, output locations, and the shape of emitted files.

use std::path::Path;
use std::process::{Command, Output};

use pactest::dataset::{generate_dataset, IncomeLaw, NoiseSpec, PointLaw};
use pactest::harness::{homothetic_dgp, separable_dgp, OUT_DIR_ENV};
use pactest::learn::{GammaRow, GammaTable};
use pactest::prng::stream_rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pactest"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary spawns")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a small noisy dataset for the given homothetic deviation.
fn write_dataset(dir: &Path, beta: f64, name: &str) -> std::path::PathBuf {
    let params = homothetic_dgp(beta);
    let law = PointLaw::new(2, 0.5, 2.0, IncomeLaw::spread(10.0));
    let mut rng = stream_rng(31, 0);
    let data = generate_dataset(&params, 100, &law, &NoiseSpec::uniform(1e-4), name, &mut rng)
        .expect("generation stays in the box");
    let path = dir.join(format!("{name}.csv"));
    data.write_csv(&path).expect("dataset writes");
    path
}

#[test]
fn help_and_version_exit_zero() {
    assert!(run(bin().arg("--help")).status.success());
    assert!(run(bin().arg("--version")).status.success());
    assert!(run(bin().args(["simulate", "--help"])).status.success());
}

#[test]
fn unknown_subcommand_exits_one() {
    let out = run(bin().arg("frobnicate"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_table_cells_and_gamma() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(bin()
        .args([
            "simulate",
            "--study",
            "homotheticity",
            "--grid",
            "1e-1",
            "--pairs",
            "80",
            "--grid-points",
            "30",
            "--out-dir",
        ])
        .arg(dir.path()));
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("verdict"), "table missing verdict row:\n{text}");
    for f in [
        "homotheticity_table.txt",
        "homotheticity_cells.csv",
        "homotheticity_gamma.csv",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let cells =
        std::fs::read_to_string(dir.path().join("homotheticity_cells.csv")).expect("cells file");
    assert!(cells.contains("# config-digest="));
    assert!(cells.contains("deviation,seed,iteration"));
}

#[test]
fn simulate_rejects_bad_grids() {
    let out = run(bin().args(["simulate", "--grid", " , "]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("empty deviation grid"));
    let out = run(bin().args(["simulate", "--grid", "1e-1,-3"]));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn test_exit_codes_track_the_verdict() {
    let dir = tempfile::tempdir().expect("tempdir");
    let deviant = write_dataset(dir.path(), 1e-1, "deviant");
    let in_class = write_dataset(dir.path(), 0.0, "in_class");
    let fast = ["--pairs", "150", "--grid-points", "40", "--out-dir"];

    let out = run(bin()
        .args(["test", "--kind", "homothetic", "--data"])
        .arg(&deviant)
        .args(fast)
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("verdict: rejected"));

    let out = run(bin()
        .args(["test", "--kind", "homothetic", "--data"])
        .arg(&in_class)
        .args(fast)
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("not-rejected"));
    assert!(dir.path().join("test_report.csv").is_file());
}

#[test]
fn test_errors_exit_one() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_dataset(dir.path(), 0.0, "plain");

    let out = run(bin().args(["test", "--kind", "homothetic", "--data", "no_such_file.csv"]));
    assert_eq!(out.status.code(), Some(1));

    let out = run(bin().args(["test", "--kind", "garp", "--data"]).arg(&data));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown kind"));

    let out = run(bin().args(["test", "--kind", "weak-separable", "--data"]).arg(&data));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--groups"));

    let out = run(bin().args(["test", "--data"]).arg(&data));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--kind"));
}

#[test]
fn ratio_kind_falls_back_when_declared_homothetic() {
    let dir = tempfile::tempdir().expect("tempdir");
    let params = separable_dgp(0.0, &pactest::harness::default_groups()).expect("valid");
    let law = PointLaw::new(3, 0.5, 2.0, IncomeLaw::spread(10.0));
    let mut rng = stream_rng(77, 0);
    let data = generate_dataset(&params, 100, &law, &NoiseSpec::none(), "sep", &mut rng)
        .expect("generation stays in the box");
    let path = dir.path().join("sep.csv");
    data.write_csv(&path).expect("dataset writes");

    let out = run(bin()
        .args([
            "test",
            "--kind",
            "weak-separable",
            "--groups",
            "1;2,3",
            "--assume-homothetic",
            "--pairs",
            "150",
            "--grid-points",
            "40",
            "--data",
        ])
        .arg(&path)
        .args(["--out-dir"])
        .arg(dir.path()));
    let text = stdout(&out);
    assert!(
        text.contains("fallback: ratio form replaced by the share form"),
        "missing fallback note:\n{text}\nstderr: {}",
        stderr(&out)
    );
}

#[test]
fn sign_restrictions_need_an_explicit_table() {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = write_dataset(dir.path(), 0.0, "signs");

    let out = run(bin()
        .args(["test", "--kind", "gross-complements", "--pair", "1,2", "--data"])
        .arg(&data));
    assert_eq!(out.status.code(), Some(1));

    let table = GammaTable::new(vec![
        GammaRow { eps: 1e-2, gamma: 0.0, members: 1 },
        GammaRow { eps: 10.0, gamma: 0.0, members: 1 },
    ])
    .expect("valid toy table");
    let table_path = dir.path().join("flat.csv");
    table.write_csv(&table_path, &[]).expect("table writes");

    let out = run(bin()
        .args(["test", "--kind", "gross-complements", "--pair", "1,2", "--gamma-table"])
        .arg(&table_path)
        .arg("--data")
        .arg(&data)
        .arg("--out-dir")
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
}

#[test]
fn config_file_feeds_defaults_and_flags_win() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "kind=homothetic\nseed=5\npairs=90\ngrid-points=30\n")
        .expect("config writes");

    let out = run(bin()
        .args(["gamma", "--config"])
        .arg(&config)
        .args(["--seed", "11", "--out-dir"])
        .arg(dir.path()));
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("gamma_table.csv")).expect("table file");
    assert!(table.contains("# seed=11"), "flag must beat config:\n{table}");
    assert!(table.contains("# pairs=90"), "config must beat default:\n{table}");
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "kind=homothetic\nspeling=3\n").expect("config writes");
    let out = run(bin().args(["gamma", "--config"]).arg(&config));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("speling"), "stderr: {}", stderr(&out));
}

#[test]
fn out_dir_env_var_supplies_the_default() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(bin()
        .env(OUT_DIR_ENV, dir.path())
        .args(["gamma", "--kind", "homothetic", "--pairs", "80", "--grid-points", "30"]));
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(dir.path().join("gamma_table.csv").is_file());
}

#[test]
fn gamma_accepts_an_infinite_last_knot() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(bin()
        .args([
            "gamma",
            "--kind",
            "homothetic",
            "--eps-grid",
            "1e-1,1,inf",
            "--pairs",
            "80",
            "--grid-points",
            "30",
            "--out-dir",
        ])
        .arg(dir.path()));
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("gamma_table.csv")).expect("table file");
    assert!(table.lines().any(|l| l.starts_with("inf,")), "missing inf row:\n{table}");
    let parsed = GammaTable::read_csv(dir.path().join("gamma_table.csv")).expect("round trips");
    assert!(parsed.rows().last().expect("rows").eps.is_infinite());
}

#[test]
fn gamma_law_flags_are_parsed() {
    let dir = tempfile::tempdir().expect("tempdir");
    let out = run(bin()
        .args([
            "gamma",
            "--kind",
            "weak-separable-homothetic",
            "--groups",
            "1;2,3",
            "--gamma-law",
            "log-uniform:3e-3,0.15",
            "--m-beta",
            "zero",
            "--pairs",
            "80",
            "--grid-points",
            "30",
            "--out-dir",
        ])
        .arg(dir.path()));
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let table = std::fs::read_to_string(dir.path().join("gamma_table.csv")).expect("table file");
    assert!(table.contains("# gamma-law=log-uniform:3e-3,0.15"));

    let out = run(bin().args(["gamma", "--kind", "homothetic", "--gamma-law", "weird:1"]));
    assert_eq!(out.status.code(), Some(1));
}
