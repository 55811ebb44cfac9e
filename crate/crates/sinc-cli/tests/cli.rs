//! End-to-end runs of the `sinc` binary: the simulate/fit/evaluate pipeline,
//! grid output layout, byte-level determinism, and error exits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sinc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sinc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = sinc(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `dir`, keyed by relative path, with full contents.
fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, files: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, files);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(dir, dir, &mut files);
    files
}

fn simulate_small(dir: &Path, seed: u64) -> String {
    let out = dir.join(format!("data_{seed}"));
    run_ok(&[
        "simulate",
        "--out",
        out.to_str().unwrap(),
        "--graph",
        "band",
        "--p",
        "6",
        "--n",
        "40",
        "--q",
        "2",
        "--bandwidth",
        "1",
        "--seed",
        &seed.to_string(),
    ]);
    out.to_string_lossy().into_owned()
}

#[test]
fn simulate_writes_the_full_truth_directory() {
    let dir = TempDir::new().unwrap();
    let data = simulate_small(dir.path(), 5);
    for name in [
        "counts.tsv",
        "covariates.tsv",
        "b_true.tsv",
        "b0_true.tsv",
        "omega_true.tsv",
        "adjacency_true.tsv",
        "manifest.json",
    ] {
        assert!(Path::new(&data).join(name).exists(), "{name} missing");
    }
    let manifest = fs::read_to_string(Path::new(&data).join("manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"simulate\""));
    assert!(manifest.contains("\"graph\": \"band\""));
}

#[test]
fn simulate_is_deterministic_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let a = simulate_small(dir.path(), 7);
    let b_dir = TempDir::new().unwrap();
    let b = simulate_small(b_dir.path(), 7);
    assert_eq!(tree_bytes(Path::new(&a)), tree_bytes(Path::new(&b)));

    let c = simulate_small(dir.path(), 8);
    assert_ne!(tree_bytes(Path::new(&a)), tree_bytes(Path::new(&c)));
}

#[test]
fn fit_then_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = simulate_small(dir.path(), 11);
    let fit_out = dir.path().join("fit");
    let counts = format!("{data}/counts.tsv");
    let covariates = format!("{data}/covariates.tsv");
    run_ok(&[
        "fit",
        "--counts",
        &counts,
        "--covariates",
        &covariates,
        "--out",
        fit_out.to_str().unwrap(),
        "--nu0",
        "0.01",
    ]);
    for name in [
        "omega.tsv",
        "p_star.tsv",
        "adjacency.tsv",
        "b.tsv",
        "phi.tsv",
        "b0.tsv",
        "elbo_trace.tsv",
        "manifest.json",
    ] {
        assert!(fit_out.join(name).exists(), "{name} missing");
    }

    let eval_out = dir.path().join("eval");
    let output = run_ok(&[
        "evaluate",
        "--estimate",
        fit_out.to_str().unwrap(),
        "--truth",
        &data,
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("edges"));
    assert!(stdout.contains("coefficients"));

    let metrics = fs::read_to_string(eval_out.join("metrics.tsv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "universe\ttrue_positives\tfalse_positives\tfalse_negatives\ttrue_negatives\ttpr\tfpr\tf1\tmcc"
    );
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 2);
    assert!(body[0].starts_with("edges\t"));
    assert!(body[1].starts_with("coefficients\t"));

    // 6 taxa: 15 possible edges, 12 coefficient slots.
    let edge_fields: Vec<&str> = body[0].split('\t').collect();
    let edge_total: usize = edge_fields[1..5].iter().map(|v| v.parse::<usize>().unwrap()).sum();
    assert_eq!(edge_total, 15);
    let coef_fields: Vec<&str> = body[1].split('\t').collect();
    let coef_total: usize = coef_fields[1..5].iter().map(|v| v.parse::<usize>().unwrap()).sum();
    assert_eq!(coef_total, 12);
}

#[test]
fn fit_without_covariates_skips_coefficient_tables() {
    let dir = TempDir::new().unwrap();
    let data = simulate_small(dir.path(), 13);
    let fit_out = dir.path().join("fit_plain");
    let counts = format!("{data}/counts.tsv");
    run_ok(&[
        "fit",
        "--counts",
        &counts,
        "--out",
        fit_out.to_str().unwrap(),
    ]);
    assert!(fit_out.join("omega.tsv").exists());
    assert!(!fit_out.join("b.tsv").exists());
    assert!(!fit_out.join("phi.tsv").exists());
}

#[test]
fn grid_writes_summary_per_point_directories_and_selection() {
    let dir = TempDir::new().unwrap();
    let data = simulate_small(dir.path(), 17);
    let grid_out = dir.path().join("grid");
    let counts = format!("{data}/counts.tsv");
    let covariates = format!("{data}/covariates.tsv");
    run_ok(&[
        "grid",
        "--counts",
        &counts,
        "--covariates",
        &covariates,
        "--out",
        grid_out.to_str().unwrap(),
        "--nu0-grid",
        "0.001,0.01,0.1",
        "--sparsity-target",
        "0.2",
    ]);

    let summary = fs::read_to_string(grid_out.join("grid_summary.tsv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "nu0\tdirectory\tedge_density\telbo\titerations\tconverged\tselected"
    );
    assert_eq!(lines.len(), 4);
    let selected_rows = lines[1..]
        .iter()
        .filter(|line| line.split('\t').next_back() == Some("1"))
        .count();
    assert_eq!(selected_rows, 1, "exactly one row is marked selected");

    for i in 0..3 {
        assert!(grid_out.join(format!("nu0_{i:02}")).join("omega.tsv").exists());
    }
    assert!(grid_out.join("selected").join("adjacency.tsv").exists());
    let manifest = fs::read_to_string(grid_out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"selected_nu0\""));
}

#[test]
fn config_file_steers_the_fit_and_flags_beat_it() {
    let dir = TempDir::new().unwrap();
    let data = simulate_small(dir.path(), 19);
    let config = dir.path().join("run.conf");
    fs::write(&config, "nu0 = 0.05\nmax_outer_iters = 3\nseed = 4\n").unwrap();
    let fit_out = dir.path().join("fit_conf");
    let counts = format!("{data}/counts.tsv");
    run_ok(&[
        "fit",
        "--counts",
        &counts,
        "--out",
        fit_out.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    let manifest = fs::read_to_string(fit_out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"nu0\": 0.05"), "file value applies");
    assert!(manifest.contains("\"max_outer_iters\": 3"));
    assert!(manifest.contains("\"seed\": 9"), "flag beats file");
}

#[test]
fn ragged_input_fails_with_a_parse_category() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3\n").unwrap();
    let out = sinc(&[
        "fit",
        "--counts",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("never").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[parse]"), "got: {stderr}");
    assert!(stderr.contains(":2:"), "points at line 2: {stderr}");
}

#[test]
fn negative_count_fails_with_its_cell() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("neg.csv");
    fs::write(&bad, "1,-2\n3,4\n").unwrap();
    let out = sinc(&[
        "fit",
        "--counts",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("never").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[parse]"), "got: {stderr}");
    assert!(stderr.contains("negative count"), "got: {stderr}");
    assert!(stderr.contains(":1:2"), "points at row 1 field 2: {stderr}");
}

#[test]
fn unknown_config_key_fails_with_config_category() {
    let dir = TempDir::new().unwrap();
    let data = simulate_small(dir.path(), 23);
    let config = dir.path().join("bad.conf");
    fs::write(&config, "giraffe = 1\n").unwrap();
    let counts = format!("{data}/counts.tsv");
    let out = sinc(&[
        "fit",
        "--counts",
        &counts,
        "--out",
        dir.path().join("never").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[config]"), "got: {stderr}");
    assert!(stderr.contains("giraffe"), "got: {stderr}");
}

#[test]
fn mutually_exclusive_constraints_fail_as_model_error() {
    let dir = TempDir::new().unwrap();
    let data = simulate_small(dir.path(), 29);
    let counts = format!("{data}/counts.tsv");
    let out = sinc(&[
        "fit",
        "--counts",
        &counts,
        "--out",
        dir.path().join("never").to_str().unwrap(),
        "--constrain-b-zero",
        "--constrain-omega-identity",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[model]"), "got: {stderr}");
    assert!(stderr.contains("mutually exclusive"), "got: {stderr}");
}

#[test]
fn fit_outputs_reload_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let data = simulate_small(dir.path(), 31);
    let fit_out = dir.path().join("fit_rt");
    let counts = format!("{data}/counts.tsv");
    let covariates = format!("{data}/covariates.tsv");
    run_ok(&[
        "fit",
        "--counts",
        &counts,
        "--covariates",
        &covariates,
        "--out",
        fit_out.to_str().unwrap(),
    ]);

    // Parsing a printed float and printing it again must reproduce the text,
    // so reading a written table and writing it back changes nothing.
    for name in ["omega.tsv", "p_star.tsv", "b.tsv", "phi.tsv", "b0.tsv"] {
        let text = fs::read_to_string(fit_out.join(name)).unwrap();
        let mut cells = 0;
        for line in text.lines().skip(1) {
            for field in line.split('\t') {
                let Ok(value) = field.parse::<f64>() else {
                    continue; // row label
                };
                assert_eq!(format!("{value:.16e}"), field, "{name} drifts");
                cells += 1;
            }
        }
        assert!(cells > 0, "{name} held no numeric cells");
    }
}
