//! End-to-end runs of the binary.

use std::path::Path;
use std::process::{Command, Output};

use recurrent_core::io::{read_baseline, read_curves, ResultsFile};
use recurrent_core::sim::ReplicateTable;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recurrent")).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

/// A small simulated cohort with its census tables.
fn dumped(dir: &Path) {
    let o = run(
        &["simulate", "--setting", "s1case2", "--n", "4000", "--reps", "2", "--seed", "5", "--analyses", "B.1.5", "--k", "10", "--dump-replicate", "0"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_tables_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    dumped(dir.path());
    let t = ReplicateTable::read_csv(std::fs::File::open(dir.path().join("replicate_table.csv")).unwrap()).unwrap();
    assert_eq!(t.rows.len(), 4);
    let text = std::fs::read_to_string(dir.path().join("replicate_table.txt")).unwrap();
    assert!(text.contains("SMean") && text.contains("B.1.5"));
    for f in ["cohort.csv", "census_calendar.csv", "census_generation.csv"] {
        assert!(dir.path().join("replicate_0").join(f).exists(), "{f}");
    }
}

#[test]
fn fit_cohort_and_population_targets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dumped(d);
    let o = run(&["fit", "--data", "replicate_0/cohort.csv", "--scheme", "sex", "--model", "CCC", "--k", "10", "--out-dir", "ccc"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = ResultsFile::from_toml(&std::fs::read_to_string(d.join("ccc/results.toml")).unwrap()).unwrap();
    assert_eq!(results.model, "CCC");
    assert_eq!(results.constant.len(), 3);
    assert!(results.converged);

    let o = run(
        &[
            "fit", "--data", "replicate_0/cohort.csv", "--scheme", "sex", "--model", "VCV", "--target", "population", "--census",
            "replicate_0/census_calendar.csv", "--k", "10", "--grid-step", "1/2", "--out-dir", "vcv",
        ],
        d,
    );
    assert!(matches!(code(&o), 0 | 2), "{}", String::from_utf8_lossy(&o.stderr));
    let curves = read_curves(std::fs::File::open(d.join("vcv/curves.csv")).unwrap()).unwrap();
    assert!(curves.iter().any(|r| r.coef == "late" && r.estimate.is_finite()));
    let base = read_baseline(std::fs::File::open(d.join("vcv/baseline.csv")).unwrap()).unwrap();
    assert!(base.windows(2).all(|w| w[0].cumulative_from_origin <= w[1].cumulative_from_origin));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    dumped(d);
    let o = run(&["fit", "--data", "replicate_0/cohort.csv", "--scheme", "sex", "--target", "population"], d);
    assert_eq!(code(&o), 1);
    assert!(!o.stderr.is_empty());
    let o = run(&["simulate", "--analyses", "B.1.9", "--n", "100", "--reps", "2"], d);
    assert_eq!(code(&o), 1);
    let o = run(&["fit", "--data", "missing.csv"], d);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.conf"), "# small run\nsetting = s2\nn = 1500\nreps = 3\nseed = 4\nanalyses = B.2.5\nout-dir = from_file\n").unwrap();
    let o = run(&["--config", "run.conf", "simulate", "--reps", "2"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = ReplicateTable::read_csv(std::fs::File::open(d.join("from_file/replicate_table.csv")).unwrap()).unwrap();
    assert_eq!((t.n, t.reps, t.seed), (1500, 2, 4));
    assert_eq!(t.rows[0].analysis, "B.2.5");
}
