use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cknn::dataset::{load_covariates_csv, load_csv};
use cknn::persist::load_model;
use cknn::CsvSchema;

fn cknn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cknn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cknn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scenario-1 train/test files in a fresh directory.
fn scenario_data(n: usize, test_n: usize) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "simulate", "--scenario", "1", "--n", &n.to_string(), "--test-n", &test_n.to_string(),
        "--seed", "9", "--write-data", s(dir.path()),
    ]);
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    (dir, train, test)
}

#[test]
fn fit_then_predict_matches_library() {
    let (dir, train, test) = scenario_data(200, 400);
    let model = dir.path().join("model.json");
    let cv = dir.path().join("cv.tsv");
    let printed = ok(&[
        "fit", "--data", s(&train), "--ignore", "true_arm", "--method", "acnn", "--k-grid", "4,16",
        "--delta-grid", "1,0,-inf", "--folds", "5", "--out", s(&model), "--cv-out", s(&cv),
    ]);
    assert_eq!(field(&printed, "method"), "acnn");
    let cv_text = std::fs::read_to_string(&cv).unwrap();
    assert_eq!(cv_text.lines().count(), 1 + 6);
    assert!(cv_text.starts_with("k\tdelta\tvalue\tchosen\tfold_1"));

    let predicted = ok(&["predict", "--model", s(&model), "--data", s(&test)]);
    let mut lines = predicted.lines();
    assert_eq!(lines.next(), Some("arm"));
    let cli_arms: Vec<usize> = lines.map(|l| l.parse().unwrap()).collect();

    let (regime, _) = load_model(&model).unwrap();
    let schema = CsvSchema {
        ignore: vec!["true_arm".into()],
        ..CsvSchema::default()
    };
    let (_, x) = load_covariates_csv(&test, &schema).unwrap();
    let lib_arms: Vec<usize> = regime.predict_many(x.view()).unwrap().iter().map(|a| a.label()).collect();
    assert_eq!(cli_arms, lib_arms);
}

#[test]
fn cnn_fit_ignores_delta_grid() {
    let (dir, train, _) = scenario_data(120, 10);
    let cv = dir.path().join("cv.tsv");
    let printed = ok(&[
        "fit", "--data", s(&train), "--ignore", "true_arm", "--method", "cnn", "--k-grid", "2,8",
        "--delta-grid", "3,1", "--folds", "4", "--out", s(&dir.path().join("m.json")), "--cv-out", s(&cv),
    ]);
    assert_eq!(field(&printed, "delta"), "-inf");
    let cv_text = std::fs::read_to_string(&cv).unwrap();
    let deltas: Vec<&str> = cv_text.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap()).collect();
    assert_eq!(deltas, ["-inf", "-inf"]);
}

#[test]
fn constant_model_value_matches_arm_formula() {
    let (dir, train, _) = scenario_data(100, 10);
    let model = dir.path().join("const.json");
    // a threshold above every importance score forces the constant regime
    ok(&[
        "fit", "--data", s(&train), "--ignore", "true_arm", "--k-grid", "5", "--delta-grid", "1e9",
        "--folds", "3", "--out", s(&model),
    ]);
    let (regime, _) = load_model(&model).unwrap();
    assert!(regime.is_constant());
    let arm = regime.predict(&[0.0; 5]).unwrap();

    let printed = ok(&["evaluate", "--model", s(&model), "--data", s(&train), "--ignore", "true_arm"]);
    let value: f64 = field(&printed, "value").parse().unwrap();

    // oracle: weighted outcome mean of the subjects who received `arm`
    let ds = load_csv(&train, &CsvSchema { ignore: vec!["true_arm".into()], ..CsvSchema::default() }).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..ds.n() {
        if ds.treatments()[i] == arm {
            num += ds.outcomes()[i] / ds.propensities()[i];
            den += 1.0 / ds.propensities()[i];
        }
    }
    assert!((value - num / den).abs() < 1e-12, "{value} vs {}", num / den);
}

#[test]
fn importance_lists_covariates_in_order() {
    let (_dir, train, _) = scenario_data(150, 10);
    let printed = ok(&["importance", "--data", s(&train), "--ignore", "true_arm", "--k", "12"]);
    let mut lines = printed.lines();
    assert_eq!(lines.next(), Some("j\tcovariate\tT\tsigma2"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 5);
    for (j, row) in rows.iter().enumerate() {
        assert_eq!(row[0], (j + 1).to_string());
        let t: f64 = row[2].parse().unwrap();
        let w: f64 = row[3].parse().unwrap();
        assert_eq!(w, t.max(0.0));
    }
}

#[test]
fn true_regime_column_evaluates_near_optimum() {
    let (_dir, _, test) = scenario_data(10, 10_000);
    let printed = ok(&["evaluate", "--regime-column", "true_arm", "--data", s(&test)]);
    let value: f64 = field(&printed, "value").parse().unwrap();
    assert!((value - 2.09).abs() < 0.05, "{value}");
    assert_eq!(field(&printed, "n"), "10000");
}

#[test]
fn simulate_summary_row() {
    let printed = ok(&["simulate", "--scenario", "2", "--n", "60", "--reps", "2", "--test-n", "200", "--k-grid", "4"]);
    let lines: Vec<&str> = printed.lines().collect();
    assert!(lines[0].starts_with("scenario\tp\tcorrelated\tmethod"));
    let cols: Vec<&str> = lines[1].split('\t').collect();
    assert_eq!(&cols[..6], ["2", "5", "false", "cnn", "60", "2"]);
}

#[test]
fn errors_carry_codes_and_fail() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cknn(&["fit", "--data", s(&dir.path().join("nope.csv")), "--out", "x.json"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error[E_IO]"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,treatment,outcome\n0.5,3,1.0\n0.1,1,2.0\n").unwrap();
    let out = cknn(&["importance", "--data", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error["));

    let neg = dir.path().join("neg.csv");
    std::fs::write(&neg, "x,treatment,outcome,propensity\n0.5,1,1.0,0\n0.1,2,2.0,0.5\n").unwrap();
    let out = cknn(&["importance", "--data", s(&neg)]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_PROPENSITY]"));
}

#[test]
fn newer_model_version_rejected() {
    let (dir, train, test) = scenario_data(80, 10);
    let model = dir.path().join("m.json");
    ok(&[
        "fit", "--data", s(&train), "--ignore", "true_arm", "--method", "cnn", "--k-grid", "3",
        "--folds", "2", "--out", s(&model),
    ]);
    let text = std::fs::read_to_string(&model).unwrap().replace("\"version\":1", "\"version\":2");
    std::fs::write(&model, text).unwrap();
    let out = cknn(&["predict", "--model", s(&model), "--data", s(&test)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_MODEL_VERSION]"));
}
