use cknn::dataset::{load_csv, write_csv};
use cknn::persist::{load_model, to_json, ModelMeta};
use cknn::simulation::{generate, Scenario, ScenarioSpec};
use cknn::tuning::{tune_and_fit, TuneGrid};
use cknn::value::{compare_regimes, noninformative_regime};
use cknn::{ipw_value, Arm, CsvSchema, DecisionPolicy, Method};
use proptest::prelude::*;

fn spec(s: Scenario, n: usize, seed: u64) -> ScenarioSpec {
    ScenarioSpec::new(s, 5, false, n, seed)
}

#[test]
fn csv_fit_persist_predict() {
    let (train, test) = generate(&spec(Scenario::S1, 160, 11).with_test_n(300)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    write_csv(&train, std::fs::File::create(&path).unwrap(), &[]).unwrap();
    let loaded = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(loaded.n(), train.n());
    assert_eq!(loaded.treatments(), train.treatments());
    // shortest round-trip formatting keeps every value exact
    assert_eq!(loaded.covariates(), train.covariates());
    assert_eq!(loaded.outcomes(), train.outcomes());

    let grid = TuneGrid {
        k_values: vec![4, 16, 32],
        delta_values: vec![1.0, 0.0, f64::NEG_INFINITY],
        folds: 4,
        seed: 3,
    };
    let (report, model, _) = tune_and_fit(&loaded, &grid, Method::Acnn, DecisionPolicy::Default).unwrap();
    assert_eq!(report.cells.len(), 9);

    let model_path = dir.path().join("model.json");
    std::fs::write(&model_path, to_json(&model, &ModelMeta::default()).unwrap()).unwrap();
    let (back, _) = load_model(&model_path).unwrap();
    assert_eq!(
        model.predict_many(test.covariates()).unwrap(),
        back.predict_many(test.covariates()).unwrap()
    );
}

#[test]
fn true_regime_value_in_first_scenario() {
    let (_, test) = generate(&spec(Scenario::S1, 10, 5).with_test_n(10_000)).unwrap();
    let truth: Vec<Arm> = (0..test.n()).map(|i| Scenario::S1.true_regime(test.row(i))).collect();
    let v = ipw_value(&test, &truth).unwrap().value;
    assert!((v - 2.09).abs() < 0.05, "V(d*) = {v}");
}

#[test]
fn constant_arm_value_matches_mean_potential_outcome() {
    // oracle: average of Q0(x, 1) over the same test covariates
    let (_, test) = generate(&spec(Scenario::S3, 10, 6).with_test_n(20_000)).unwrap();
    let arm = Arm::new(1);
    let v = ipw_value(&test, &vec![arm; test.n()]).unwrap().value;
    let q: f64 = (0..test.n()).map(|i| Scenario::S3.q0(test.row(i), arm)).sum::<f64>() / test.n() as f64;
    assert!((v - q).abs() < 0.05, "IPW {v} vs mean Q0 {q}");
}

#[test]
fn true_regime_beats_noninformative_in_most_trials() {
    let mut positive = 0;
    for seed in 0..20 {
        let (train, _) = generate(&spec(Scenario::S1, 400, seed).with_test_n(2)).unwrap();
        let truth: Vec<Arm> = (0..train.n()).map(|i| Scenario::S1.true_regime(train.row(i))).collect();
        let d0 = noninformative_regime(&train).predict_many(train.covariates()).unwrap();
        if compare_regimes(&train, &truth, &d0).unwrap().t_statistic > 0.0 {
            positive += 1;
        }
    }
    assert!(positive >= 18, "{positive} of 20");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn chosen_cell_dominates(seed in 0u64..1000, folds in 2usize..6) {
        let (train, _) = generate(&spec(Scenario::S2, 60, seed).with_test_n(2)).unwrap();
        let grid = TuneGrid {
            k_values: vec![1, 3, 8],
            delta_values: vec![0.5, f64::NEG_INFINITY],
            folds,
            seed,
        };
        let (report, _, _) = tune_and_fit(&train, &grid, Method::Acnn, DecisionPolicy::Default).unwrap();
        let best = report.chosen_cell();
        for c in &report.cells {
            prop_assert!(c.score() <= best.score());
            if c.score() == best.score() {
                prop_assert!(c.delta < best.delta || (c.delta == best.delta && c.k >= best.k));
            }
        }
    }
}
