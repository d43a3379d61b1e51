use attrib_core::data::{clean, split, CleanPolicy, Dataset, Row, Value};
use attrib_core::models::{fit, Hyperparameters, ModelKind, PredictorSpec, MAX_DEPTH, N_TREES};
use attrib_core::shapley::{exact_shapley, BackgroundSet};
use proptest::prelude::*;

fn small_dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(
        (
            prop::collection::vec(prop::option::weighted(0.9, 0i32..4), 2),
            prop::option::weighted(0.95, 0i32..8),
        ),
        1..40,
    )
    .prop_map(|raw| {
        let rows: Vec<Row> = raw
            .into_iter()
            .map(|(f, t)| Row {
                features: f.into_iter().map(|c| c.map(|v| Value::Number(v as f64))).collect(),
                target: t.map(|t| t as f64 * 100.0),
            })
            .collect();
        let base = Dataset::from_matrix(&["a", "b"], &[], &[], "y").unwrap();
        Dataset::new(base.schema, rows, "prop").unwrap()
    })
}

fn regression_data() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), -50.0f64..50.0), 12..40)
        .prop_map(|rows| rows.into_iter().unzip())
}

fn is_subsequence(small: &[Row], big: &[Row]) -> bool {
    let mut it = big.iter();
    small.iter().all(|r| it.any(|b| b == r))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn clean_is_idempotent_subsequence(ds in small_dataset()) {
        let policy = CleanPolicy::strict(Some(500.0));
        let (once, _) = clean(&ds, &policy);
        let (twice, log) = clean(&once, &policy);
        prop_assert_eq!(&once.rows, &twice.rows);
        prop_assert_eq!(log.total(), 0);
        prop_assert!(is_subsequence(&once.rows, &ds.rows));
    }

    #[test]
    fn split_is_deterministic_partition(n in 2usize..200, frac in 0.05f64..0.95, seed: u64) {
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ds = Dataset::from_matrix(&["i"], &x, &y, "y").unwrap();
        let Ok((train, test)) = split(&ds, frac, seed) else {
            return Ok(());
        };
        let again = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(&train, &again.0);
        prop_assert_eq!(&test, &again.1);
        prop_assert_eq!(test.len(), (frac * n as f64).round() as usize);
        let mut ids: Vec<f64> = train.rows.iter().chain(&test.rows).map(|r| r.target.unwrap()).collect();
        ids.sort_by(f64::total_cmp);
        prop_assert_eq!(ids, y);
    }

    #[test]
    fn ensembles_stay_within_target_range((x, y) in regression_data(), seed in 0u64..100) {
        let ds = Dataset::from_matrix(&["a", "b", "c"], &x, &y, "y").unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for kind in [ModelKind::Tree, ModelKind::Forest, ModelKind::Gbt] {
            let hyper = match kind {
                ModelKind::Tree => Hyperparameters::new(),
                _ => Hyperparameters::new().with(N_TREES, 10.0),
            };
            let m = fit(&ds, &PredictorSpec::with_hyper(kind, hyper), seed).unwrap();
            for probe in [[-9.0, 0.0, 9.0], [0.0, 0.0, 0.0], [9.0, -9.0, 1.0]] {
                let p = m.predict(&probe).unwrap();
                prop_assert!(p >= lo - 1e-9 && p <= hi + 1e-9, "{kind}: {p} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn constant_column_leaves_tree_unchanged((x, y) in regression_data(), c in -3.0f64..3.0) {
        let hyper = Hyperparameters::new().with(MAX_DEPTH, 4.0);
        let spec = PredictorSpec::with_hyper(ModelKind::Tree, hyper);
        let plain = fit(&Dataset::from_matrix(&["a", "b", "c"], &x, &y, "y").unwrap(), &spec, 0).unwrap();
        let wide: Vec<Vec<f64>> = x.iter().map(|r| [r.as_slice(), &[c]].concat()).collect();
        let padded = fit(&Dataset::from_matrix(&["a", "b", "c", "k"], &wide, &y, "y").unwrap(), &spec, 0).unwrap();
        for (r, w) in x.iter().zip(&wide) {
            prop_assert_eq!(plain.predict(r).unwrap(), padded.predict(w).unwrap());
        }
    }

    #[test]
    fn shapley_axioms_on_random_quadratics(
        coef in prop::collection::vec(-3.0f64..3.0, 3),
        x in prop::collection::vec(-2.0f64..2.0, 4),
        bg in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 1..6),
    ) {
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let bg = BackgroundSet::new(names, bg).unwrap();
        // Symmetric in features 0 and 1, feature 3 unused.
        let f = |r: &[f64]| coef[0] * (r[0] + r[1]) + coef[1] * r[0] * r[1] + coef[2] * r[2] * r[2];
        let g = |r: &[f64]| (r[0] - r[2]).sin() + r[1];
        let sum = |r: &[f64]| f(r) + 2.5 * g(r);

        let af = exact_shapley(&f, &x, &bg).unwrap();
        let ag = exact_shapley(&g, &x, &bg).unwrap();
        let asum = exact_shapley(&sum, &x, &bg).unwrap();

        if x[0] == x[1] {
            prop_assert!((af.contributions[0] - af.contributions[1]).abs() <= 1e-9);
        }
        let swap = |r: &[f64]| { let mut r = r.to_vec(); r.swap(0, 1); r };
        let swapped_bg = BackgroundSet::new(bg.features.clone(), bg.rows.iter().map(|r| swap(r)).collect()).unwrap();
        let asw = exact_shapley(&f, &swap(&x), &swapped_bg).unwrap();
        prop_assert!((asw.contributions[0] - af.contributions[1]).abs() <= 1e-9);
        prop_assert_eq!(af.contributions[3], 0.0);
        for i in 0..4 {
            let lin = af.contributions[i] + 2.5 * ag.contributions[i];
            prop_assert!((asum.contributions[i] - lin).abs() <= 1e-9);
        }
        prop_assert!(af.efficiency_gap() <= 1e-9 * (1.0 + af.prediction.abs()));
    }
}
