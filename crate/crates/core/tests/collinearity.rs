use bartlab_core::collinearity::{drop_flagged, gvif_report, ols_fit, PredictorGroup, VifFlag, VifThresholds};
use bartlab_core::RandomStream;
use proptest::prelude::*;

fn noise(rng: &mut RandomStream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

fn aux_r2(target: &[f64], others: &[Vec<f64>]) -> f64 {
    let n = target.len();
    let mut cols = vec![vec![1.0; n]];
    cols.extend(others.iter().cloned());
    let names: Vec<String> = (0..cols.len()).map(|j| format!("c{j}")).collect();
    ols_fit(&cols, &names, target).unwrap().r_squared.unwrap()
}

#[test]
fn df1_gvif_matches_auxiliary_regression() {
    let mut rng = RandomStream::new(17, 0);
    let n = 120;
    let a = noise(&mut rng, n);
    let b: Vec<f64> = a.iter().zip(noise(&mut rng, n)).map(|(x, e)| 0.8 * x + 0.5 * e).collect();
    let c: Vec<f64> = a.iter().zip(&b).zip(noise(&mut rng, n)).map(|((x, y), e)| x - y + 0.3 * e).collect();
    let d = noise(&mut rng, n);
    let cols = [a, b, c, d];
    let groups: Vec<PredictorGroup> = cols
        .iter()
        .enumerate()
        .map(|(j, v)| PredictorGroup::numeric(&format!("v{j}"), v.clone()))
        .collect();
    let report = gvif_report(&groups, VifThresholds::default()).unwrap();
    for (j, row) in report.rows.iter().enumerate() {
        let others: Vec<Vec<f64>> = cols.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, v)| v.clone()).collect();
        let oracle = 1.0 / (1.0 - aux_r2(&cols[j], &others));
        assert!((row.gvif - oracle).abs() < 1e-8 * oracle, "{}: {} vs {oracle}", row.name, row.gvif);
        assert!((row.agsif * row.agsif - row.gvif).abs() < 1e-12 * row.gvif);
        assert_eq!(row.df, 1);
    }
}

#[test]
fn categorical_contrast_recoding_keeps_gvif() {
    let mut rng = RandomStream::new(5, 0);
    let n = 90;
    let level: Vec<usize> = (0..n).map(|_| rng.index(3)).collect();
    let x: Vec<f64> = level.iter().map(|&l| l as f64 * 0.7 + rng.standard_normal()).collect();
    let z = noise(&mut rng, n);
    let dummy = |k: usize| level.iter().map(|&l| if l == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let treatment = PredictorGroup { name: "region".into(), columns: vec![dummy(1), dummy(2)] };
    // sum-to-zero contrasts span the same column space with the intercept
    let eff = |k: usize| level.iter().map(|&l| if l == k { 1.0 } else if l == 0 { -1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let effects = PredictorGroup { name: "region".into(), columns: vec![eff(1), eff(2)] };
    let base = vec![PredictorGroup::numeric("x", x), PredictorGroup::numeric("z", z)];
    let r1 = gvif_report(&[base.clone(), vec![treatment]].concat(), VifThresholds::default()).unwrap();
    let r2 = gvif_report(&[base, vec![effects]].concat(), VifThresholds::default()).unwrap();
    for (a, b) in r1.rows.iter().zip(&r2.rows) {
        assert!((a.gvif - b.gvif).abs() < 1e-8, "{}: {} vs {}", a.name, a.gvif, b.gvif);
    }
    assert_eq!(r1.rows[2].df, 2);
}

#[test]
fn flagged_group_is_dropped() {
    let mut rng = RandomStream::new(23, 0);
    let n = 200;
    let gdp = noise(&mut rng, n);
    // carries most of gdp, so both share a GVIF above 5
    let pop: Vec<f64> = gdp.iter().zip(noise(&mut rng, n)).map(|(g, e)| g + 0.4 * e).collect();
    let other = noise(&mut rng, n);
    let groups = vec![
        PredictorGroup::numeric("gdp", gdp),
        PredictorGroup::numeric("population", pop),
        PredictorGroup::numeric("other", other),
    ];
    let out = drop_flagged(&groups, VifThresholds::default(), &["population".to_string()]).unwrap();
    let first = &out.rounds[0];
    let gdp_row = first.rows.iter().find(|r| r.name == "gdp").unwrap();
    assert!(gdp_row.gvif >= 5.0 && gdp_row.flag >= VifFlag::Moderate);
    assert_eq!(out.dropped, vec!["gdp".to_string()]);
    assert!(out.rounds.last().unwrap().flagged().next().is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gvif_is_at_least_one(seed in 0u64..10_000, mix in -2.0f64..2.0) {
        let mut rng = RandomStream::new(seed, 0);
        let n = 40;
        let a = noise(&mut rng, n);
        let b: Vec<f64> = a.iter().zip(noise(&mut rng, n)).map(|(x, e)| mix * x + e).collect();
        let c = noise(&mut rng, n);
        let d: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x - y + rng.standard_normal()).collect();
        let groups = vec![
            PredictorGroup::numeric("a", a),
            PredictorGroup { name: "bc".into(), columns: vec![b, c] },
            PredictorGroup::numeric("d", d),
        ];
        let r = gvif_report(&groups, VifThresholds::default()).unwrap();
        for row in &r.rows {
            prop_assert!(row.gvif >= 1.0 - 1e-8);
            prop_assert!((row.agsif - row.gvif.powf(1.0 / (2.0 * row.df as f64))).abs() < 1e-12);
        }
    }
}
