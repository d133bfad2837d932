use std::collections::BTreeMap;

use bartlab_core::bart::{Forest, Hyperparams, NodeKind, Scaling, SplitRule, Tree};
use bartlab_core::interpret::{
    default_pdp_quantiles, inclusion_proportions, interaction_counts, interactions_from_posterior, pdp,
    pdp_brute_force, permutation_test, shap_exact, shap_mc_raw, PermutationMode,
};
use bartlab_core::model::{fit, Dataset, Predictor};
use bartlab_core::{stats, Matrix, RandomStream};
use proptest::prelude::*;

fn quick() -> Hyperparams {
    Hyperparams { m: 10, n_burn: 30, n_post: 30, ..Hyperparams::default() }
}

fn random_tree(rng: &mut RandomStream, features: &[usize], depth: usize) -> Tree {
    let mut t = Tree::stump(rng.standard_normal());
    let mut frontier = vec![0usize];
    for _ in 0..depth {
        let mut next = Vec::new();
        for id in frontier {
            if rng.uniform() < 0.7 {
                let f = features[rng.index(features.len())];
                let (l, r) = t.grow(id, SplitRule { feature: f, cut: 0, threshold: rng.uniform() });
                t.set_leaf_value(l, rng.standard_normal());
                t.set_leaf_value(r, rng.standard_normal());
                next.extend([l, r]);
            }
        }
        frontier = next;
    }
    t
}

fn mirror(t: &Tree) -> Tree {
    let nodes = t
        .to_nodes()
        .into_iter()
        .map(|mut n| {
            if let NodeKind::Split { rule, .. } = &mut n.kind {
                rule.feature = match rule.feature {
                    0 => 1,
                    1 => 0,
                    f => f,
                };
            }
            n
        })
        .collect();
    Tree::from_nodes(nodes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn exact_shap_axioms_on_random_ensembles(seed in any::<u64>()) {
        let mut rng = RandomStream::new(seed, 0);
        // feature 3 is never used; features 0 and 1 enter symmetrically
        let mut trees = Vec::new();
        for _ in 0..4 {
            let t = random_tree(&mut rng, &[0, 1, 2], 3);
            trees.push(mirror(&t));
            trees.push(t);
        }
        let model = Forest::new(trees, 1.0, Scaling::identity());
        let mut rows = Vec::new();
        for _ in 0..6 {
            let r: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
            rows.push(vec![r[1], r[0], r[2], r[3]]);
            rows.push(r);
        }
        let bg = Matrix::from_rows(&rows).unwrap();
        let v = rng.uniform();
        let x = [v, v, rng.uniform(), rng.uniform()];
        let s = shap_exact(&model, &x, &bg).unwrap();
        prop_assert!(s.additivity_gap().abs() < 1e-10);
        prop_assert!((s.phi[0] - s.phi[1]).abs() < 1e-10);
        prop_assert_eq!(s.phi[3], 0.0);
    }
}

#[test]
fn mc_shap_is_unbiased_before_normalization() {
    let mut rng = RandomStream::new(31, 0);
    let n = 60;
    let cols: Vec<Vec<f64>> = (0..4).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
    let y: Vec<f64> = (0..n).map(|i| 2.0 * cols[0][i] + cols[1][i] * cols[2][i] + 0.1 * rng.standard_normal()).collect();
    let d = Dataset::from_columns(&["a", "b", "c", "d"], &cols, y).unwrap();
    let f = fit(&d, &Hyperparams { m: 5, n_post: 5, n_burn: 50, ..Hyperparams::default() }, RandomStream::new(31, 1)).unwrap();
    let bg = d.x.select_rows(&(0..20).collect::<Vec<_>>());
    let x = d.x.row(45).to_vec();
    let exact = shap_exact(&f, &x, &bg).unwrap();
    let runs = 200;
    let mut est: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(runs)).collect();
    for r in 0..runs {
        let s = shap_mc_raw(&f, &x, &bg, 1000, &mut RandomStream::new(31, 100 + r as u64)).unwrap();
        for j in 0..4 {
            est[j].push(s.phi[j]);
        }
    }
    for j in 0..4 {
        let m = stats::mean(&est[j]);
        let se = (stats::variance(&est[j]) / runs as f64).sqrt();
        assert!((m - exact.phi[j]).abs() <= 3.0 * se + 1e-12, "feature {j}: {m} vs {} (se {se})", exact.phi[j]);
    }
}

#[test]
fn pdp_flat_for_unused_feature_and_exact_for_one_feature() {
    let mut rng = RandomStream::new(40, 0);
    let n = 50;
    let a: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let b = vec![0.0; n].iter().enumerate().map(|(i, _)| (i % 7) as f64).collect::<Vec<_>>();
    let y: Vec<f64> = a.iter().map(|v| (4.0 * v).sin() + 0.05 * rng.standard_normal()).collect();
    // single-feature model: PDP is the prediction function on the grid
    let d1 = Dataset::from_columns(&["a"], &[a.clone()], y.clone()).unwrap();
    let f1 = fit(&d1, &quick(), RandomStream::new(40, 1)).unwrap();
    let r = pdp(&f1, "a", &default_pdp_quantiles(), 0.95).unwrap();
    for (g, m) in r.grid.iter().zip(&r.mean_curve) {
        assert!((f1.predict_row(&[*g]) - m).abs() < 1e-10);
    }
    // a constant column is never split on
    let d2 = Dataset::from_columns(&["a", "k"], &[a, vec![1.0; n]], y).unwrap();
    let f2 = fit(&d2, &quick(), RandomStream::new(40, 2)).unwrap();
    assert!(pdp(&f2, "k", &default_pdp_quantiles(), 0.95).is_err());
    let d3 = Dataset::from_columns(&["a", "b"], &[d2.x.column(0), b], d2.y.clone()).unwrap();
    let mut f3 = fit(&d3, &quick(), RandomStream::new(40, 3)).unwrap();
    // strip every split on b, then its PDP must be flat with flat bands
    for forest in &mut f3.posterior.forests {
        let trees: Vec<Tree> = forest
            .trees()
            .iter()
            .map(|t| if t.internal_nodes().any(|id| t.rule(id).unwrap().feature == 1) { Tree::stump(0.0) } else { t.clone() })
            .collect();
        *forest = Forest::new(trees, forest.sigma2_scaled(), forest.scaling());
    }
    let flat = pdp(&f3, "b", &default_pdp_quantiles(), 0.9).unwrap();
    for w in flat.mean_curve.windows(2) {
        assert!((w[0] - w[1]).abs() < 1e-12);
    }
    for w in flat.lower.windows(2).chain(flat.upper.windows(2)) {
        assert!((w[0] - w[1]).abs() < 1e-12);
    }
    let (_, brute) = pdp_brute_force(&f3, "b", &default_pdp_quantiles()).unwrap();
    for (u, v) in brute.iter().zip(&flat.mean_curve) {
        assert!((u - v).abs() < 1e-10);
    }
    assert!(pdp(&f3, "GFI", &default_pdp_quantiles(), 0.9).is_err());
}

fn walk_pairs(t: &Tree, id: usize, parent_feature: Option<usize>, out: &mut BTreeMap<(usize, usize), u64>) {
    if let NodeKind::Split { rule, left, right } = &t.node(id).kind {
        if let Some(p) = parent_feature {
            if p != rule.feature {
                *out.entry((p.min(rule.feature), p.max(rule.feature))).or_default() += 1;
            }
        }
        walk_pairs(t, *left, Some(rule.feature), out);
        walk_pairs(t, *right, Some(rule.feature), out);
    }
}

#[test]
fn interaction_counts_match_recursive_walk() {
    let mut rng = RandomStream::new(50, 0);
    let n = 80;
    let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
    let y: Vec<f64> = (0..n).map(|i| cols[0][i] * cols[1][i] * 4.0 + cols[2][i] + 0.05 * rng.standard_normal()).collect();
    let d = Dataset::from_columns(&["x1", "x2", "x3"], &cols, y).unwrap();
    let f = fit(&d, &quick(), RandomStream::new(50, 1)).unwrap();
    let mut brute = BTreeMap::new();
    for forest in &f.posterior.forests {
        for t in forest.trees() {
            walk_pairs(t, 0, None, &mut brute);
        }
    }
    assert_eq!(interactions_from_posterior(&f.posterior), brute);
}

#[test]
fn depth_one_trees_have_no_interactions() {
    let mut rng = RandomStream::new(51, 0);
    let n = 20;
    let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
    let y: Vec<f64> = (0..n).map(|i| cols[0][i] + cols[1][i]).collect();
    let d = Dataset::from_columns(&["a", "b"], &cols, y).unwrap();
    // with n = 2 min_node a child can never be split again
    let h = Hyperparams { min_node: 10, ..quick() };
    let r = interaction_counts(&d, &h, 3, 10, &RandomStream::new(51, 1)).unwrap();
    assert!(r.all.iter().all(|p| p.count.mean == 0.0));
}

#[test]
fn inclusion_single_usable_feature_and_column_order() {
    let mut rng = RandomStream::new(60, 0);
    let n = 40;
    let a: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let y: Vec<f64> = a.iter().map(|v| v * 2.0 + 0.1 * rng.standard_normal()).collect();
    let d = Dataset::from_columns(&["a", "flat"], &[a.clone(), vec![3.0; n]], y.clone()).unwrap();
    let rep = inclusion_proportions(&d, &quick(), 3, &RandomStream::new(60, 1)).unwrap();
    for b in &rep.per_build {
        assert_eq!(b, &vec![1.0, 0.0]);
    }

    let c: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let e: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let d1 = Dataset::from_columns(&["a", "c", "e"], &[a.clone(), c.clone(), e.clone()], y.clone()).unwrap();
    let d2 = Dataset::from_columns(&["e", "a", "c"], &[e, a, c], y).unwrap();
    let r1 = inclusion_proportions(&d1, &quick(), 3, &RandomStream::new(61, 0)).unwrap();
    let r2 = inclusion_proportions(&d2, &quick(), 3, &RandomStream::new(61, 0)).unwrap();
    for row in &r1.rows {
        let other = r2.rows.iter().find(|r| r.name == row.name).unwrap();
        assert_eq!(row, other);
    }
    for b in &r1.per_build {
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn unusable_covariate_has_p_one() {
    let mut rng = RandomStream::new(70, 0);
    let n = 30;
    let a: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let y: Vec<f64> = a.iter().map(|v| v + 0.1 * rng.standard_normal()).collect();
    let d = Dataset::from_columns(&["a", "same"], &[a, vec![1.0; n]], y).unwrap();
    let h = Hyperparams { m: 5, n_burn: 10, n_post: 10, ..Hyperparams::default() };
    let r = permutation_test(&d, &h, &PermutationMode::Covariate("same".into()), 19, &RandomStream::new(70, 1)).unwrap();
    assert_eq!(r.observed, 0.0);
    assert_eq!(r.p_value, 1.0);
    assert!(permutation_test(&d, &h, &PermutationMode::Covariate("nope".into()), 19, &RandomStream::new(0, 0)).is_err());
    assert!(permutation_test(&d, &h, &PermutationMode::Omnibus, 18, &RandomStream::new(0, 0)).is_err());
}
