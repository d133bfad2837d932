use std::collections::{BTreeMap, BTreeSet};

use bartlab_core::bart::{
    leaf_log_marginal, log_marginal_likelihood, mh_accept, run_sampler, Hyperparams, ModelContext, MoveKind,
    Sampler, SplitRule, TrainingData, Tree, TreeFit,
};
use bartlab_core::model::{fit, Dataset};
use bartlab_core::{stats, Matrix, RandomStream};

fn one_feature(x: Vec<f64>, y: Vec<f64>) -> TrainingData {
    TrainingData::new(Matrix::from_columns(&[x]).unwrap(), &y).unwrap()
}

fn loose(min_node: usize) -> Hyperparams {
    Hyperparams {
        min_node,
        ..Hyperparams::default()
    }
}

#[test]
fn marginal_split_difference_matches_closed_form() {
    let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let y = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
    let data = one_feature(x, y);
    let r = vec![0.5, 0.5, 0.5, 0.5, -0.2, -0.2, -0.2, -0.2];
    let mut t = Tree::stump(0.0);
    t.grow(0, SplitRule { feature: 0, cut: 3, threshold: 3.5 });
    let (s2, sm2) = (0.3, 0.05);
    let split = log_marginal_likelihood(&t, &data, &r, s2, sm2).unwrap();
    let stump = log_marginal_likelihood(&Tree::stump(0.0), &data, &r, s2, sm2).unwrap();
    let by_hand = leaf_log_marginal(4, 2.0, s2, sm2) + leaf_log_marginal(4, -0.8, s2, sm2) - leaf_log_marginal(8, 1.2, s2, sm2);
    assert!((split - stump - by_hand).abs() < 1e-14);
    // identical groups: splitting only adds variance penalties
    let same = vec![0.25; 8];
    let d = log_marginal_likelihood(&t, &data, &same, s2, sm2).unwrap()
        - log_marginal_likelihood(&Tree::stump(0.0), &data, &same, s2, sm2).unwrap();
    let hand = 2.0 * leaf_log_marginal(4, 1.0, s2, sm2) - leaf_log_marginal(8, 2.0, s2, sm2);
    assert!((d - hand).abs() < 1e-14);
    let zeros = vec![0.0; 8];
    let z = log_marginal_likelihood(&t, &data, &zeros, s2, sm2).unwrap();
    let var_only = 2.0 * 0.5 * (s2 / (s2 + 4.0 * sm2)).ln();
    assert!((z - var_only).abs() < 1e-15);
}

#[test]
fn sampled_grow_proposals_are_legal() {
    // 10 observations, two features with ties.
    let x0 = vec![0.1, 0.4, 0.4, 0.9, 1.3, 1.3, 2.0, 2.2, 2.5, 3.0];
    let x1 = vec![5.0, 3.0, 1.0, 1.0, 2.0, 4.0, 4.0, 0.0, 3.0, 2.0];
    let y: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
    let data = TrainingData::new(Matrix::from_columns(&[x0.clone(), x1.clone()]).unwrap(), &y).unwrap();
    let hyper = loose(1);
    let ctx = ModelContext::new(&data, &hyper);
    let mut t = Tree::stump(0.0);
    let (l, _) = t.grow(0, SplitRule { feature: 0, cut: 3, threshold: data.grid.threshold(0, 3) });
    t.grow(l, SplitRule { feature: 1, cut: 1, threshold: data.grid.threshold(1, 1) });
    let tf = TreeFit::new(t.clone(), &data);

    // brute-force enumeration of (leaf, feature, cut) with both children non-empty
    let cols = [x0, x1];
    let mut legal = BTreeSet::new();
    for leaf in t.leaves() {
        let obs: Vec<usize> = (0..10).filter(|&i| t.leaf_for(data.x.row(i)) == leaf).collect();
        for f in 0..2 {
            for c in 0..data.grid.n_cuts(f) as u32 {
                let th = data.grid.threshold(f, c);
                let left = obs.iter().filter(|&&i| cols[f][i] < th).count();
                if left > 0 && left < obs.len() {
                    legal.insert((leaf, f, c));
                }
            }
        }
    }
    let mut rng = RandomStream::new(11, 0);
    let mut seen = BTreeSet::new();
    for _ in 0..10_000 {
        let p = tf.propose(Some(MoveKind::Grow), &data.y_scaled, 1.0, &ctx, &mut rng).unwrap();
        let rule = p.tree.rule(p.root).unwrap();
        let key = (p.root, rule.feature, rule.cut);
        assert!(legal.contains(&key), "illegal grow {key:?}");
        assert_eq!(rule.threshold, data.grid.threshold(rule.feature, rule.cut));
        seen.insert(key);
    }
    assert_eq!(seen, legal);
}

#[test]
fn acceptance_frequency_matches_analytic_probability() {
    let n = 12;
    let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let y: Vec<f64> = (0..n).map(|i| if i < 6 { 0.0 } else { 0.15 } + 0.01 * (i % 3) as f64).collect();
    let data = one_feature(x, y);
    let hyper = Hyperparams { m: 1, min_node: 1, ..Hyperparams::default() };
    let ctx = ModelContext::new(&data, &hyper);
    let stump = TreeFit::new(Tree::stump(0.0), &data);
    let mut rng = RandomStream::new(2, 0);
    // residuals with no structure: the leaf variance penalty drives rejection
    let flat = vec![0.0; n];
    let mut prop = None;
    let mut sigma2 = 0.0;
    'search: for s in [1.0, 0.1, 0.01, 0.003, 0.001, 3e-4, 1e-4] {
        for _ in 0..200 {
            let p = stump.propose(Some(MoveKind::Grow), &flat, s, &ctx, &mut rng).unwrap();
            let a = p.log_acceptance();
            if a < -0.1 && a > -3.0 {
                prop = Some(p);
                sigma2 = s;
                break 'search;
            }
        }
    }
    let prop = prop.expect("a proposal with acceptance probability in (0.05, 0.9)");
    let cut = prop.tree.rule(0).unwrap().cut as usize;

    // analytic log acceptance from closed forms
    let r = &flat;
    let (nl, nr) = (cut + 1, n - cut - 1);
    let sl: f64 = r[..nl].iter().sum();
    let sr: f64 = r[nl..].iter().sum();
    let sm2 = hyper.leaf_prior_variance();
    let ll = leaf_log_marginal(nl, sl, sigma2, sm2) + leaf_log_marginal(nr, sr, sigma2, sm2)
        - leaf_log_marginal(n, sl + sr, sigma2, sm2);
    let (a, b) = (hyper.alpha, hyper.beta);
    let p0 = a;
    let p1 = a * 2f64.powf(-b);
    let child = |k: usize| if k >= 2 { (1.0 - p1).ln() } else { 0.0 };
    let lp = p0.ln() - ((n - 1) as f64).ln() + child(nl) + child(nr) - (1.0 - p0).ln();
    let growable_after = (nl >= 2) as usize + (nr >= 2) as usize;
    let legal_sum_after: f64 = 0.25 + 0.4 + if growable_after > 0 { 0.25 } else { 0.0 };
    let lt = (0.25 / legal_sum_after).ln() - ((0.25 / 0.65f64).ln() - ((n - 1) as f64).ln());
    let analytic = (ll + lp + lt).exp().min(1.0);
    assert!((prop.log_acceptance() - (ll + lp + lt)).abs() < 1e-12);

    let trials = 100_000;
    let hits = (0..trials).filter(|_| mh_accept(&prop, &mut rng)).count();
    let freq = hits as f64 / trials as f64;
    let se = (analytic * (1.0 - analytic) / trials as f64).sqrt();
    assert!((freq - analytic).abs() < 3.0 * se, "freq {freq} vs {analytic}");
}

#[test]
fn leaf_posterior_draw_moments() {
    let data = one_feature(vec![0.0, 1.0], vec![0.0, 1.0]);
    let mut tf = TreeFit::new(Tree::stump(0.0), &data);
    let mut rng = RandomStream::new(5, 3);
    let mut fitv = vec![0.0; 2];
    let draws: Vec<f64> = (0..100_000)
        .map(|_| {
            tf.draw_leaf_values(&[2.0, 2.0], 1.0, 1.0, &mut rng, &mut fitv).unwrap();
            fitv[0]
        })
        .collect();
    let m = stats::mean(&draws);
    let v = stats::variance(&draws);
    let n = draws.len() as f64;
    assert!((m - 4.0 / 3.0).abs() < 3.0 * (1.0f64 / 3.0 / n).sqrt(), "mean {m}");
    // sd of the sample variance for a normal: var * sqrt(2/(n-1))
    assert!((v - 1.0 / 3.0).abs() < 3.0 * (1.0 / 3.0) * (2.0 / (n - 1.0)).sqrt(), "var {v}");
}

#[test]
fn planted_stump_changepoint_is_recovered() {
    let n = 200;
    let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
    let mut rng = RandomStream::new(21, 0);
    let y: Vec<f64> = x.iter().map(|&v| if v < 0.37 { 0.0 } else { 1.0 } + 0.1 * rng.standard_normal()).collect();
    let data = one_feature(x.clone(), y);
    let hyper = Hyperparams { m: 1, ..Hyperparams::default() };
    let mut s = Sampler::new(&data, &hyper, RandomStream::new(21, 1)).unwrap();
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for _ in 0..2000 {
        s.gibbs_sweep().unwrap();
        let t = s.fits()[0].tree();
        for id in t.internal_nodes() {
            *counts.entry(t.rule(id).unwrap().threshold.to_bits()).or_insert(0) += 1;
        }
    }
    let (mode, _) = counts.iter().max_by_key(|(_, c)| **c).unwrap();
    let mode = f64::from_bits(*mode);
    let below = x.iter().copied().filter(|&v| v < 0.37).fold(f64::MIN, f64::max);
    let above = x.iter().copied().filter(|&v| v >= 0.37).fold(f64::MAX, f64::min);
    assert!(below < mode && mode <= above, "mode threshold {mode} not in ({below}, {above}]");
}

/// P(height <= k) for a subtree rooted at depth d under split probability
/// alpha (1 + d)^-beta, with unlimited splittable data.
fn height_cdf(d: usize, k: usize, alpha: f64, beta: f64) -> f64 {
    let p = alpha * (1.0 + d as f64).powf(-beta);
    if k == 0 {
        1.0 - p
    } else {
        let c = height_cdf(d + 1, k - 1, alpha, beta);
        1.0 - p + p * c * c
    }
}

#[test]
fn prior_only_chain_recovers_depth_distribution() {
    let n = 400;
    let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.618_033_988_7) % 1.0).collect();
    let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let data = one_feature(x, y);
    let hyper = Hyperparams { m: 10, min_node: 1, ..Hyperparams::default() };
    let mut s = Sampler::new(&data, &hyper, RandomStream::new(3, 0)).unwrap().prior_only();
    let mut hist = [0usize; 6];
    let sweeps = 20_000;
    for i in 0..sweeps + 500 {
        s.gibbs_sweep().unwrap();
        if i >= 500 {
            for tf in s.fits() {
                hist[tf.tree().max_depth().min(5)] += 1;
            }
        }
    }
    let total = (sweeps * hyper.m) as f64;
    let mut prev = 0.0;
    for (k, h) in hist.iter().enumerate().take(4) {
        let cdf = height_cdf(0, k, hyper.alpha, hyper.beta);
        let expected = cdf - prev;
        prev = cdf;
        let got = *h as f64 / total;
        assert!((got - expected).abs() < 0.015, "depth {k}: {got} vs {expected}");
    }
}

#[test]
fn noise_sigma_is_covered() {
    let sigma0 = 0.8;
    let sims = 20;
    let mut covered = 0;
    for s in 0..sims {
        let mut rng = RandomStream::new(100 + s, 0);
        let n = 120;
        let x: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| sigma0 * rng.standard_normal()).collect();
        let data = TrainingData::new(Matrix::from_columns(&x).unwrap(), &y).unwrap();
        let hyper = Hyperparams { m: 20, n_burn: 200, n_post: 400, ..Hyperparams::default() };
        let post = run_sampler(&data, &hyper, RandomStream::new(100 + s, 1)).unwrap();
        let sig = post.sigma_draws();
        let lo = stats::quantile(&sig, 0.05).unwrap();
        let hi = stats::quantile(&sig, 0.95).unwrap();
        covered += (lo <= sigma0 && sigma0 <= hi) as usize;
    }
    assert!(covered as f64 >= 0.8 * sims as f64, "covered {covered}/{sims}");
}

#[test]
fn affine_response_maps_predictions() {
    let mut rng = RandomStream::new(8, 0);
    let n = 80;
    let x: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin() + 0.1 * rng.standard_normal()).collect();
    let (a, b) = (3.0, -7.0);
    let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
    let hyper = Hyperparams { m: 10, n_burn: 50, n_post: 50, ..Hyperparams::default() };
    let d1 = Dataset::from_columns(&["x"], &[x.clone()], y).unwrap();
    let d2 = Dataset::from_columns(&["x"], &[x], ya).unwrap();
    let f1 = fit(&d1, &hyper, RandomStream::new(1, 1)).unwrap();
    let f2 = fit(&d2, &hyper, RandomStream::new(1, 1)).unwrap();
    let p1 = f1.fitted();
    let p2 = f2.fitted();
    let worst = p1.iter().zip(&p2).map(|(u, v)| (a * u + b - v).abs()).fold(0.0, f64::max);
    assert!(worst < 0.05, "affine mismatch {worst}");
}

#[test]
fn minimum_node_size_holds_in_every_accepted_state() {
    let mut rng = RandomStream::new(4, 0);
    let n = 60;
    let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
    let y: Vec<f64> = (0..n).map(|i| cols[0][i] * 4.0 + cols[1][i] + 0.2 * rng.standard_normal()).collect();
    let data = TrainingData::new(Matrix::from_columns(&cols).unwrap(), &y).unwrap();
    let hyper = Hyperparams { m: 8, min_node: 7, ..Hyperparams::default() };
    let mut s = Sampler::new(&data, &hyper, RandomStream::new(4, 1)).unwrap().strict(true);
    for _ in 0..300 {
        s.gibbs_sweep().unwrap();
        for tf in s.fits() {
            if tf.tree().n_leaves() > 1 {
                assert!(tf.min_leaf_count() >= 7);
            }
        }
    }
}
