//! Friedman #1 benchmark: held-out fit quality and timing.

use std::time::Instant;

use bartlab_core::bart::Hyperparams;
use bartlab_core::model::{evaluate, fit, Dataset};
use bartlab_core::{Matrix, RandomStream};

fn friedman(n: usize, rng: &mut RandomStream) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..10).map(|_| rng.uniform()).collect();
        let f = 10.0 * (std::f64::consts::PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4];
        y.push(f + rng.standard_normal());
        rows.push(x);
    }
    let names = (1..=10).map(|j| format!("x{j}")).collect();
    Dataset::new(names, Matrix::from_rows(&rows).unwrap(), y).unwrap()
}

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut rng = RandomStream::new(seed, 0);
    let train = friedman(500, &mut rng);
    let test = friedman(200, &mut rng);
    let t = Instant::now();
    let f = fit(&train, &Hyperparams::default(), RandomStream::new(seed, 1)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let held = evaluate(&test.y, &f.posterior.mean_prediction(&test.x)).unwrap();
    println!("fit {secs:.2}s  train {:?}  test {held:?}", f.metrics.unwrap());
    println!("accept {:?} / {:?}", f.posterior.trace.accepted, f.posterior.trace.proposed);
}
