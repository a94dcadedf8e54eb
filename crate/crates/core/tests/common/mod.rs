#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripcc::distributed::Backend;
use tripcc::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random dataset seasoned with constant rows, negated rows and affine
/// copies of earlier rows.
pub fn awkward_dataset(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Dataset {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let row = match (i, rng.gen_range(0..6)) {
            (0, _) | (_, 0..=2) => (0..l).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            (_, 3) => vec![rng.gen_range(-3.0..3.0); l],
            (_, 4) => {
                let src = &rows[rng.gen_range(0..i)];
                src.iter().map(|v| -v).collect()
            }
            _ => {
                let src = &rows[rng.gen_range(0..i)];
                let a = rng.gen_range(0.1..10.0) * if rng.gen() { 1.0 } else { -1.0 };
                let b = rng.gen_range(-100.0..100.0);
                src.iter().map(|v| a * v + b).collect()
            }
        };
        rows.push(row);
    }
    Dataset::new(n, l, rows.concat()).unwrap()
}

pub fn uniform_dataset(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Dataset {
    Dataset::new(n, l, (0..n * l).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

pub fn subprocess_backend() -> Backend {
    Backend::Subprocess {
        program: env!("CARGO_BIN_EXE_tripcc").into(),
        args: vec!["worker".into()],
    }
}

pub fn max_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
