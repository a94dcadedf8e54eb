//! Fixed-order floating-point reductions.
//!
//! Every sum in the crate goes through these helpers: element `k` is added
//! into lane `k % 8`, sequentially per lane, and the eight lanes are combined
//! as `((l0 + l1) + (l2 + l3)) + ((l4 + l5) + (l6 + l7))`. The order depends
//! only on the vector length, so results are bitwise reproducible across
//! thread counts, tile sizes and worker splits.

const LANES: usize = 8;

#[inline(always)]
fn combine(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

#[inline]
pub fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut chunks = a.chunks_exact(LANES);
    for c in &mut chunks {
        for i in 0..LANES {
            acc[i] += c[i];
        }
    }
    for (i, v) in chunks.remainder().iter().enumerate() {
        acc[i] += v;
    }
    combine(acc)
}

/// `Σ (a[k] - mean)²`
#[inline]
pub fn sum_sq_dev(a: &[f64], mean: f64) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut chunks = a.chunks_exact(LANES);
    for c in &mut chunks {
        for i in 0..LANES {
            let d = c[i] - mean;
            acc[i] += d * d;
        }
    }
    for (i, v) in chunks.remainder().iter().enumerate() {
        let d = v - mean;
        acc[i] += d * d;
    }
    combine(acc)
}

/// `Σ (a[k] - mean_a)(b[k] - mean_b)`; callers guarantee equal lengths.
#[inline]
pub fn sum_cross_dev(a: &[f64], mean_a: f64, b: &[f64], mean_b: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            acc[i] += (x[i] - mean_a) * (y[i] - mean_b);
        }
    }
    for (i, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[i] += (x - mean_a) * (y - mean_b);
    }
    combine(acc)
}

/// Dot product; callers guarantee equal lengths.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..LANES {
            acc[i] += x[i] * y[i];
        }
    }
    for (i, (x, y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[i] += x * y;
    }
    combine(acc)
}
