//! Per-variable normalization that turns Pearson correlation into a dot
//! product, plus the literal per-pair formula used as a reference oracle.
//!
//! Constant rows have no defined correlation. They normalize to all zeros,
//! every correlation touching them (their diagonal included) is `0.0`, and
//! their indices are reported in `zero_variance`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::reduce;
use crate::result::CorrelationResult;
use crate::triangle::TriangleIndexer;

/// Tolerance on `|Σ u² − 1|` for a normalized non-constant row.
pub const EPS_NORM: f64 = 1e-9;

/// Tolerance scale on `|Σ u|` for a normalized row: `1e-9 · max|x| · l`.
pub fn eps_mean(max_abs: f64, l: usize) -> f64 {
    1e-9 * max_abs * l as f64
}

/// `n` variables of `l` samples each, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    l: usize,
    values: Vec<f64>,
    ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(n: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || l == 0 {
            return Err(Error::domain(format!(
                "dataset needs n >= 1 and l >= 1, got n={n} l={l}"
            )));
        }
        TriangleIndexer::new(n as u64)?;
        if n.checked_mul(l) != Some(values.len()) {
            return Err(Error::domain(format!(
                "{} values do not form a {n}x{l} matrix",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite value {} at row {}, column {}",
                values[k],
                k / l,
                k % l
            )));
        }
        Ok(Dataset {
            n,
            l,
            values,
            ids: None,
        })
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n {
            return Err(Error::domain(format!(
                "{} labels for {} rows",
                ids.len(),
                self.n
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.l..(i + 1) * self.l]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.l)
    }
}

/// Rows centred and scaled to unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDataset {
    n: usize,
    l: usize,
    u: Vec<f64>,
    zero_variance: Vec<usize>,
}

impl NormalizedDataset {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.u[i * self.l..(i + 1) * self.l]
    }

    /// Sorted indices of constant rows.
    pub fn zero_variance(&self) -> &[usize] {
        &self.zero_variance
    }
}

/// A row is constant when every sample equals the first one exactly; the
/// computed deviation sum may still come out nonzero for such rows because
/// the mean is rounded.
fn is_constant(row: &[f64]) -> bool {
    row.iter().all(|&v| v == row[0])
}

/// Returns `(mean, Σ(x - mean)²)`, with the sum forced to zero for
/// constant rows.
fn row_moments(row: &[f64]) -> (f64, f64) {
    let mean = reduce::sum(row) / row.len() as f64;
    if is_constant(row) {
        return (mean, 0.0);
    }
    (mean, reduce::sum_sq_dev(row, mean))
}

/// Indices of rows that normalize to zeros.
pub fn zero_variance_rows(d: &Dataset) -> Vec<usize> {
    (0..d.n)
        .filter(|&i| row_moments(d.row(i)).1 == 0.0)
        .collect()
}

/// Normalizes every row in parallel. Rows are independent and each uses the
/// fixed reduction order, so the output does not depend on the thread count.
pub fn normalize(d: &Dataset) -> Result<NormalizedDataset> {
    let (n, l) = (d.n, d.l);
    if l < 2 {
        return Err(Error::domain(format!(
            "correlation needs at least 2 samples per variable, got {l}"
        )));
    }
    let mut u = vec![0.0; n * l];
    let flags: Vec<bool> = u
        .par_chunks_mut(l)
        .zip(d.values.par_chunks(l))
        .map(|(out, row)| {
            let (mean, ssd) = row_moments(row);
            if ssd == 0.0 {
                return true;
            }
            let scale = ssd.sqrt();
            for (o, x) in out.iter_mut().zip(row) {
                *o = (x - mean) / scale;
            }
            false
        })
        .collect();
    let zero_variance = flags
        .iter()
        .enumerate()
        .filter_map(|(i, &z)| z.then_some(i))
        .collect();
    Ok(NormalizedDataset {
        n,
        l,
        u,
        zero_variance,
    })
}

/// Correlation of two normalized rows: their dot product in the fixed
/// reduction order. A zero-variance row is all zeros, so the result is `0.0`.
pub fn pcc_normalized(u_i: &[f64], u_j: &[f64]) -> Result<f64> {
    if u_i.len() != u_j.len() {
        return Err(Error::domain(format!(
            "row lengths differ: {} vs {}",
            u_i.len(),
            u_j.len()
        )));
    }
    Ok(reduce::dot(u_i, u_j))
}

/// Pearson correlation evaluated literally from the raw samples, recomputing
/// both means and deviation sums on every call.
pub fn pcc_naive(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::domain(format!(
            "vector lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::domain("correlation needs at least 2 samples"));
    }
    let (mu, su) = row_moments(u);
    let (mv, sv) = row_moments(v);
    if su == 0.0 || sv == 0.0 {
        return Ok(0.0);
    }
    let num = reduce::sum_cross_dev(u, mu, v, mv);
    Ok(num / (su * sv).sqrt())
}

/// Brute-force all-pairs matrix built from [`pcc_naive`].
pub fn allpairs_naive(d: &Dataset) -> Result<CorrelationResult> {
    if d.l < 2 {
        return Err(Error::domain("correlation needs at least 2 samples"));
    }
    let n = d.n;
    let mut out = CorrelationResult::zeroed(n, zero_variance_rows(d))?;
    let packed = out.packed_mut();
    let mut k = 0;
    for y in 0..n {
        for x in y..n {
            packed[k] = pcc_naive(d.row(y), d.row(x))?;
            k += 1;
        }
    }
    Ok(out)
}

/// Unit arithmetic operations for transforming `n` rows (`5l` each) and
/// correlating every symmetric pair (`l` each): `5ln + l·n(n+1)/2`.
pub fn estimate_cost(n: u64, l: u64) -> Result<u128> {
    if n == 0 || l == 0 {
        return Err(Error::domain(format!(
            "cost model needs n >= 1 and l >= 1, got n={n} l={l}"
        )));
    }
    let (n, l) = (n as u128, l as u128);
    let pairs = n * (n + 1) / 2;
    5u128
        .checked_mul(l)
        .and_then(|v| v.checked_mul(n))
        .zip(l.checked_mul(pairs))
        .and_then(|(transform, correlate)| transform.checked_add(correlate))
        .ok_or_else(|| Error::domain(format!("cost of n={n}, l={l} overflows 128 bits")))
}
