use crate::error::{Error, Result};
use crate::triangle::{Coord, TriangleIndexer};

/// Symmetric `n × n` correlation matrix stored as its packed upper triangle.
///
/// Entry `k` of `packed` is the pair whose symmetric job identifier is `k`,
/// i.e. rows are laid out back to back, row `y` holding columns `y..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    n: usize,
    packed: Vec<f64>,
    zero_variance: Vec<usize>,
}

impl CorrelationResult {
    /// All-zero matrix ready to be filled by scatter.
    pub fn zeroed(n: usize, zero_variance: Vec<usize>) -> Result<Self> {
        let len = packed_len(n)?;
        Self::from_parts(n, vec![0.0; len], zero_variance)
    }

    pub fn from_parts(n: usize, packed: Vec<f64>, mut zero_variance: Vec<usize>) -> Result<Self> {
        let len = packed_len(n)?;
        if packed.len() != len {
            return Err(Error::domain(format!(
                "packed triangle of n={n} needs {len} entries, got {}",
                packed.len()
            )));
        }
        zero_variance.sort_unstable();
        zero_variance.dedup();
        if zero_variance.last().is_some_and(|&i| i >= n) {
            return Err(Error::domain("zero-variance index out of range"));
        }
        Ok(CorrelationResult {
            n,
            packed,
            zero_variance,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub(crate) fn packed_mut(&mut self) -> &mut [f64] {
        &mut self.packed
    }

    pub fn into_packed(self) -> Vec<f64> {
        self.packed
    }

    /// Sorted indices of constant rows.
    pub fn zero_variance(&self) -> &[usize] {
        &self.zero_variance
    }

    pub fn indexer(&self) -> TriangleIndexer {
        TriangleIndexer::new(self.n as u64).expect("validated at construction")
    }

    /// Correlation of rows `i` and `j` in either order.
    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.n || j >= self.n {
            return Err(Error::domain(format!(
                "pair ({i}, {j}) outside n={}",
                self.n
            )));
        }
        let c = Coord::new(i.min(j) as u64, i.max(j) as u64);
        let id = self.indexer().sym_id(c)?;
        Ok(self.packed[id.0 as usize])
    }

    /// Bitwise equality of the packed values, treating `-0.0 != 0.0`.
    pub fn bitwise_eq(&self, other: &CorrelationResult) -> bool {
        self.n == other.n
            && self.zero_variance == other.zero_variance
            && self
                .packed
                .iter()
                .zip(&other.packed)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest elementwise absolute difference and the job id where it occurs.
    pub fn max_abs_diff(&self, other: &CorrelationResult) -> Result<(f64, usize)> {
        if self.n != other.n {
            return Err(Error::domain(format!(
                "cannot compare n={} with n={}",
                self.n, other.n
            )));
        }
        let mut worst = (0.0, 0);
        for (k, (a, b)) in self.packed.iter().zip(&other.packed).enumerate() {
            let d = (a - b).abs();
            if d > worst.0 || d.is_nan() {
                worst = (d, k);
            }
        }
        Ok(worst)
    }
}

/// `n(n+1)/2` as a usize, rejecting `n = 0` and anything past the indexer cap.
pub fn packed_len(n: usize) -> Result<usize> {
    let idx = TriangleIndexer::new(n as u64)?;
    usize::try_from(idx.sym_len()).map_err(|_| Error::domain(format!("n={n} too large")))
}
