//! Bijections between linear job identifiers and coordinates of a square
//! job matrix.
//!
//! Coordinates put the origin at the top-left corner: `y` is the row,
//! growing downwards, and `x` the column, growing to the right. The
//! symmetric mapping numbers the upper triangle (diagonal included)
//! left-to-right, top-to-bottom, so row `y` owns the identifiers
//! `[row_prefix(y), row_prefix(y + 1))`.
//!
//! The same indexer serves the tile matrix by constructing it with the tile
//! count `m` in place of `n`.

use std::fmt;

use crate::error::{Error, Result};

/// Exclusive upper bound on the matrix edge so that `n(n+1)/2` and every
/// intermediate fits comfortably in 64 bits.
pub const MAX_EDGE: u64 = 1 << 32;

/// Cell of the job matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub y: u64,
    pub x: u64,
}

impl Coord {
    pub const fn new(y: u64, x: u64) -> Self {
        Coord { y, x }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.y, self.x)
    }
}

/// Linear job (or tile) identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JobId(pub u64);

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Forward and inverse job mappings for an `n × n` job matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriangleIndexer {
    n: u64,
}

impl TriangleIndexer {
    pub fn new(n: u64) -> Result<Self> {
        if n == 0 || n >= MAX_EDGE {
            return Err(Error::domain(format!(
                "matrix edge must lie in [1, 2^32), got {n}"
            )));
        }
        Ok(TriangleIndexer { n })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Number of upper-triangle cells, `n(n+1)/2`.
    pub fn sym_len(&self) -> u64 {
        self.prefix_unchecked(self.n)
    }

    /// Number of cells in the full matrix, `n²`.
    pub fn nonsym_len(&self) -> u64 {
        self.n * self.n
    }

    /// Upper-triangle cells preceding row `y`: `y(2n − y + 1)/2`.
    pub fn row_prefix(&self, y: u64) -> Result<u64> {
        if y > self.n {
            return Err(Error::domain(format!("row {y} outside [0, {}]", self.n)));
        }
        Ok(self.prefix_unchecked(y))
    }

    #[inline]
    fn prefix_unchecked(&self, y: u64) -> u64 {
        let (n, y) = (self.n as u128, y as u128);
        // y(2n - y + 1) is a product of consecutive-parity terms, always even.
        ((y * (2 * n - y + 1)) / 2) as u64
    }

    pub fn sym_id(&self, c: Coord) -> Result<JobId> {
        if c.y > c.x || c.x >= self.n {
            return Err(Error::domain(format!(
                "{c} is not in the upper triangle of a {0}x{0} matrix",
                self.n
            )));
        }
        Ok(JobId(self.prefix_unchecked(c.y) + c.x - c.y))
    }

    /// Inverse of [`sym_id`](Self::sym_id).
    ///
    /// The row comes from `⌈n − 0.5 − √(n² + n + 0.25 − 2(j+1))⌉` in double
    /// precision. Whenever the candidate fails the `row_prefix` bracket test
    /// it is walked to the correct row with exact integer arithmetic.
    pub fn sym_coord(&self, j: JobId) -> Result<Coord> {
        let total = self.sym_len();
        if j.0 >= total {
            return Err(Error::domain(format!("job id {j} outside [0, {total})")));
        }
        let n = self.n;
        // n² + n − 2(j+1) ≥ 0 exactly because j + 1 ≤ n(n+1)/2.
        let disc = (n as u128 * n as u128 + n as u128 - 2 * (j.0 as u128 + 1)) as f64 + 0.25;
        let z = n as f64 - 0.5 - disc.sqrt();
        let mut y = z.ceil().clamp(0.0, (n - 1) as f64) as u64;

        while self.prefix_unchecked(y) > j.0 {
            y -= 1;
        }
        while self.prefix_unchecked(y + 1) <= j.0 {
            y += 1;
        }
        let x = j.0 + y - self.prefix_unchecked(y);
        Ok(Coord { y, x })
    }

    pub fn nonsym_id(&self, c: Coord) -> Result<JobId> {
        if c.y >= self.n || c.x >= self.n {
            return Err(Error::domain(format!(
                "{c} outside a {0}x{0} matrix",
                self.n
            )));
        }
        Ok(JobId(c.y * self.n + c.x))
    }

    pub fn nonsym_coord(&self, j: JobId) -> Result<Coord> {
        if j.0 >= self.nonsym_len() {
            return Err(Error::domain(format!(
                "job id {j} outside [0, {})",
                self.nonsym_len()
            )));
        }
        Ok(Coord {
            y: j.0 / self.n,
            x: j.0 % self.n,
        })
    }
}

pub fn row_prefix(n: u64, y: u64) -> Result<u64> {
    TriangleIndexer::new(n)?.row_prefix(y)
}

pub fn sym_job_id(n: u64, c: Coord) -> Result<JobId> {
    TriangleIndexer::new(n)?.sym_id(c)
}

pub fn sym_job_coord(n: u64, j: JobId) -> Result<Coord> {
    TriangleIndexer::new(n)?.sym_coord(j)
}

pub fn nonsym_job_id(n: u64, c: Coord) -> Result<JobId> {
    TriangleIndexer::new(n)?.nonsym_id(c)
}

pub fn nonsym_job_coord(n: u64, j: JobId) -> Result<Coord> {
    TriangleIndexer::new(n)?.nonsym_coord(j)
}
