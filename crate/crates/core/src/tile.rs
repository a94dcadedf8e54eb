//! Tiled computation of the upper triangle.
//!
//! The `n × n` job matrix is cut into `t × t` tiles, giving an `m × m` tile
//! matrix with `m = ⌈n/t⌉`. Tiles of the upper tile triangle are numbered
//! with the same bijection as jobs. A tile's block holds `t²` values where
//! offset `ry·t + cx` is the job `(y_t·t + ry, x_t·t + cx)`; cells below the
//! diagonal or past `n` stay `0.0`.

use std::collections::HashSet;
use std::ops::Range;

use rayon::prelude::*;

use crate::buffer::{PassBuffer, TileBlock, TileBlockRef};
use crate::error::{Error, Result};
use crate::reduce;
use crate::result::CorrelationResult;
use crate::transform::NormalizedDataset;
use crate::triangle::{Coord, JobId, TriangleIndexer};

pub const DEFAULT_TILE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGeometry {
    n: usize,
    t: usize,
    m: usize,
    total_tiles: u64,
}

impl TileGeometry {
    pub fn new(n: usize, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::domain("tile size must be at least 1"));
        }
        TriangleIndexer::new(n as u64)?;
        let m = n.div_ceil(t);
        let total_tiles = TriangleIndexer::new(m as u64)?.sym_len();
        Ok(TileGeometry {
            n,
            t,
            m,
            total_tiles,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn total_tiles(&self) -> u64 {
        self.total_tiles
    }

    pub fn tile_len(&self) -> usize {
        self.t * self.t
    }

    pub fn tile_indexer(&self) -> TriangleIndexer {
        TriangleIndexer::new(self.m as u64).expect("m validated at construction")
    }

    pub fn job_indexer(&self) -> TriangleIndexer {
        TriangleIndexer::new(self.n as u64).expect("n validated at construction")
    }

    pub fn tile_coord(&self, tile_id: JobId) -> Result<Coord> {
        self.tile_indexer().sym_coord(tile_id)
    }

    pub fn check_range(&self, range: &Range<u64>) -> Result<()> {
        if range.start > range.end || range.end > self.total_tiles {
            return Err(Error::domain(format!(
                "tile range [{}, {}) outside [0, {})",
                range.start, range.end, self.total_tiles
            )));
        }
        Ok(())
    }

    /// In-triangle cells of a tile as `(offset within block, job coordinate)`.
    pub fn cells(&self, tile_id: JobId) -> Result<impl Iterator<Item = (usize, Coord)>> {
        let tc = self.tile_coord(tile_id)?;
        let (t, n) = (self.t, self.n as u64);
        let (y0, x0) = (tc.y * t as u64, tc.x * t as u64);
        Ok((0..t).flat_map(move |ry| {
            (0..t).filter_map(move |cx| {
                let (y, x) = (y0 + ry as u64, x0 + cx as u64);
                (y <= x && x < n).then_some((ry * t + cx, Coord::new(y, x)))
            })
        }))
    }
}

/// Tile coordinate in an `m × m` tile matrix.
pub fn tile_coord(m: u64, tile_id: JobId) -> Result<Coord> {
    TriangleIndexer::new(m)?.sym_coord(tile_id)
}

/// Fills one zeroed block.
fn compute_tile(u: &NormalizedDataset, geom: &TileGeometry, tile_id: JobId, out: &mut [f64]) {
    let t = geom.t;
    let n = geom.n;
    let tc = geom
        .tile_coord(tile_id)
        .expect("tile id checked against the pass range");
    let y0 = tc.y as usize * t;
    let x0 = tc.x as usize * t;
    let y_end = (y0 + t).min(n);
    let x_end = (x0 + t).min(n);
    for y in y0..y_end {
        let row_y = u.row(y);
        let dst = &mut out[(y - y0) * t..(y - y0 + 1) * t];
        for x in y.max(x0)..x_end {
            dst[x - x0] = reduce::dot(row_y, u.row(x));
        }
    }
}

/// Computes tiles `range` into `buf`, one task per tile on the current rayon
/// pool. Every cell is written by exactly one task in a fixed reduction
/// order, so the contents do not depend on the pool size.
pub fn compute_pass_into(
    u: &NormalizedDataset,
    geom: &TileGeometry,
    range: Range<u64>,
    buf: &mut PassBuffer,
) -> Result<()> {
    geom.check_range(&range)?;
    if u.n() != geom.n() {
        return Err(Error::domain(format!(
            "dataset has {} rows but geometry expects {}",
            u.n(),
            geom.n()
        )));
    }
    if buf.tile_len() != geom.tile_len() {
        return Err(Error::domain("buffer tile size does not match geometry"));
    }
    let start = range.start;
    let slots = buf.reset(range)?;
    slots
        .par_chunks_mut(geom.tile_len())
        .enumerate()
        .for_each(|(i, out)| compute_tile(u, geom, JobId(start + i as u64), out));
    Ok(())
}

/// Computes tiles `[j_start, j_end)` and returns one owned block per tile.
pub fn compute_pass(
    u: &NormalizedDataset,
    geom: &TileGeometry,
    j_start: JobId,
    j_end: JobId,
) -> Result<Vec<TileBlock>> {
    let range = j_start.0..j_end.0;
    geom.check_range(&range)?;
    if range.is_empty() {
        return Ok(Vec::new());
    }
    let mut buf = PassBuffer::new(geom.t(), (range.end - range.start) as usize, None)?;
    compute_pass_into(u, geom, range, &mut buf)?;
    Ok(buf.to_blocks())
}

fn validate_block(block: &TileBlockRef<'_>, geom: &TileGeometry) -> Result<()> {
    if block.tile_id.0 >= geom.total_tiles {
        return Err(Error::integrity(format!(
            "tile {} outside [0, {})",
            block.tile_id, geom.total_tiles
        )));
    }
    if block.values.len() != geom.tile_len() {
        return Err(Error::integrity(format!(
            "tile {} carries {} values, expected {}",
            block.tile_id,
            block.values.len(),
            geom.tile_len()
        )));
    }
    Ok(())
}

/// Copies in-triangle cells of one validated block into the packed result.
/// Placeholder cells below the diagonal are skipped by coordinate.
fn scatter_block(block: &TileBlockRef<'_>, geom: &TileGeometry, packed: &mut [f64]) {
    let t = geom.t;
    let n = geom.n;
    let jobs = geom.job_indexer();
    let tc = geom.tile_coord(block.tile_id).expect("validated tile id");
    let y0 = tc.y as usize * t;
    let x0 = tc.x as usize * t;
    let x_end = (x0 + t).min(n);
    for y in y0..(y0 + t).min(n) {
        let x_first = y.max(x0);
        if x_first >= x_end {
            continue;
        }
        let dst = jobs
            .sym_id(Coord::new(y as u64, x_first as u64))
            .expect("in-triangle cell")
            .0 as usize;
        let src = (y - y0) * t + (x_first - x0);
        let len = x_end - x_first;
        packed[dst..dst + len].copy_from_slice(&block.values[src..src + len]);
    }
}

/// Writes blocks into `result`. All blocks are validated before anything is
/// written, so a failed call leaves `result` untouched.
pub fn scatter<'a, I>(blocks: I, geom: &TileGeometry, result: &mut CorrelationResult) -> Result<()>
where
    I: IntoIterator<Item = TileBlockRef<'a>>,
{
    if result.n() != geom.n() {
        return Err(Error::domain(format!(
            "result has n={} but geometry n={}",
            result.n(),
            geom.n()
        )));
    }
    let blocks: Vec<TileBlockRef<'a>> = blocks.into_iter().collect();
    let mut seen = HashSet::with_capacity(blocks.len());
    for b in &blocks {
        validate_block(b, geom)?;
        if !seen.insert(b.tile_id) {
            return Err(Error::integrity(format!("duplicate tile {}", b.tile_id)));
        }
    }
    let packed = result.packed_mut();
    for b in &blocks {
        scatter_block(b, geom, packed);
    }
    Ok(())
}

/// Incrementally scatters passes into an in-memory result while tracking
/// which tiles have arrived.
#[derive(Debug)]
pub struct Assembler {
    geom: TileGeometry,
    result: CorrelationResult,
    seen: Vec<bool>,
}

impl Assembler {
    pub fn new(geom: TileGeometry, zero_variance: Vec<usize>) -> Result<Self> {
        let seen_len = usize::try_from(geom.total_tiles())
            .map_err(|_| Error::domain("too many tiles for this platform"))?;
        Ok(Assembler {
            result: CorrelationResult::zeroed(geom.n(), zero_variance)?,
            seen: vec![false; seen_len],
            geom,
        })
    }

    pub fn geometry(&self) -> &TileGeometry {
        &self.geom
    }

    pub fn add<'a, I>(&mut self, blocks: I) -> Result<()>
    where
        I: IntoIterator<Item = TileBlockRef<'a>>,
    {
        let blocks: Vec<TileBlockRef<'a>> = blocks.into_iter().collect();
        let mut dupes = Vec::new();
        let mut batch = HashSet::with_capacity(blocks.len());
        for b in &blocks {
            validate_block(b, &self.geom)?;
            if self.seen[b.tile_id.0 as usize] || !batch.insert(b.tile_id.0) {
                dupes.push(b.tile_id.0);
            }
        }
        if !dupes.is_empty() {
            return Err(Error::integrity(format!(
                "duplicate tiles {}",
                format_ids(&dupes)
            )));
        }
        let packed = self.result.packed_mut();
        for b in &blocks {
            self.seen[b.tile_id.0 as usize] = true;
            scatter_block(b, &self.geom, packed);
        }
        Ok(())
    }

    pub fn add_pass(&mut self, pass: &PassBuffer) -> Result<()> {
        if pass.tile_len() != self.geom.tile_len() {
            return Err(Error::integrity("pass tile size does not match geometry"));
        }
        self.add(pass.blocks())
    }

    pub fn missing(&self) -> Vec<u64> {
        self.seen
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| (!s).then_some(i as u64))
            .collect()
    }

    /// Returns the result once every tile has arrived.
    pub fn finish(self) -> Result<CorrelationResult> {
        let missing = self.missing();
        if !missing.is_empty() {
            return Err(Error::integrity(format!(
                "missing tiles {}",
                format_ids(&missing)
            )));
        }
        Ok(self.result)
    }
}

/// Renders sorted ids compactly, collapsing runs into half-open ranges.
pub(crate) fn format_ids(ids: &[u64]) -> String {
    let mut ids = ids.to_vec();
    ids.sort_unstable();
    let mut parts = Vec::new();
    let mut i = 0;
    while i < ids.len() {
        let mut j = i;
        while j + 1 < ids.len() && ids[j + 1] == ids[j] + 1 {
            j += 1;
        }
        if j == i {
            parts.push(ids[i].to_string());
        } else {
            parts.push(format!("[{}, {})", ids[i], ids[j] + 1));
        }
        i = j + 1;
    }
    parts.join(", ")
}
