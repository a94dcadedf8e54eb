use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::triangle::JobId;

/// Counts live and peak `f64` slots held by [`PassBuffer`]s.
///
/// Clones share the same counters, so one meter can watch every buffer of a
/// pipeline, or of several.
#[derive(Debug, Clone, Default)]
pub struct BufferMeter {
    inner: Arc<MeterState>,
}

#[derive(Debug, Default)]
struct MeterState {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl BufferMeter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Floats currently held.
    pub fn live(&self) -> usize {
        self.inner.live.load(Ordering::SeqCst)
    }

    /// Largest number of floats held at once since creation.
    pub fn peak(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak() * std::mem::size_of::<f64>()
    }

    fn acquire(&self, floats: usize) {
        let now = self.inner.live.fetch_add(floats, Ordering::SeqCst) + floats;
        self.inner.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn release(&self, floats: usize) {
        self.inner.live.fetch_sub(floats, Ordering::SeqCst);
    }
}

/// One tile's `t²` results, row-major within the tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileBlockRef<'a> {
    pub tile_id: JobId,
    pub values: &'a [f64],
}

/// Owned counterpart of [`TileBlockRef`].
#[derive(Debug, Clone, PartialEq)]
pub struct TileBlock {
    pub tile_id: JobId,
    pub values: Vec<f64>,
}

impl TileBlock {
    pub fn as_ref(&self) -> TileBlockRef<'_> {
        TileBlockRef {
            tile_id: self.tile_id,
            values: &self.values,
        }
    }
}

/// Result buffer for one pass: room for `capacity` consecutive tiles of
/// `t²` floats each. The storage is allocated once and reused across passes.
#[derive(Debug)]
pub struct PassBuffer {
    tile_len: usize,
    capacity: usize,
    range: Range<u64>,
    data: Vec<f64>,
    meter: Option<BufferMeter>,
}

impl PassBuffer {
    pub fn new(t: usize, capacity: usize, meter: Option<BufferMeter>) -> Result<Self> {
        if t == 0 || capacity == 0 {
            return Err(Error::domain("pass buffer needs t >= 1 and capacity >= 1"));
        }
        let tile_len = t
            .checked_mul(t)
            .ok_or_else(|| Error::domain("tile size overflows"))?;
        let floats = tile_len
            .checked_mul(capacity)
            .ok_or_else(|| Error::domain("pass buffer size overflows"))?;
        if let Some(m) = &meter {
            m.acquire(floats);
        }
        Ok(PassBuffer {
            tile_len,
            capacity,
            range: 0..0,
            data: vec![0.0; floats],
            meter,
        })
    }

    /// Wraps already computed tile data, e.g. decoded from a wire frame.
    pub fn from_values(t: usize, first_tile: u64, values: Vec<f64>) -> Result<Self> {
        let tile_len = t * t;
        if t == 0 || !values.len().is_multiple_of(tile_len) {
            return Err(Error::integrity(format!(
                "{} values is not a whole number of {t}x{t} tiles",
                values.len()
            )));
        }
        let count = values.len() / tile_len;
        Ok(PassBuffer {
            tile_len,
            capacity: count.max(1),
            range: first_tile..first_tile + count as u64,
            data: values,
            meter: None,
        })
    }

    pub fn tile_len(&self) -> usize {
        self.tile_len
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Tile identifiers currently held.
    pub fn range(&self) -> Range<u64> {
        self.range.clone()
    }

    pub fn len(&self) -> usize {
        (self.range.end - self.range.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    /// Values of the held tiles, back to back.
    pub fn values(&self) -> &[f64] {
        &self.data[..self.len() * self.tile_len]
    }

    /// Points the buffer at a new tile range and zero-fills its slots.
    pub(crate) fn reset(&mut self, range: Range<u64>) -> Result<&mut [f64]> {
        let count = range.end.saturating_sub(range.start) as usize;
        if range.start > range.end || count > self.capacity {
            return Err(Error::domain(format!(
                "range [{}, {}) does not fit a buffer of {} tiles",
                range.start, range.end, self.capacity
            )));
        }
        self.range = range;
        let used = &mut self.data[..count * self.tile_len];
        used.fill(0.0);
        Ok(used)
    }

    pub fn blocks(&self) -> impl Iterator<Item = TileBlockRef<'_>> {
        let start = self.range.start;
        self.values()
            .chunks_exact(self.tile_len)
            .enumerate()
            .map(move |(i, values)| TileBlockRef {
                tile_id: JobId(start + i as u64),
                values,
            })
    }

    pub fn to_blocks(&self) -> Vec<TileBlock> {
        self.blocks()
            .map(|b| TileBlock {
                tile_id: b.tile_id,
                values: b.values.to_vec(),
            })
            .collect()
    }
}

impl Drop for PassBuffer {
    fn drop(&mut self) {
        if let Some(m) = &self.meter {
            m.release(self.data.len());
        }
    }
}
