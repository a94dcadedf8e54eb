//! Single-process entry points: normalize, plan and run one pipeline over
//! the whole tile range.

use std::io::Write;

use crate::buffer::BufferMeter;
use crate::error::Result;
use crate::io::PackedStreamWriter;
use crate::pipeline::{
    capacity_for_budget, plan_passes, run_pipeline, run_to_memory, PipelineConfig,
    DEFAULT_BUFFER_BUDGET,
};
use crate::result::CorrelationResult;
use crate::tile::{TileGeometry, DEFAULT_TILE};
use crate::transform::{normalize, Dataset};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub tile: usize,
    /// Tiles per pass; derived from `budget_bytes` when unset.
    pub capacity: Option<u64>,
    /// Bytes allowed for both pass buffers together.
    pub budget_bytes: usize,
    /// Compute threads; 0 for all available.
    pub threads: usize,
    pub overlap: bool,
    pub meter: Option<BufferMeter>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            tile: DEFAULT_TILE,
            capacity: None,
            budget_bytes: DEFAULT_BUFFER_BUDGET,
            threads: 0,
            overlap: true,
            meter: None,
        }
    }
}

impl EngineConfig {
    pub fn capacity(&self) -> u64 {
        self.capacity
            .unwrap_or_else(|| capacity_for_budget(self.tile, self.budget_bytes) as u64)
    }

    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            threads: self.threads,
            overlap: self.overlap,
            meter: self.meter.clone(),
        }
    }
}

/// All-pairs correlations assembled in memory.
pub fn correlate(d: &Dataset, cfg: &EngineConfig) -> Result<CorrelationResult> {
    let u = normalize(d)?;
    let geom = TileGeometry::new(d.n(), cfg.tile)?;
    run_to_memory(&u, &geom, cfg.capacity(), &cfg.pipeline())
}

/// All-pairs correlations streamed to `out` as a packed result file; only
/// the pass buffers and one tile row of output are held in memory.
pub fn correlate_to_writer<W: Write>(d: &Dataset, cfg: &EngineConfig, out: W) -> Result<W> {
    let u = normalize(d)?;
    let geom = TileGeometry::new(d.n(), cfg.tile)?;
    let plan = plan_passes(0, geom.total_tiles(), cfg.capacity())?;
    let mut writer = PackedStreamWriter::new(out, geom, u.zero_variance())?;
    run_pipeline(&u, &geom, &plan, &mut writer, &cfg.pipeline())?;
    writer.finish()
}
