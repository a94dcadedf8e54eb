//! Multi-pass, double-buffered execution over a range of tiles.
//!
//! A tile range is cut into passes of at most `capacity` tiles. Each pass is
//! computed into one of two reusable buffers; with overlap enabled the next
//! pass is computed while the sink consumes the previous one, so at most two
//! buffers of `capacity · t²` floats are ever alive.

use std::ops::Range;
use std::thread;

use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::buffer::{BufferMeter, PassBuffer};
use crate::error::{Error, Result};
use crate::tile::{compute_pass_into, Assembler, TileGeometry};
use crate::transform::NormalizedDataset;

/// Default byte budget for both pass buffers together.
pub const DEFAULT_BUFFER_BUDGET: usize = 256 << 20;

/// Largest capacity whose two buffers fit in `budget_bytes`, at least 1.
pub fn capacity_for_budget(t: usize, budget_bytes: usize) -> usize {
    let per_tile_pair = 2 * t * t * std::mem::size_of::<f64>();
    (budget_bytes / per_tile_pair.max(1)).max(1)
}

/// Capacity-bounded split of a tile range into consecutive passes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassPlan {
    start: u64,
    stop: u64,
    capacity: u64,
}

impl PassPlan {
    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn stop(&self) -> u64 {
        self.stop
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn range(&self) -> Range<u64> {
        self.start..self.stop
    }

    pub fn tiles(&self) -> u64 {
        self.stop - self.start
    }

    pub fn len(&self) -> u64 {
        self.tiles().div_ceil(self.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.stop
    }

    /// Longest pass, which sizes the buffers.
    pub fn max_pass_len(&self) -> u64 {
        self.tiles().min(self.capacity)
    }

    pub fn passes(&self) -> impl Iterator<Item = Range<u64>> + '_ {
        let (stop, cap) = (self.stop, self.capacity);
        (0..self.len()).map(move |k| {
            let s = self.start + k * cap;
            s..stop.min(s + cap)
        })
    }
}

pub fn plan_passes(range_start: u64, range_stop: u64, capacity: u64) -> Result<PassPlan> {
    if capacity == 0 {
        return Err(Error::domain("pass capacity must be at least 1"));
    }
    if range_start > range_stop {
        return Err(Error::domain(format!(
            "range start {range_start} exceeds stop {range_stop}"
        )));
    }
    Ok(PassPlan {
        start: range_start,
        stop: range_stop,
        capacity,
    })
}

/// Consumer of completed passes, called once per pass in plan order.
pub trait ResultSink {
    fn consume(&mut self, pass: &PassBuffer) -> Result<()>;
}

impl<F> ResultSink for F
where
    F: FnMut(&PassBuffer) -> Result<()>,
{
    fn consume(&mut self, pass: &PassBuffer) -> Result<()> {
        self(pass)
    }
}

impl ResultSink for Assembler {
    fn consume(&mut self, pass: &PassBuffer) -> Result<()> {
        self.add_pass(pass)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    /// Compute threads; 0 picks rayon's default.
    pub threads: usize,
    /// Compute the next pass while the sink consumes the current one.
    pub overlap: bool,
    pub meter: Option<BufferMeter>,
}

impl PipelineConfig {
    pub fn new(threads: usize) -> Self {
        PipelineConfig {
            threads,
            overlap: true,
            meter: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineStats {
    pub passes: u64,
    pub tiles: u64,
}

pub fn build_pool(threads: usize) -> Result<ThreadPool> {
    ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::domain(format!("cannot build thread pool: {e}")))
}

fn deliver(sink: &mut dyn ResultSink, pass: &PassBuffer, stats: &mut PipelineStats) -> Result<()> {
    sink.consume(pass).map_err(|e| Error::Sink {
        range: pass.range(),
        message: e.to_string(),
    })?;
    stats.passes += 1;
    stats.tiles += pass.len() as u64;
    Ok(())
}

/// Computes every pass of `plan` and hands it to `sink` in plan order.
///
/// A sink error stops the run once the in-flight computation finishes and is
/// reported with the tile range of the pass the sink rejected.
pub fn run_pipeline(
    u: &NormalizedDataset,
    geom: &TileGeometry,
    plan: &PassPlan,
    sink: &mut dyn ResultSink,
    config: &PipelineConfig,
) -> Result<PipelineStats> {
    geom.check_range(&plan.range())?;
    let mut stats = PipelineStats::default();
    let mut passes = plan.passes();
    let Some(first) = passes.next() else {
        return Ok(stats);
    };
    let pool = build_pool(config.threads)?;
    let cap = plan.max_pass_len() as usize;
    let new_buffer = || PassBuffer::new(geom.t(), cap, config.meter.clone());

    let mut front = new_buffer()?;
    pool.install(|| compute_pass_into(u, geom, first, &mut front))?;

    if !config.overlap {
        deliver(sink, &front, &mut stats)?;
        for range in passes {
            pool.install(|| compute_pass_into(u, geom, range, &mut front))?;
            deliver(sink, &front, &mut stats)?;
        }
        return Ok(stats);
    }

    // `front` holds the newest finished pass; `back` is free for the next.
    let mut back: Option<PassBuffer> = None;
    for range in passes {
        let mut next = match back.take() {
            Some(b) => b,
            None => new_buffer()?,
        };
        let (sunk, computed) = thread::scope(|s| {
            let worker = s.spawn(|| pool.install(|| compute_pass_into(u, geom, range, &mut next)));
            let sunk = deliver(sink, &front, &mut stats);
            let computed = worker.join().expect("compute thread panicked");
            (sunk, computed)
        });
        sunk?;
        computed?;
        back = Some(std::mem::replace(&mut front, next));
    }
    deliver(sink, &front, &mut stats)?;
    Ok(stats)
}

/// Normalized data through a single full-range pipeline into memory.
pub fn run_to_memory(
    u: &NormalizedDataset,
    geom: &TileGeometry,
    capacity: u64,
    config: &PipelineConfig,
) -> Result<crate::result::CorrelationResult> {
    let plan = plan_passes(0, geom.total_tiles(), capacity)?;
    let mut asm = Assembler::new(*geom, u.zero_variance().to_vec())?;
    run_pipeline(u, geom, &plan, &mut asm, config)?;
    asm.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{normalize, Dataset};

    fn ranges(p: &PassPlan) -> Vec<Range<u64>> {
        p.passes().collect()
    }

    fn random_u(n: usize, l: usize) -> NormalizedDataset {
        let mut s = 0x2545F4914F6CDD1Du64;
        let values = (0..n * l)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        normalize(&Dataset::new(n, l, values).unwrap()).unwrap()
    }

    #[test]
    fn plan_examples() {
        assert_eq!(
            ranges(&plan_passes(0, 10, 4).unwrap()),
            vec![0..4, 4..8, 8..10]
        );
        assert_eq!(ranges(&plan_passes(0, 10, 100).unwrap()), vec![0..10]);
        let empty = plan_passes(5, 5, 3).unwrap();
        assert!(empty.is_empty() && ranges(&empty).is_empty());
        assert!(plan_passes(0, 10, 0).is_err());
        assert!(plan_passes(6, 5, 1).is_err());
    }

    #[test]
    fn plan_invariants() {
        for start in 0..6u64 {
            for stop in start..40 {
                for cap in 1..12 {
                    let p = plan_passes(start, stop, cap).unwrap();
                    let rs = ranges(&p);
                    assert_eq!(rs.len() as u64, p.len());
                    let mut at = start;
                    for (k, r) in rs.iter().enumerate() {
                        assert_eq!(r.start, at);
                        assert!(r.end > r.start && r.end - r.start <= cap);
                        if k + 1 < rs.len() {
                            assert_eq!(r.end - r.start, cap);
                        }
                        at = r.end;
                    }
                    assert_eq!(at, stop);
                }
            }
        }
    }

    #[test]
    fn one_pass_when_capacity_covers_everything() {
        let u = random_u(10, 6);
        let g = TileGeometry::new(10, 4).unwrap();
        let plan = plan_passes(0, g.total_tiles(), 1000).unwrap();
        let mut calls = 0;
        let mut sink = |p: &PassBuffer| {
            calls += 1;
            assert_eq!(p.range(), 0..g.total_tiles());
            Ok(())
        };
        let stats = run_pipeline(&u, &g, &plan, &mut sink, &PipelineConfig::new(1)).unwrap();
        assert_eq!(calls, 1);
        assert_eq!(stats.tiles, g.total_tiles());
    }

    #[test]
    fn capacity_one_delivers_tiles_in_order() {
        let u = random_u(9, 5);
        let g = TileGeometry::new(9, 2).unwrap();
        let plan = plan_passes(0, g.total_tiles(), 1).unwrap();
        for overlap in [false, true] {
            let mut seen = Vec::new();
            let mut sink = |p: &PassBuffer| {
                seen.push(p.range());
                Ok(())
            };
            let cfg = PipelineConfig {
                overlap,
                ..PipelineConfig::new(2)
            };
            run_pipeline(&u, &g, &plan, &mut sink, &cfg).unwrap();
            let expected: Vec<_> = (0..g.total_tiles()).map(|i| i..i + 1).collect();
            assert_eq!(seen, expected);
        }
    }

    #[test]
    fn empty_plan_never_calls_sink() {
        let u = random_u(5, 3);
        let g = TileGeometry::new(5, 2).unwrap();
        let plan = plan_passes(2, 2, 4).unwrap();
        let mut sink = |_: &PassBuffer| -> Result<()> { panic!("sink called") };
        let stats = run_pipeline(&u, &g, &plan, &mut sink, &PipelineConfig::new(1)).unwrap();
        assert_eq!(stats, PipelineStats::default());
    }

    #[test]
    fn overlap_is_bitwise_neutral() {
        let u = random_u(64, 20);
        let g = TileGeometry::new(64, 4).unwrap();
        let with = run_to_memory(&u, &g, 5, &PipelineConfig::new(3)).unwrap();
        let cfg = PipelineConfig {
            overlap: false,
            ..PipelineConfig::new(1)
        };
        let without = run_to_memory(&u, &g, 5, &cfg).unwrap();
        assert!(with.bitwise_eq(&without));
    }

    #[test]
    fn sink_failure_names_the_pass() {
        let u = random_u(12, 4);
        let g = TileGeometry::new(12, 2).unwrap();
        let plan = plan_passes(0, g.total_tiles(), 5).unwrap();
        for overlap in [false, true] {
            let mut calls = 0;
            let mut sink = |_: &PassBuffer| {
                calls += 1;
                if calls == 3 {
                    Err(Error::integrity("disk full"))
                } else {
                    Ok(())
                }
            };
            let cfg = PipelineConfig {
                overlap,
                ..PipelineConfig::new(1)
            };
            match run_pipeline(&u, &g, &plan, &mut sink, &cfg) {
                Err(Error::Sink { range, message }) => {
                    assert_eq!(range, 10..15);
                    assert!(message.contains("disk full"));
                }
                other => panic!("unexpected {other:?}"),
            }
            assert_eq!(calls, 3);
        }
    }

    #[test]
    fn at_most_two_buffers_alive() {
        let u = random_u(40, 8);
        let g = TileGeometry::new(40, 4).unwrap();
        let plan = plan_passes(0, g.total_tiles(), 7).unwrap();
        let meter = BufferMeter::new();
        let cfg = PipelineConfig {
            meter: Some(meter.clone()),
            ..PipelineConfig::new(2)
        };
        let mut asm = Assembler::new(g, vec![]).unwrap();
        run_pipeline(&u, &g, &plan, &mut asm, &cfg).unwrap();
        assert_eq!(meter.peak(), 2 * 7 * 16);
        assert_eq!(meter.live(), 0);
    }

    #[test]
    fn budget_capacity() {
        assert_eq!(capacity_for_budget(4, 1 << 20), 4096);
        assert_eq!(capacity_for_budget(64, 10), 1);
    }
}
