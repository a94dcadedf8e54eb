//! Static partitioning of the tile range across `p` workers.
//!
//! Worker `i` owns tiles `[i·c, min(T, (i+1)·c))` with `c = ⌈T/p⌉`, runs its
//! own pass pipeline over that range and hands back its blocks. Workers are
//! either thread groups in this process or child processes speaking the
//! framed protocol of [`crate::protocol`] over their standard streams. The
//! coordinator checks every tile arrives exactly once while merging.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;

use crate::buffer::PassBuffer;
use crate::error::{Error, Result};
use crate::io::{detect_format, load_dataset, save_dataset, DataFormat, PackedStreamWriter};
use crate::pipeline::{plan_passes, run_pipeline, PipelineConfig, ResultSink};
use crate::protocol::{self, read_frame, write_blocks, write_frame, Assign, Frame};
use crate::result::CorrelationResult;
use crate::tile::{Assembler, TileGeometry};
use crate::transform::{normalize, zero_variance_rows, Dataset, NormalizedDataset};

/// Contiguous, possibly empty, tile range of every worker.
pub fn partition(total_tiles: u64, p: usize) -> Result<Vec<Range<u64>>> {
    if p == 0 {
        return Err(Error::domain("worker count must be at least 1"));
    }
    let chunk = total_tiles.div_ceil(p as u64);
    Ok((0..p as u64)
        .map(|i| {
            let start = (i * chunk).min(total_tiles);
            let end = ((i + 1) * chunk).min(total_tiles);
            start..end
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerAssignment {
    pub worker_index: usize,
    pub range: Range<u64>,
    pub geometry: TileGeometry,
    pub capacity: u64,
}

pub fn assignments(geom: TileGeometry, p: usize, capacity: u64) -> Result<Vec<WorkerAssignment>> {
    Ok(partition(geom.total_tiles(), p)?
        .into_iter()
        .enumerate()
        .map(|(worker_index, range)| WorkerAssignment {
            worker_index,
            range,
            geometry: geom,
            capacity,
        })
        .collect())
}

/// Where a worker's blocks ended up.
#[derive(Debug)]
pub enum WorkerOutput {
    Memory(Vec<PassBuffer>),
    /// BLOCKS frames written back to back into a temporary file.
    Shard(File),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerStatus {
    Ok,
    Error(String),
}

#[derive(Debug)]
pub struct WorkerReport {
    pub worker_index: usize,
    pub range: Range<u64>,
    /// Tiles received in order from the start of `range`.
    pub tiles_done: u64,
    pub output: WorkerOutput,
    pub status: WorkerStatus,
}

impl WorkerReport {
    pub fn unfinished(&self) -> Range<u64> {
        (self.range.start + self.tiles_done).min(self.range.end)..self.range.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    InProcess,
    /// Runs `program args...` once per worker; the child must serve the
    /// worker protocol on stdin/stdout.
    Subprocess {
        program: PathBuf,
        args: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeMode {
    /// Worker blocks stay in memory until merged.
    Memory,
    /// Worker blocks spill to temporary shard files.
    Disk,
}

#[derive(Debug, Clone)]
pub struct DistributedConfig {
    pub workers: usize,
    pub tile: usize,
    pub capacity: u64,
    /// Total compute threads shared among in-process workers; 0 for all.
    pub threads: usize,
    pub overlap: bool,
    pub backend: Backend,
    pub merge: MergeMode,
}

impl DistributedConfig {
    pub fn new(workers: usize, tile: usize, capacity: u64) -> Self {
        DistributedConfig {
            workers,
            tile,
            capacity,
            threads: 0,
            overlap: true,
            backend: Backend::InProcess,
            merge: MergeMode::Memory,
        }
    }
}

/// Receives one worker's passes and keeps them in the chosen form.
struct Collector {
    t: usize,
    output: WorkerOutput,
    next: u64,
    end: u64,
    capacity: u64,
}

impl Collector {
    fn new(t: usize, mode: MergeMode, range: &Range<u64>, capacity: u64) -> Result<Self> {
        let output = match mode {
            MergeMode::Memory => WorkerOutput::Memory(Vec::new()),
            MergeMode::Disk => WorkerOutput::Shard(tempfile::tempfile()?),
        };
        Ok(Collector {
            t,
            output,
            next: range.start,
            end: range.end,
            capacity,
        })
    }

    fn tiles_done(&self, start: u64) -> u64 {
        self.next - start
    }

    fn push(&mut self, first_tile: u64, count: u32, values: &[f64]) -> Result<()> {
        let count64 = count as u64;
        if first_tile != self.next {
            return Err(Error::protocol(format!(
                "expected tile {} next, got {first_tile}",
                self.next
            )));
        }
        if count == 0 || count64 > self.capacity || first_tile + count64 > self.end {
            return Err(Error::protocol(format!(
                "pass of {count} tiles from {first_tile} violates capacity {} or range end {}",
                self.capacity, self.end
            )));
        }
        if values.len() != count as usize * self.t * self.t {
            return Err(Error::protocol(format!(
                "{count} tiles of {0}x{0} carried {1} values",
                self.t,
                values.len()
            )));
        }
        match &mut self.output {
            WorkerOutput::Memory(passes) => passes.push(PassBuffer::from_values(
                self.t,
                first_tile,
                values.to_vec(),
            )?),
            WorkerOutput::Shard(f) => {
                let mut w = BufWriter::new(f);
                write_blocks(&mut w, first_tile, count, values)?;
                w.flush()?;
            }
        }
        self.next += count64;
        Ok(())
    }
}

impl ResultSink for Collector {
    fn consume(&mut self, pass: &PassBuffer) -> Result<()> {
        self.push(pass.range().start, pass.len() as u32, pass.values())
    }
}

fn resolve_threads(threads: usize) -> usize {
    if threads > 0 {
        threads
    } else {
        thread::available_parallelism().map_or(1, |n| n.get())
    }
}

fn run_in_process(
    a: &WorkerAssignment,
    u: &NormalizedDataset,
    threads: usize,
    overlap: bool,
    mode: MergeMode,
) -> Result<WorkerReport> {
    let mut collector = Collector::new(a.geometry.t(), mode, &a.range, a.capacity)?;
    let outcome = plan_passes(a.range.start, a.range.end, a.capacity).and_then(|plan| {
        let cfg = PipelineConfig {
            overlap,
            ..PipelineConfig::new(threads)
        };
        run_pipeline(u, &a.geometry, &plan, &mut collector, &cfg)
    });
    let status = match outcome {
        Ok(_) => WorkerStatus::Ok,
        Err(e) => WorkerStatus::Error(e.to_string()),
    };
    Ok(WorkerReport {
        worker_index: a.worker_index,
        range: a.range.clone(),
        tiles_done: collector.tiles_done(a.range.start),
        output: collector.output,
        status,
    })
}

fn run_subprocess(
    a: &WorkerAssignment,
    program: &Path,
    args: &[String],
    dataset_path: &Path,
    mode: MergeMode,
) -> Result<WorkerReport> {
    let mut collector = Collector::new(a.geometry.t(), mode, &a.range, a.capacity)?;
    let report = |collector: Collector, status| WorkerReport {
        worker_index: a.worker_index,
        range: a.range.clone(),
        tiles_done: collector.tiles_done(a.range.start),
        output: collector.output,
        status,
    };

    let mut child = match Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
    {
        Ok(c) => c,
        Err(e) => {
            let msg = format!("cannot launch {}: {e}", program.display());
            return Ok(report(collector, WorkerStatus::Error(msg)));
        }
    };

    let assign = Frame::Assign(Assign {
        j_start: a.range.start,
        j_end: a.range.end,
        t: a.geometry.t() as u32,
        capacity: a.capacity,
        dataset_path: dataset_path.to_string_lossy().into_owned(),
    });
    let mut stdin = child.stdin.take().expect("piped stdin");
    let sent = write_frame(&mut stdin, &assign).and_then(|_| Ok(stdin.flush()?));
    drop(stdin);

    let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
    let mut status = match sent {
        Err(e) => WorkerStatus::Error(format!("cannot send ASSIGN: {e}")),
        Ok(()) => loop {
            match read_frame(&mut stdout) {
                Ok(Some(Frame::Blocks {
                    first_tile,
                    count,
                    values,
                })) => {
                    if let Err(e) = collector.push(first_tile, count, &values) {
                        break WorkerStatus::Error(e.to_string());
                    }
                }
                Ok(Some(Frame::Done { tiles_done })) => {
                    let done = collector.tiles_done(a.range.start);
                    if tiles_done != done || collector.next != a.range.end {
                        break WorkerStatus::Error(format!(
                            "DONE reports {tiles_done} tiles but {done} of {} arrived",
                            a.range.end - a.range.start
                        ));
                    }
                    break WorkerStatus::Ok;
                }
                Ok(Some(Frame::Error(msg))) => break WorkerStatus::Error(msg),
                Ok(Some(other)) => {
                    break WorkerStatus::Error(format!(
                        "unexpected frame type {:#04x} from worker",
                        other.kind()
                    ))
                }
                Ok(None) => {
                    break WorkerStatus::Error("worker closed its output before DONE".into())
                }
                Err(e) => break WorkerStatus::Error(e.to_string()),
            }
        },
    };

    if status != WorkerStatus::Ok {
        let _ = child.kill();
    }
    // Drain so a worker blocked on a full pipe can exit.
    let _ = std::io::copy(&mut stdout, &mut std::io::sink());
    let exit = child.wait()?;
    if status == WorkerStatus::Ok && !exit.success() {
        status = WorkerStatus::Error(format!("worker exited with {exit}"));
    }
    Ok(report(collector, status))
}

/// Runs every worker to completion (or failure) and returns their reports in
/// worker order.
pub fn collect_reports(
    d: &Dataset,
    dataset_path: Option<&Path>,
    cfg: &DistributedConfig,
) -> Result<Vec<WorkerReport>> {
    let geom = TileGeometry::new(d.n(), cfg.tile)?;
    if cfg.capacity == 0 {
        return Err(Error::domain("pass capacity must be at least 1"));
    }
    let plan = assignments(geom, cfg.workers, cfg.capacity)?;

    match &cfg.backend {
        Backend::InProcess => {
            let u = normalize(d)?;
            let per_worker = (resolve_threads(cfg.threads) / cfg.workers).max(1);
            thread::scope(|s| {
                let handles: Vec<_> = plan
                    .iter()
                    .map(|a| {
                        let u = &u;
                        s.spawn(move || run_in_process(a, u, per_worker, cfg.overlap, cfg.merge))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker thread panicked"))
                    .collect()
            })
        }
        Backend::Subprocess { program, args } => {
            let spill;
            let path = match dataset_path {
                Some(p) => p.to_path_buf(),
                None => {
                    spill = tempfile::Builder::new().suffix(".lpcc").tempfile()?;
                    save_dataset(spill.path(), d, DataFormat::Binary)?;
                    spill.path().to_path_buf()
                }
            };
            thread::scope(|s| {
                let handles: Vec<_> = plan
                    .iter()
                    .map(|a| {
                        let path = &path;
                        s.spawn(move || {
                            if a.range.is_empty() {
                                return Ok(WorkerReport {
                                    worker_index: a.worker_index,
                                    range: a.range.clone(),
                                    tiles_done: 0,
                                    output: WorkerOutput::Memory(Vec::new()),
                                    status: WorkerStatus::Ok,
                                });
                            }
                            run_subprocess(a, program, args, path, cfg.merge)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("coordinator thread panicked"))
                    .collect()
            })
        }
    }
}

/// Replays every report's passes, in worker order, into `sink`. A failed
/// worker stops the replay with an error naming its unfinished range.
pub fn replay(reports: &mut [WorkerReport], t: usize, sink: &mut dyn ResultSink) -> Result<()> {
    reports.sort_by_key(|r| r.worker_index);
    for r in reports.iter() {
        match &r.status {
            WorkerStatus::Error(message) => {
                return Err(Error::Worker {
                    worker: r.worker_index,
                    unfinished: r.unfinished(),
                    message: message.clone(),
                })
            }
            WorkerStatus::Ok if r.tiles_done != r.range.end - r.range.start => {
                return Err(Error::Worker {
                    worker: r.worker_index,
                    unfinished: r.unfinished(),
                    message: "reported success without finishing its range".into(),
                })
            }
            WorkerStatus::Ok => {}
        }
    }
    for r in reports.iter_mut() {
        match &mut r.output {
            WorkerOutput::Memory(passes) => {
                for pass in passes.iter() {
                    sink.consume(pass)?;
                }
            }
            WorkerOutput::Shard(file) => {
                file.seek(SeekFrom::Start(0))?;
                let mut reader = BufReader::new(&*file);
                while let Some(frame) = read_frame(&mut reader)? {
                    let Frame::Blocks {
                        first_tile, values, ..
                    } = frame
                    else {
                        return Err(Error::integrity("shard holds a non-BLOCKS frame"));
                    };
                    sink.consume(&PassBuffer::from_values(t, first_tile, values)?)?;
                }
            }
        }
    }
    Ok(())
}

/// Scatters all reports into an in-memory result.
pub fn merge(
    mut reports: Vec<WorkerReport>,
    geom: &TileGeometry,
    zero_variance: Vec<usize>,
) -> Result<CorrelationResult> {
    let mut asm = Assembler::new(*geom, zero_variance)?;
    replay(&mut reports, geom.t(), &mut asm)?;
    asm.finish()
}

/// Streams all reports, in tile order, into a packed result file on `out`.
pub fn merge_to_writer<W: Write>(
    mut reports: Vec<WorkerReport>,
    geom: &TileGeometry,
    zero_variance: &[usize],
    out: W,
) -> Result<W> {
    let mut writer = PackedStreamWriter::new(out, *geom, zero_variance)?;
    replay(&mut reports, geom.t(), &mut writer)?;
    writer.finish()
}

/// Runs all workers and merges their blocks in memory.
pub fn run_workers(
    d: &Dataset,
    dataset_path: Option<&Path>,
    cfg: &DistributedConfig,
) -> Result<CorrelationResult> {
    let geom = TileGeometry::new(d.n(), cfg.tile)?;
    let reports = collect_reports(d, dataset_path, cfg)?;
    merge(reports, &geom, zero_variance_rows(d))
}

/// Runs all workers and streams the merged result to `out` as a packed
/// result file.
pub fn run_workers_to_writer<W: Write>(
    d: &Dataset,
    dataset_path: Option<&Path>,
    cfg: &DistributedConfig,
    out: W,
) -> Result<W> {
    let geom = TileGeometry::new(d.n(), cfg.tile)?;
    let reports = collect_reports(d, dataset_path, cfg)?;
    merge_to_writer(reports, &geom, &zero_variance_rows(d), out)
}

/// Worker side of the protocol: serves ASSIGN requests from `input` until it
/// closes. Any failure is reported to the coordinator as an ERROR frame and
/// returned.
pub fn serve_worker(input: &mut impl Read, output: &mut impl Write, threads: usize) -> Result<()> {
    loop {
        let outcome = match read_frame(input) {
            Ok(None) => return Ok(()),
            Ok(Some(Frame::Assign(a))) => handle_assign(&a, output, threads),
            Ok(Some(other)) => Err(Error::protocol(format!(
                "worker expected ASSIGN, got frame type {:#04x}",
                other.kind()
            ))),
            Err(e) => Err(e),
        };
        if let Err(e) = outcome {
            let _ = write_frame(output, &Frame::Error(e.to_string()));
            let _ = output.flush();
            return Err(e);
        }
    }
}

struct FrameSink<'a, W: Write> {
    out: &'a mut W,
}

impl<W: Write> ResultSink for FrameSink<'_, W> {
    fn consume(&mut self, pass: &PassBuffer) -> Result<()> {
        write_blocks(
            self.out,
            pass.range().start,
            pass.len() as u32,
            pass.values(),
        )?;
        self.out.flush()?;
        Ok(())
    }
}

fn handle_assign(a: &Assign, output: &mut impl Write, threads: usize) -> Result<()> {
    let path = Path::new(&a.dataset_path);
    let d = load_dataset(path, detect_format(path)?)?;
    let t = a.t as usize;
    let geom = TileGeometry::new(d.n(), t)?;
    geom.check_range(&(a.j_start..a.j_end))?;
    if a.capacity == 0 || a.capacity > u32::MAX as u64 {
        return Err(Error::domain(format!(
            "capacity {} out of range",
            a.capacity
        )));
    }
    let floats = (a.capacity as usize).checked_mul(t * t);
    if floats.and_then(protocol::blocks_payload_len).is_none() {
        return Err(Error::domain(format!(
            "capacity {} with t={t} exceeds the frame size limit",
            a.capacity
        )));
    }
    let u = normalize(&d)?;
    let plan = plan_passes(a.j_start, a.j_end, a.capacity)?;
    let stats = run_pipeline(
        &u,
        &geom,
        &plan,
        &mut FrameSink { out: output },
        &PipelineConfig::new(threads),
    )?;
    write_frame(
        output,
        &Frame::Done {
            tiles_done: stats.tiles,
        },
    )?;
    output.flush()?;
    Ok(())
}
