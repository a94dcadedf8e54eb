use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tripcc::distributed::{self, Backend, DistributedConfig, MergeMode};
use tripcc::engine::{self, EngineConfig};
use tripcc::io::{self, DataFormat};
use tripcc::pipeline::{capacity_for_budget, DEFAULT_BUFFER_BUDGET};
use tripcc::transform::estimate_cost;
use tripcc::{Dataset, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_WORKER: u8 = 4;

/// All-pairs Pearson correlation with bounded memory.
///
/// Environment: TRIPCC_THREADS sets the default compute thread count (0 =
/// all cores) and TRIPCC_BUFFER_BUDGET the default byte budget for the two
/// pass buffers when --capacity is not given.
#[derive(Parser)]
#[command(name = "tripcc", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Tsv,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    InProcess,
    Subprocess,
}

#[derive(Clone, Copy, ValueEnum)]
enum MergeArg {
    Memory,
    Disk,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset of uniform values in [0, 1).
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Output format; `auto` picks TSV for a .tsv/.txt extension.
        #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
        format: FormatArg,
    },
    /// Compute all pairwise correlations into a packed result file.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
        format: FormatArg,
        #[arg(long, default_value_t = 4)]
        tile_size: usize,
        /// Tiles per pass; derived from the buffer budget when omitted.
        #[arg(long)]
        capacity: Option<u64>,
        #[arg(long, env = "TRIPCC_THREADS", default_value_t = 0)]
        threads: usize,
        #[arg(long, env = "TRIPCC_BUFFER_BUDGET", default_value_t = DEFAULT_BUFFER_BUDGET)]
        buffer_budget: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, value_enum, default_value_t = BackendArg::InProcess)]
        backend: BackendArg,
        /// Where worker blocks wait before merging.
        #[arg(long, value_enum, default_value_t = MergeArg::Memory)]
        merge: MergeArg,
        /// Finish each pass's consumption before computing the next.
        #[arg(long)]
        no_overlap: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a result file against the brute-force oracle.
    Verify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
        format: FormatArg,
        #[arg(long)]
        result: PathBuf,
    },
    /// Print the correlation of one pair from a result file.
    Query {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
    },
    /// Print the estimated unit arithmetic operation count.
    Cost {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        l: u64,
    },
    /// Serve the worker protocol on stdin/stdout.
    #[command(hide = true)]
    Worker {
        #[arg(long, env = "TRIPCC_THREADS", default_value_t = 0)]
        threads: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Verification(_) => EXIT_VERIFY,
        Error::Worker { .. } | Error::Protocol(_) | Error::Integrity(_) => EXIT_WORKER,
        _ => EXIT_DATA,
    }
}

fn resolve_format(path: &Path, arg: FormatArg) -> tripcc::Result<DataFormat> {
    match arg {
        FormatArg::Tsv => Ok(DataFormat::Tsv),
        FormatArg::Binary => Ok(DataFormat::Binary),
        FormatArg::Auto => io::detect_format(path),
    }
}

fn load(path: &Path, arg: FormatArg) -> tripcc::Result<Dataset> {
    io::load_dataset(path, resolve_format(path, arg)?)
}

fn run(cmd: Cmd) -> tripcc::Result<()> {
    match cmd {
        Cmd::Gen {
            n,
            l,
            seed,
            out,
            format,
        } => {
            let format = match format {
                FormatArg::Tsv => DataFormat::Tsv,
                FormatArg::Binary => DataFormat::Binary,
                FormatArg::Auto => match out.extension().and_then(|e| e.to_str()) {
                    Some("tsv" | "txt") => DataFormat::Tsv,
                    _ => DataFormat::Binary,
                },
            };
            let d = io::gen_synthetic(n, l, seed)?;
            io::save_dataset(&out, &d, format)?;
            eprintln!("wrote {n}x{l} dataset to {}", out.display());
        }
        Cmd::Run {
            input,
            format,
            tile_size,
            capacity,
            threads,
            buffer_budget,
            workers,
            backend,
            merge,
            no_overlap,
            out,
        } => {
            let d = load(&input, format)?;
            if tile_size == 0 {
                return Err(Error::Domain("--tile-size must be at least 1".into()));
            }
            let capacity =
                capacity.unwrap_or_else(|| capacity_for_budget(tile_size, buffer_budget) as u64);
            let sink = BufWriter::new(File::create(&out)?);
            if workers == 1 && matches!(backend, BackendArg::InProcess) {
                let cfg = EngineConfig {
                    tile: tile_size,
                    capacity: Some(capacity),
                    threads,
                    overlap: !no_overlap,
                    ..EngineConfig::default()
                };
                engine::correlate_to_writer(&d, &cfg, sink)?;
            } else {
                let backend = match backend {
                    BackendArg::InProcess => Backend::InProcess,
                    BackendArg::Subprocess => Backend::Subprocess {
                        program: std::env::current_exe()?,
                        args: vec!["worker".into()],
                    },
                };
                let cfg = DistributedConfig {
                    threads,
                    overlap: !no_overlap,
                    backend,
                    merge: match merge {
                        MergeArg::Memory => MergeMode::Memory,
                        MergeArg::Disk => MergeMode::Disk,
                    },
                    ..DistributedConfig::new(workers, tile_size, capacity)
                };
                match cfg.merge {
                    MergeMode::Memory => {
                        let r = distributed::run_workers(&d, Some(&input), &cfg)?;
                        let mut sink = sink;
                        io::write_packed(&mut sink, &r)?;
                        sink.flush()?;
                    }
                    MergeMode::Disk => {
                        distributed::run_workers_to_writer(&d, Some(&input), &cfg, sink)?;
                    }
                }
            }
            eprintln!(
                "correlated {} variables x {} samples into {}",
                d.n(),
                d.l(),
                out.display()
            );
        }
        Cmd::Verify {
            input,
            format,
            result,
        } => {
            let d = load(&input, format)?;
            let r = io::load_packed(&result)?;
            let report = io::verify_report(&d, &r)?;
            println!(
                "n={} max_abs_dev={:e} worst_pair=({}, {})",
                report.n, report.max_abs_dev, report.worst_pair.0, report.worst_pair.1
            );
            if let Some((i, j, want, got)) = report.first_offending {
                println!("FAIL first offending pair ({i}, {j}): expected {want}, found {got}");
                return Err(Error::Verification(format!(
                    "pair ({i}, {j}) out of tolerance"
                )));
            }
            println!("PASS");
        }
        Cmd::Query { result, i, j } => {
            println!("{}", io::query_pair(&result, i, j)?);
        }
        Cmd::Cost { n, l } => {
            println!("{}", estimate_cost(n, l)?);
        }
        Cmd::Worker { threads } => {
            let mut input = std::io::stdin().lock();
            let mut output = BufWriter::new(std::io::stdout().lock());
            distributed::serve_worker(&mut input, &mut output, threads)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
