//! Dataset and result files.
//!
//! Binary dataset (`LPCC`), all little-endian:
//!
//! ```text
//! magic "LPCC" | version u32 = 1 | n u64 | l u64 | n·l f64, row-major
//! ```
//!
//! Packed result (`LPCR`), all little-endian:
//!
//! ```text
//! magic "LPCR" | version u32 = 1 | n u64 | z u64 | z sorted u64 row indices
//!     | n(n+1)/2 f64 in symmetric job-identifier order
//! ```
//!
//! Entry order is the job numbering itself, so a pair is located with one
//! seek and no index table.
//!
//! TSV datasets hold one variable per line and one sample per column. When
//! the first field of the first line is not a number, every line starts with
//! a label.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::buffer::PassBuffer;
use crate::error::{Error, Result};
use crate::pipeline::ResultSink;
use crate::result::{packed_len, CorrelationResult};
use crate::tile::TileGeometry;
use crate::transform::{allpairs_naive, Dataset};
use crate::triangle::{Coord, JobId, TriangleIndexer};

pub const MATRIX_MAGIC: &[u8; 4] = b"LPCC";
pub const RESULT_MAGIC: &[u8; 4] = b"LPCR";
pub const FORMAT_VERSION: u32 = 1;

const MATRIX_HEADER_LEN: u64 = 24;
const RESULT_FIXED_HEADER_LEN: u64 = 24;

/// Largest elementwise deviation accepted by [`verify`].
pub const VERIFY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Tsv,
    Binary,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(DataFormat::Tsv),
            "binary" | "bin" => Ok(DataFormat::Binary),
            other => Err(Error::domain(format!("unknown format {other:?}"))),
        }
    }
}

/// Binary when the file starts with the dataset magic, TSV otherwise.
pub fn detect_format(path: &Path) -> Result<DataFormat> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path)?;
    let mut got = 0;
    while got < 4 {
        match f.read(&mut magic[got..])? {
            0 => break,
            k => got += k,
        }
    }
    Ok(if got == 4 && &magic == MATRIX_MAGIC {
        DataFormat::Binary
    } else {
        DataFormat::Tsv
    })
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Tsv => load_tsv(path),
        DataFormat::Binary => load_matrix(path),
    }
}

pub fn save_dataset(path: &Path, d: &Dataset, format: DataFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        DataFormat::Tsv => write_tsv(&mut w, d)?,
        DataFormat::Binary => write_matrix(&mut w, d)?,
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Fills `out` from little-endian bytes.
fn read_f64s(r: &mut impl Read, out: &mut [f64]) -> Result<()> {
    let mut bytes = vec![0u8; 8 * 8192];
    for chunk in out.chunks_mut(8192) {
        let raw = &mut bytes[..chunk.len() * 8];
        r.read_exact(raw)?;
        for (v, b) in chunk.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
        }
    }
    Ok(())
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * values.len().min(8192));
    for chunk in values.chunks(8192) {
        bytes.clear();
        for v in chunk {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

fn check_magic(r: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)
        .map_err(|_| Error::format(format!("{what}: truncated header")))?;
    if &m != magic {
        return Err(Error::format(format!("{what}: bad magic {m:?}")));
    }
    let version = read_u32(r).map_err(|_| Error::format(format!("{what}: truncated header")))?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "{what}: unsupported version {version}"
        )));
    }
    Ok(())
}

pub fn write_matrix(w: &mut impl Write, d: &Dataset) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(d.n() as u64).to_le_bytes())?;
    w.write_all(&(d.l() as u64).to_le_bytes())?;
    write_f64s(w, d.values())
}

/// Reads a binary dataset whose total encoded length is `total_len` bytes.
/// Sizes are checked against `total_len` before the payload is allocated.
pub fn read_matrix(r: &mut impl Read, total_len: u64) -> Result<Dataset> {
    check_magic(r, MATRIX_MAGIC, "dataset")?;
    let truncated = |_| Error::format("dataset: truncated header");
    let n = read_u64(r).map_err(truncated)?;
    let l = read_u64(r).map_err(truncated)?;
    let payload = n
        .checked_mul(l)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::format(format!("dataset: {n}x{l} overflows")))?;
    if total_len.checked_sub(MATRIX_HEADER_LEN) != Some(payload) {
        return Err(Error::format(format!(
            "dataset: header declares {n}x{l} ({payload} payload bytes) but file holds {}",
            total_len.saturating_sub(MATRIX_HEADER_LEN)
        )));
    }
    if n == 0 || l == 0 {
        return Err(Error::format(format!("dataset: empty shape {n}x{l}")));
    }
    let count = usize::try_from(n * l).map_err(|_| Error::format("dataset too large"))?;
    let mut values = vec![0.0; count];
    read_f64s(r, &mut values)?;
    Dataset::new(n as usize, l as usize, values).map_err(|e| Error::format(format!("dataset: {e}")))
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Dataset> {
    read_matrix(&mut &bytes[..], bytes.len() as u64)
}

pub fn load_matrix(path: &Path) -> Result<Dataset> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    read_matrix(&mut BufReader::new(f), len)
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses TSV text (tab-separated, or whitespace-separated when a line has
/// no tabs). Lines and columns in errors are 1-based.
pub fn parse_tsv(bytes: &[u8]) -> Result<Dataset> {
    let mut labeled: Option<bool> = None;
    let mut width: Option<usize> = None;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut rows = 0usize;

    for (k, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let lineno = k + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|e| parse_error(lineno, e.valid_up_to() + 1, "invalid UTF-8"))?;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let cells = fields(line);
        let has_label = *labeled.get_or_insert_with(|| cells[0].trim().parse::<f64>().is_err());
        let numeric = if has_label { &cells[1..] } else { &cells[..] };
        let expected = *width.get_or_insert(numeric.len());
        if numeric.len() != expected {
            return Err(parse_error(
                lineno,
                1,
                format!("ragged row: {} samples, expected {expected}", numeric.len()),
            ));
        }
        if has_label {
            ids.push(cells[0].to_string());
        }
        let offset = usize::from(has_label);
        for (c, cell) in numeric.iter().enumerate() {
            let col = c + offset + 1;
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_error(lineno, col, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_error(
                    lineno,
                    col,
                    format!("non-finite value {cell:?}"),
                ));
            }
            values.push(v);
        }
        rows += 1;
    }

    let l = width.unwrap_or(0);
    if rows == 0 || l == 0 {
        return Err(parse_error(1, 1, "no samples found"));
    }
    let d = Dataset::new(rows, l, values).map_err(|e| parse_error(1, 1, e.to_string()))?;
    if labeled == Some(true) {
        d.with_ids(ids)
    } else {
        Ok(d)
    }
}

pub fn load_tsv(path: &Path) -> Result<Dataset> {
    parse_tsv(&std::fs::read(path)?)
}

/// Writes values with shortest round-trip formatting, so reading the file
/// back reproduces every value exactly.
pub fn write_tsv(w: &mut impl Write, d: &Dataset) -> Result<()> {
    for (i, row) in d.rows().enumerate() {
        let mut first = true;
        if let Some(ids) = d.ids() {
            let id = &ids[i];
            if id.contains(['\t', '\n', '\r']) || id.trim().is_empty() {
                return Err(Error::domain(format!(
                    "label {id:?} cannot be written as TSV"
                )));
            }
            write!(w, "{id}")?;
            first = false;
        }
        for v in row {
            if !first {
                w.write_all(b"\t")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Deterministic uniform samples in `[0, 1)`.
///
/// Value `k` (row-major) is the SplitMix64 output for counter `k + 1`:
/// `z = seed + (k + 1) · 0x9E3779B97F4A7C15` (wrapping), then
/// `z = (z ^ (z >> 30)) · 0xBF58476D1CE4E5B9`,
/// `z = (z ^ (z >> 27)) · 0x94D049BB133111EB`, `z ^= z >> 31`,
/// and the sample is `(z >> 11) · 2⁻⁵³`.
pub fn gen_synthetic(n: usize, l: usize, seed: u64) -> Result<Dataset> {
    let count = n
        .checked_mul(l)
        .ok_or_else(|| Error::domain(format!("{n}x{l} overflows")))?;
    let values = (0..count as u64).map(|k| splitmix_unit(seed, k)).collect();
    Dataset::new(n, l, values)
}

#[inline]
fn splitmix_unit(seed: u64, k: u64) -> f64 {
    let mut z = seed.wrapping_add(k.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn write_result_header(w: &mut impl Write, n: usize, zero_variance: &[usize]) -> Result<()> {
    w.write_all(RESULT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(zero_variance.len() as u64).to_le_bytes())?;
    for &i in zero_variance {
        w.write_all(&(i as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_packed(w: &mut impl Write, r: &CorrelationResult) -> Result<()> {
    write_result_header(w, r.n(), r.zero_variance())?;
    write_f64s(w, r.packed())
}

pub fn save_packed(path: &Path, r: &CorrelationResult) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_packed(&mut w, r)?;
    w.flush()?;
    Ok(())
}

/// Header of a packed result file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedHeader {
    pub n: usize,
    pub zero_variance: Vec<usize>,
}

impl PackedHeader {
    /// Byte offset of the first packed value.
    pub fn data_offset(&self) -> u64 {
        RESULT_FIXED_HEADER_LEN + 8 * self.zero_variance.len() as u64
    }

    pub fn entries(&self) -> u64 {
        TriangleIndexer::new(self.n as u64)
            .expect("validated header")
            .sym_len()
    }

    pub fn total_len(&self) -> u64 {
        self.data_offset() + 8 * self.entries()
    }
}

/// Reads and validates a result header against the file length.
pub fn read_packed_header(r: &mut impl Read, total_len: u64) -> Result<PackedHeader> {
    check_magic(r, RESULT_MAGIC, "result")?;
    let truncated = |_| Error::format("result: truncated header");
    let n = read_u64(r).map_err(truncated)?;
    let zv_count = read_u64(r).map_err(truncated)?;
    let idx = TriangleIndexer::new(n).map_err(|e| Error::format(format!("result: {e}")))?;
    if zv_count > n {
        return Err(Error::format(format!(
            "result: {zv_count} zero-variance rows for n={n}"
        )));
    }
    let expected = RESULT_FIXED_HEADER_LEN + 8 * zv_count + 8 * idx.sym_len();
    if expected != total_len {
        return Err(Error::format(format!(
            "result: header implies {expected} bytes but file holds {total_len}"
        )));
    }
    let mut zero_variance = Vec::with_capacity(zv_count as usize);
    for _ in 0..zv_count {
        let i = read_u64(r).map_err(truncated)?;
        if i >= n || zero_variance.last().is_some_and(|&p: &usize| p as u64 >= i) {
            return Err(Error::format(format!(
                "result: zero-variance indices must be sorted, unique and < n (got {i})"
            )));
        }
        zero_variance.push(i as usize);
    }
    Ok(PackedHeader {
        n: n as usize,
        zero_variance,
    })
}

pub fn read_packed(r: &mut impl Read, total_len: u64) -> Result<CorrelationResult> {
    let header = read_packed_header(r, total_len)?;
    let mut packed = vec![0.0; packed_len(header.n)?];
    read_f64s(r, &mut packed)?;
    CorrelationResult::from_parts(header.n, packed, header.zero_variance)
}

pub fn decode_packed(bytes: &[u8]) -> Result<CorrelationResult> {
    read_packed(&mut &bytes[..], bytes.len() as u64)
}

pub fn load_packed(path: &Path) -> Result<CorrelationResult> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    read_packed(&mut BufReader::new(f), len)
}

/// Random access to a packed result file without loading it.
#[derive(Debug)]
pub struct PackedResultReader {
    file: File,
    header: PackedHeader,
}

impl PackedResultReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let header = read_packed_header(&mut BufReader::new(&file), len)?;
        Ok(PackedResultReader { file, header })
    }

    pub fn header(&self) -> &PackedHeader {
        &self.header
    }

    /// Correlation of rows `i` and `j`, in either order, with one seek.
    pub fn get(&mut self, i: usize, j: usize) -> Result<f64> {
        let n = self.header.n;
        if i >= n || j >= n {
            return Err(Error::domain(format!("pair ({i}, {j}) outside n={n}")));
        }
        let id =
            TriangleIndexer::new(n as u64)?.sym_id(Coord::new(i.min(j) as u64, i.max(j) as u64))?;
        self.file
            .seek(SeekFrom::Start(self.header.data_offset() + 8 * id.0))?;
        let mut b = [0u8; 8];
        self.file.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

pub fn query_pair(path: &Path, i: usize, j: usize) -> Result<f64> {
    PackedResultReader::open(path)?.get(i, j)
}

/// Writes a packed result file while tiles stream in, holding only the
/// current tile row (`t` matrix rows) in memory.
///
/// Tiles must arrive in identifier order starting at 0, which is the order
/// pipelines deliver them in; gaps and repeats are integrity errors.
#[derive(Debug)]
pub struct PackedStreamWriter<W: Write> {
    writer: W,
    geom: TileGeometry,
    next_tile: u64,
    strip_row0: usize,
    strip: Vec<f64>,
    row_offsets: Vec<usize>,
}

impl<W: Write> PackedStreamWriter<W> {
    pub fn new(mut writer: W, geom: TileGeometry, zero_variance: &[usize]) -> Result<Self> {
        write_result_header(&mut writer, geom.n(), zero_variance)?;
        Ok(PackedStreamWriter {
            writer,
            geom,
            next_tile: 0,
            strip_row0: 0,
            strip: Vec::new(),
            row_offsets: Vec::new(),
        })
    }

    fn start_strip(&mut self, row0: usize) {
        let n = self.geom.n();
        let rows = self.geom.t().min(n - row0);
        self.strip_row0 = row0;
        self.row_offsets.clear();
        let mut len = 0;
        for y in row0..row0 + rows {
            self.row_offsets.push(len);
            len += n - y;
        }
        self.strip.clear();
        self.strip.resize(len, 0.0);
    }

    pub fn push_block(&mut self, tile_id: JobId, values: &[f64]) -> Result<()> {
        if tile_id.0 != self.next_tile {
            return Err(Error::integrity(format!(
                "expected tile {} next, got {tile_id}",
                self.next_tile
            )));
        }
        if tile_id.0 >= self.geom.total_tiles() || values.len() != self.geom.tile_len() {
            return Err(Error::integrity(format!("malformed tile {tile_id}")));
        }
        let tc = self.geom.tile_coord(tile_id)?;
        if tc.x == tc.y {
            self.start_strip(tc.y as usize * self.geom.t());
        }
        for (offset, c) in self.geom.cells(tile_id)? {
            let (y, x) = (c.y as usize, c.x as usize);
            self.strip[self.row_offsets[y - self.strip_row0] + (x - y)] = values[offset];
        }
        if tc.x as usize == self.geom.m() - 1 {
            write_f64s(&mut self.writer, &self.strip)?;
        }
        self.next_tile += 1;
        Ok(())
    }

    pub fn tiles_written(&self) -> u64 {
        self.next_tile
    }

    /// Flushes and returns the writer; fails if any tile never arrived.
    pub fn finish(mut self) -> Result<W> {
        if self.next_tile != self.geom.total_tiles() {
            return Err(Error::integrity(format!(
                "missing tiles [{}, {})",
                self.next_tile,
                self.geom.total_tiles()
            )));
        }
        self.writer.flush()?;
        Ok(self.writer)
    }
}

impl<W: Write> ResultSink for PackedStreamWriter<W> {
    fn consume(&mut self, pass: &PassBuffer) -> Result<()> {
        for b in pass.blocks() {
            self.push_block(b.tile_id, b.values)?;
        }
        Ok(())
    }
}

/// Outcome of comparing a result with the brute-force oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub n: usize,
    pub max_abs_dev: f64,
    /// Pair with the largest deviation.
    pub worst_pair: (usize, usize),
    /// First pair in job order exceeding the tolerance: `(i, j, expected, actual)`.
    pub first_offending: Option<(usize, usize, f64, f64)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.first_offending.is_none()
    }
}

/// Compares `result` against the brute-force oracle without failing.
pub fn verify_report(d: &Dataset, result: &CorrelationResult) -> Result<VerifyReport> {
    if d.n() != result.n() {
        return Err(Error::Verification(format!(
            "result has n={} but dataset has n={}",
            result.n(),
            d.n()
        )));
    }
    let oracle = allpairs_naive(d)?;
    if oracle.zero_variance() != result.zero_variance() {
        return Err(Error::Verification(format!(
            "zero-variance rows differ: dataset {:?}, result {:?}",
            oracle.zero_variance(),
            result.zero_variance()
        )));
    }
    let idx = oracle.indexer();
    let mut report = VerifyReport {
        n: d.n(),
        max_abs_dev: 0.0,
        worst_pair: (0, 0),
        first_offending: None,
    };
    for (k, (&want, &got)) in oracle.packed().iter().zip(result.packed()).enumerate() {
        let dev = (want - got).abs();
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        if dev > report.max_abs_dev {
            let c = idx.sym_coord(JobId(k as u64))?;
            report.max_abs_dev = dev;
            report.worst_pair = (c.y as usize, c.x as usize);
        }
        if dev > VERIFY_TOLERANCE && report.first_offending.is_none() {
            let c = idx.sym_coord(JobId(k as u64))?;
            report.first_offending = Some((c.y as usize, c.x as usize, want, got));
        }
    }
    Ok(report)
}

/// Fails with a verification error naming the first pair off by more than
/// [`VERIFY_TOLERANCE`].
pub fn verify(d: &Dataset, result: &CorrelationResult) -> Result<VerifyReport> {
    let report = verify_report(d, result)?;
    if let Some((i, j, want, got)) = report.first_offending {
        return Err(Error::Verification(format!(
            "pair ({i}, {j}) is {got}, oracle gives {want} (max deviation {:e})",
            report.max_abs_dev
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{plan_passes, run_pipeline, run_to_memory, PipelineConfig};
    use crate::transform::normalize;

    #[test]
    fn tsv_labeled_example() {
        let d = parse_tsv(b"a\t1\t2\t3\nb\t3\t2\t1\n").unwrap();
        assert_eq!((d.n(), d.l()), (2, 3));
        assert_eq!(d.ids().unwrap(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.row(1), &[3.0, 2.0, 1.0]);
        let spaced = parse_tsv(b"a 1 2 3\r\nb 3 2 1\r\n\n").unwrap();
        assert_eq!(spaced.values(), d.values());
    }

    #[test]
    fn tsv_unlabeled() {
        let d = parse_tsv(b"1\t2.5\n-3e2\t4\n").unwrap();
        assert!(d.ids().is_none());
        assert_eq!(d.values(), &[1.0, 2.5, -300.0, 4.0]);
    }

    #[test]
    fn tsv_errors_locate_the_problem() {
        let e = parse_tsv(b"a\t1\t2\nb\t1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_tsv(b"1\t2\n3\tx\n").unwrap_err();
        assert!(
            matches!(
                e,
                Error::Parse {
                    line: 2,
                    column: 2,
                    ..
                }
            ),
            "{e}"
        );
        let e = parse_tsv(b"g\t1\tNaN\n").unwrap_err();
        assert!(
            matches!(
                e,
                Error::Parse {
                    line: 1,
                    column: 3,
                    ..
                }
            ),
            "{e}"
        );
        let e = parse_tsv(b"1\tinf\n").unwrap_err();
        assert!(
            matches!(
                e,
                Error::Parse {
                    line: 1,
                    column: 2,
                    ..
                }
            ),
            "{e}"
        );
        assert!(parse_tsv(b"1\t2,5\n").is_err());
        // a non-numeric first field marks a label column
        assert_eq!(
            parse_tsv(b"1,5\t2\t3\n").unwrap().ids().unwrap(),
            &["1,5".to_string()]
        );
        assert!(parse_tsv(b"").is_err());
        assert!(parse_tsv(b"label-only\n").is_err());
        assert!(parse_tsv(b"\xff\t1\n").is_err());
    }

    #[test]
    fn tsv_round_trip_keeps_every_digit() {
        let d = gen_synthetic(7, 5, 99).unwrap();
        let d = d
            .with_ids((0..7).map(|i| format!("gene{i}")).collect())
            .unwrap();
        let mut bytes = Vec::new();
        write_tsv(&mut bytes, &d).unwrap();
        assert_eq!(parse_tsv(&bytes).unwrap(), d);
    }

    #[test]
    fn matrix_round_trip_and_corruption() {
        let d = gen_synthetic(3, 4, 1).unwrap();
        let mut bytes = Vec::new();
        write_matrix(&mut bytes, &d).unwrap();
        assert_eq!(bytes.len(), 24 + 3 * 4 * 8);
        assert_eq!(decode_matrix(&bytes).unwrap(), d);
        let mut again = Vec::new();
        write_matrix(&mut again, &decode_matrix(&bytes).unwrap()).unwrap();
        assert_eq!(again, bytes);

        assert!(decode_matrix(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_matrix(&extra).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode_matrix(&bad_magic).is_err());
        let mut nan = bytes.clone();
        nan[24..32].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_matrix(&nan).is_err());
        let mut huge = bytes.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_matrix(&huge).is_err());
    }

    #[test]
    fn gen_is_deterministic_and_in_range() {
        let a = gen_synthetic(4, 6, 42).unwrap();
        assert_eq!(a, gen_synthetic(4, 6, 42).unwrap());
        assert_ne!(a, gen_synthetic(4, 6, 43).unwrap());
        let tiny = gen_synthetic(1, 2, 0).unwrap();
        assert_eq!(tiny.values().len(), 2);
        assert!(a
            .values()
            .iter()
            .chain(tiny.values())
            .all(|v| (0.0..1.0).contains(v)));
        // SplitMix64 reference output for seed 0: first word 0xE220A8397B1DCDAF
        assert_eq!(
            tiny.values()[0],
            (0xE220A8397B1DCDAFu64 >> 11) as f64 / (1u64 << 53) as f64
        );
    }

    #[test]
    fn packed_round_trip_and_validation() {
        let r = CorrelationResult::from_parts(3, vec![1.0, 0.5, -0.25, 0.0, 0.0, 1.0], vec![1])
            .unwrap();
        let mut bytes = Vec::new();
        write_packed(&mut bytes, &r).unwrap();
        assert_eq!(bytes.len(), 24 + 8 + 6 * 8);
        assert_eq!(decode_packed(&bytes).unwrap(), r);
        assert!(decode_packed(&bytes[..bytes.len() - 8]).is_err());
        let mut unsorted = Vec::new();
        write_result_header(&mut unsorted, 3, &[2, 1]).unwrap();
        write_f64s(&mut unsorted, &[0.0; 6]).unwrap();
        assert!(decode_packed(&unsorted).is_err());
    }

    #[test]
    fn query_pair_reads_single_entries() {
        let d = gen_synthetic(32, 9, 5).unwrap();
        let u = normalize(&d).unwrap();
        let g = TileGeometry::new(32, 4).unwrap();
        let r = run_to_memory(&u, &g, 3, &PipelineConfig::new(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.lpcr");
        save_packed(&path, &r).unwrap();
        let mut reader = PackedResultReader::open(&path).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(
                    reader.get(i, j).unwrap().to_bits(),
                    r.get(i, j).unwrap().to_bits()
                );
            }
        }
        assert!((query_pair(&path, 4, 4).unwrap() - 1.0).abs() <= 1e-12);
        assert!(query_pair(&path, 32, 0).is_err());
    }

    #[test]
    fn stream_writer_matches_in_memory_bytes() {
        for (n, t, cap) in [(1, 4, 1), (13, 4, 3), (16, 4, 100), (10, 3, 1), (7, 1, 5)] {
            let mut d = gen_synthetic(n, 6, n as u64).unwrap().values().to_vec();
            d[..6].fill(0.5);
            let d = Dataset::new(n, 6, d).unwrap();
            let u = normalize(&d).unwrap();
            let g = TileGeometry::new(n, t).unwrap();
            let mem = run_to_memory(&u, &g, cap, &PipelineConfig::new(1)).unwrap();
            let mut expected = Vec::new();
            write_packed(&mut expected, &mem).unwrap();

            let mut sink = PackedStreamWriter::new(Vec::new(), g, u.zero_variance()).unwrap();
            let plan = plan_passes(0, g.total_tiles(), cap).unwrap();
            run_pipeline(&u, &g, &plan, &mut sink, &PipelineConfig::new(2)).unwrap();
            assert_eq!(sink.finish().unwrap(), expected, "n={n} t={t}");
        }
    }

    #[test]
    fn stream_writer_rejects_gaps() {
        let g = TileGeometry::new(8, 2).unwrap();
        let mut w = PackedStreamWriter::new(Vec::new(), g, &[]).unwrap();
        w.push_block(JobId(0), &[0.0; 4]).unwrap();
        assert!(w.push_block(JobId(2), &[0.0; 4]).is_err());
        let err = w.finish().unwrap_err();
        assert!(err.to_string().contains("missing tiles [1, 10)"), "{err}");
    }

    #[test]
    fn verify_detects_a_corrupted_entry() {
        let d = gen_synthetic(20, 12, 3).unwrap();
        let u = normalize(&d).unwrap();
        let g = TileGeometry::new(20, 4).unwrap();
        let good = run_to_memory(&u, &g, 4, &PipelineConfig::new(1)).unwrap();
        assert!(verify(&d, &good).unwrap().max_abs_dev <= VERIFY_TOLERANCE);

        let mut packed = good.clone().into_packed();
        let k = g.job_indexer().sym_id(Coord::new(3, 11)).unwrap().0 as usize;
        packed[k] += 1e-6;
        let bad = CorrelationResult::from_parts(20, packed, vec![]).unwrap();
        let report = verify_report(&d, &bad).unwrap();
        assert_eq!(report.first_offending.unwrap().0, 3);
        assert_eq!(report.first_offending.unwrap().1, 11);
        assert_eq!(report.worst_pair, (3, 11));
        let err = verify(&d, &bad).unwrap_err();
        assert!(err.to_string().contains("pair (3, 11)"), "{err}");

        let one = gen_synthetic(1, 3, 0).unwrap();
        let r1 = run_to_memory(
            &normalize(&one).unwrap(),
            &TileGeometry::new(1, 4).unwrap(),
            1,
            &PipelineConfig::new(1),
        )
        .unwrap();
        assert!(verify(&one, &r1).unwrap().passed());
    }
}
