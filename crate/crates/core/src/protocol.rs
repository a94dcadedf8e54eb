//! Framed coordinator/worker protocol over a byte stream.
//!
//! Each frame is `type: u8 | payload_len: u32 | payload`, all integers
//! little-endian:
//!
//! | type | name   | payload |
//! |------|--------|---------|
//! | 0x01 | ASSIGN | `j_start u64, j_end u64, t u32, capacity u64, path_len u16, path utf-8` |
//! | 0x02 | BLOCKS | `first_tile u64, count u32, count·t² f64` |
//! | 0x03 | DONE   | `tiles_done u64` |
//! | 0x7F | ERROR  | utf-8 message |
//!
//! The worker answers an ASSIGN with one BLOCKS frame per pass, then DONE.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::io::write_f64s;

pub const ASSIGN: u8 = 0x01;
pub const BLOCKS: u8 = 0x02;
pub const DONE: u8 = 0x03;
pub const ERROR: u8 = 0x7F;

/// Largest payload either side accepts.
pub const MAX_PAYLOAD: usize = 1 << 30;

const FRAME_HEADER_LEN: usize = 5;
const BLOCKS_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assign {
    pub j_start: u64,
    pub j_end: u64,
    pub t: u32,
    pub capacity: u64,
    pub dataset_path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Assign(Assign),
    Blocks {
        first_tile: u64,
        count: u32,
        values: Vec<f64>,
    },
    Done {
        tiles_done: u64,
    },
    Error(String),
}

impl Frame {
    pub fn kind(&self) -> u8 {
        match self {
            Frame::Assign(_) => ASSIGN,
            Frame::Blocks { .. } => BLOCKS,
            Frame::Done { .. } => DONE,
            Frame::Error(_) => ERROR,
        }
    }
}

/// Payload bytes of a BLOCKS frame carrying `floats` values.
pub fn blocks_payload_len(floats: usize) -> Option<usize> {
    floats
        .checked_mul(8)?
        .checked_add(BLOCKS_HEADER_LEN)
        .filter(|&len| len <= MAX_PAYLOAD)
}

fn write_header(w: &mut impl Write, kind: u8, len: usize) -> Result<()> {
    if len > MAX_PAYLOAD {
        return Err(Error::protocol(format!(
            "payload of {len} bytes exceeds limit"
        )));
    }
    w.write_all(&[kind])?;
    w.write_all(&(len as u32).to_le_bytes())?;
    Ok(())
}

/// Writes a BLOCKS frame straight from a tile buffer.
pub fn write_blocks(w: &mut impl Write, first_tile: u64, count: u32, values: &[f64]) -> Result<()> {
    let len = blocks_payload_len(values.len())
        .ok_or_else(|| Error::protocol("BLOCKS frame too large"))?;
    write_header(w, BLOCKS, len)?;
    w.write_all(&first_tile.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    write_f64s(w, values)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<()> {
    match frame {
        Frame::Assign(a) => {
            let path = a.dataset_path.as_bytes();
            let path_len = u16::try_from(path.len())
                .map_err(|_| Error::protocol("dataset path longer than 65535 bytes"))?;
            write_header(w, ASSIGN, 30 + path.len())?;
            w.write_all(&a.j_start.to_le_bytes())?;
            w.write_all(&a.j_end.to_le_bytes())?;
            w.write_all(&a.t.to_le_bytes())?;
            w.write_all(&a.capacity.to_le_bytes())?;
            w.write_all(&path_len.to_le_bytes())?;
            w.write_all(path)?;
        }
        Frame::Blocks {
            first_tile,
            count,
            values,
        } => write_blocks(w, *first_tile, *count, values)?,
        Frame::Done { tiles_done } => {
            write_header(w, DONE, 8)?;
            w.write_all(&tiles_done.to_le_bytes())?;
        }
        Frame::Error(msg) => {
            let bytes = msg.as_bytes();
            let bytes = &bytes[..bytes.len().min(MAX_PAYLOAD)];
            write_header(w, ERROR, bytes.len())?;
            w.write_all(bytes)?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() < k {
            return Err(Error::protocol(format!("truncated {what}")));
        }
        let (head, rest) = self.buf.split_at(k);
        self.buf = rest;
        Ok(head)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn finish(&self, what: &str) -> Result<()> {
        if !self.buf.is_empty() {
            return Err(Error::protocol(format!(
                "{} trailing bytes in {what}",
                self.buf.len()
            )));
        }
        Ok(())
    }
}

/// Decodes the payload of a frame of type `kind`.
pub fn decode_payload(kind: u8, payload: &[u8]) -> Result<Frame> {
    let mut c = Cursor { buf: payload };
    let frame = match kind {
        ASSIGN => {
            let j_start = c.u64("ASSIGN")?;
            let j_end = c.u64("ASSIGN")?;
            let t = c.u32("ASSIGN")?;
            let capacity = c.u64("ASSIGN")?;
            let path_len = c.u16("ASSIGN")? as usize;
            let path = c.take(path_len, "ASSIGN path")?;
            let dataset_path = std::str::from_utf8(path)
                .map_err(|_| Error::protocol("ASSIGN path is not UTF-8"))?
                .to_string();
            c.finish("ASSIGN")?;
            Frame::Assign(Assign {
                j_start,
                j_end,
                t,
                capacity,
                dataset_path,
            })
        }
        BLOCKS => {
            let first_tile = c.u64("BLOCKS")?;
            let count = c.u32("BLOCKS")?;
            let raw = c.buf;
            if !raw.len().is_multiple_of(8) {
                return Err(Error::protocol("BLOCKS payload is not whole f64 values"));
            }
            let floats = raw.len() / 8;
            if (count == 0) != (floats == 0)
                || (count > 0 && !floats.is_multiple_of(count as usize))
            {
                return Err(Error::protocol(format!(
                    "BLOCKS frame with {count} tiles carries {floats} values"
                )));
            }
            if first_tile.checked_add(count as u64).is_none() {
                return Err(Error::protocol("BLOCKS tile range overflows"));
            }
            let values = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Frame::Blocks {
                first_tile,
                count,
                values,
            }
        }
        DONE => {
            let tiles_done = c.u64("DONE")?;
            c.finish("DONE")?;
            Frame::Done { tiles_done }
        }
        ERROR => Frame::Error(String::from_utf8_lossy(payload).into_owned()),
        other => return Err(Error::protocol(format!("unknown frame type {other:#04x}"))),
    };
    Ok(frame)
}

/// Decodes one frame from the front of `bytes`, returning it with the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize)> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(Error::protocol("truncated frame header"));
    }
    let kind = bytes[0];
    let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::protocol(format!(
            "payload of {len} bytes exceeds limit"
        )));
    }
    let payload = bytes
        .get(FRAME_HEADER_LEN..FRAME_HEADER_LEN + len)
        .ok_or_else(|| Error::protocol("truncated frame payload"))?;
    Ok((decode_payload(kind, payload)?, FRAME_HEADER_LEN + len))
}

/// Reads the next frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < FRAME_HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::protocol("truncated frame header")),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let kind = header[0];
    let len = u32::from_le_bytes(header[1..5].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::protocol(format!(
            "payload of {len} bytes exceeds limit"
        )));
    }
    if !matches!(kind, ASSIGN | BLOCKS | DONE | ERROR) {
        return Err(Error::protocol(format!("unknown frame type {kind:#04x}")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::protocol("truncated frame payload")
        } else {
            e.into()
        }
    })?;
    decode_payload(kind, &payload).map(Some)
}
