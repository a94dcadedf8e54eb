//! Bounded-memory all-pairs Pearson correlation.
//!
//! Rows are normalized once so each correlation is a dot product, the upper
//! triangle of the job matrix is cut into `t × t` tiles numbered by a closed
//! form bijection, and contiguous tile ranges are computed in
//! capacity-bounded, double-buffered passes, optionally split across
//! workers. Results are stored as a packed upper triangle in job order.

pub mod buffer;
pub mod distributed;
pub mod engine;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod protocol;
pub mod reduce;
pub mod result;
pub mod tile;
pub mod transform;
pub mod triangle;

pub use buffer::{BufferMeter, PassBuffer, TileBlock, TileBlockRef};
pub use error::{Error, Result};
pub use result::CorrelationResult;
pub use tile::TileGeometry;
pub use transform::{Dataset, NormalizedDataset};
pub use triangle::{Coord, JobId, TriangleIndexer};
