//! Spatial-structure-preserving token merging for vision transformer feature maps.
//!
//! A [`TokenGrid`] is reduced in two phases: every row loses `r_w` tokens,
//! then every column loses `r_h`, leaving a regular `(H - r_h) x (W - r_w)`
//! grid that window attention and 2D positional schemes can consume without
//! changes. Matching runs on the path graph of each row/column with
//! alternating source/destination roles, so no more than three tokens ever
//! collapse in one phase. Merged tokens keep, per channel, the member value
//! with the largest magnitude.
//!
//! ```
//! use cubist_merge::{cubist_reduce, Rate, ReductionSpec, TokenGrid};
//!
//! let grid = TokenGrid::filled(14, 14, &[1.0, -2.0, 0.5]).unwrap();
//! let reduced = cubist_reduce(&grid, &ReductionSpec::new(Rate::Count(2), Rate::Count(2))).unwrap();
//! assert_eq!((reduced.grid.height(), reduced.grid.width()), (12, 12));
//! ```

pub mod bench;
pub mod config;
pub mod error;
pub mod format;
pub mod grid;
pub mod matching;
pub mod merge;
pub mod merge_map;
pub mod pipeline;
pub mod synth;
pub mod vit;

pub use config::{resolve_rates, Rate, ReductionSpec, Representation, Strategy};
pub use error::{Error, Result};
pub use format::{read_grid, write_grid};
pub use grid::{window_partition, window_unpartition, TokenGrid, TokenSizeGrid};
pub use merge_map::MergeMap;
pub use pipeline::{cubist_reduce, unmerge, ReducedGrid};
