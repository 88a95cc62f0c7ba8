//! Core algorithms for compressing text-serialized electronic health records.
//!
//! Everything in this crate is deterministic and allocation-only: no IO, no
//! clocks, no global state. The companion `ehrcomp` crate carries file
//! formats and the command-line pipelines.
//!
//! Modules:
//! - [`corpus`]: event/patient records, a seeded synthetic generator and
//!   cohort splitting.
//! - [`serializer`]: cell textualization, subword tokenization, time-gap
//!   quantization and hierarchical/flattened token streams.
//! - [`planner`]: CNN and Transformer encoder layer schedules, decoder
//!   mirroring, compression rates and the latent search grid.
//! - [`analyzer`]: shape propagation, parameter and FLOP accounting.
//! - [`vq`]: fiber-piece vector quantization with EMA codebook updates.
//! - [`audit`]: triple-set construction and synthetic event scoring.
//! - [`privacy`]: Hamming-distance membership inference.
//! - [`metrics`]: token accuracy and AUROC.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analyzer;
pub mod audit;
pub mod corpus;
pub mod metrics;
pub mod planner;
pub mod privacy;
pub mod serializer;
pub mod vq;

mod decimal;

pub use decimal::is_decimal;
