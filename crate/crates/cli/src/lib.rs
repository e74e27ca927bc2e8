//! Command-line front end: configuration, ingestion and the subcommands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod fit;
pub mod ingest;
pub mod output;
pub mod replicate;
pub mod simulate;
