//! Batch front end for the strataflow library: configuration parsing and the
//! check / laminar / bifurcate / continue / verify / export pipeline.

pub mod commands;
pub mod config;
