//! IO-side of the dual-view reranker: checkpoint and dataset file formats,
//! the latency benchmark, and report rendering. The CLI binary is a thin
//! layer over this crate.

pub mod bench;
pub mod checkpoint;
pub mod jsonl;
pub mod report;
