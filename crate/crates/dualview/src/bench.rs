//! Batch-1 latency benchmark with pre-cached embeddings: warmup, per-query
//! wall-clock timing on a single thread, nearest-rank P95, and
//! inverse-mean QPS. An optional multi-stream mode reports aggregate
//! throughput separately.

use std::fmt;
use std::time::Instant;

use serde::Serialize;

use dualview_core::data::CandidateSet;
use dualview_core::model::{DualViewModel, ModelError};

use crate::report::fingerprint;

#[derive(Debug)]
pub enum BenchError {
    EmptyDataset,
    /// fewer than 20 measured iterations is statistically meaningless
    TooFewIterations { iters: usize },
    Model(ModelError),
}

impl fmt::Display for BenchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchError::EmptyDataset => write!(f, "benchmark needs a nonempty dataset"),
            BenchError::TooFewIterations { iters } => {
                write!(f, "refusing {iters} iterations; need at least 20")
            }
            BenchError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for BenchError {}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// single-stream inverse mean latency
    pub qps: f64,
    pub n_warmup: usize,
    pub n_measured: usize,
    /// largest candidate count in the benchmarked dataset
    pub candidate_size: usize,
    pub config_fingerprint: String,
}

/// Aggregate throughput over `threads` independent streams sharing one
/// frozen model; latency fields describe the union of per-query samples.
#[derive(Debug, Clone, Serialize)]
pub struct MultiStreamReport {
    pub threads: usize,
    pub aggregate_qps: f64,
    pub per_stream: LatencyReport,
}

/// Nearest-rank percentile on an unsorted sample (sorted internally).
pub fn nearest_rank(samples: &mut [f64], percentile: f64) -> f64 {
    assert!(!samples.is_empty() && (0.0..=100.0).contains(&percentile));
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((percentile / 100.0) * samples.len() as f64).ceil() as usize;
    samples[rank.max(1) - 1]
}

fn build_report(
    mut samples: Vec<f64>,
    warmup: usize,
    candidate_size: usize,
    fp: String,
) -> LatencyReport {
    let n = samples.len();
    let mean_ms = samples.iter().sum::<f64>() / n as f64;
    let p95_ms = nearest_rank(&mut samples, 95.0);
    LatencyReport {
        mean_ms,
        p95_ms,
        min_ms: samples[0],
        max_ms: samples[n - 1],
        qps: 1000.0 / mean_ms,
        n_warmup: warmup,
        n_measured: n,
        candidate_size,
        config_fingerprint: fp,
    }
}

fn time_queries(
    model: &DualViewModel<f32>,
    dataset: &[CandidateSet],
    warmup: usize,
    iters: usize,
) -> Result<Vec<f64>, BenchError> {
    // warmup: same path, timings discarded
    for i in 0..warmup {
        let set = &dataset[i % dataset.len()];
        model.rerank(set).map_err(BenchError::Model)?;
    }
    let mut samples = Vec::with_capacity(iters);
    for i in 0..iters {
        let set = &dataset[i % dataset.len()];
        let t0 = Instant::now();
        let scored = model.rerank(set).map_err(BenchError::Model)?;
        let elapsed = t0.elapsed();
        std::hint::black_box(&scored);
        samples.push(elapsed.as_secs_f64() * 1000.0);
    }
    Ok(samples)
}

/// Times `iters` single-query reranks after `warmup` discarded ones,
/// cycling over the dataset. Model construction and data loading happen
/// before this call; only the rerank itself is timed.
pub fn bench_rerank(
    model: &DualViewModel<f32>,
    dataset: &[CandidateSet],
    warmup: usize,
    iters: usize,
) -> Result<LatencyReport, BenchError> {
    if dataset.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    if iters < 20 {
        return Err(BenchError::TooFewIterations { iters });
    }
    let samples = time_queries(model, dataset, warmup, iters)?;
    let candidate_size = dataset.iter().map(|s| s.n()).max().unwrap_or(0);
    Ok(build_report(
        samples,
        warmup,
        candidate_size,
        fingerprint(model.config()),
    ))
}

/// Multi-stream throughput: `threads` workers each run the single-stream
/// loop concurrently against the shared frozen model. Aggregate QPS is
/// total completed queries over wall time.
pub fn bench_rerank_threads(
    model: &DualViewModel<f32>,
    dataset: &[CandidateSet],
    warmup: usize,
    iters: usize,
    threads: usize,
) -> Result<MultiStreamReport, BenchError> {
    if dataset.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    if iters < 20 {
        return Err(BenchError::TooFewIterations { iters });
    }
    let threads = threads.max(1);
    let wall = Instant::now();
    let results: Vec<Result<Vec<f64>, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|_| scope.spawn(|| time_queries(model, dataset, warmup, iters)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("bench worker panicked")).collect()
    });
    let wall_s = wall.elapsed().as_secs_f64();
    let mut all = Vec::with_capacity(threads * iters);
    for r in results {
        all.extend(r?);
    }
    let candidate_size = dataset.iter().map(|s| s.n()).max().unwrap_or(0);
    let per_stream = build_report(all, warmup, candidate_size, fingerprint(model.config()));
    Ok(MultiStreamReport {
        threads,
        aggregate_qps: (threads * iters) as f64 / wall_s,
        per_stream,
    })
}
