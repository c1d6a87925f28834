//! Report rendering: aligned text tables and schema-stable JSON, each
//! stamped with a fingerprint of the model configuration.

use serde::Serialize;

use dualview_core::config::ModelConfig;
use dualview_core::metrics::MetricsReport;
use dualview_core::model::ScoredCandidates;

/// FNV-1a hash of the serialized configuration; stable across runs of the
/// same build and config.
pub fn fingerprint(config: &ModelConfig) -> String {
    let text = serde_json::to_string(config).expect("config serializes");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsJson {
    pub k: usize,
    pub recall_at_k: f64,
    pub full_hit_at_k: f64,
    pub ndcg_at_k: f64,
    pub mrr_at_k: f64,
    pub precision_at_k: f64,
    pub n_queries: usize,
    pub skipped_no_gold: usize,
    pub gold_over_k: usize,
    pub config_fingerprint: String,
}

impl MetricsJson {
    pub fn new(m: &MetricsReport, config: &ModelConfig) -> Self {
        MetricsJson {
            k: m.k,
            recall_at_k: m.recall,
            full_hit_at_k: m.full_hit,
            ndcg_at_k: m.ndcg,
            mrr_at_k: m.mrr,
            precision_at_k: m.precision,
            n_queries: m.evaluated,
            skipped_no_gold: m.skipped_no_gold,
            gold_over_k: m.gold_over_k,
            config_fingerprint: fingerprint(config),
        }
    }
}

pub fn metrics_text(label: &str, m: &MetricsReport, config: &ModelConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("{label} (k={}, queries={}", m.k, m.evaluated));
    if m.skipped_no_gold > 0 {
        s.push_str(&format!(", skipped {} without gold", m.skipped_no_gold));
    }
    if m.gold_over_k > 0 {
        s.push_str(&format!(", {} with more golds than k", m.gold_over_k));
    }
    s.push_str(&format!(", config {})\n", fingerprint(config)));
    s.push_str(&format!(
        "  {:<12} {:<12} {:<12} {:<12} {:<12}\n",
        "recall", "full_hit", "ndcg", "mrr", "precision"
    ));
    s.push_str(&format!(
        "  {:<12.4} {:<12.4} {:<12.4} {:<12.4} {:<12.4}\n",
        m.recall, m.full_hit, m.ndcg, m.mrr, m.precision
    ));
    s
}

/// Table-shaped comparison: one labeled metrics row per model variant.
pub fn comparison_text(rows: &[(String, MetricsReport)], config: &ModelConfig) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(8).max(8);
    let mut s = format!(
        "{:<width$} {:>9} {:>9} {:>9} {:>9} {:>9}   (k={}, config {})\n",
        "variant",
        "recall",
        "full_hit",
        "ndcg",
        "mrr",
        "precision",
        rows.first().map_or(0, |(_, m)| m.k),
        fingerprint(config),
    );
    for (label, m) in rows {
        s.push_str(&format!(
            "{label:<width$} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
            m.recall, m.full_hit, m.ndcg, m.mrr, m.precision
        ));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonJson {
    pub k: usize,
    pub config_fingerprint: String,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub variant: String,
    #[serde(flatten)]
    pub metrics: MetricsJson,
}

impl ComparisonJson {
    pub fn new(rows: &[(String, MetricsReport)], config: &ModelConfig) -> Self {
        ComparisonJson {
            k: rows.first().map_or(0, |(_, m)| m.k),
            config_fingerprint: fingerprint(config),
            rows: rows
                .iter()
                .map(|(label, m)| ComparisonRow {
                    variant: label.clone(),
                    metrics: MetricsJson::new(m, config),
                })
                .collect(),
        }
    }
}

/// Per-document inspection surface for one reranked query: every score and
/// the gate weight, in rank order.
pub fn rerank_text(query_id: &str, scored: &ScoredCandidates) -> String {
    let mut s = format!(
        "query {query_id}\n  {:<4} {:<16} {:>10} {:>10} {:>10} {:>8}\n",
        "rank", "doc_id", "fused", "local", "global", "gate"
    );
    for (rank, &idx) in scored.ranking.iter().enumerate() {
        let d = &scored.per_doc[idx];
        s.push_str(&format!(
            "  {:<4} {:<16} {:>10.4} {:>10.4} {:>10.4} {:>8.4}\n",
            rank + 1,
            d.doc_id,
            d.fused,
            d.local,
            d.global,
            d.gate_weight
        ));
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct RerankJson {
    pub query_id: String,
    pub ranking: Vec<RerankDoc>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RerankDoc {
    pub rank: usize,
    pub doc_id: String,
    pub fused: f64,
    pub local: f64,
    pub global: f64,
    pub gate_weight: f64,
}

impl RerankJson {
    pub fn new(query_id: &str, scored: &ScoredCandidates) -> Self {
        RerankJson {
            query_id: String::from(query_id),
            ranking: scored
                .ranking
                .iter()
                .enumerate()
                .map(|(rank, &idx)| {
                    let d = &scored.per_doc[idx];
                    RerankDoc {
                        rank: rank + 1,
                        doc_id: d.doc_id.clone(),
                        fused: d.fused,
                        local: d.local,
                        global: d.global,
                        gate_weight: d.gate_weight,
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_is_stable_and_config_sensitive() {
        let a = ModelConfig::tiny();
        assert_eq!(fingerprint(&a), fingerprint(&a));
        let mut b = a;
        b.gate_hidden += 1;
        assert_ne!(fingerprint(&a), fingerprint(&b));
    }

    #[test]
    fn metrics_text_contains_all_five_metrics() {
        let m = MetricsReport {
            k: 4,
            recall: 0.5,
            full_hit: 0.25,
            ndcg: 0.75,
            mrr: 1.0,
            precision: 0.125,
            evaluated: 8,
            skipped_no_gold: 1,
            gold_over_k: 0,
        };
        let t = metrics_text("eval", &m, &ModelConfig::tiny());
        for needle in ["recall", "full_hit", "ndcg", "mrr", "precision", "0.5000", "0.2500"] {
            assert!(t.contains(needle), "missing {needle} in:\n{t}");
        }
    }

    #[test]
    fn comparison_json_schema_is_stable() {
        let m = MetricsReport {
            k: 4,
            evaluated: 2,
            ..Default::default()
        };
        let rows = vec![(String::from("full"), m), (String::from("no_global"), m)];
        let j = serde_json::to_value(ComparisonJson::new(&rows, &ModelConfig::tiny())).unwrap();
        assert_eq!(j["rows"][0]["variant"], "full");
        assert_eq!(j["rows"][1]["variant"], "no_global");
        assert!(j["rows"][0]["recall_at_k"].is_number());
        assert!(j["config_fingerprint"].is_string());
    }
}
