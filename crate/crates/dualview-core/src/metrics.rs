//! Ranking quality metrics over top-k cutoffs, macro-averaged across
//! queries.

use alloc::vec::Vec;

// trait-provided float intrinsics for no_std builds; unused whenever std
// is in the crate graph and its inherent methods shadow these
#[allow(unused_imports)]
use num_traits::Float as _;

/// Per-query metrics at a fixed cutoff `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMetrics {
    pub recall: f64,
    pub full_hit: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub precision: f64,
}

/// Macro-averaged metrics plus bookkeeping about skipped queries.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub full_hit: f64,
    pub ndcg: f64,
    pub mrr: f64,
    pub precision: f64,
    /// queries that contributed to the averages
    pub evaluated: usize,
    /// queries with no gold documents, excluded from the averages
    pub skipped_no_gold: usize,
    /// retained queries with more golds than `k` (full-hit necessarily 0)
    pub gold_over_k: usize,
}

fn dcg_at(gains: impl Iterator<Item = bool>) -> f64 {
    // rank r (1-based) contributes 1/log2(r+1) when the document is gold
    gains
        .enumerate()
        .filter(|(_, gold)| *gold)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// Metrics for one query given the ranking (candidate indices, best first)
/// and per-candidate binary labels. Returns `None` when the query has no
/// gold documents.
pub fn query_metrics(ranking: &[usize], labels: &[u8], k: usize) -> Option<QueryMetrics> {
    assert_eq!(ranking.len(), labels.len(), "ranking/label length mismatch");
    assert!(k >= 1, "cutoff must be at least 1");
    let total_gold = labels.iter().filter(|&&l| l != 0).count();
    if total_gold == 0 {
        return None;
    }
    let cut = k.min(ranking.len());
    let top_gold = |i: usize| labels[ranking[i]] != 0;

    let hits = (0..cut).filter(|&i| top_gold(i)).count();
    let recall = hits as f64 / total_gold as f64;
    let full_hit = f64::from(hits == total_gold.min(cut) && total_gold <= cut);
    let precision = hits as f64 / cut as f64;

    // truncated: a first gold beyond the cutoff contributes nothing
    let mrr = (0..cut)
        .find(|&i| top_gold(i))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64);

    let dcg = dcg_at((0..cut).map(top_gold));
    let ideal = dcg_at((0..cut).map(|i| i < total_gold));
    let ndcg = if ideal > 0.0 { dcg / ideal } else { 0.0 };

    Some(QueryMetrics {
        recall,
        full_hit,
        ndcg,
        mrr,
        precision,
    })
}

/// Macro-averages per-query metrics; queries without gold documents are
/// counted in `skipped_no_gold` and excluded.
pub fn evaluate<'a>(
    per_query: impl Iterator<Item = (&'a [usize], &'a [u8])>,
    k: usize,
) -> MetricsReport {
    let mut report = MetricsReport {
        k,
        ..Default::default()
    };
    let mut sums = QueryMetrics {
        recall: 0.0,
        full_hit: 0.0,
        ndcg: 0.0,
        mrr: 0.0,
        precision: 0.0,
    };
    for (ranking, labels) in per_query {
        if labels.iter().filter(|&&l| l != 0).count() > k {
            report.gold_over_k += 1;
        }
        match query_metrics(ranking, labels, k) {
            Some(m) => {
                sums.recall += m.recall;
                sums.full_hit += m.full_hit;
                sums.ndcg += m.ndcg;
                sums.mrr += m.mrr;
                sums.precision += m.precision;
                report.evaluated += 1;
            }
            None => report.skipped_no_gold += 1,
        }
    }
    if report.evaluated > 0 {
        let n = report.evaluated as f64;
        report.recall = sums.recall / n;
        report.full_hit = sums.full_hit / n;
        report.ndcg = sums.ndcg / n;
        report.mrr = sums.mrr / n;
        report.precision = sums.precision / n;
    }
    report
}

/// Collects `(ranking, labels)` pairs for [`evaluate`] without borrowing
/// headaches at call sites.
pub fn evaluate_pairs(pairs: &[(Vec<usize>, Vec<u8>)], k: usize) -> MetricsReport {
    evaluate(
        pairs
            .iter()
            .map(|(r, l)| (r.as_slice(), l.as_slice())),
        k,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_ranking_scores_one_everywhere() {
        // golds at ranks 1 and 2 of 6, k=4
        let m = query_metrics(&[0, 1, 2, 3, 4, 5], &[1, 1, 0, 0, 0, 0], 4).unwrap();
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.full_hit, 1.0);
        assert_eq!(m.ndcg, 1.0);
        assert_eq!(m.mrr, 1.0);
        assert_eq!(m.precision, 0.5);
    }

    #[test]
    fn one_of_two_golds_in_window() {
        // golds are candidates 0 and 5; ranking puts 5 at rank 6
        let m = query_metrics(&[0, 1, 2, 3, 4, 5], &[1, 0, 0, 0, 0, 1], 4).unwrap();
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.full_hit, 0.0);
        assert_eq!(m.precision, 0.25);
        assert_eq!(m.mrr, 1.0);
        // dcg = 1/log2(2) = 1; ideal = 1 + 1/log2(3)
        let ideal = 1.0 + 1.0 / 3f64.log2();
        assert!((m.ndcg - 1.0 / ideal).abs() < 1e-12);
    }

    #[test]
    fn first_gold_at_rank_three() {
        let m = query_metrics(&[2, 3, 0, 1, 4, 5], &[1, 0, 0, 0, 0, 0], 4).unwrap();
        assert!((m.mrr - 1.0 / 3.0).abs() < 1e-12);
        // gold at rank 3: dcg = 1/log2(4) = 0.5, ideal = 1
        assert!((m.ndcg - 0.5).abs() < 1e-12);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.full_hit, 1.0);
    }

    #[test]
    fn gold_outside_window_scores_zero_mrr() {
        let m = query_metrics(&[1, 2, 3, 4, 0, 5], &[1, 0, 0, 0, 0, 0], 4).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.ndcg, 0.0);
        assert_eq!(m.mrr, 0.0);
    }

    #[test]
    fn no_gold_query_returns_none() {
        assert!(query_metrics(&[0, 1, 2], &[0, 0, 0], 4).is_none());
    }

    #[test]
    fn more_golds_than_cutoff_cannot_full_hit() {
        // 5 golds, k=4: even a perfect window misses one
        let m = query_metrics(&[0, 1, 2, 3, 4, 5], &[1, 1, 1, 1, 1, 0], 4).unwrap();
        assert_eq!(m.full_hit, 0.0);
        assert_eq!(m.recall, 0.8);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.ndcg, 1.0);
    }

    #[test]
    fn cutoff_longer_than_list_is_clamped() {
        let m = query_metrics(&[1, 0], &[1, 0], 4).unwrap();
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.precision, 0.5);
        assert!((m.mrr - 0.5).abs() < 1e-12);
    }

    #[test]
    fn macro_average_and_skip_counting() {
        let pairs = vec![
            (vec![0, 1, 2, 3], vec![1u8, 0, 0, 0]), // perfect
            (vec![3, 2, 1, 0], vec![1, 0, 0, 0]),   // gold at rank 4
            (vec![0, 1, 2, 3], vec![0, 0, 0, 0]),   // no gold, skipped
        ];
        let r = evaluate_pairs(&pairs, 4);
        assert_eq!(r.evaluated, 2);
        assert_eq!(r.skipped_no_gold, 1);
        assert_eq!(r.recall, 1.0);
        assert!((r.mrr - (1.0 + 0.25) / 2.0).abs() < 1e-12);
        let ndcg2 = 1.0 / 5f64.log2();
        assert!((r.ndcg - (1.0 + ndcg2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_reports_zero_evaluated() {
        let r = evaluate_pairs(&[], 4);
        assert_eq!(r.evaluated, 0);
        assert_eq!(r.recall, 0.0);
    }
}
