//! Candidate sets, synthetic generators, and hard-negative mining.
//!
//! Embeddings are stored unnormalized `f32`; cosine operations normalize on
//! the fly. The two synthetic modes stand in for the real benchmarks:
//! `planted_similarity` is solvable by per-document similarity alone, while
//! `complementary_pair` plants a two-document signal whose golds are each
//! only half-aligned with the query while redundant distractors outrank
//! them under raw cosine.

// trait-provided float intrinsics for no_std builds; unused whenever std
// is in the crate graph and its inherent methods shadow these
#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::matrix::cosine;
use crate::rng::{normalize, Rng};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Candidate {
    pub doc_id: String,
    pub embedding: Vec<f32>,
    pub label: u8,
}

/// One reranking instance: a query plus its fixed candidate pool.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct CandidateSet {
    pub query_id: String,
    pub query_embedding: Vec<f32>,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    pub fn gold_indices(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == 1)
            .map(|(i, _)| i)
            .collect()
    }

    /// Structural validation against a model configuration.
    pub fn validate(
        &self,
        embed_dim: usize,
        n_max: usize,
        require_gold: bool,
    ) -> Result<(), DataError> {
        if self.candidates.is_empty() {
            return Err(DataError::Validation(format!(
                "query '{}' has no candidates",
                self.query_id
            )));
        }
        if self.candidates.len() > n_max {
            return Err(DataError::Validation(format!(
                "query '{}' has {} candidates, exceeding max {}",
                self.query_id,
                self.candidates.len(),
                n_max
            )));
        }
        if self.query_embedding.len() != embed_dim {
            return Err(DataError::Validation(format!(
                "query '{}' embedding has width {}, expected {}",
                self.query_id,
                self.query_embedding.len(),
                embed_dim
            )));
        }
        for c in &self.candidates {
            if c.embedding.len() != embed_dim {
                return Err(DataError::Validation(format!(
                    "doc '{}' embedding has width {}, expected {}",
                    c.doc_id,
                    c.embedding.len(),
                    embed_dim
                )));
            }
            if c.label > 1 {
                return Err(DataError::Validation(format!(
                    "doc '{}' label {} outside {{0,1}}",
                    c.doc_id, c.label
                )));
            }
        }
        if require_gold && self.gold_indices().is_empty() {
            return Err(DataError::Validation(format!(
                "query '{}' has no gold label",
                self.query_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataError {
    InvalidSpec(String),
    Validation(String),
    Insufficient { needed: usize, available: usize },
}

impl core::fmt::Display for DataError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            DataError::InvalidSpec(m) => write!(f, "invalid synthetic spec: {m}"),
            DataError::Validation(m) => write!(f, "invalid candidate set: {m}"),
            DataError::Insufficient { needed, available } => {
                write!(f, "need {needed} documents, only {available} available")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    /// gold documents are noisy copies of the query direction
    PlantedSimilarity,
    /// two golds jointly span the query; distractors match them in cosine
    ComplementaryPair,
}

impl core::str::FromStr for SyntheticMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "planted_similarity" => Ok(SyntheticMode::PlantedSimilarity),
            "complementary_pair" => Ok(SyntheticMode::ComplementaryPair),
            other => Err(format!(
                "unknown mode '{other}' (expected planted_similarity|complementary_pair)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SyntheticSpec {
    pub mode: SyntheticMode,
    pub n_queries: usize,
    pub n_candidates: usize,
    pub embed_dim: usize,
    pub noise_sigma: f64,
    pub n_gold: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_queries == 0 || self.n_candidates == 0 || self.embed_dim == 0 {
            return Err(DataError::InvalidSpec(String::from(
                "n_queries, n_candidates, and embed_dim must be positive",
            )));
        }
        if self.n_gold == 0 || self.n_gold > self.n_candidates {
            return Err(DataError::InvalidSpec(format!(
                "n_gold {} must be in 1..={}",
                self.n_gold, self.n_candidates
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(DataError::InvalidSpec(String::from(
                "noise_sigma must be nonnegative",
            )));
        }
        if self.mode == SyntheticMode::ComplementaryPair && self.n_gold != 2 {
            return Err(DataError::InvalidSpec(format!(
                "complementary_pair requires n_gold = 2, got {}",
                self.n_gold
            )));
        }
        Ok(())
    }
}

fn noisy(rng: &mut Rng, base: &[f64], sigma: f64) -> Vec<f32> {
    let mut v: Vec<f64> = base.iter().map(|&x| x + sigma * rng.normal()).collect();
    normalize(&mut v);
    v.into_iter().map(|x| x as f32).collect()
}

/// Random unit vector with the component along `q` removed, renormalized.
fn random_orthogonal(rng: &mut Rng, q: &[f64]) -> Vec<f64> {
    loop {
        let mut w = rng.unit_vector(q.len());
        let dot: f64 = w.iter().zip(q).map(|(a, b)| a * b).sum();
        for (wi, qi) in w.iter_mut().zip(q) {
            *wi -= dot * qi;
        }
        let norm: f64 = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for wi in &mut w {
                *wi /= norm;
            }
            return w;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<CandidateSet>, DataError> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut out = Vec::with_capacity(spec.n_queries);
    for qi in 0..spec.n_queries {
        let set = match spec.mode {
            SyntheticMode::PlantedSimilarity => planted_query(&mut rng, spec, qi),
            SyntheticMode::ComplementaryPair => complementary_query(&mut rng, spec, qi),
        };
        out.push(set);
    }
    Ok(out)
}

fn planted_query(rng: &mut Rng, spec: &SyntheticSpec, qi: usize) -> CandidateSet {
    let q = rng.unit_vector(spec.embed_dim);
    let mut candidates = Vec::with_capacity(spec.n_candidates);
    for g in 0..spec.n_gold {
        candidates.push(Candidate {
            doc_id: format!("q{qi}-gold{g}"),
            embedding: noisy(rng, &q, spec.noise_sigma),
            label: 1,
        });
    }
    for d in 0..spec.n_candidates - spec.n_gold {
        let e = rng.unit_vector(spec.embed_dim);
        candidates.push(Candidate {
            doc_id: format!("q{qi}-neg{d}"),
            embedding: e.into_iter().map(|x| x as f32).collect(),
            label: 0,
        });
    }
    rng.shuffle(&mut candidates);
    CandidateSet {
        query_id: format!("q{qi}"),
        query_embedding: q.into_iter().map(|x| x as f32).collect(),
        candidates,
    }
}

/// Gold pair: noisy copies of orthogonal unit vectors `u` and `v` where
/// `q = (u+v)/sqrt(2)`, so each gold is only half-aligned with the query but
/// the pair jointly spans it. Distractors: noisy copies of q itself plus
/// random unit vectors. The q-copies outrank both golds under raw cosine,
/// so similarity-only ranking fails by construction; recovering the pair
/// requires noticing that the copies are mutually redundant while the two
/// golds are complementary.
fn complementary_query(rng: &mut Rng, spec: &SyntheticSpec, qi: usize) -> CandidateSet {
    let half = core::f64::consts::FRAC_1_SQRT_2;
    let u = rng.unit_vector(spec.embed_dim);
    let v = random_orthogonal(rng, &u);
    let q: Vec<f64> = u.iter().zip(&v).map(|(&a, &b)| half * (a + b)).collect();

    let mut candidates = Vec::with_capacity(spec.n_candidates);
    candidates.push(Candidate {
        doc_id: format!("q{qi}-gold0"),
        embedding: noisy(rng, &u, spec.noise_sigma),
        label: 1,
    });
    candidates.push(Candidate {
        doc_id: format!("q{qi}-gold1"),
        embedding: noisy(rng, &v, spec.noise_sigma),
        label: 1,
    });

    // three quarters redundant q-copies, the rest random
    let n_distractors = spec.n_candidates - 2;
    let n_redundant = n_distractors - n_distractors / 4;
    for d in 0..n_redundant {
        candidates.push(Candidate {
            doc_id: format!("q{qi}-dup{d}"),
            embedding: noisy(rng, &q, spec.noise_sigma),
            label: 0,
        });
    }
    for d in 0..n_distractors - n_redundant {
        let e = rng.unit_vector(spec.embed_dim);
        candidates.push(Candidate {
            doc_id: format!("q{qi}-rand{d}"),
            embedding: e.into_iter().map(|x| x as f32).collect(),
            label: 0,
        });
    }
    rng.shuffle(&mut candidates);
    CandidateSet {
        query_id: format!("q{qi}"),
        query_embedding: q.into_iter().map(|x| x as f32).collect(),
        candidates,
    }
}

/// Hard negatives for one gold: pool indices sorted by descending cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedNegatives {
    /// per gold document: `(distractor pool index, similarity)` descending
    pub per_gold: Vec<Vec<(usize, f32)>>,
    /// set when `k` exceeded the pool and results were truncated
    pub truncated: bool,
}

/// Top-`k` most cosine-similar distractors for each gold embedding, ties
/// broken by pool index.
pub fn mine_hard_negatives(
    gold_pool: &[Vec<f32>],
    distractor_pool: &[Vec<f32>],
    k: usize,
) -> Result<MinedNegatives, DataError> {
    if gold_pool.is_empty() || distractor_pool.is_empty() {
        return Err(DataError::InvalidSpec(String::from(
            "mining requires nonempty gold and distractor pools",
        )));
    }
    let truncated = k > distractor_pool.len();
    let take = k.min(distractor_pool.len());
    let per_gold = gold_pool
        .iter()
        .map(|g| {
            let mut sims: Vec<(usize, f32)> = distractor_pool
                .iter()
                .enumerate()
                .map(|(i, d)| (i, cosine(g, d)))
                .collect();
            // descending similarity, ascending index on ties
            sims.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
            sims.truncate(take);
            sims
        })
        .collect();
    Ok(MinedNegatives {
        per_gold,
        truncated,
    })
}

/// Assembles exactly `target_n` candidates (all golds plus mined negatives),
/// deterministically shuffled.
pub fn build_candidate_set(
    query_id: &str,
    query_embedding: Vec<f32>,
    golds: &[(String, Vec<f32>)],
    negatives: &[(String, Vec<f32>)],
    target_n: usize,
    seed: u64,
) -> Result<CandidateSet, DataError> {
    if golds.len() > target_n || golds.len() + negatives.len() < target_n {
        return Err(DataError::Insufficient {
            needed: target_n,
            available: golds.len() + negatives.len(),
        });
    }
    let mut candidates: Vec<Candidate> = golds
        .iter()
        .map(|(id, e)| Candidate {
            doc_id: id.clone(),
            embedding: e.clone(),
            label: 1,
        })
        .collect();
    for (id, e) in negatives.iter().take(target_n - golds.len()) {
        candidates.push(Candidate {
            doc_id: id.clone(),
            embedding: e.clone(),
            label: 0,
        });
    }
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut candidates);
    Ok(CandidateSet {
        query_id: String::from(query_id),
        query_embedding,
        candidates,
    })
}

/// Seeded proportional interleave of multiple source datasets: each record
/// slot is drawn from a source with probability proportional to its
/// remaining count. Seed 42 by convention.
pub fn stratified_interleave(
    mut sources: Vec<Vec<CandidateSet>>,
    seed: u64,
) -> Vec<CandidateSet> {
    let mut rng = Rng::new(seed);
    let total: usize = sources.iter().map(|s| s.len()).sum();
    let mut cursors = alloc::vec![0usize; sources.len()];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        let remaining: Vec<usize> = sources
            .iter()
            .zip(&cursors)
            .map(|(s, &c)| s.len() - c)
            .collect();
        let live: usize = remaining.iter().sum();
        let mut pick = rng.usize_below(live);
        let mut src = 0;
        for (i, &rem) in remaining.iter().enumerate() {
            if pick < rem {
                src = i;
                break;
            }
            pick -= rem;
        }
        out.push(core::mem::take(&mut sources[src][cursors[src]]));
        cursors[src] += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn spec(mode: SyntheticMode) -> SyntheticSpec {
        SyntheticSpec {
            mode,
            n_queries: 20,
            n_candidates: 6,
            embed_dim: 64,
            noise_sigma: 0.1,
            n_gold: 2,
            seed: 7,
        }
    }

    #[test]
    fn planted_zero_noise_gold_has_cosine_one() {
        let s = SyntheticSpec {
            noise_sigma: 0.0,
            ..spec(SyntheticMode::PlantedSimilarity)
        };
        for set in generate_synthetic(&s).unwrap() {
            for c in set.candidates.iter().filter(|c| c.label == 1) {
                let cos = cosine(&set.query_embedding, &c.embedding);
                assert!((cos - 1.0).abs() < 1e-6, "cos {cos}");
            }
        }
    }

    #[test]
    fn complementary_cosine_geometry() {
        let s = SyntheticSpec {
            noise_sigma: 0.02,
            n_queries: 50,
            ..spec(SyntheticMode::ComplementaryPair)
        };
        let half = core::f64::consts::FRAC_1_SQRT_2 as f32;
        let mut dups = 0usize;
        for set in generate_synthetic(&s).unwrap() {
            for c in &set.candidates {
                let cos = cosine(&set.query_embedding, &c.embedding);
                if c.doc_id.contains("dup") {
                    // redundant copies outrank both golds under raw cosine
                    assert!(cos > 0.95, "q-copy cosine {cos}");
                    dups += 1;
                } else if c.doc_id.contains("rand") {
                    assert!(cos.abs() < 0.4, "{}: cosine {cos}", c.doc_id);
                } else {
                    // golds sit in the half-aligned cos45 band
                    assert_eq!(c.label, 1);
                    assert!((cos - half).abs() < 0.15, "{}: cosine {cos}", c.doc_id);
                }
            }
        }
        // 4 distractors per query split 3 redundant / 1 random
        assert_eq!(dups, 3 * 50);
    }

    #[test]
    fn complementary_gold_pair_is_mutually_orthogonal() {
        let s = SyntheticSpec {
            noise_sigma: 0.02,
            ..spec(SyntheticMode::ComplementaryPair)
        };
        for set in generate_synthetic(&s).unwrap() {
            let golds: Vec<&Candidate> =
                set.candidates.iter().filter(|c| c.label == 1).collect();
            assert_eq!(golds.len(), 2);
            let cos = cosine(&golds[0].embedding, &golds[1].embedding);
            assert!(cos.abs() < 0.15, "gold-gold cosine {cos}");
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = spec(SyntheticMode::ComplementaryPair);
        assert_eq!(generate_synthetic(&s).unwrap(), generate_synthetic(&s).unwrap());
    }

    #[test]
    fn complementary_requires_two_golds() {
        let s = SyntheticSpec {
            n_gold: 3,
            ..spec(SyntheticMode::ComplementaryPair)
        };
        assert!(matches!(generate_synthetic(&s), Err(DataError::InvalidSpec(_))));
    }

    #[test]
    fn generated_sets_satisfy_invariants() {
        for mode in [SyntheticMode::PlantedSimilarity, SyntheticMode::ComplementaryPair] {
            for set in generate_synthetic(&spec(mode)).unwrap() {
                set.validate(64, 10, true).unwrap();
            }
        }
    }

    #[test]
    fn mining_identical_distractor_ranks_first() {
        let gold = vec![vec![1.0f32, 0.0, 0.0]];
        let pool = vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
        ];
        let mined = mine_hard_negatives(&gold, &pool, 2).unwrap();
        assert_eq!(mined.per_gold[0][0].0, 1);
        assert!((mined.per_gold[0][0].1 - 1.0).abs() < 1e-6);
        assert!(!mined.truncated);
    }

    #[test]
    fn mining_orthogonal_pool_tie_breaks_by_index() {
        let gold = vec![vec![1.0f32, 0.0, 0.0]];
        let pool = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, -1.0, 0.0]];
        let mined = mine_hard_negatives(&gold, &pool, 3).unwrap();
        let idx: Vec<usize> = mined.per_gold[0].iter().map(|p| p.0).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn mining_matches_exhaustive_scan() {
        let mut rng = Rng::new(5);
        let gold: Vec<Vec<f32>> = (0..3)
            .map(|_| rng.unit_vector(8).into_iter().map(|x| x as f32).collect())
            .collect();
        let pool: Vec<Vec<f32>> = (0..12)
            .map(|_| rng.unit_vector(8).into_iter().map(|x| x as f32).collect())
            .collect();
        let mined = mine_hard_negatives(&gold, &pool, 4).unwrap();
        for (g, ranked) in gold.iter().zip(&mined.per_gold) {
            assert_eq!(ranked.len(), 4);
            // similarity sequence is non-increasing and each entry is the scan max
            let sims: Vec<f32> = pool.iter().map(|d| cosine(g, d)).collect();
            let mut best: Vec<usize> = (0..pool.len()).collect();
            best.sort_by(|&a, &b| {
                sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b))
            });
            for (got, want) in ranked.iter().zip(best.iter()) {
                assert_eq!(got.0, *want);
            }
            for w in ranked.windows(2) {
                assert!(w[0].1 >= w[1].1);
            }
        }
    }

    #[test]
    fn mining_truncates_with_flag() {
        let gold = vec![vec![1.0f32, 0.0]];
        let pool = vec![vec![0.0f32, 1.0]];
        let mined = mine_hard_negatives(&gold, &pool, 5).unwrap();
        assert!(mined.truncated);
        assert_eq!(mined.per_gold[0].len(), 1);
    }

    #[test]
    fn build_candidate_set_counts_and_determinism() {
        let golds: Vec<(String, Vec<f32>)> = (0..2)
            .map(|i| (format!("g{i}"), vec![i as f32, 1.0]))
            .collect();
        let negs: Vec<(String, Vec<f32>)> = (0..8)
            .map(|i| (format!("n{i}"), vec![i as f32, -1.0]))
            .collect();
        let a = build_candidate_set("q", vec![0.0, 1.0], &golds, &negs[..4], 6, 3).unwrap();
        assert_eq!(a.n(), 6);
        assert_eq!(a.gold_indices().len(), 2);
        let b = build_candidate_set("q", vec![0.0, 1.0], &golds, &negs, 10, 3).unwrap();
        assert_eq!(b.n(), 10);
        let c = build_candidate_set("q", vec![0.0, 1.0], &golds, &negs, 10, 3).unwrap();
        assert_eq!(b, c);
        assert!(matches!(
            build_candidate_set("q", vec![0.0, 1.0], &golds, &negs[..2], 6, 3),
            Err(DataError::Insufficient { .. })
        ));
    }

    #[test]
    fn interleave_preserves_all_records() {
        let mk = |tag: &str, n: usize| -> Vec<CandidateSet> {
            (0..n)
                .map(|i| CandidateSet {
                    query_id: format!("{tag}{i}"),
                    query_embedding: vec![1.0],
                    candidates: vec![],
                })
                .collect()
        };
        let merged = stratified_interleave(vec![mk("a", 5), mk("b", 3)], 42);
        assert_eq!(merged.len(), 8);
        let a_count = merged.iter().filter(|s| s.query_id.starts_with('a')).count();
        assert_eq!(a_count, 5);
        // per-source order preserved
        let a_ids: Vec<&str> = merged
            .iter()
            .filter(|s| s.query_id.starts_with('a'))
            .map(|s| s.query_id.as_str())
            .collect();
        assert_eq!(a_ids, vec!["a0", "a1", "a2", "a3", "a4"]);
    }
}
