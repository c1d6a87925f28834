//! Reference rankers the dual-view model is compared against: raw cosine
//! similarity and a small pointwise MLP over concatenated embeddings.

use alloc::vec::Vec;

use crate::data::CandidateSet;
use crate::layers::Mlp2;
use crate::matrix::{cosine, Element, Matrix};
use crate::model::{rank_descending, ModelError, ScoringModel};
use crate::params::ParameterRegistry;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// Per-candidate cosine to the query; zero-norm vectors score -1 so they
/// sort behind every real candidate.
pub fn cosine_scores(set: &CandidateSet) -> Vec<f64> {
    set.candidates
        .iter()
        .map(|c| f64::from(cosine(&set.query_embedding, &c.embedding)))
        .collect()
}

/// Ranking by raw cosine similarity, ties by original index.
pub fn cosine_rank(set: &CandidateSet) -> Vec<usize> {
    rank_descending(&cosine_scores(set))
}

/// Pointwise scorer: `[q; c; q*c]` through one hidden layer. No interaction
/// between candidates, so it measures what pair features alone can do.
pub struct MlpBaseline<F: Element> {
    registry: ParameterRegistry<F>,
    mlp: Mlp2,
    embed_dim: usize,
}

impl<F: Element> MlpBaseline<F> {
    pub fn new(embed_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut registry = ParameterRegistry::new();
        let mut rng = Rng::new(seed).fork(0x62617365);
        let mlp = Mlp2::new(&mut registry, &mut rng, "baseline.mlp", 3 * embed_dim, hidden, 1);
        MlpBaseline {
            registry,
            mlp,
            embed_dim,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.registry.scalar_count()
    }

    fn check(&self, set: &CandidateSet) -> Result<(), ModelError> {
        if set.candidates.is_empty() {
            return Err(ModelError::EmptyCandidates);
        }
        if set.query_embedding.len() != self.embed_dim {
            return Err(ModelError::DimensionMismatch {
                got: set.query_embedding.len(),
                expected: self.embed_dim,
            });
        }
        for c in &set.candidates {
            if c.embedding.len() != self.embed_dim {
                return Err(ModelError::DimensionMismatch {
                    got: c.embedding.len(),
                    expected: self.embed_dim,
                });
            }
        }
        Ok(())
    }
}

impl<F: Element> ScoringModel<F> for MlpBaseline<F> {
    fn registry(&self) -> &ParameterRegistry<F> {
        &self.registry
    }

    fn registry_mut(&mut self) -> &mut ParameterRegistry<F> {
        &mut self.registry
    }

    fn forward_scores(&self, tape: &mut Tape<F>, set: &CandidateSet) -> Result<Var, ModelError> {
        self.check(set)?;
        let n = set.n();
        let d = self.embed_dim;
        let mut data = Vec::with_capacity(n * 3 * d);
        for c in &set.candidates {
            data.extend(set.query_embedding.iter().map(|&x| F::from_f32(x)));
            data.extend(c.embedding.iter().map(|&x| F::from_f32(x)));
            data.extend(
                set.query_embedding
                    .iter()
                    .zip(c.embedding.iter())
                    .map(|(&q, &c)| F::from_f32(q) * F::from_f32(c)),
            );
        }
        let x = tape.constant(Matrix::from_vec(n, 3 * d, data));
        let col = self.mlp.forward(tape, &self.registry, x);
        let parts: Vec<Var> = (0..n).map(|i| tape.select(col, i, 0)).collect();
        Ok(if parts.len() == 1 {
            parts[0]
        } else {
            tape.concat_cols(&parts)
        })
    }

    fn rank(&self, set: &CandidateSet) -> Result<Vec<usize>, ModelError> {
        let mut tape = Tape::new();
        let scores = self.forward_scores(&mut tape, set)?;
        let vals: Vec<f64> = tape.value(scores).data().iter().map(|&x| x.to_f64()).collect();
        Ok(rank_descending(&vals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Candidate;
    use alloc::format;
    use alloc::string::String;
    use alloc::vec;

    fn set_from(q: Vec<f32>, docs: Vec<Vec<f32>>) -> CandidateSet {
        CandidateSet {
            query_id: String::from("q"),
            query_embedding: q,
            candidates: docs
                .into_iter()
                .enumerate()
                .map(|(i, embedding)| Candidate {
                    doc_id: format!("d{i}"),
                    embedding,
                    label: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn cosine_ranks_by_angle() {
        let set = set_from(
            vec![1.0, 0.0],
            vec![
                vec![0.0, 1.0],   // orthogonal
                vec![1.0, 0.0],   // aligned
                vec![-1.0, 0.0],  // opposite
                vec![1.0, 1.0],   // 45 degrees
            ],
        );
        assert_eq!(cosine_rank(&set), vec![1, 3, 0, 2]);
    }

    #[test]
    fn zero_norm_candidate_sorts_last() {
        let set = set_from(
            vec![1.0, 0.0],
            vec![vec![0.0, 0.0], vec![-1.0, 0.1]],
        );
        let scores = cosine_scores(&set);
        assert_eq!(scores[0], -1.0);
        assert_eq!(cosine_rank(&set), vec![1, 0]);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let a = set_from(vec![0.3, 0.4], vec![vec![1.0, 2.0], vec![2.0, -1.0]]);
        let b = set_from(vec![3.0, 4.0], vec![vec![10.0, 20.0], vec![0.4, -0.2]]);
        let sa = cosine_scores(&a);
        let sb = cosine_scores(&b);
        for (x, y) in sa.iter().zip(&sb) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn mlp_baseline_parameter_count() {
        let b = MlpBaseline::<f32>::new(768, 256, 1);
        // (2304*256 + 256) + (256*1 + 1) = 590,337
        assert_eq!(b.parameter_count(), 2304 * 256 + 256 + 256 + 1);
    }

    #[test]
    fn mlp_baseline_scores_are_deterministic_and_pointwise() {
        let b = MlpBaseline::<f64>::new(4, 3, 7);
        let set = set_from(
            vec![0.5, -0.5, 0.25, 1.0],
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
        );
        let r1 = b.rank(&set).unwrap();
        let r2 = b.rank(&set).unwrap();
        assert_eq!(r1, r2);

        // scoring a candidate alone matches scoring it in a set
        let mut tape = Tape::new();
        let joint = b.forward_scores(&mut tape, &set).unwrap();
        let joint_vals = tape.value(joint).data().to_vec();
        #[allow(clippy::needless_range_loop)] // `i` picks the same candidate twice
        for i in 0..2 {
            let solo = CandidateSet {
                query_id: String::from("q"),
                query_embedding: set.query_embedding.clone(),
                candidates: vec![set.candidates[i].clone()],
            };
            let mut t = Tape::new();
            let s = b.forward_scores(&mut t, &solo).unwrap();
            assert!((t.value(s).item() - joint_vals[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_baseline_rejects_bad_dims() {
        let b = MlpBaseline::<f32>::new(4, 3, 7);
        let set = set_from(vec![0.0; 5], vec![vec![0.0; 5]]);
        assert!(matches!(
            b.rank(&set),
            Err(ModelError::DimensionMismatch { got: 5, expected: 4 })
        ));
    }
}
