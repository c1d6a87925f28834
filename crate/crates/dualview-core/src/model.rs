//! The dual-view reranker: Local Scorer, Global Scorer, Adaptive Gate, and
//! the fused ranking, including the ablation variants.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::config::{Ablation, ModelConfig};
use crate::data::CandidateSet;
use crate::layers::{EncoderLayer, LinearLayer, Mlp2};
use crate::matrix::{cosine, Element, Matrix};
use crate::params::ParameterRegistry;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    Config(String),
    EmptyCandidates,
    TooManyCandidates { n: usize, max: usize },
    DimensionMismatch { got: usize, expected: usize },
}

impl core::fmt::Display for ModelError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ModelError::Config(m) => write!(f, "model config: {m}"),
            ModelError::EmptyCandidates => write!(f, "empty candidate list"),
            ModelError::TooManyCandidates { n, max } => {
                write!(f, "{n} candidates exceed positional capacity {max}")
            }
            ModelError::DimensionMismatch { got, expected } => {
                write!(f, "embedding width {got}, model expects {expected}")
            }
        }
    }
}

struct LocalScorer {
    layers: Vec<EncoderLayer>,
    mlp: Mlp2,
}

struct GlobalScorer {
    proj_feat: LinearLayer,
    proj_query: LinearLayer,
    /// learned positional table, `n_max x global_dim`; slot is public through
    /// [`DualViewModel::positional_slot`] so tests can zero it
    positional: usize,
    layers: Vec<EncoderLayer>,
    mlp: Mlp2,
}

struct AdaptiveGate {
    feat: LinearLayer,
    query: LinearLayer,
    gate: LinearLayer,
}

/// Differentiable forward outputs; all score vars are `1 x n` rows.
pub struct ForwardVars {
    pub s_local: Var,
    pub s_global: Var,
    pub gate_weight: Var,
    pub s_fused: Var,
    /// `n x (3*embed_dim + 1)` local feature matrix
    pub local_features: Var,
    /// `n x global_dim` encoded document representations, when the global
    /// path ran
    pub global_features: Option<Var>,
}

/// Per-document inference outputs plus the final ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct DocScores {
    pub doc_id: String,
    pub local: f64,
    pub global: f64,
    pub gate_weight: f64,
    pub fused: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    pub per_doc: Vec<DocScores>,
    pub local_features: Vec<Vec<f64>>,
    pub global_features: Vec<Vec<f64>>,
    /// candidate indices by descending fused score, ties by original index
    pub ranking: Vec<usize>,
}

pub struct DualViewModel<F: Element> {
    config: ModelConfig,
    registry: ParameterRegistry<F>,
    local: Option<LocalScorer>,
    global: Option<GlobalScorer>,
    gate: Option<AdaptiveGate>,
}

/// Anything trainable by the shared loop: the dual-view model and the MLP
/// baseline.
pub trait ScoringModel<F: Element> {
    fn registry(&self) -> &ParameterRegistry<F>;
    fn registry_mut(&mut self) -> &mut ParameterRegistry<F>;
    /// Fused scores as a `1 x n` row on the tape.
    fn forward_scores(&self, tape: &mut Tape<F>, set: &CandidateSet) -> Result<Var, ModelError>;
    /// Ranking for evaluation.
    fn rank(&self, set: &CandidateSet) -> Result<Vec<usize>, ModelError>;
}

pub(crate) fn embed_row<F: Element>(v: &[f32]) -> Matrix<F> {
    Matrix::from_vec(1, v.len(), v.iter().map(|&x| F::from_f32(x)).collect())
}

/// Stable descending sort of scores, ties by original index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

fn col_to_row<F: Element>(tape: &mut Tape<F>, col: Var) -> Var {
    let n = tape.value(col).rows();
    debug_assert_eq!(tape.value(col).cols(), 1);
    let parts: Vec<Var> = (0..n).map(|i| tape.select(col, i, 0)).collect();
    if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat_cols(&parts)
    }
}

impl<F: Element> DualViewModel<F> {
    /// Builds a model with seeded deterministic initialization. Components
    /// disabled by the ablation are not constructed (and so do not count as
    /// trainable parameters).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let mut registry = ParameterRegistry::new();
        let mut rng = Rng::new(seed).fork(0x6d6f64656c);
        let eps = config.layernorm_epsilon;
        let ablation = config.ablation;

        let local = if ablation != Ablation::NoLocal {
            let mut layers = Vec::with_capacity(config.local_layers);
            for l in 0..config.local_layers {
                layers.push(
                    EncoderLayer::new(
                        &mut registry,
                        &mut rng,
                        &format!("local.layer{l}"),
                        config.embed_dim,
                        config.local_heads,
                        eps,
                    )
                    .map_err(|e| ModelError::Config(e.0))?,
                );
            }
            let mlp = Mlp2::new(
                &mut registry,
                &mut rng,
                "local.mlp",
                config.local_feature_dim(),
                config.local_mlp_hidden,
                1,
            );
            Some(LocalScorer { layers, mlp })
        } else {
            None
        };

        let global = if ablation != Ablation::NoGlobal {
            let proj_feat = LinearLayer::new(
                &mut registry,
                &mut rng,
                "global.proj_feat",
                config.local_feature_dim(),
                config.global_dim,
            );
            let proj_query = LinearLayer::new(
                &mut registry,
                &mut rng,
                "global.proj_query",
                config.embed_dim,
                config.global_dim,
            );
            let mut pos = Matrix::zeros(config.max_candidates, config.global_dim);
            for v in pos.data_mut() {
                *v = F::from_f64(rng.normal() * 0.02);
            }
            let positional = registry.add("global.positional", pos);
            let mut layers = Vec::with_capacity(config.global_layers);
            for l in 0..config.global_layers {
                layers.push(
                    EncoderLayer::new(
                        &mut registry,
                        &mut rng,
                        &format!("global.layer{l}"),
                        config.global_dim,
                        config.global_heads,
                        eps,
                    )
                    .map_err(|e| ModelError::Config(e.0))?,
                );
            }
            let mlp = Mlp2::new(
                &mut registry,
                &mut rng,
                "global.mlp",
                config.global_dim,
                config.global_mlp_hidden,
                1,
            );
            Some(GlobalScorer {
                proj_feat,
                proj_query,
                positional,
                layers,
                mlp,
            })
        } else {
            None
        };

        let gate = if ablation == Ablation::Full {
            Some(AdaptiveGate {
                feat: LinearLayer::new(
                    &mut registry,
                    &mut rng,
                    "gate.feat",
                    config.gate_feat_in_dim(),
                    config.gate_hidden,
                ),
                query: LinearLayer::new(
                    &mut registry,
                    &mut rng,
                    "gate.query",
                    config.embed_dim,
                    config.gate_hidden,
                ),
                gate: LinearLayer::zeroed(&mut registry, "gate.gate", 2 * config.gate_hidden, 1),
            })
        } else {
            None
        };

        Ok(DualViewModel {
            config,
            registry,
            local,
            global,
            gate,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Total trainable scalar count.
    pub fn parameter_count(&self) -> usize {
        self.registry.scalar_count()
    }

    /// Registry slot of the positional table, when the global path exists.
    pub fn positional_slot(&self) -> Option<usize> {
        self.global.as_ref().map(|g| g.positional)
    }

    fn check_set(&self, set: &CandidateSet) -> Result<(), ModelError> {
        if set.candidates.is_empty() {
            return Err(ModelError::EmptyCandidates);
        }
        if set.n() > self.config.max_candidates {
            return Err(ModelError::TooManyCandidates {
                n: set.n(),
                max: self.config.max_candidates,
            });
        }
        if set.query_embedding.len() != self.config.embed_dim {
            return Err(ModelError::DimensionMismatch {
                got: set.query_embedding.len(),
                expected: self.config.embed_dim,
            });
        }
        for c in &set.candidates {
            if c.embedding.len() != self.config.embed_dim {
                return Err(ModelError::DimensionMismatch {
                    got: c.embedding.len(),
                    expected: self.config.embed_dim,
                });
            }
        }
        Ok(())
    }

    /// Local interaction path over all candidates at once: the per-candidate
    /// (query, document) pairs run through the closed-form two-token
    /// attention in one block-stacked batch. Returns the `n x (3D+1)`
    /// feature matrix and the local score column, or pass-through features
    /// under `no_local`.
    fn local_features(
        &self,
        tape: &mut Tape<F>,
        set: &CandidateSet,
    ) -> (Var, Option<Var>) {
        let n = set.n();
        let d = self.config.embed_dim;
        match &self.local {
            Some(local) => {
                // block layout: n copies of the query on top, candidates below
                let mut stacked = Vec::with_capacity(2 * n * d);
                for _ in 0..n {
                    stacked.extend(set.query_embedding.iter().map(|&x| F::from_f32(x)));
                }
                for c in &set.candidates {
                    stacked.extend(c.embedding.iter().map(|&x| F::from_f32(x)));
                }
                let mut h = tape.constant(Matrix::from_vec(2 * n, d, stacked));
                let mut final_q_to_c: Vec<Var> = Vec::new();
                for layer in &local.layers {
                    let (out, q_to_c) = layer.forward_pairs(tape, &self.registry, h, n);
                    h = out;
                    final_q_to_c = q_to_c;
                }
                let xq = tape.slice_rows(h, 0, n);
                let xc = tape.slice_rows(h, n, n);
                let prod = tape.mul(xq, xc);
                // mean over heads of the final layer's query->document weight
                let mut acc = final_q_to_c[0];
                for &w in &final_q_to_c[1..] {
                    acc = tape.add(acc, w);
                }
                let inv_heads = F::from_f64(1.0 / self.config.local_heads as f64);
                let a = tape.scale(acc, inv_heads);
                let features = tape.concat_cols(&[xq, xc, prod, a]);
                let s_local = local.mlp.forward(tape, &self.registry, features);
                (features, Some(s_local))
            }
            None => {
                // pass-through: q_r = q, c_r = c, their product, and the
                // cosine rescaled into [0,1] in place of the attention scalar
                let q: Vec<F> = set.query_embedding.iter().map(|&x| F::from_f32(x)).collect();
                let mut data = Vec::with_capacity(n * (3 * d + 1));
                for c in &set.candidates {
                    data.extend(q.iter().copied());
                    data.extend(c.embedding.iter().map(|&x| F::from_f32(x)));
                    data.extend(
                        q.iter()
                            .zip(c.embedding.iter())
                            .map(|(&qv, &cv)| qv * F::from_f32(cv)),
                    );
                    let cos = cosine(&set.query_embedding, &c.embedding) as f64;
                    data.push(F::from_f64((cos + 1.0) / 2.0));
                }
                let features = tape.constant(Matrix::from_vec(n, 3 * d + 1, data));
                (features, None)
            }
        }
    }

    /// Set-level path: projected features plus positional embeddings behind
    /// a projected query token, encoded by attention+residual+norm layers.
    fn global_path(
        &self,
        tape: &mut Tape<F>,
        set: &CandidateSet,
        features: Var,
    ) -> Option<(Var, Var)> {
        let global = self.global.as_ref()?;
        let n = set.n();
        let h = global.proj_feat.forward(tape, &self.registry, features);
        let pos_table = tape.param(&self.registry, global.positional);
        let pos = tape.slice_rows(pos_table, 0, n);
        let h_pos = tape.add(h, pos);
        let q_const = tape.constant(embed_row::<F>(&set.query_embedding));
        let q_proj = global.proj_query.forward(tape, &self.registry, q_const);
        let mut seq = tape.concat_rows(&[q_proj, h_pos]);
        for layer in &global.layers {
            let (out, _) = layer.forward_batched(tape, &self.registry, seq, n + 1);
            seq = out;
        }
        let g = tape.slice_rows(seq, 1, n);
        let s_global = global.mlp.forward(tape, &self.registry, g);
        Some((g, s_global))
    }

    /// Full differentiable forward pass honoring the ablation flag.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<F>,
        set: &CandidateSet,
    ) -> Result<ForwardVars, ModelError> {
        self.check_set(set)?;
        let n = set.n();
        let (features, s_local_col) = self.local_features(tape, set);
        let global_out = self.global_path(tape, set, features);

        let zeros_row = Matrix::zeros(1, n);
        match self.config.ablation {
            Ablation::Full => {
                let s_local_col = s_local_col.expect("local path present");
                let (g, s_global_col) = global_out.expect("global path present");
                let gate = self.gate.as_ref().expect("gate present");

                let x_doc = tape.concat_cols(&[features, s_local_col, s_global_col]);
                let gate_in = tape.concat_cols(&[x_doc, g]);
                let h_feat = gate.feat.forward(tape, &self.registry, gate_in);
                let q_const = tape.constant(embed_row::<F>(&set.query_embedding));
                let h_query = gate.query.forward(tape, &self.registry, q_const);
                let h_query_rep = if n == 1 {
                    h_query
                } else {
                    let copies: Vec<Var> = (0..n).map(|_| h_query).collect();
                    tape.concat_rows(&copies)
                };
                let h_gate = tape.concat_cols(&[h_feat, h_query_rep]);
                let logit = gate.gate.forward(tape, &self.registry, h_gate);
                let w_col = tape.sigmoid(logit);

                let ones = tape.constant(Matrix::full(n, 1, F::one()));
                let w_inv = tape.sub(ones, w_col);
                let local_part = tape.mul(w_col, s_local_col);
                let global_part = tape.mul(w_inv, s_global_col);
                let fused_col = tape.add(local_part, global_part);

                Ok(ForwardVars {
                    s_local: col_to_row(tape, s_local_col),
                    s_global: col_to_row(tape, s_global_col),
                    gate_weight: col_to_row(tape, w_col),
                    s_fused: col_to_row(tape, fused_col),
                    local_features: features,
                    global_features: Some(g),
                })
            }
            Ablation::AvgFusion => {
                let s_local_col = s_local_col.expect("local path present");
                let (g, s_global_col) = global_out.expect("global path present");
                let sum = tape.add(s_local_col, s_global_col);
                let fused_col = tape.scale(sum, F::from_f64(0.5));
                let half = tape.constant(Matrix::full(1, n, F::from_f64(0.5)));
                Ok(ForwardVars {
                    s_local: col_to_row(tape, s_local_col),
                    s_global: col_to_row(tape, s_global_col),
                    gate_weight: half,
                    s_fused: col_to_row(tape, fused_col),
                    local_features: features,
                    global_features: Some(g),
                })
            }
            Ablation::NoGlobal => {
                let s_local_col = s_local_col.expect("local path present");
                let s_local = col_to_row(tape, s_local_col);
                let zeros = tape.constant(zeros_row);
                let ones = tape.constant(Matrix::full(1, n, F::one()));
                Ok(ForwardVars {
                    s_local,
                    s_global: zeros,
                    gate_weight: ones,
                    s_fused: s_local,
                    local_features: features,
                    global_features: None,
                })
            }
            Ablation::NoLocal => {
                let (g, s_global_col) = global_out.expect("global path present");
                let s_global = col_to_row(tape, s_global_col);
                let zeros = tape.constant(zeros_row.clone());
                let zeros_w = tape.constant(zeros_row);
                Ok(ForwardVars {
                    s_local: zeros,
                    s_global,
                    gate_weight: zeros_w,
                    s_fused: s_global,
                    local_features: features,
                    global_features: Some(g),
                })
            }
        }
    }

    /// Inference: scores, gate weights, features, and the ranking.
    pub fn rerank(&self, set: &CandidateSet) -> Result<ScoredCandidates, ModelError> {
        let mut tape = Tape::new();
        let vars = self.forward_tape(&mut tape, set)?;
        let n = set.n();
        let row = |v: Var| -> Vec<f64> {
            tape.value(v).data().iter().map(|&x| x.to_f64()).collect()
        };
        let local = row(vars.s_local);
        let global = row(vars.s_global);
        let gate = row(vars.gate_weight);
        let fused = row(vars.s_fused);
        let ranking = rank_descending(&fused);

        let feat = tape.value(vars.local_features);
        let local_features: Vec<Vec<f64>> = (0..n)
            .map(|i| feat.row(i).iter().map(|&x| x.to_f64()).collect())
            .collect();
        let global_features: Vec<Vec<f64>> = match vars.global_features {
            Some(g) => {
                let gm = tape.value(g);
                (0..n)
                    .map(|i| gm.row(i).iter().map(|&x| x.to_f64()).collect())
                    .collect()
            }
            None => Vec::new(),
        };

        let per_doc = set
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| DocScores {
                doc_id: c.doc_id.clone(),
                local: local[i],
                global: global[i],
                gate_weight: gate[i],
                fused: fused[i],
            })
            .collect();

        Ok(ScoredCandidates {
            per_doc,
            local_features,
            global_features,
            ranking,
        })
    }

    /// Casts all weights into an `f64` model with identical structure; used
    /// by the wide-precision gradient check.
    pub fn to_f64_model(&self) -> DualViewModel<f64> {
        let mut m = DualViewModel::<f64>::new(self.config, 0).expect("same config is valid");
        for slot in 0..self.registry.len() {
            debug_assert_eq!(m.registry.name(slot), self.registry.name(slot));
            *m.registry.value_mut(slot) = self.registry.value(slot).to_f64_matrix();
        }
        m
    }

    /// Replaces all parameter values from another registry with matching
    /// layout (names and shapes in order).
    pub fn load_values(&mut self, source: &ParameterRegistry<F>) -> Result<(), ModelError> {
        if source.len() != self.registry.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} parameters, model expects {}",
                source.len(),
                self.registry.len()
            )));
        }
        for slot in 0..source.len() {
            if source.name(slot) != self.registry.name(slot)
                || source.value(slot).shape() != self.registry.value(slot).shape()
            {
                return Err(ModelError::Config(format!(
                    "checkpoint parameter {} ({:?}) does not match model parameter {} ({:?})",
                    source.name(slot),
                    source.value(slot).shape(),
                    self.registry.name(slot),
                    self.registry.value(slot).shape()
                )));
            }
            *self.registry.value_mut(slot) = source.value(slot).clone();
        }
        Ok(())
    }
}

impl<F: Element> ScoringModel<F> for DualViewModel<F> {
    fn registry(&self) -> &ParameterRegistry<F> {
        &self.registry
    }

    fn registry_mut(&mut self) -> &mut ParameterRegistry<F> {
        &mut self.registry
    }

    fn forward_scores(&self, tape: &mut Tape<F>, set: &CandidateSet) -> Result<Var, ModelError> {
        Ok(self.forward_tape(tape, set)?.s_fused)
    }

    fn rank(&self, set: &CandidateSet) -> Result<Vec<usize>, ModelError> {
        Ok(self.rerank(set)?.ranking)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Candidate;
    use alloc::vec;

    fn random_set(rng: &mut Rng, dim: usize, n: usize, n_gold: usize) -> CandidateSet {
        let q: Vec<f32> = rng.unit_vector(dim).into_iter().map(|x| x as f32).collect();
        let candidates = (0..n)
            .map(|i| Candidate {
                doc_id: format!("d{i}"),
                embedding: rng.unit_vector(dim).into_iter().map(|x| x as f32).collect(),
                label: u8::from(i < n_gold),
            })
            .collect();
        CandidateSet {
            query_id: String::from("q"),
            query_embedding: q,
            candidates,
        }
    }

    #[test]
    fn local_feature_dim_matches_defaults() {
        // 2305 with the full-size configuration; checked symbolically so we
        // do not have to build a 10M-parameter model here
        assert_eq!(ModelConfig::default().local_feature_dim(), 2305);
        let model = DualViewModel::<f32>::new(ModelConfig::tiny(), 1).unwrap();
        let mut rng = Rng::new(2);
        let set = random_set(&mut rng, 8, 3, 1);
        let scored = model.rerank(&set).unwrap();
        assert_eq!(scored.local_features[0].len(), 3 * 8 + 1);
    }

    #[test]
    fn identical_query_and_doc_give_equal_representations() {
        let model = DualViewModel::<f64>::new(ModelConfig::tiny(), 3).unwrap();
        let mut rng = Rng::new(4);
        let e: Vec<f32> = rng.unit_vector(8).into_iter().map(|x| x as f32).collect();
        let set = CandidateSet {
            query_id: String::from("q"),
            query_embedding: e.clone(),
            candidates: vec![Candidate {
                doc_id: String::from("d"),
                embedding: e,
                label: 1,
            }],
        };
        let scored = model.rerank(&set).unwrap();
        let f = &scored.local_features[0];
        for i in 0..8 {
            assert!(
                (f[i] - f[8 + i]).abs() < 1e-12,
                "q_r and c_r differ at {i}: {} vs {}",
                f[i],
                f[8 + i]
            );
        }
        // attention scalar is 0.5 by symmetry of two identical tokens
        assert!((f[24] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn attention_scalar_stays_in_unit_interval() {
        let model = DualViewModel::<f32>::new(ModelConfig::tiny(), 5).unwrap();
        let mut rng = Rng::new(6);
        for _ in 0..20 {
            let set = random_set(&mut rng, 8, 3, 1);
            let scored = model.rerank(&set).unwrap();
            for f in &scored.local_features {
                let a = f[24];
                assert!((0.0..=1.0).contains(&a), "attention scalar {a}");
            }
        }
    }

    #[test]
    fn single_candidate_ranks_first() {
        let model = DualViewModel::<f32>::new(ModelConfig::tiny(), 7).unwrap();
        let mut rng = Rng::new(8);
        let set = random_set(&mut rng, 8, 1, 1);
        let scored = model.rerank(&set).unwrap();
        assert_eq!(scored.ranking, vec![0]);
        assert_eq!(scored.per_doc.len(), 1);
    }

    #[test]
    fn tie_break_prefers_lower_index() {
        assert_eq!(rank_descending(&[1.0, 2.0, 2.0, 0.5]), vec![1, 2, 0, 3]);
        assert_eq!(rank_descending(&[3.0, 3.0, 3.0]), vec![0, 1, 2]);
    }

    #[test]
    fn fused_score_lies_between_local_and_global() {
        let model = DualViewModel::<f32>::new(ModelConfig::tiny(), 9).unwrap();
        let mut rng = Rng::new(10);
        for _ in 0..50 {
            let set = random_set(&mut rng, 8, 4, 2);
            let scored = model.rerank(&set).unwrap();
            for d in &scored.per_doc {
                assert!(d.gate_weight > 0.0 && d.gate_weight < 1.0);
                let lo = d.local.min(d.global) - 1e-9;
                let hi = d.local.max(d.global) + 1e-9;
                assert!(d.fused >= lo && d.fused <= hi);
            }
        }
    }

    #[test]
    fn avg_fusion_is_exact_mean() {
        let model =
            DualViewModel::<f64>::new(ModelConfig::tiny().with_ablation(Ablation::AvgFusion), 11)
                .unwrap();
        let mut rng = Rng::new(12);
        let set = random_set(&mut rng, 8, 4, 2);
        let scored = model.rerank(&set).unwrap();
        for d in &scored.per_doc {
            assert!((d.fused - 0.5 * (d.local + d.global)).abs() < 1e-12);
        }
    }

    #[test]
    fn no_global_ranks_by_local_score() {
        let model =
            DualViewModel::<f32>::new(ModelConfig::tiny().with_ablation(Ablation::NoGlobal), 13)
                .unwrap();
        let mut rng = Rng::new(14);
        let set = random_set(&mut rng, 8, 4, 2);
        let scored = model.rerank(&set).unwrap();
        let locals: Vec<f64> = scored.per_doc.iter().map(|d| d.local).collect();
        assert_eq!(scored.ranking, rank_descending(&locals));
        for d in &scored.per_doc {
            assert_eq!(d.fused, d.local);
        }
    }

    #[test]
    fn no_local_ranks_by_global_score() {
        let model =
            DualViewModel::<f32>::new(ModelConfig::tiny().with_ablation(Ablation::NoLocal), 15)
                .unwrap();
        let mut rng = Rng::new(16);
        let set = random_set(&mut rng, 8, 4, 2);
        let scored = model.rerank(&set).unwrap();
        let globals: Vec<f64> = scored.per_doc.iter().map(|d| d.global).collect();
        assert_eq!(scored.ranking, rank_descending(&globals));
    }

    #[test]
    fn ablations_drop_unused_parameters() {
        let full = DualViewModel::<f32>::new(ModelConfig::tiny(), 1).unwrap();
        for ab in [Ablation::AvgFusion, Ablation::NoGlobal, Ablation::NoLocal] {
            let m = DualViewModel::<f32>::new(ModelConfig::tiny().with_ablation(ab), 1).unwrap();
            assert!(m.parameter_count() < full.parameter_count(), "{:?}", ab);
        }
    }

    #[test]
    fn local_scores_are_permutation_equivariant() {
        let model = DualViewModel::<f64>::new(ModelConfig::tiny(), 17).unwrap();
        let mut rng = Rng::new(18);
        let set = random_set(&mut rng, 8, 4, 2);
        let perm = [2usize, 0, 3, 1];
        let mut permuted = set.clone();
        permuted.candidates = perm.iter().map(|&i| set.candidates[i].clone()).collect();
        let a = model.rerank(&set).unwrap();
        let b = model.rerank(&permuted).unwrap();
        for (new_pos, &orig) in perm.iter().enumerate() {
            assert_eq!(a.per_doc[orig].local, b.per_doc[new_pos].local);
        }
    }

    #[test]
    fn capacity_and_shape_errors() {
        let model = DualViewModel::<f32>::new(ModelConfig::tiny(), 19).unwrap();
        let mut rng = Rng::new(20);
        let too_many = random_set(&mut rng, 8, 5, 1); // tiny config allows 4
        assert!(matches!(
            model.rerank(&too_many),
            Err(ModelError::TooManyCandidates { n: 5, max: 4 })
        ));
        let mut bad_dim = random_set(&mut rng, 8, 2, 1);
        bad_dim.query_embedding.push(0.0);
        assert!(matches!(
            model.rerank(&bad_dim),
            Err(ModelError::DimensionMismatch { got: 9, expected: 8 })
        ));
        let empty = CandidateSet {
            query_id: String::from("q"),
            query_embedding: vec![0.0; 8],
            candidates: vec![],
        };
        assert!(matches!(model.rerank(&empty), Err(ModelError::EmptyCandidates)));
    }

    #[test]
    fn rerank_is_deterministic() {
        let model = DualViewModel::<f32>::new(ModelConfig::tiny(), 21).unwrap();
        let mut rng = Rng::new(22);
        let set = random_set(&mut rng, 8, 4, 2);
        let a = model.rerank(&set).unwrap();
        let b = model.rerank(&set).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_parameter_count_matches_hand_sum() {
        let cfg = ModelConfig::tiny();
        let model = DualViewModel::<f64>::new(cfg, 1).unwrap();
        let d = 8usize;
        let attn = 4 * (d * d + d);
        let norm = 2 * d;
        let local_layers = cfg.local_layers * (attn + norm);
        let fdim = 3 * d + 1; // 25
        let local_mlp = fdim * 6 + 6 + 6 + 1;
        let g = 8usize;
        let proj_feat = fdim * g + g;
        let proj_query = d * g + g;
        let pos = cfg.max_candidates * g;
        let g_attn = 4 * (g * g + g);
        let g_norm = 2 * g;
        let global_layers = cfg.global_layers * (g_attn + g_norm);
        let global_mlp = g * 5 + 5 + 5 + 1;
        let gate = (fdim + 2 + g) * 4 + 4 + d * 4 + 4 + 8 + 1;
        let expected = local_layers
            + local_mlp
            + proj_feat
            + proj_query
            + pos
            + global_layers
            + global_mlp
            + gate;
        assert_eq!(model.parameter_count(), expected);
    }

    #[test]
    fn widening_local_mlp_increases_count() {
        let base = DualViewModel::<f32>::new(ModelConfig::tiny(), 1)
            .unwrap()
            .parameter_count();
        let mut cfg = ModelConfig::tiny();
        cfg.local_mlp_hidden *= 2;
        let wider = DualViewModel::<f32>::new(cfg, 1).unwrap().parameter_count();
        assert!(wider > base);
    }
}
