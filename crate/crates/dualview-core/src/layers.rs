//! Parameterized layers built on the tape: linear, layer norm, multi-head
//! self-attention, and the attention+residual+norm encoder layer used by
//! both scorers (no feed-forward sublayer).

// trait-provided float intrinsics for no_std builds; unused whenever std
// is in the crate graph and its inherent methods shadow these
#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::matrix::{Element, Matrix};
use crate::params::ParameterRegistry;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// `y = x @ W + b`, weights `in x out` so the forward pass is a plain
/// row-major product, bias broadcast per row.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: usize,
    pub bias: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn new<F: Element>(
        registry: &mut ParameterRegistry<F>,
        rng: &mut Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut w = Matrix::zeros(in_dim, out_dim);
        for v in w.data_mut() {
            *v = F::from_f64(rng.uniform_range(-bound, bound));
        }
        let weight = registry.add(format!("{name}.weight"), w);
        let bias = registry.add(format!("{name}.bias"), Matrix::zeros(1, out_dim));
        LinearLayer {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// All-zero weights and bias. Used for the gate's output layer so the
    /// fused score starts as the exact 50/50 average and the gate only moves
    /// away from it when training finds a reason to.
    pub fn zeroed<F: Element>(
        registry: &mut ParameterRegistry<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = registry.add(format!("{name}.weight"), Matrix::zeros(in_dim, out_dim));
        let bias = registry.add(format!("{name}.bias"), Matrix::zeros(1, out_dim));
        LinearLayer {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<F: Element>(
        &self,
        tape: &mut Tape<F>,
        registry: &ParameterRegistry<F>,
        x: Var,
    ) -> Var {
        assert_eq!(
            tape.value(x).cols(),
            self.in_dim,
            "linear input width {} does not match layer in_dim {}",
            tape.value(x).cols(),
            self.in_dim
        );
        let w = tape.param(registry, self.weight);
        let b = tape.param(registry, self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// Row-wise standardization followed by learned gain/shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: usize,
    pub shift: usize,
    pub dim: usize,
    pub epsilon: f64,
}

impl LayerNorm {
    pub fn new<F: Element>(
        registry: &mut ParameterRegistry<F>,
        name: &str,
        dim: usize,
        epsilon: f64,
    ) -> Self {
        let gain = registry.add(format!("{name}.gain"), Matrix::full(1, dim, F::one()));
        let shift = registry.add(format!("{name}.shift"), Matrix::zeros(1, dim));
        LayerNorm {
            gain,
            shift,
            dim,
            epsilon,
        }
    }

    pub fn forward<F: Element>(
        &self,
        tape: &mut Tape<F>,
        registry: &ParameterRegistry<F>,
        x: Var,
    ) -> Var {
        assert_eq!(tape.value(x).cols(), self.dim, "layernorm width mismatch");
        let g = tape.param(registry, self.gain);
        let s = tape.param(registry, self.shift);
        let n = tape.normalize_rows(x, F::from_f64(self.epsilon));
        let scaled = tape.mul_row(n, g);
        tape.add_row(scaled, s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

/// Multi-head self-attention; Q, K, V projected from the same sequence.
#[derive(Debug, Clone)]
pub struct MultiHeadSelfAttention {
    pub query: LinearLayer,
    pub key: LinearLayer,
    pub value: LinearLayer,
    pub output: LinearLayer,
    pub heads: usize,
    pub head_dim: usize,
}

impl MultiHeadSelfAttention {
    pub fn new<F: Element>(
        registry: &mut ParameterRegistry<F>,
        rng: &mut Rng,
        name: &str,
        model_dim: usize,
        heads: usize,
    ) -> Result<Self, ConfigError> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(ConfigError(format!(
                "model_dim {model_dim} not divisible by heads {heads}"
            )));
        }
        Ok(MultiHeadSelfAttention {
            query: LinearLayer::new(registry, rng, &format!("{name}.q"), model_dim, model_dim),
            key: LinearLayer::new(registry, rng, &format!("{name}.k"), model_dim, model_dim),
            value: LinearLayer::new(registry, rng, &format!("{name}.v"), model_dim, model_dim),
            output: LinearLayer::new(registry, rng, &format!("{name}.out"), model_dim, model_dim),
            heads,
            head_dim: model_dim / heads,
        })
    }

    /// Attention over a single sequence (`seq` rows are tokens). Returns the
    /// output and one `T x T` softmax weight matrix per head.
    pub fn forward<F: Element>(
        &self,
        tape: &mut Tape<F>,
        registry: &ParameterRegistry<F>,
        seq: Var,
    ) -> (Var, Vec<Var>) {
        let seq_len = tape.value(seq).rows();
        let (out, mut attn) = self.forward_batched(tape, registry, seq, seq_len);
        (out, attn.pop().expect("one sequence in, one out"))
    }

    /// Attention over `B` sequences of equal length stacked row-wise
    /// (`x` has `B * seq_len` rows). The projections run batched over the
    /// stack; the attention pattern itself never crosses sequence
    /// boundaries. Returns per-sequence, per-head weights.
    pub fn forward_batched<F: Element>(
        &self,
        tape: &mut Tape<F>,
        registry: &ParameterRegistry<F>,
        x: Var,
        seq_len: usize,
    ) -> (Var, Vec<Vec<Var>>) {
        let total = tape.value(x).rows();
        assert!(seq_len >= 1 && total.is_multiple_of(seq_len), "ragged sequence stack");
        let batch = total / seq_len;
        let scale = F::from_f64(1.0 / (self.head_dim as f64).sqrt());

        let q_all = self.query.forward(tape, registry, x);
        let k_all = self.key.forward(tape, registry, x);
        let v_all = self.value.forward(tape, registry, x);

        let mut attn_weights = Vec::with_capacity(batch);
        let mut seq_outputs = Vec::with_capacity(batch);
        for b in 0..batch {
            let q_seq = tape.slice_rows(q_all, b * seq_len, seq_len);
            let k_seq = tape.slice_rows(k_all, b * seq_len, seq_len);
            let v_seq = tape.slice_rows(v_all, b * seq_len, seq_len);
            let mut head_weights = Vec::with_capacity(self.heads);
            let mut head_outputs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let off = h * self.head_dim;
                let qh = tape.slice_cols(q_seq, off, self.head_dim);
                let kh = tape.slice_cols(k_seq, off, self.head_dim);
                let vh = tape.slice_cols(v_seq, off, self.head_dim);
                let scores = tape.matmul_bt(qh, kh);
                let scaled = tape.scale(scores, scale);
                let weights = tape.softmax_rows(scaled);
                let ctx = tape.matmul(weights, vh);
                head_weights.push(weights);
                head_outputs.push(ctx);
            }
            attn_weights.push(head_weights);
            seq_outputs.push(tape.concat_cols(&head_outputs));
        }
        let concat = if seq_outputs.len() == 1 {
            seq_outputs[0]
        } else {
            tape.concat_rows(&seq_outputs)
        };
        let out = self.output.forward(tape, registry, concat);
        (out, attn_weights)
    }

    /// Attention over `n` two-token (query, document) sequences stacked in
    /// block form: rows `0..n` of `x` are the query tokens, rows `n..2n`
    /// the document tokens, pairing row `i` with row `n + i`. A two-token
    /// softmax collapses to a sigmoid of the score difference, so every
    /// sequence runs through the same handful of batched ops with no
    /// per-sequence slicing. Returns the updated stack and the per-head
    /// query-to-document weight columns (`n x 1`).
    pub fn forward_pairs<F: Element>(
        &self,
        tape: &mut Tape<F>,
        registry: &ParameterRegistry<F>,
        x: Var,
        n: usize,
    ) -> (Var, Vec<Var>) {
        assert_eq!(tape.value(x).rows(), 2 * n, "pair stack height mismatch");
        let scale = F::from_f64(1.0 / (self.head_dim as f64).sqrt());
        let q_all = self.query.forward(tape, registry, x);
        let k_all = self.key.forward(tape, registry, x);
        let v_all = self.value.forward(tape, registry, x);
        let split = |m: Var, t: &mut Tape<F>| (t.slice_rows(m, 0, n), t.slice_rows(m, n, n));
        let (qq, qc) = split(q_all, tape);
        let (kq, kc) = split(k_all, tape);
        let (vq, vc) = split(v_all, tape);

        let mut ctx_q_heads = Vec::with_capacity(self.heads);
        let mut ctx_c_heads = Vec::with_capacity(self.heads);
        let mut q_to_c = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let off = h * self.head_dim;
            let qq_h = tape.slice_cols(qq, off, self.head_dim);
            let qc_h = tape.slice_cols(qc, off, self.head_dim);
            let kq_h = tape.slice_cols(kq, off, self.head_dim);
            let kc_h = tape.slice_cols(kc, off, self.head_dim);
            let vq_h = tape.slice_cols(vq, off, self.head_dim);
            let vc_h = tape.slice_cols(vc, off, self.head_dim);
            let dot = |a: Var, b: Var, t: &mut Tape<F>| {
                let p = t.mul(a, b);
                t.row_sums(p)
            };
            let s_qq = dot(qq_h, kq_h, tape);
            let s_qc = dot(qq_h, kc_h, tape);
            let s_cq = dot(qc_h, kq_h, tape);
            let s_cc = dot(qc_h, kc_h, tape);
            let weight = |own: Var, other: Var, t: &mut Tape<F>| {
                let gap = t.sub(other, own);
                let scaled = t.scale(gap, scale);
                t.sigmoid(scaled)
            };
            // weight on the *other* token; softmax([own, other]) puts
            // sigmoid(other - own) on it
            let a_q = weight(s_qq, s_qc, tape);
            let a_c = weight(s_cc, s_cq, tape);
            // ctx = (1 - a) * own + a * other = own + a * (other - own)
            let blend = |own: Var, other: Var, a: Var, t: &mut Tape<F>| {
                let diff = t.sub(other, own);
                let shift = t.mul_col(diff, a);
                t.add(own, shift)
            };
            ctx_q_heads.push(blend(vq_h, vc_h, a_q, tape));
            ctx_c_heads.push(blend(vc_h, vq_h, a_c, tape));
            q_to_c.push(a_q);
        }
        let top = tape.concat_cols(&ctx_q_heads);
        let bot = tape.concat_cols(&ctx_c_heads);
        let ctx = tape.concat_rows(&[top, bot]);
        let out = self.output.forward(tape, registry, ctx);
        (out, q_to_c)
    }
}

/// One scorer layer: `LayerNorm(x + Attn(x))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attention: MultiHeadSelfAttention,
    pub norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new<F: Element>(
        registry: &mut ParameterRegistry<F>,
        rng: &mut Rng,
        name: &str,
        model_dim: usize,
        heads: usize,
        epsilon: f64,
    ) -> Result<Self, ConfigError> {
        Ok(EncoderLayer {
            attention: MultiHeadSelfAttention::new(
                registry,
                rng,
                &format!("{name}.attn"),
                model_dim,
                heads,
            )?,
            norm: LayerNorm::new(registry, &format!("{name}.norm"), model_dim, epsilon),
        })
    }

    pub fn forward_batched<F: Element>(
        &self,
        tape: &mut Tape<F>,
        registry: &ParameterRegistry<F>,
        x: Var,
        seq_len: usize,
    ) -> (Var, Vec<Vec<Var>>) {
        let (attn_out, weights) = self.attention.forward_batched(tape, registry, x, seq_len);
        let residual = tape.add(x, attn_out);
        (self.norm.forward(tape, registry, residual), weights)
    }

    /// Pair-stacked variant of `forward_batched` for two-token sequences;
    /// see [`MultiHeadSelfAttention::forward_pairs`] for the layout.
    pub fn forward_pairs<F: Element>(
        &self,
        tape: &mut Tape<F>,
        registry: &ParameterRegistry<F>,
        x: Var,
        n: usize,
    ) -> (Var, Vec<Var>) {
        let (attn_out, q_to_c) = self.attention.forward_pairs(tape, registry, x, n);
        let residual = tape.add(x, attn_out);
        (self.norm.forward(tape, registry, residual), q_to_c)
    }
}

/// Two-layer scoring head: linear, rectifier, linear.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub hidden: LinearLayer,
    pub output: LinearLayer,
}

impl Mlp2 {
    pub fn new<F: Element>(
        registry: &mut ParameterRegistry<F>,
        rng: &mut Rng,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        out_dim: usize,
    ) -> Self {
        Mlp2 {
            hidden: LinearLayer::new(registry, rng, &format!("{name}.hidden"), in_dim, hidden_dim),
            output: LinearLayer::new(registry, rng, &format!("{name}.out"), hidden_dim, out_dim),
        }
    }

    pub fn forward<F: Element>(
        &self,
        tape: &mut Tape<F>,
        registry: &ParameterRegistry<F>,
        x: Var,
    ) -> Var {
        let h = self.hidden.forward(tape, registry, x);
        let a = tape.relu(h);
        self.output.forward(tape, registry, a)
    }
}
