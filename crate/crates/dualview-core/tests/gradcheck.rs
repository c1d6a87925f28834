//! End-to-end gradient verification: the tape's backward pass through the
//! complete model (every ablation) and the combined loss must agree with
//! central finite differences computed in f64.

use dualview_core::baseline::MlpBaseline;
use dualview_core::config::{Ablation, ModelConfig};
use dualview_core::data::{Candidate, CandidateSet};
use dualview_core::fdcheck::fd_gradient_check;
use dualview_core::losses::{combined_loss_tape, LossConfig};
use dualview_core::model::{DualViewModel, ScoringModel};
use dualview_core::rng::Rng;
use dualview_core::tape::Tape;

const H: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn test_set(seed: u64, dim: usize, n: usize, n_gold: usize) -> CandidateSet {
    let mut rng = Rng::new(seed);
    let q: Vec<f32> = rng.unit_vector(dim).into_iter().map(|x| x as f32).collect();
    CandidateSet {
        query_id: String::from("q0"),
        query_embedding: q,
        candidates: (0..n)
            .map(|i| Candidate {
                doc_id: format!("d{i}"),
                embedding: rng.unit_vector(dim).into_iter().map(|x| x as f32).collect(),
                label: u8::from(i < n_gold),
            })
            .collect(),
    }
}

fn model_loss(model: &DualViewModel<f64>, set: &CandidateSet, loss_cfg: &LossConfig) -> f64 {
    let mut tape = Tape::new();
    let scores = model.forward_scores(&mut tape, set).unwrap();
    let labels: Vec<u8> = set.candidates.iter().map(|c| c.label).collect();
    let (_, breakdown) = combined_loss_tape(&mut tape, scores, &labels, loss_cfg).unwrap();
    breakdown.total
}

fn check_model_gradients(ablation: Ablation) {
    let cfg = ModelConfig::tiny().with_ablation(ablation);
    let mut model = DualViewModel::<f64>::new(cfg, 0xfd + ablation as u64).unwrap();
    let set = test_set(17, cfg.embed_dim, 4, 2);
    let loss_cfg = LossConfig::default();

    let mut tape = Tape::new();
    let scores = model.forward_scores(&mut tape, &set).unwrap();
    let labels: Vec<u8> = set.candidates.iter().map(|c| c.label).collect();
    let (loss, _) = combined_loss_tape(&mut tape, scores, &labels, &loss_cfg).unwrap();
    let grads = tape.backward(loss).unwrap();
    model.registry_mut().zero_grads();
    grads.accumulate_into(&tape, model.registry_mut());

    let report = fd_gradient_check(
        model.registry(),
        |reg| {
            let mut probe = DualViewModel::<f64>::new(cfg, 0).unwrap();
            probe.load_values(reg).unwrap();
            model_loss(&probe, &set, &loss_cfg)
        },
        H,
        TOL,
    )
    .unwrap();
    assert!(
        report.failures.is_empty(),
        "{ablation:?}: {} of {} parameters failed (worst {:.3e}):\n{}",
        report.failures.len(),
        report.per_param.len(),
        report.max_rel_err,
        report.failures.join("\n")
    );
}

#[test]
fn full_model_gradients_match_finite_differences() {
    check_model_gradients(Ablation::Full);
}

#[test]
fn avg_fusion_gradients_match_finite_differences() {
    check_model_gradients(Ablation::AvgFusion);
}

#[test]
fn no_global_gradients_match_finite_differences() {
    check_model_gradients(Ablation::NoGlobal);
}

#[test]
fn no_local_gradients_match_finite_differences() {
    check_model_gradients(Ablation::NoLocal);
}

#[test]
fn gradients_flow_into_every_component() {
    // beyond agreeing with finite differences, no parameter of the full
    // model should be structurally dead. The gate's output layer starts at
    // zero (neutral 50/50 fusion), which blocks gradient flow into the gate
    // MLP at the exact init point, so jitter every parameter first: the
    // check is about graph connectivity, not the init values.
    let cfg = ModelConfig::tiny();
    let mut model = DualViewModel::<f64>::new(cfg, 31).unwrap();
    let mut jitter = Rng::new(0x6a69);
    for slot in 0..model.registry().len() {
        for v in model.registry_mut().value_mut(slot).data_mut() {
            *v += 0.05 * jitter.normal();
        }
    }
    let set = test_set(37, cfg.embed_dim, 4, 2);

    let mut tape = Tape::new();
    let scores = model.forward_scores(&mut tape, &set).unwrap();
    let labels: Vec<u8> = set.candidates.iter().map(|c| c.label).collect();
    let (loss, _) = combined_loss_tape(&mut tape, scores, &labels, &LossConfig::default()).unwrap();
    let grads = tape.backward(loss).unwrap();
    model.registry_mut().zero_grads();
    grads.accumulate_into(&tape, model.registry_mut());

    for p in model.registry().iter() {
        let norm: f64 = p.grad.data().iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm > 0.0, "no gradient reached {}", p.name);
    }
}

#[test]
fn mlp_baseline_gradients_match_finite_differences() {
    let mut model = MlpBaseline::<f64>::new(8, 5, 41);
    let set = test_set(43, 8, 4, 2);
    let loss_cfg = LossConfig::default();

    let mut tape = Tape::new();
    let scores = model.forward_scores(&mut tape, &set).unwrap();
    let labels: Vec<u8> = set.candidates.iter().map(|c| c.label).collect();
    let (loss, _) = combined_loss_tape(&mut tape, scores, &labels, &loss_cfg).unwrap();
    let grads = tape.backward(loss).unwrap();
    model.registry_mut().zero_grads();
    grads.accumulate_into(&tape, model.registry_mut());

    let report = fd_gradient_check(
        model.registry(),
        |reg| {
            let mut probe = MlpBaseline::<f64>::new(8, 5, 0);
            for slot in 0..reg.len() {
                *probe.registry_mut().value_mut(slot) = reg.value(slot).clone();
            }
            let mut t = Tape::new();
            let s = probe.forward_scores(&mut t, &set).unwrap();
            let labels: Vec<u8> = set.candidates.iter().map(|c| c.label).collect();
            let (_, b) = combined_loss_tape(&mut t, s, &labels, &loss_cfg).unwrap();
            b.total
        },
        H,
        TOL,
    )
    .unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
}
