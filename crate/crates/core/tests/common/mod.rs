//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use notegpt::model::{ModelConfig, ModelParams};
use notegpt::training::{example_loss, TrainingExample};

/// O(n²) pair count: (concordant + ½·tied) / (n_pos · n_neg).
pub fn brute_force_auc(scores: &[(f64, bool)]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut twice = 0u64;
    for &p in &pos {
        for &n in &neg {
            twice += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    Some(twice as f64 / (2 * pos.len() * neg.len()) as f64)
}

/// `lo · (hi/lo)^(i/(n-1))`, rounded half away from zero, written without
/// logarithms.
pub fn grid_oracle(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    let ratio = hi as f64 / lo as f64;
    let mut v: Vec<usize> = (0..n)
        .map(|i| (lo as f64 * ratio.powf(i as f64 / (n - 1) as f64)).round() as usize)
        .collect();
    v.dedup();
    v
}

/// Hand-built labeling table: every listed letter, the T1–T35 boundary and
/// the X/Y external-cause ranges.
pub const ICD10_GOLDEN: &[(&str, &str)] = &[
    ("S72.1", "trauma"),
    ("S00", "trauma"),
    ("S99.9", "trauma"),
    ("s42", "trauma"),
    ("V01", "trauma"),
    ("V89.2", "trauma"),
    ("V99", "trauma"),
    ("T1", "trauma"),
    ("T01", "trauma"),
    ("t9", "trauma"),
    ("T14.9", "trauma"),
    ("T20.3", "trauma"),
    ("T35", "trauma"),
    ("T35.7", "trauma"),
    ("T00", "excluded"),
    ("T36", "excluded"),
    ("T36.0", "excluded"),
    ("T50.9", "excluded"),
    ("T78.4", "excluded"),
    ("T98", "excluded"),
    ("A09", "nontrauma"),
    ("A41.9", "nontrauma"),
    ("C34.1", "nontrauma"),
    ("D64.9", "nontrauma"),
    ("E11.9", "nontrauma"),
    ("G40.9", "nontrauma"),
    ("G43", "nontrauma"),
    ("H66.9", "nontrauma"),
    ("I21.4", "nontrauma"),
    ("I63", "nontrauma"),
    ("J18.9", "nontrauma"),
    ("j45", "nontrauma"),
    ("L03.1", "nontrauma"),
    ("N39.0", "nontrauma"),
    ("N20", "nontrauma"),
    ("B34.9", "excluded"),
    ("F10.0", "excluded"),
    ("K35.8", "excluded"),
    ("M54.5", "excluded"),
    ("O20", "excluded"),
    ("P07", "excluded"),
    ("Q21", "excluded"),
    ("R07.4", "excluded"),
    ("U07.1", "excluded"),
    ("W54", "excluded"),
    ("W19", "excluded"),
    ("X40", "excluded"),
    ("X57", "excluded"),
    ("X58", "excluded"),
    ("Y10", "excluded"),
    ("Y98", "excluded"),
    ("Z00.0", "excluded"),
    ("Z04", "excluded"),
];

pub fn tiny_config(vocab: usize, ctx: usize, d: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        context_len: ctx,
        n_layers: 1,
        n_heads: 2,
        d_model: d,
        d_mlp: 4 * d,
        dropout: 0.0,
        seed: 11,
    }
}

/// Central differences of the example loss for every parameter entry.
/// Returns, per tensor, `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-6)`.
/// The floor matters for tensors whose true gradient is identically zero,
/// such as the attention key bias (softmax is shift invariant per query).
pub fn finite_difference_errors(params: &ModelParams<f64>, ex: &TrainingExample, h: f64) -> Vec<(String, f64)> {
    let (_, analytic) = example_loss(params, ex, None, true).unwrap();
    let layout = params.config().layout();
    let mut p = params.clone();
    let mut out = Vec::new();
    for (ti, (name, _)) in layout.iter().enumerate() {
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..p.tensors()[ti].numel() {
            let orig = p.tensors()[ti].data()[j];
            p.tensors_mut()[ti].data_mut()[j] = orig + h;
            let plus = example_loss(&p, ex, None, false).unwrap().0;
            p.tensors_mut()[ti].data_mut()[j] = orig - h;
            let minus = example_loss(&p, ex, None, false).unwrap().0;
            p.tensors_mut()[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[ti][j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let denom = na.sqrt().max(nn.sqrt()).max(1e-6);
        out.push((name.clone(), diff.sqrt() / denom));
    }
    out
}

/// Mean per-token cross-entropy (nats) of a unigram model fit on `fit`,
/// evaluated on `eval`, with add-one smoothing over `vocab` ids.
pub fn unigram_cross_entropy(fit: &[Vec<u32>], eval: &[Vec<u32>], vocab: usize) -> f64 {
    let mut counts = vec![1.0f64; vocab];
    for ids in fit {
        for &t in ids {
            counts[t as usize] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    let (mut nll, mut n) = (0.0, 0.0);
    for ids in eval {
        for &t in &ids[1..] {
            nll -= (counts[t as usize] / total).ln();
            n += 1.0;
        }
    }
    nll / n
}
