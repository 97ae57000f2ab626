//! Classification by next-token prediction, and free generation.
//!
//! A note is classified by appending the marker token and reading the logits
//! of the two label tokens at that position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelParams;
use crate::parallel;
use crate::real::Real;
use crate::tokenizer::Tokenizer;
use crate::training::truncate_front;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// P(label1) / (P(label0) + P(label1)).
    pub score: f64,
    pub predicted: bool,
    /// Argmax over the whole vocabulary at the marker position.
    pub raw_top_token: u32,
    /// Whether `raw_top_token` is one of the two label tokens.
    pub on_vocab: bool,
}

/// Note tokens front-truncated to `context_len - 2`, then the marker.
pub fn classification_prompt(tokenizer: &Tokenizer, text: &str, context_len: usize) -> Vec<u32> {
    let mut ids = truncate_front(tokenizer.encode(text), context_len.saturating_sub(2));
    ids.push(tokenizer.specials().marker);
    ids
}

pub fn classify<F: Real>(
    params: &ModelParams<F>,
    tokenizer: &Tokenizer,
    text: &str,
    threshold: f64,
) -> Result<Prediction> {
    let ids = classification_prompt(tokenizer, text, params.config().context_len);
    let logits = params.last_logits(&ids)?;
    let s = tokenizer.specials();
    let l0 = logits[s.label0 as usize].to_f64().unwrap_or(f64::NAN);
    let l1 = logits[s.label1 as usize].to_f64().unwrap_or(f64::NAN);
    let score = 1.0 / (1.0 + (l0 - l1).exp());
    let top = argmax(&logits) as u32;
    Ok(Prediction {
        score,
        predicted: score >= threshold,
        raw_top_token: top,
        on_vocab: top == s.label0 || top == s.label1,
    })
}

/// Classifies every text, fanning out over the parallel helpers.
pub fn classify_batch<F: Real, S: AsRef<str> + Sync>(
    params: &ModelParams<F>,
    tokenizer: &Tokenizer,
    texts: &[S],
    threshold: f64,
) -> Result<Vec<Prediction>> {
    parallel::map(texts, |t| classify(params, tokenizer, t.as_ref(), threshold))
        .into_iter()
        .collect()
}

/// First index of the maximum.
fn argmax<F: Real>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub max_new_tokens: usize,
    /// Zero means greedy.
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub seed: u64,
    /// Stop after emitting EOT.
    pub stop_at_eot: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            max_new_tokens: 64,
            temperature: 1.0,
            top_k: None,
            seed: 0,
            stop_at_eot: true,
        }
    }
}

/// Samples an index from `logits / temperature`, restricted to the `top_k`
/// largest (ties broken by lower index).
pub fn sample_logits(logits: &[f64], temperature: f64, top_k: Option<usize>, rng: &mut impl Rng) -> usize {
    if temperature <= 0.0 {
        return argmax(logits);
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(top_k.unwrap_or(logits.len()).clamp(1, logits.len()));
    let max = logits[idx[0]];
    let weights: Vec<f64> = idx.iter().map(|&i| ((logits[i] - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&i, w) in idx.iter().zip(&weights) {
        if u < *w {
            return i;
        }
        u -= w;
    }
    *idx.last().unwrap()
}

/// Continues `prompt` token by token. The running sequence is front-truncated
/// to the context window before each step.
pub fn generate<F: Real>(
    params: &ModelParams<F>,
    prompt: &[u32],
    opts: &GenerateOptions,
    eot: u32,
) -> Result<Vec<u32>> {
    let ctx = params.config().context_len;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut seq = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..opts.max_new_tokens {
        let start = seq.len().saturating_sub(ctx);
        let logits: Vec<f64> = params
            .last_logits(&seq[start..])?
            .iter()
            .map(|x| x.to_f64().unwrap_or(f64::NAN))
            .collect();
        let next = sample_logits(&logits, opts.temperature, opts.top_k, &mut rng) as u32;
        seq.push(next);
        out.push(next);
        if opts.stop_at_eot && next == eot {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::model::ModelConfig;

    fn cfg(vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            context_len: 32,
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            d_mlp: 32,
            dropout: 0.0,
            seed: 9,
        }
    }

    #[test]
    fn equal_label_logits_score_one_half() {
        let tok = Tokenizer::byte_level();
        let mut params = ModelParams::<f64>::init(&cfg(tok.vocab_size())).unwrap();
        // identical embedding rows for both labels give identical logits
        let s = tok.specials();
        let d = params.config().d_model;
        let emb: &mut Tensor<f64> = &mut params.tensors_mut()[0];
        let row0: Vec<f64> = emb.row(s.label0 as usize).to_vec();
        emb.data_mut()[s.label1 as usize * d..(s.label1 as usize + 1) * d].copy_from_slice(&row0);
        let p = classify(&params, &tok, "douleur", 0.5).unwrap();
        assert_eq!(p.score, 0.5);
        assert!(p.predicted);
    }

    #[test]
    fn untrained_model_rarely_predicts_label_tokens() {
        let tok = Tokenizer::byte_level();
        let params = ModelParams::<f32>::init(&cfg(tok.vocab_size())).unwrap();
        let texts: Vec<String> = (0..200).map(|i| format!("note {i} patient vu")).collect();
        let preds = classify_batch(&params, &tok, &texts, 0.5).unwrap();
        let on = preds.iter().filter(|p| p.on_vocab).count();
        assert!(on < 10, "{on}");
        assert!(preds.iter().all(|p| p.score > 0.0 && p.score < 1.0));
    }

    #[test]
    fn batch_matches_single_and_parallel_matches_sequential() {
        let tok = Tokenizer::byte_level();
        let params = ModelParams::<f32>::init(&cfg(tok.vocab_size())).unwrap();
        let texts = ["a", "bb", "ccc", "dddd"];
        let batch = classify_batch(&params, &tok, &texts, 0.5).unwrap();
        for (t, p) in texts.iter().zip(&batch) {
            assert_eq!(&classify(&params, &tok, t, 0.5).unwrap(), p);
        }
    }

    #[test]
    fn top_k_one_is_greedy() {
        let params = ModelParams::<f64>::init(&cfg(40)).unwrap();
        let greedy = GenerateOptions { temperature: 0.0, max_new_tokens: 10, stop_at_eot: false, ..Default::default() };
        let top1 = GenerateOptions { temperature: 1.3, top_k: Some(1), seed: 77, ..greedy.clone() };
        let a = generate(&params, &[1, 2, 3], &greedy, 39).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, generate(&params, &[1, 2, 3], &top1, 39).unwrap());
    }

    #[test]
    fn sampling_is_seeded() {
        let params = ModelParams::<f64>::init(&cfg(40)).unwrap();
        let o = GenerateOptions { max_new_tokens: 40, stop_at_eot: false, seed: 3, ..Default::default() };
        let a = generate(&params, &[5], &o, 39).unwrap();
        assert_eq!(a, generate(&params, &[5], &o, 39).unwrap());
        // runs past the context window by truncating the front
        assert_eq!(a.len(), 40);
    }

    #[test]
    fn sampler_matches_softmax_frequencies() {
        let logits = [0.0f64, 1.0, 2.0, -1.0];
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let n = 40_000;
        let mut counts = [0usize; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..n {
            counts[sample_logits(&logits, 1.0, None, &mut rng)] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&logits)
            .map(|(&c, l)| {
                let e = n as f64 * l.exp() / z;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // 3 degrees of freedom, p = 0.001
        assert!(chi2 < 16.27, "{chi2}");

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let i = sample_logits(&logits, 1.0, Some(2), &mut rng);
            assert!(i == 1 || i == 2);
        }
    }
}
