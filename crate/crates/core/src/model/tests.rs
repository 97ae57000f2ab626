use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn tiny(vocab: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        context_len: 16,
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_mlp: 32,
        dropout: 0.0,
        seed: 11,
    }
}

#[test]
fn init_is_deterministic_in_seed() {
    let a = ModelParams::<f64>::init(&tiny(50)).unwrap();
    let b = ModelParams::<f64>::init(&tiny(50)).unwrap();
    assert_eq!(a, b);
    let mut other = tiny(50);
    other.seed = 12;
    assert_ne!(a, ModelParams::<f64>::init(&other).unwrap());
}

#[test]
fn parameter_count_matches_closed_form() {
    let c = ModelConfig {
        vocab_size: 5005,
        ..ModelConfig::default()
    };
    let (v, t, d, m, l) = (c.vocab_size, c.context_len, c.d_model, c.d_mlp, c.n_layers);
    let per_block = 4 * (d * d + d) + 2 * 2 * d + (d * m + m) + (m * d + d);
    let expect = v * d + t * d + l * per_block + 2 * d;
    let params = ModelParams::<f32>::init(&c).unwrap();
    assert_eq!(params.param_count(), expect);
    assert_eq!(c.param_count(), expect);
}

#[test]
fn presets_have_reference_shapes() {
    let p = ModelConfig::preset("gpt2-117m").unwrap();
    assert_eq!((p.n_layers, p.d_model, p.n_heads, p.context_len), (12, 768, 12, 1024));
    let p = ModelConfig::preset("gpt2-345m").unwrap();
    assert_eq!((p.n_layers, p.d_model, p.n_heads), (24, 1024, 16));
    // ~124M with the 50257-token vocabulary and tied output projection
    let n = ModelConfig::preset("gpt2-117m").unwrap().param_count();
    assert!((120_000_000..130_000_000).contains(&n), "{n}");
    assert!(ModelConfig::preset("gpt9").is_none());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = tiny(10);
    c.n_heads = 3;
    assert!(c.validate().is_err());
    let mut c = tiny(10);
    c.context_len = 1;
    assert!(c.validate().is_err());
}

#[test]
fn future_tokens_do_not_change_past_logits() {
    let params = ModelParams::<f64>::init(&tiny(40)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let len = rng.random_range(2..=16);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..40)).collect();
        let base = params.forward(&ids).unwrap();
        let j = rng.random_range(1..len);
        let mut changed = ids.clone();
        changed[j] = (changed[j] + 1) % 40;
        let other = params.forward(&changed).unwrap();
        for t in 0..j {
            assert_eq!(base.row(t), other.row(t));
        }
        assert_ne!(base.row(j), other.row(j));
    }
}

#[test]
fn single_token_and_length_errors() {
    let params = ModelParams::<f32>::init(&tiny(40)).unwrap();
    let out = params.forward(&[3]).unwrap();
    assert_eq!(out.shape(), &[1, 40]);
    assert!(out.data().iter().all(|v| v.is_finite()));
    let err = params.forward(&[1; 17]).unwrap_err();
    assert!(matches!(err, Error::SequenceTooLong { len: 17, context_len: 16 }));
    let err = params.forward(&[1, 40]).unwrap_err();
    assert!(matches!(err, Error::TokenOutOfRange { id: 40, position: 1, .. }));
    let last = params.last_logits(&[1, 2, 3]).unwrap();
    assert_eq!(last.as_slice(), params.forward(&[1, 2, 3]).unwrap().row(2));
}

#[test]
fn untrained_predictions_are_near_uniform() {
    let cfg = ModelConfig {
        vocab_size: 1000,
        context_len: 32,
        ..tiny(1000)
    };
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut total, mut count) = (0.0, 0usize);
    for _ in 0..100 {
        let ids: Vec<u32> = (0..rng.random_range(1..32)).map(|_| rng.random_range(0..1000)).collect();
        let logits = params.forward(&ids).unwrap();
        for r in 0..logits.rows() {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let h: f64 = row
                .iter()
                .map(|v| {
                    let p = (v - max).exp() / z;
                    -p * p.ln()
                })
                .sum();
            total += h;
            count += 1;
        }
    }
    let mean = total / count as f64;
    let uniform = (1000f64).ln();
    assert!((mean - uniform).abs() / uniform < 0.05, "{mean} vs {uniform}");
}

#[test]
fn dropout_only_applies_with_rng() {
    let mut cfg = tiny(30);
    cfg.dropout = 0.5;
    let params = ModelParams::<f64>::init(&cfg).unwrap();
    let ids = [1, 2, 3, 4];
    assert_eq!(params.forward(&ids).unwrap(), params.forward(&ids).unwrap());
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = params.hidden(&mut g, &vars, &ids, Some(&mut rng)).unwrap();
    let logits = params.project(&mut g, &vars, h).unwrap();
    assert_ne!(g.value(logits), &params.forward(&ids).unwrap());
}

#[test]
fn checkpoint_round_trip_and_guards() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ck");
    let params = ModelParams::<f32>::init(&tiny(25)).unwrap();
    save_checkpoint(&params, "abc", 42, &path).unwrap();
    let (back, meta) = load_checkpoint::<f32>(&path, Some("abc")).unwrap();
    assert_eq!(back, params);
    assert_eq!(meta.step, 42);
    assert_eq!(meta.dtype, crate::FloatMode::F32);

    let err = load_checkpoint::<f32>(&path, Some("other")).unwrap_err();
    assert!(matches!(err, Error::TokenizerHashMismatch { .. }));

    let (wide, _) = load_checkpoint::<f64>(&path, None).unwrap();
    assert_eq!(wide.tensors()[0].data()[3], f64::from(params.tensors()[0].data()[3]));

    let bytes = std::fs::read(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let cut = rng.random_range(0..bytes.len());
        std::fs::write(&path, &bytes[..cut]).unwrap();
        let err = load_checkpoint::<f32>(&path, None).unwrap_err();
        assert!(matches!(err, Error::CorruptCheckpoint(_)), "{err}");
    }
}
