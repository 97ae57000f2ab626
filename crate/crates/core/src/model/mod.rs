//! GPT-2 shaped decoder-only transformer: learned token and position
//! embeddings, pre-norm blocks of causal multi-head attention and a GELU MLP,
//! a final layer norm, and logits through the transposed token embedding.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::real::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 5005,
            context_len: 256,
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_mlp: 512,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-size presets: `gpt2-117m` and `gpt2-345m`.
    pub fn preset(name: &str) -> Option<Self> {
        let (n_layers, d_model, n_heads) = match name {
            "gpt2-117m" => (12, 768, 12),
            "gpt2-345m" => (24, 1024, 16),
            _ => return None,
        };
        Some(Self {
            vocab_size: 50257,
            context_len: 1024,
            n_layers,
            n_heads,
            d_model,
            d_mlp: 4 * d_model,
            dropout: 0.1,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.context_len < 2 {
            return bad(format!("context_len {} must be at least 2", self.context_len));
        }
        if self.vocab_size == 0 || self.d_mlp == 0 || self.n_layers == 0 {
            return bad("vocab_size, d_mlp and n_layers must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Ordered parameter names and shapes.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, m) = (self.d_model, self.d_mlp);
        let mut out = vec![
            ("token_embedding".to_string(), vec![self.vocab_size, d]),
            ("position_embedding".to_string(), vec![self.context_len, d]),
        ];
        for l in 0..self.n_layers {
            for (name, shape) in [
                ("ln1.gain", vec![d]),
                ("ln1.bias", vec![d]),
                ("attn.query.weight", vec![d, d]),
                ("attn.query.bias", vec![d]),
                ("attn.key.weight", vec![d, d]),
                ("attn.key.bias", vec![d]),
                ("attn.value.weight", vec![d, d]),
                ("attn.value.bias", vec![d]),
                ("attn.out.weight", vec![d, d]),
                ("attn.out.bias", vec![d]),
                ("ln2.gain", vec![d]),
                ("ln2.bias", vec![d]),
                ("mlp.in.weight", vec![d, m]),
                ("mlp.in.bias", vec![m]),
                ("mlp.out.weight", vec![m, d]),
                ("mlp.out.bias", vec![d]),
            ] {
                out.push((format!("blocks.{l}.{name}"), shape));
            }
        }
        out.push(("final_norm.gain".to_string(), vec![d]));
        out.push(("final_norm.bias".to_string(), vec![d]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

const PER_BLOCK: usize = 16;

/// All trainable tensors, in [`ModelConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    config: ModelConfig,
    tensors: Vec<Tensor<F>>,
}

impl<F: Real> ModelParams<F> {
    /// Random initialization: N(0, 0.02) weights and embeddings, residual
    /// output projections further scaled by 1/sqrt(2 n_layers), zero biases,
    /// unit norm gains.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let resid = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".gain") {
                    Tensor::from_fn(&shape, |_| F::one())
                } else if name.ends_with(".bias") {
                    Tensor::zeros(&shape)
                } else {
                    let s = if name.ends_with("attn.out.weight") || name.ends_with("mlp.out.weight") {
                        resid
                    } else {
                        1.0
                    };
                    Tensor::from_fn(&shape, |_| F::from_f64_lossy(normal.sample(&mut rng) * s))
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<F>>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != tensors.len()
            || layout.iter().zip(&tensors).any(|((_, s), t)| s != t.shape())
        {
            return Err(Error::Config("tensor shapes do not match the model layout".into()));
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.tensors
    }

    pub fn token_embedding(&self) -> &Tensor<F> {
        &self.tensors[0]
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every tensor on `g`, returning vars in layout order.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p, F>, requires_grad: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| g.bind(t, requires_grad)).collect()
    }

    /// Final-norm hidden states `[len, d_model]` for `ids`. With `dropout`
    /// set and a positive dropout rate, the embedding sum and both residual
    /// branches are dropped out.
    pub fn hidden<'p>(
        &self,
        g: &mut Graph<'p, F>,
        vars: &[Var],
        ids: &[u32],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let t = ids.len();
        if t == 0 {
            return Err(Error::Config("empty token sequence".into()));
        }
        if t > cfg.context_len {
            return Err(Error::SequenceTooLong {
                len: t,
                context_len: cfg.context_len,
            });
        }
        if let Some((position, &id)) = ids
            .iter()
            .enumerate()
            .find(|(_, &id)| id as usize >= cfg.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                id,
                position,
                vocab_size: cfg.vocab_size,
            });
        }
        let rate = cfg.dropout;
        let mut apply_dropout = |g: &mut Graph<'p, F>, x: Var| -> Result<Var> {
            match dropout.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
                    let mask = Tensor::from_fn(g.shape(x), |_| {
                        if rng.random::<f64>() < rate {
                            F::zero()
                        } else {
                            keep
                        }
                    });
                    let m = g.leaf(mask, false);
                    Ok(g.mul(x, m)?)
                }
                _ => Ok(x),
            }
        };

        let token_ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..t).collect();
        let tok = g.embedding(vars[0], &token_ids)?;
        let pos = g.embedding(vars[1], &positions)?;
        let mut x = g.add(tok, pos)?;
        x = apply_dropout(g, x)?;

        let mask = causal_mask::<F>(t);
        let eps = F::from_f64_lossy(LAYER_NORM_EPS);
        let dh = cfg.head_dim();
        let att_scale = F::from_f64_lossy(1.0 / (dh as f64).sqrt());
        for l in 0..cfg.n_layers {
            let p = &vars[2 + l * PER_BLOCK..2 + (l + 1) * PER_BLOCK];
            let h = g.layer_norm(x, p[0], p[1], eps)?;
            let q = g.matmul(h, p[2])?;
            let q = g.add(q, p[3])?;
            let k = g.matmul(h, p[4])?;
            let k = g.add(k, p[5])?;
            let v = g.matmul(h, p[6])?;
            let v = g.add(v, p[7])?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for hd in 0..cfg.n_heads {
                let (lo, hi) = (hd * dh, (hd + 1) * dh);
                let qh = g.slice(q, lo, hi)?;
                let kh = g.slice(k, lo, hi)?;
                let vh = g.slice(v, lo, hi)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, att_scale)?;
                let att = g.softmax(scores, Some(&mask))?;
                heads.push(g.matmul(att, vh)?);
            }
            let merged = g.concat(&heads)?;
            let proj = g.matmul(merged, p[8])?;
            let proj = g.add(proj, p[9])?;
            let proj = apply_dropout(g, proj)?;
            x = g.add(x, proj)?;

            let h = g.layer_norm(x, p[10], p[11], eps)?;
            let h = g.matmul(h, p[12])?;
            let h = g.add(h, p[13])?;
            let h = g.gelu(h)?;
            let h = g.matmul(h, p[14])?;
            let h = g.add(h, p[15])?;
            let h = apply_dropout(g, h)?;
            x = g.add(x, h)?;
        }
        let last = vars.len();
        Ok(g.layer_norm(x, vars[last - 2], vars[last - 1], eps)?)
    }

    /// Logits `[rows, vocab]` through the tied output projection.
    pub fn project(&self, g: &mut Graph<'_, F>, vars: &[Var], hidden: Var) -> Result<Var> {
        let et = g.transpose(vars[0])?;
        Ok(g.matmul(hidden, et)?)
    }

    /// Logits for every position, without gradient tracking.
    pub fn forward(&self, ids: &[u32]) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let h = self.hidden(&mut g, &vars, ids, None)?;
        let logits = self.project(&mut g, &vars, h)?;
        Ok(g.value(logits).clone())
    }

    /// Logits at the final position only.
    pub fn last_logits(&self, ids: &[u32]) -> Result<Vec<F>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let h = self.hidden(&mut g, &vars, ids, None)?;
        let last = g.embedding(h, &[ids.len() - 1])?;
        let logits = self.project(&mut g, &vars, last)?;
        Ok(g.value(logits).data().to_vec())
    }
}

/// `[t, t]` additive mask: 0 on and below the diagonal, -inf above.
pub fn causal_mask<F: Real>(t: usize) -> Tensor<F> {
    Tensor::from_fn(&[t, t], |i| {
        if i % t > i / t {
            F::neg_infinity()
        } else {
            F::zero()
        }
    })
}

#[cfg(test)]
mod tests;
