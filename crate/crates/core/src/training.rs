//! Both learning phases.
//!
//! Pre-training slides a window over each unlabeled note (tokens + EOT) and
//! predicts every next token. Fine-tuning appends `[MARKER, LABEL]` to a
//! labeled note and keeps the same next-token objective, so the label is just
//! the token that follows the marker. One iteration processes one example:
//! forward, masked mean cross-entropy, backward, global-norm clipping, Adam.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::real::Real;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossExtent {
    /// Every next-token position of the suffixed note.
    #[default]
    FullSequence,
    /// Only the position that predicts the label token.
    LabelOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from the base rate to zero over `max_iterations`.
    Cosine,
}

/// Iterations after which the evaluation hook runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalSchedule {
    Every { every: usize },
    /// `first`, `first·ratio`, `first·ratio²`, ... rounded, plus the final
    /// iteration, at most `max_points` of them.
    Geometric { first: usize, ratio: f64, max_points: usize },
}

impl Default for EvalSchedule {
    fn default() -> Self {
        EvalSchedule::Geometric {
            first: 20,
            ratio: std::f64::consts::SQRT_2,
            max_points: 50,
        }
    }
}

impl EvalSchedule {
    pub fn points(&self, max_iterations: usize) -> Vec<usize> {
        let mut pts = match *self {
            EvalSchedule::Every { every } => {
                let every = every.max(1);
                (1..=max_iterations / every).map(|k| k * every).collect::<Vec<_>>()
            }
            EvalSchedule::Geometric { first, ratio, max_points } => {
                let mut pts = Vec::new();
                let mut x = first.max(1) as f64;
                while (x.round() as usize) < max_iterations && pts.len() + 1 < max_points {
                    let p = x.round() as usize;
                    if pts.last() != Some(&p) {
                        pts.push(p);
                    }
                    x *= ratio.max(1.0 + 1e-9);
                }
                pts
            }
        };
        if max_iterations > 0 && pts.last() != Some(&max_iterations) {
            pts.push(max_iterations);
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub eval_every: EvalSchedule,
    pub seed: u64,
    pub loss_extent: LossExtent,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            batch_size: 1,
            max_iterations: 3000,
            eval_every: EvalSchedule::default(),
            seed: 0,
            loss_extent: LossExtent::FullSequence,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("learning_rate must be >= 0 and grad_clip > 0".into()));
        }
        Ok(())
    }

    fn lr_at(&self, iteration: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = iteration as f64 / self.max_iterations.max(1) as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Token ids with per-position loss weights. `loss_mask[i]` weights the
/// prediction of `ids[i]` from `ids[..i]`; `loss_mask[0]` is never used.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
}

impl TrainingExample {
    fn validate(&self) -> bool {
        self.ids.len() >= 2
            && self.loss_mask.len() == self.ids.len()
            && self.loss_mask[1..].iter().any(|&w| w > 0)
    }
}

/// Sliding windows over `text` + EOT: a single example when it fits the
/// context, otherwise windows of `context_len` tokens every `context_len / 2`
/// tokens, the last one clipped at the end.
pub fn make_pretrain_examples(
    text: &str,
    tokenizer: &Tokenizer,
    context_len: usize,
) -> Vec<TrainingExample> {
    let mut ids = tokenizer.encode(text);
    ids.push(tokenizer.specials().eot);
    let stride = (context_len / 2).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + context_len).min(ids.len());
        let window = ids[start..end].to_vec();
        out.push(TrainingExample {
            loss_mask: vec![1; window.len()],
            ids: window,
        });
        if end >= ids.len() {
            break;
        }
        start += stride;
    }
    out
}

/// Note tokens, front-truncated to `context_len - 2`, followed by the marker
/// and the label token.
pub fn make_finetune_example(
    text: &str,
    trauma: bool,
    tokenizer: &Tokenizer,
    context_len: usize,
    extent: LossExtent,
) -> TrainingExample {
    let s = tokenizer.specials();
    let mut ids = truncate_front(tokenizer.encode(text), context_len.saturating_sub(2));
    ids.push(s.marker);
    ids.push(s.label(trauma));
    let n = ids.len();
    let loss_mask = match extent {
        LossExtent::FullSequence => vec![1; n],
        LossExtent::LabelOnly => (0..n).map(|i| u8::from(i == n - 1)).collect(),
    };
    TrainingExample { ids, loss_mask }
}

/// Keeps the last `keep` tokens.
pub fn truncate_front(mut ids: Vec<u32>, keep: usize) -> Vec<u32> {
    if ids.len() > keep {
        ids.drain(..ids.len() - keep);
    }
    ids
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    t: i32,
    beta1: F,
    beta2: F,
    eps: F,
}

impl<F: Real> Adam<F> {
    pub fn new(params: &ModelParams<F>, cfg: &TrainConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![F::zero(); t.numel()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: F::from_f64_lossy(cfg.beta1),
            beta2: F::from_f64_lossy(cfg.beta2),
            eps: F::from_f64_lossy(cfg.adam_eps),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<F>, grads: &[Vec<F>], lr: f64) {
        self.t += 1;
        let one = F::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        let lr = F::from_f64_lossy(lr);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (one - self.beta1) * gi;
                *vi = self.beta2 * *vi + (one - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Real>(grads: &mut [Vec<F>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| kernels::dot(g, g).to_f64().unwrap_or(f64::INFINITY))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = F::from_f64_lossy(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Masked mean cross-entropy of one example and, when `with_grads`, the
/// gradients of every parameter in layout order.
pub fn example_loss<F: Real>(
    params: &ModelParams<F>,
    ex: &TrainingExample,
    dropout: Option<&mut ChaCha8Rng>,
    with_grads: bool,
) -> Result<(f64, Vec<Vec<F>>)> {
    if !ex.validate() {
        return Err(Error::Config("training example needs >= 2 ids and a weighted target".into()));
    }
    let mut g = Graph::new();
    let vars = params.bind(&mut g, with_grads);
    let n = ex.ids.len();
    let h = params.hidden(&mut g, &vars, &ex.ids[..n - 1], dropout)?;
    let logits = params.project(&mut g, &vars, h)?;
    let targets: Vec<usize> = ex.ids[1..].iter().map(|&t| t as usize).collect();
    let weights: Vec<F> = ex.loss_mask[1..].iter().map(|&w| F::from_u8(w).unwrap()).collect();
    let loss = g.cross_entropy(logits, &targets, Some(&weights))?;
    let value = g.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
    if !with_grads || !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![F::zero(); t.numel()], <[F]>::to_vec))
        .collect();
    Ok((value, grads))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub points: Vec<(usize, f64)>,
    /// Set when a stop request ended training before `max_iterations`.
    pub interrupted: bool,
}

impl LossTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iteration,loss")?;
        for (i, l) in &self.points {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

/// Options for [`train`] beyond the configuration.
#[derive(Default)]
pub struct TrainHooks<'a, F> {
    /// Runs after each iteration listed by the eval schedule.
    pub on_eval: Option<&'a mut dyn FnMut(usize, &ModelParams<F>) -> Result<()>>,
    /// Checked every iteration; training returns early once it is set.
    pub stop: Option<&'a AtomicBool>,
}

/// Trains `params` in place on `examples` for `cfg.max_iterations`
/// iterations, each epoch in a fresh seeded shuffle.
pub fn train<F: Real>(
    params: &mut ModelParams<F>,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    mut hooks: TrainHooks<'_, F>,
) -> Result<LossTrace> {
    cfg.validate()?;
    let mut trace = LossTrace::default();
    if cfg.max_iterations == 0 {
        return Ok(trace);
    }
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let eval_points = cfg.eval_every.points(cfg.max_iterations);
    let mut next_eval = eval_points.iter().peekable();
    let mut adam = Adam::new(params, cfg);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd0d0_d0d0);
    let use_dropout = params.config().dropout > 0.0;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;

    for iteration in 1..=cfg.max_iterations {
        if hooks.stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            trace.interrupted = true;
            break;
        }
        let mut sum_grads: Option<Vec<Vec<F>>> = None;
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..examples.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch.wrapping_mul(0x9e37_79b9)));
                order.shuffle(&mut rng);
                epoch += 1;
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let drop_rng = use_dropout.then_some(&mut dropout_rng);
            let (loss, grads) = example_loss(params, &examples[idx], drop_rng, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration, example: idx });
            }
            loss_sum += loss;
            match sum_grads.as_mut() {
                None => sum_grads = Some(grads),
                Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, g)| kernels::add_into(a, g)),
            }
        }
        let mut grads = sum_grads.expect("batch_size >= 1");
        if cfg.batch_size > 1 {
            let inv = F::from_f64_lossy(1.0 / cfg.batch_size as f64);
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
        }
        clip_global_norm(&mut grads, cfg.grad_clip);
        adam.step(params, &grads, cfg.lr_at(iteration - 1));
        trace.points.push((iteration, loss_sum / cfg.batch_size as f64));

        if next_eval.peek() == Some(&&iteration) {
            next_eval.next();
            if let Some(hook) = hooks.on_eval.as_mut() {
                hook(iteration, params)?;
            }
        }
    }
    Ok(trace)
}

/// Self-supervised next-token training over unlabeled note texts.
pub fn pretrain<F: Real, S: AsRef<str>>(
    params: &mut ModelParams<F>,
    texts: &[S],
    tokenizer: &Tokenizer,
    cfg: &TrainConfig,
    hooks: TrainHooks<'_, F>,
) -> Result<LossTrace> {
    let ctx = params.config().context_len;
    let examples: Vec<TrainingExample> = texts
        .iter()
        .flat_map(|t| make_pretrain_examples(t.as_ref(), tokenizer, ctx))
        .filter(TrainingExample::validate)
        .collect();
    train(params, &examples, cfg, hooks)
}

/// Marker-token fine-tuning over `(text, is_trauma)` pairs.
pub fn finetune<F: Real, S: AsRef<str>>(
    params: &mut ModelParams<F>,
    labeled: &[(S, bool)],
    tokenizer: &Tokenizer,
    cfg: &TrainConfig,
    hooks: TrainHooks<'_, F>,
) -> Result<LossTrace> {
    let ctx = params.config().context_len;
    let examples: Vec<TrainingExample> = labeled
        .iter()
        .map(|(t, y)| make_finetune_example(t.as_ref(), *y, tokenizer, ctx, cfg.loss_extent))
        .collect();
    train(params, &examples, cfg, hooks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn byte_tok() -> Tokenizer {
        Tokenizer::byte_level()
    }

    fn tiny(vocab: usize, ctx: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab,
            context_len: ctx,
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            d_mlp: 32,
            dropout: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn short_note_is_one_example_with_eot() {
        let tok = byte_tok();
        let ex = make_pretrain_examples("abcdefghij", &tok, 256);
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].ids.len(), 11);
        assert_eq!(*ex[0].ids.last().unwrap(), tok.specials().eot);
        assert!(ex[0].loss_mask.iter().all(|&w| w == 1));
    }

    #[test]
    fn long_note_windows_cover_every_token() {
        let tok = byte_tok();
        let text: String = "x".repeat(600);
        let ex = make_pretrain_examples(&text, &tok, 256);
        // 601 ids: windows at 0, 128, 256, 384, the last clipped to 217 ids
        let lens: Vec<usize> = ex.iter().map(|e| e.ids.len()).collect();
        assert_eq!(lens, vec![256, 256, 256, 217]);
    }

    #[test]
    fn finetune_suffix_and_truncation() {
        let tok = byte_tok();
        let s = tok.specials();
        let ex = make_finetune_example("chute", true, &tok, 256, LossExtent::FullSequence);
        assert_eq!(&ex.ids[ex.ids.len() - 2..], &[s.marker, s.label1]);
        let ex = make_finetune_example("toux", false, &tok, 256, LossExtent::LabelOnly);
        assert_eq!(&ex.ids[ex.ids.len() - 2..], &[s.marker, s.label0]);
        assert_eq!(ex.loss_mask.iter().map(|&w| w as usize).sum::<usize>(), 1);
        assert_eq!(*ex.loss_mask.last().unwrap(), 1);

        let text: String = (0..500).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let ex = make_finetune_example(&text, true, &tok, 256, LossExtent::FullSequence);
        assert_eq!(ex.ids.len(), 256);
        assert_eq!(&ex.ids[..254], &tok.encode(&text)[246..]);
    }

    #[test]
    fn geometric_schedule() {
        let pts = EvalSchedule::default().points(100);
        assert_eq!(pts, vec![20, 28, 40, 57, 80, 100]);
        assert_eq!(EvalSchedule::Every { every: 30 }.points(100), vec![30, 60, 90, 100]);
        let capped = EvalSchedule::Geometric { first: 1, ratio: 1.01, max_points: 5 }.points(10_000);
        assert_eq!(capped.len(), 5);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr_leave_params() {
        let cfg = TrainConfig::default();
        let mut params = ModelParams::<f64>::init(&tiny(261, 16)).unwrap();
        let before = params.clone();
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam::new(&params, &cfg).step(&mut params, &zeros, 1e-3);
        assert_eq!(params, before);

        let tok = byte_tok();
        let cfg = TrainConfig { learning_rate: 0.0, max_iterations: 5, ..TrainConfig::default() };
        let trace = finetune(&mut params, &[("abc", true)], &tok, &cfg, TrainHooks::default()).unwrap();
        assert_eq!(trace.points.len(), 5);
        assert_eq!(params, before);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![vec![3.0f64, 0.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn masked_targets_do_not_affect_loss() {
        let params = ModelParams::<f64>::init(&tiny(261, 16)).unwrap();
        let ex = TrainingExample { ids: vec![1, 2, 3, 4, 5], loss_mask: vec![1, 1, 0, 1, 0] };
        let mut other = ex.clone();
        other.ids[4] = 77;
        // changing a masked target (which is not also an input) leaves the loss unchanged
        let (a, _) = example_loss(&params, &ex, None, false).unwrap();
        let (b, _) = example_loss(&params, &other, None, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_deterministic_in_f64() {
        let tok = byte_tok();
        let data = [("chute velo", true), ("toux fievre", false), ("plaie main", true)];
        let cfg = TrainConfig { max_iterations: 12, learning_rate: 1e-2, ..TrainConfig::default() };
        let run = || {
            let mut p = ModelParams::<f64>::init(&tiny(261, 32)).unwrap();
            let t = finetune(&mut p, &data, &tok, &cfg, TrainHooks::default()).unwrap();
            (p, t)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn eval_hook_fires_on_schedule_and_stop_flag_interrupts() {
        let tok = byte_tok();
        let mut p = ModelParams::<f32>::init(&tiny(261, 32)).unwrap();
        let cfg = TrainConfig {
            max_iterations: 10,
            eval_every: EvalSchedule::Every { every: 4 },
            ..TrainConfig::default()
        };
        let mut seen = Vec::new();
        let mut hook = |it: usize, _: &ModelParams<f32>| {
            seen.push(it);
            Ok(())
        };
        finetune(&mut p, &[("ab", true)], &tok, &cfg, TrainHooks { on_eval: Some(&mut hook), stop: None }).unwrap();
        assert_eq!(seen, vec![4, 8, 10]);

        let stop = AtomicBool::new(true);
        let trace = finetune(&mut p, &[("ab", true)], &tok, &cfg, TrainHooks { on_eval: None, stop: Some(&stop) }).unwrap();
        assert!(trace.interrupted && trace.points.is_empty());
    }
}
