//! The two-scenario experiment.
//!
//! Scenario A trains a fresh model on each case's labeled notes. Scenario B
//! pre-trains once on the unlabeled split, then fine-tunes a copy of that
//! checkpoint per case. Both are evaluated on the same frozen test set at the
//! same iterations, and every case leaves a manifest from which it can be
//! rerun exactly.

mod report;

use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use report::{efficiency_factor, report, Efficiency, Report};

use crate::config::ExperimentConfig;
use crate::corpus::{make_splits, ClinicalNote, SplitManifest};
use crate::error::{Error, Result};
use crate::inference::classify_batch;
use crate::metrics::{EvalRecord, LearningCurve};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use crate::parallel;
use crate::real::{FloatMode, Real};
use crate::tokenizer::Tokenizer;
use crate::training::{finetune, pretrain, TrainConfig, TrainHooks};

/// `n` counts log-spaced from `lo` to `hi`: `round(exp(ln lo + i·(ln hi − ln lo)/(n−1)))`,
/// deduplicated, endpoints exact.
pub fn make_grid(lo: usize, hi: usize, n: usize) -> Result<Vec<usize>> {
    if lo == 0 || lo >= hi || n < 2 {
        return Err(Error::Config(format!("grid needs 0 < lo < hi and n >= 2, got ({lo}, {hi}, {n})")));
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => (a + i as f64 * (b - a) / (n - 1) as f64).exp().round() as usize,
        })
        .collect();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "B")]
    B,
}

impl Scenario {
    pub fn dir_name(self) -> &'static str {
        match self {
            Scenario::A => "scenario_a",
            Scenario::B => "scenario_b",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::A => "A",
            Scenario::B => "B",
        }
    }
}

/// Label counts for one scenario, validated against the supervised split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseGrid {
    pub labels_per_case: Vec<usize>,
    pub scenario: Scenario,
}

impl CaseGrid {
    pub fn new(mut labels: Vec<usize>, scenario: Scenario, supervised_size: usize) -> Result<Self> {
        labels.sort_unstable();
        labels.dedup();
        if labels.is_empty() || labels[0] == 0 {
            return Err(Error::Config("every case needs at least one labeled note".into()));
        }
        if let Some(&max) = labels.last().filter(|&&m| m > supervised_size) {
            return Err(Error::Sizing { needed: max, available: supervised_size });
        }
        Ok(Self { labels_per_case: labels, scenario })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub corpus: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
}

/// Everything needed to rerun one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub case_labels: usize,
    pub seeds: Seeds,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Pre-training settings, Scenario B only.
    pub pretrain: Option<TrainConfig>,
    pub tokenizer_hash: String,
    pub corpus_hash: String,
    pub test_size: usize,
    pub supervised_size: usize,
    pub threshold: f64,
    /// Starting weights, Scenario B only.
    pub init_checkpoint: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub float_mode: FloatMode,
    /// True when batch_size differs from the one-example protocol.
    pub nonstandard_batch: bool,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// SHA-256 over `id \t text \t code \n` of every note, in order.
pub fn corpus_hash(notes: &[ClinicalNote]) -> String {
    let mut h = Sha256::new();
    for n in notes {
        h.update(n.id.as_bytes());
        h.update(b"\t");
        h.update(n.text.as_bytes());
        h.update(b"\t");
        if let Some(c) = &n.code {
            h.update(c.raw().as_bytes());
        }
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Texts and labels of each split, plus the shared tokenizer.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub tokenizer: Tokenizer,
    pub split: SplitManifest,
    pub corpus_hash: String,
    pub test_texts: Vec<String>,
    pub test_labels: Vec<bool>,
    /// In draw order, so each case takes a prefix and cases nest.
    pub supervised: Vec<(String, bool)>,
    pub pretrain_texts: Vec<String>,
}

impl PreparedData {
    /// Splits the corpus and, unless one is supplied, trains the tokenizer on
    /// the pretrain split.
    pub fn new(corpus: &[ClinicalNote], cfg: &ExperimentConfig, tokenizer: Option<Tokenizer>) -> Result<Self> {
        let c = &cfg.corpus;
        let split = make_splits(corpus, c.test_size, c.supervised_size, c.split_seed)?;
        let by_id: std::collections::HashMap<&str, &ClinicalNote> =
            corpus.iter().map(|n| (n.id.as_str(), n)).collect();
        let labeled = |id: &String| {
            let n = by_id[id.as_str()];
            (n.text.clone(), n.binary_label().expect("split only labels eligible notes"))
        };
        let test: Vec<(String, bool)> = split.test_ids.iter().map(labeled).collect();
        let supervised = split.supervised_ids.iter().map(labeled).collect();
        let pretrain_texts: Vec<String> =
            split.pretrain_ids.iter().map(|id| by_id[id.as_str()].text.clone()).collect();
        let tokenizer = match tokenizer {
            Some(t) => t,
            None => {
                let take = match c.tokenizer_sample {
                    0 => pretrain_texts.len(),
                    k => k.min(pretrain_texts.len()),
                };
                Tokenizer::train(&pretrain_texts[..take], c.tokenizer_merges)
            }
        };
        let (test_texts, test_labels) = test.into_iter().unzip();
        Ok(Self {
            tokenizer,
            split,
            corpus_hash: corpus_hash(corpus),
            test_texts,
            test_labels,
            supervised,
            pretrain_texts,
        })
    }
}

/// Result of one case; failures are kept rather than aborting the scenario.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub scenario: Scenario,
    pub case_labels: usize,
    pub result: std::result::Result<LearningCurve, String>,
}

/// Evaluates `params` on the frozen test set.
pub fn evaluate<F: Real>(
    params: &ModelParams<F>,
    data: &PreparedData,
    iteration: usize,
    threshold: f64,
) -> Result<EvalRecord> {
    let preds = classify_batch(params, &data.tokenizer, &data.test_texts, threshold)?;
    let scored: Vec<(f64, bool)> = preds.iter().map(|p| p.score).zip(data.test_labels.iter().copied()).collect();
    let on_vocab = preds.iter().filter(|p| p.on_vocab).count();
    Ok(EvalRecord::from_scores(iteration, &scored, threshold, on_vocab))
}

/// Fine-tunes `params` on the manifest's labeled prefix, evaluating on the
/// eval schedule. With `case_dir` set, writes curve.csv, loss.csv and
/// checkpoints there.
pub fn run_case<F: Real>(
    manifest: &RunManifest,
    data: &PreparedData,
    mut params: ModelParams<F>,
    case_dir: Option<&Path>,
    save_checkpoints: bool,
    stop: Option<&AtomicBool>,
) -> Result<LearningCurve> {
    check_inputs(manifest, data)?;
    let labeled = &data.supervised[..manifest.case_labels];
    let mut records = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let tok_hash = &manifest.tokenizer_hash;
    let mut hook = |iteration: usize, p: &ModelParams<F>| -> Result<()> {
        let rec = evaluate(p, data, iteration, manifest.threshold)?;
        info!(
            "{} case {} it {}: auc {} f1 {} on_vocab {}",
            manifest.scenario.as_str(),
            manifest.case_labels,
            iteration,
            crate::metrics::fmt_opt(rec.auc),
            crate::metrics::fmt_opt(rec.f1),
            rec.n_on_vocab
        );
        if let (Some(dir), Some(auc)) = (case_dir.filter(|_| save_checkpoints), rec.auc) {
            if auc > best {
                best = auc;
                save_checkpoint(p, tok_hash, iteration as u64, &dir.join("ckpt_best.mgck"))?;
            }
        }
        records.push(rec);
        Ok(())
    };
    let hooks = TrainHooks { on_eval: Some(&mut hook), stop };
    let trace = finetune(&mut params, labeled, &data.tokenizer, &manifest.train, hooks)?;
    if let Some(dir) = case_dir {
        trace.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("loss.csv"))?))?;
        if save_checkpoints || trace.interrupted {
            let name = if trace.interrupted { "ckpt_interrupted.mgck" } else { "ckpt_final.mgck" };
            let step = trace.points.last().map_or(0, |p| p.0) as u64;
            save_checkpoint(&params, tok_hash, step, &dir.join(name))?;
        }
    }
    if trace.interrupted {
        return Err(Error::Interrupted);
    }
    let curve = LearningCurve::new(manifest.case_labels, records)?;
    if let Some(dir) = case_dir {
        curve.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("curve.csv"))?))?;
    }
    Ok(curve)
}

fn check_inputs(manifest: &RunManifest, data: &PreparedData) -> Result<()> {
    if manifest.corpus_hash != data.corpus_hash {
        return Err(Error::Mismatch(format!(
            "corpus hash {} differs from manifest {}",
            data.corpus_hash, manifest.corpus_hash
        )));
    }
    let found = data.tokenizer.hash();
    if manifest.tokenizer_hash != found {
        return Err(Error::TokenizerHashMismatch { expected: manifest.tokenizer_hash.clone(), found });
    }
    if manifest.case_labels == 0 || manifest.case_labels > data.supervised.len() {
        return Err(Error::Sizing { needed: manifest.case_labels, available: data.supervised.len() });
    }
    Ok(())
}

/// Reruns a case from its manifest, writing nothing. The float mode recorded
/// in the manifest is used.
pub fn rerun_manifest(manifest: &RunManifest, data: &PreparedData) -> Result<LearningCurve> {
    fn go<F: Real>(m: &RunManifest, data: &PreparedData) -> Result<LearningCurve> {
        let init = match (&m.scenario, &m.init_checkpoint) {
            (Scenario::A, _) => ModelParams::<F>::init(&m.model)?,
            (Scenario::B, Some(path)) => load_checkpoint::<F>(path, Some(&m.tokenizer_hash))?.0,
            (Scenario::B, None) => {
                return Err(Error::Config("Scenario B manifest without an init checkpoint".into()))
            }
        };
        run_case(m, data, init, None, false, None)
    }
    match manifest.float_mode {
        FloatMode::F32 => go::<f32>(manifest, data),
        FloatMode::F64 => go::<f64>(manifest, data),
    }
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub cases: Vec<CaseOutcome>,
    pub report: Report,
}

impl ExperimentOutcome {
    pub fn curves(&self, scenario: Scenario) -> Vec<LearningCurve> {
        self.cases
            .iter()
            .filter(|c| c.scenario == scenario)
            .filter_map(|c| c.result.as_ref().ok().cloned())
            .collect()
    }
}

fn base_manifest(cfg: &ExperimentConfig, data: &PreparedData, model: &ModelConfig) -> RunManifest {
    RunManifest {
        scenario: Scenario::A,
        case_labels: 0,
        seeds: Seeds {
            corpus: cfg.corpus.corpus_seed,
            split: cfg.corpus.split_seed,
            init: model.seed,
            train: cfg.finetune.seed,
        },
        model: model.clone(),
        train: cfg.finetune.clone(),
        pretrain: None,
        tokenizer_hash: data.tokenizer.hash(),
        corpus_hash: data.corpus_hash.clone(),
        test_size: cfg.corpus.test_size,
        supervised_size: cfg.corpus.supervised_size,
        threshold: cfg.harness.threshold,
        init_checkpoint: None,
        checkpoints: Vec::new(),
        float_mode: cfg.harness.float_mode,
        nonstandard_batch: cfg.finetune.batch_size != 1,
    }
}

/// Runs every case of one scenario from `init`, writing
/// `out_dir/<scenario>/case_<n>/`. Cases fan out over the parallel helpers.
fn run_scenario<F: Real>(
    grid: &CaseGrid,
    cfg: &ExperimentConfig,
    data: &PreparedData,
    template: &RunManifest,
    init: &ModelParams<F>,
    out_dir: &Path,
    stop: Option<&AtomicBool>,
) -> Vec<CaseOutcome> {
    parallel::map(&grid.labels_per_case, |&n| {
        let result = (|| -> Result<LearningCurve> {
            let dir = out_dir.join(grid.scenario.dir_name()).join(format!("case_{n}"));
            std::fs::create_dir_all(&dir)?;
            let mut m = template.clone();
            m.scenario = grid.scenario;
            m.case_labels = n;
            m.train.max_iterations = cfg.harness.iteration_budget(n);
            m.train.eval_every = cfg.harness.eval.clone();
            if cfg.harness.save_checkpoints {
                m.checkpoints = vec![dir.join("ckpt_best.mgck"), dir.join("ckpt_final.mgck")];
            }
            m.save(&dir.join("manifest.json"))?;
            let res = run_case(&m, data, init.clone(), Some(&dir), cfg.harness.save_checkpoints, stop);
            if let Err(e) = &res {
                std::fs::write(dir.join(".failed"), format!("{e}\n"))?;
            }
            res
        })();
        if let Err(e) = &result {
            warn!("{} case {n} failed: {e}", grid.scenario.as_str());
        }
        CaseOutcome { scenario: grid.scenario, case_labels: n, result: result.map_err(|e| e.to_string()) }
    })
}

/// Scenario A: a fresh model per case.
pub fn run_scenario_a<F: Real>(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    grid: &CaseGrid,
    out_dir: &Path,
    stop: Option<&AtomicBool>,
) -> Result<Vec<CaseOutcome>> {
    let model = model_config(cfg, data);
    let init = ModelParams::<F>::init(&model)?;
    let template = base_manifest(cfg, data, &model);
    Ok(run_scenario(grid, cfg, data, &template, &init, out_dir, stop))
}

/// Scenario B: pre-train once (or load `pretrained`), checkpoint, then
/// fine-tune that checkpoint per case.
pub fn run_scenario_b<F: Real>(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    grid: &CaseGrid,
    out_dir: &Path,
    pretrained: Option<&Path>,
    stop: Option<&AtomicBool>,
) -> Result<Vec<CaseOutcome>> {
    let tok_hash = data.tokenizer.hash();
    let ckpt = match pretrained {
        Some(path) => path.to_path_buf(),
        None => {
            let dir = out_dir.join("pretrain");
            std::fs::create_dir_all(&dir)?;
            let ckpt = dir.join("ckpt_pretrained.mgck");
            let mut params = ModelParams::<F>::init(&model_config(cfg, data))?;
            info!("pre-training for {} iterations on {} notes", cfg.pretrain.max_iterations, data.pretrain_texts.len());
            let trace = pretrain(
                &mut params,
                &data.pretrain_texts,
                &data.tokenizer,
                &cfg.pretrain,
                TrainHooks { on_eval: None, stop },
            )?;
            trace.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join("loss.csv"))?))?;
            let step = trace.points.last().map_or(0, |p| p.0) as u64;
            if trace.interrupted {
                save_checkpoint(&params, &tok_hash, step, &dir.join("ckpt_interrupted.mgck"))?;
                return Err(Error::Interrupted);
            }
            save_checkpoint(&params, &tok_hash, step, &ckpt)?;
            ckpt
        }
    };
    let (init, meta) = load_checkpoint::<F>(&ckpt, Some(&tok_hash))?;
    let mut template = base_manifest(cfg, data, &meta.config);
    template.pretrain = Some(cfg.pretrain.clone());
    template.init_checkpoint = Some(ckpt);
    Ok(run_scenario(grid, cfg, data, &template, &init, out_dir, stop))
}

/// The configured model with the tokenizer's vocabulary size.
pub fn model_config(cfg: &ExperimentConfig, data: &PreparedData) -> ModelConfig {
    ModelConfig { vocab_size: data.tokenizer.vocab_size(), ..cfg.model.clone() }
}

/// Label counts from the grid section: the explicit list, else the log grid.
pub fn grid_cases(cfg: &ExperimentConfig) -> Result<Vec<usize>> {
    if cfg.grid.cases.is_empty() {
        make_grid(cfg.grid.lo, cfg.grid.hi, cfg.grid.n_cases)
    } else {
        Ok(cfg.grid.cases.clone())
    }
}

/// Both scenarios and the report, end to end.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    corpus: &[ClinicalNote],
    out_dir: &Path,
    stop: Option<&AtomicBool>,
) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, corpus, out_dir, None, stop)
}

/// [`run_experiment`], optionally starting Scenario B from an existing
/// pre-trained checkpoint.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    corpus: &[ClinicalNote],
    out_dir: &Path,
    pretrained: Option<&Path>,
    stop: Option<&AtomicBool>,
) -> Result<ExperimentOutcome> {
    match cfg.harness.float_mode {
        FloatMode::F32 => run_experiment_as::<f32>(cfg, corpus, out_dir, pretrained, stop),
        FloatMode::F64 => run_experiment_as::<f64>(cfg, corpus, out_dir, pretrained, stop),
    }
}

/// Learning curves found under `out_dir/<scenario>/case_<n>/curve.csv`,
/// ordered by label count.
pub fn read_curves(out_dir: &Path, scenario: Scenario) -> Result<Vec<LearningCurve>> {
    let dir = out_dir.join(scenario.dir_name());
    let mut curves = Vec::new();
    if !dir.is_dir() {
        return Ok(curves);
    }
    for entry in std::fs::read_dir(&dir)? {
        let path = entry?.path();
        let Some(n) = path
            .file_name()
            .and_then(|f| f.to_str())
            .and_then(|f| f.strip_prefix("case_"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        let csv = path.join("curve.csv");
        if csv.exists() {
            curves.push(LearningCurve::read_csv(n, &std::fs::read_to_string(csv)?)?);
        }
    }
    curves.sort_by_key(|c| c.case_labels);
    Ok(curves)
}

fn run_experiment_as<F: Real>(
    cfg: &ExperimentConfig,
    corpus: &[ClinicalNote],
    out_dir: &Path,
    pretrained: Option<&Path>,
    stop: Option<&AtomicBool>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let cases = grid_cases(cfg)?;
    let data = PreparedData::new(corpus, cfg, None)?;
    data.tokenizer.save(&out_dir.join("tokenizer.json"))?;
    std::fs::write(out_dir.join("split.json"), serde_json::to_string(&data.split)?)?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
    info!("tokenizer: {} tokens; {} pretrain notes", data.tokenizer.vocab_size(), data.pretrain_texts.len());

    let mut outcomes = Vec::new();
    if cfg.harness.run_a {
        let grid = CaseGrid::new(cases.clone(), Scenario::A, data.supervised.len())?;
        outcomes.extend(run_scenario_a::<F>(cfg, &data, &grid, out_dir, stop)?);
    }
    if cfg.harness.run_b {
        let grid = CaseGrid::new(cases, Scenario::B, data.supervised.len())?;
        outcomes.extend(run_scenario_b::<F>(cfg, &data, &grid, out_dir, pretrained, stop)?);
    }
    if stop.is_some_and(|s| s.load(std::sync::atomic::Ordering::Relaxed)) {
        return Err(Error::Interrupted);
    }
    let curves = |s| -> Vec<LearningCurve> {
        outcomes
            .iter()
            .filter(|c| c.scenario == s)
            .filter_map(|c| c.result.as_ref().ok().cloned())
            .collect()
    };
    let report = report(&curves(Scenario::A), &curves(Scenario::B), out_dir, cfg.harness.tau)?;
    Ok(ExperimentOutcome { cases: outcomes, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_and_dedup() {
        let g = make_grid(20, 10_000, 19).unwrap();
        assert_eq!(g.len(), 19);
        assert_eq!((g[0], g[18]), (20, 10_000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let g = make_grid(20_000, 120_000, 6).unwrap();
        assert_eq!((g[0], g[5]), (20_000, 120_000));
        assert_eq!(make_grid(1, 3, 10).unwrap(), vec![1, 2, 3]);
        assert!(make_grid(0, 10, 3).is_err());
        assert!(make_grid(10, 10, 3).is_err());
    }

    #[test]
    fn case_grid_rejects_zero_and_oversize() {
        assert!(CaseGrid::new(vec![0, 20], Scenario::B, 100).is_err());
        assert!(CaseGrid::new(vec![20, 200], Scenario::B, 100).is_err());
        assert_eq!(CaseGrid::new(vec![60, 20], Scenario::A, 100).unwrap().labels_per_case, vec![20, 60]);
    }
}
