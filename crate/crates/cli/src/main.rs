//! `notegpt` command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use notegpt::config::ExperimentConfig;
use notegpt::corpus::{self, ClinicalNote, Format, TraumaLabel};
use notegpt::harness::{self, corpus_hash, RunManifest, Scenario, Seeds};
use notegpt::inference::{self, GenerateOptions};
use notegpt::model::{load_checkpoint, save_checkpoint, ModelParams};
use notegpt::tokenizer::Tokenizer;
use notegpt::training::{self, TrainHooks};
use notegpt::{FloatMode, Real};

#[derive(Parser, Debug)]
#[command(name = "notegpt", version, about = "Decoder-only transformer pipeline for trauma classification of free-text notes")]
struct Cli {
    /// Seed for generation, initialization and training (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Floating-point width for model arithmetic (default: config value, else f32).
    #[arg(long, global = true, value_parser = ["f32", "f64"])]
    float_mode: Option<String>,
    /// Config override, `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labeled corpus as JSONL.
    GenCorpus {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        class_balance: f64,
        /// Destination file (default: <out>/corpus.jsonl).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Validate, label and deduplicate a JSONL or CSV corpus.
    Ingest {
        /// Corpus file.
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        format: FormatArg,
        /// Destination file (default: <out>/corpus.jsonl).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Learn BPE merges from a corpus.
    TrainTokenizer {
        /// Corpus file.
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        format: FormatArg,
        /// Number of merges to learn.
        #[arg(long, default_value_t = 4_744)]
        merges: usize,
    },
    /// Self-supervised next-token training on every note of a corpus.
    Pretrain {
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Marker-token fine-tuning on the labeled notes of a corpus.
    Finetune {
        #[command(flatten)]
        common: TrainArgs,
        /// Use only the first N labeled notes.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Classify notes; one JSONL prediction per input record.
    Classify {
        /// Model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Tokenizer the checkpoint was trained with.
        #[arg(long)]
        tokenizer: PathBuf,
        /// Notes to classify.
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        format: FormatArg,
        /// Minimum trauma score for a positive prediction.
        #[arg(long, default_value_t = inference::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Destination file (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Continue a prompt.
    Generate {
        /// Model checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Tokenizer the checkpoint was trained with.
        #[arg(long)]
        tokenizer: PathBuf,
        /// Text to continue.
        #[arg(long)]
        prompt: String,
        /// Tokens to generate at most.
        #[arg(long, default_value_t = 40)]
        max_new: usize,
        /// Sampling temperature.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Sample only among the k most likely tokens.
        #[arg(long)]
        top_k: Option<usize>,
        /// Argmax decoding.
        #[arg(long)]
        greedy: bool,
    },
    /// Run both scenarios over the case grid and write the report.
    Experiment {
        /// Reuse a pre-trained checkpoint instead of pre-training.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Rebuild summary.csv, efficiency.json and plots from an experiment directory.
    Report {
        /// Target AUC for the label-efficiency factor.
        #[arg(long, default_value_t = 0.95)]
        tau: f64,
    },
}

#[derive(Args, Debug)]
struct FormatArg {
    /// Input format (default: from the file extension).
    #[arg(long, value_parser = ["jsonl", "csv"])]
    format: Option<String>,
}

impl FormatArg {
    fn resolve(&self, path: &Path) -> Format {
        match self.format.as_deref() {
            Some(f) => f.parse().expect("validated by clap"),
            None => Format::from_path(path),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus file.
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    format: FormatArg,
    /// Tokenizer file.
    #[arg(long)]
    tokenizer: PathBuf,
    /// Starting checkpoint (default: fresh initialization from the model config).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Iteration count (default: from the config).
    #[arg(long)]
    iterations: Option<usize>,
    /// Learning rate (default: from the config).
    #[arg(long)]
    lr: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info })
        .parse_default_env()
        .format_target(false)
        .init();
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
    }
    match run(&cli, &stop) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if cli.out.is_dir() {
                let _ = std::fs::write(cli.out.join(".failed"), format!("{e:#}\n"));
            }
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set(o).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
        cfg.pretrain.seed = seed;
        cfg.finetune.seed = seed;
    }
    if let Some(m) = &cli.float_mode {
        cfg.harness.float_mode = m.parse().map_err(usage)?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn read_input(path: &Path, format: &FormatArg) -> Result<Vec<ClinicalNote>> {
    if !path.exists() {
        return Err(usage(format!("input file not found: {}", path.display())));
    }
    Ok(corpus::read_notes(path, format.resolve(path))?)
}

fn run(cli: &Cli, stop: &AtomicBool) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::GenCorpus { n, class_balance, output } => {
            if *n == 0 || !(*class_balance > 0.0 && *class_balance < 1.0) {
                return Err(usage("--n must be positive and --class-balance in (0, 1)"));
            }
            let notes = corpus::generate_synthetic_corpus(cli.seed.unwrap_or(cfg.corpus.corpus_seed), *n, *class_balance);
            let path = output.clone().unwrap_or_else(|| cli.out.join("corpus.jsonl"));
            corpus::export_jsonl(&notes, &path)?;
            info!("wrote {} notes to {}", notes.len(), path.display());
        }
        Command::Ingest { input, format, output } => {
            if !input.exists() {
                return Err(usage(format!("input file not found: {}", input.display())));
            }
            let notes = corpus::ingest(input, format.resolve(input))?;
            let count = |l| notes.iter().filter(|n| n.label == Some(l)).count();
            info!(
                "{} notes: {} trauma, {} non-trauma, {} excluded, {} unlabeled",
                notes.len(),
                count(TraumaLabel::Trauma),
                count(TraumaLabel::NonTrauma),
                count(TraumaLabel::Excluded),
                notes.iter().filter(|n| n.label.is_none()).count()
            );
            let path = output.clone().unwrap_or_else(|| cli.out.join("corpus.jsonl"));
            corpus::export_jsonl(&notes, &path)?;
        }
        Command::TrainTokenizer { input, format, merges } => {
            let notes = read_input(input, format)?;
            let texts: Vec<&str> = notes.iter().map(|n| n.text.as_str()).collect();
            let tok = Tokenizer::train(&texts, *merges);
            let path = cli.out.join("tokenizer.json");
            tok.save(&path)?;
            info!("{} merges, vocab {}, written to {}", tok.merges().len(), tok.vocab_size(), path.display());
        }
        Command::Pretrain { common } => match cfg.harness.float_mode {
            FloatMode::F32 => train_cmd::<f32>(cli, &cfg, common, None, stop)?,
            FloatMode::F64 => train_cmd::<f64>(cli, &cfg, common, None, stop)?,
        },
        Command::Finetune { common, limit } => {
            let limit = Some(limit.unwrap_or(usize::MAX));
            match cfg.harness.float_mode {
                FloatMode::F32 => train_cmd::<f32>(cli, &cfg, common, limit, stop)?,
                FloatMode::F64 => train_cmd::<f64>(cli, &cfg, common, limit, stop)?,
            }
        }
        Command::Classify { ckpt, tokenizer, input, format, threshold, output } => {
            let tok = Tokenizer::load(tokenizer)?;
            let notes = read_input(input, format)?;
            match cfg.harness.float_mode {
                FloatMode::F32 => classify_cmd::<f32>(ckpt, &tok, &notes, *threshold, output.as_deref())?,
                FloatMode::F64 => classify_cmd::<f64>(ckpt, &tok, &notes, *threshold, output.as_deref())?,
            }
        }
        Command::Generate { ckpt, tokenizer, prompt, max_new, temperature, top_k, greedy } => {
            if *max_new == 0 || (!greedy && *temperature <= 0.0) {
                return Err(usage("--max-new must be >= 1 and --temperature > 0 unless --greedy"));
            }
            let tok = Tokenizer::load(tokenizer)?;
            let opts = GenerateOptions {
                max_new_tokens: *max_new,
                temperature: if *greedy { 0.0 } else { *temperature },
                top_k: *top_k,
                seed: cli.seed.unwrap_or(0),
                stop_at_eot: true,
            };
            let text = match cfg.harness.float_mode {
                FloatMode::F32 => generate_cmd::<f32>(ckpt, &tok, prompt, &opts)?,
                FloatMode::F64 => generate_cmd::<f64>(ckpt, &tok, prompt, &opts)?,
            };
            println!("{text}");
        }
        Command::Experiment { pretrained } => experiment_cmd(cli, &cfg, pretrained.as_deref(), stop)?,
        Command::Report { tau } => {
            let curves_a = harness::read_curves(&cli.out, Scenario::A)?;
            let curves_b = harness::read_curves(&cli.out, Scenario::B)?;
            let r = harness::report(&curves_a, &curves_b, &cli.out, *tau)?;
            println!("efficiency factor at tau {}: {}", tau, r.efficiency.describe());
        }
    }
    Ok(())
}

fn train_cmd<F: Real>(
    cli: &Cli,
    cfg: &ExperimentConfig,
    args: &TrainArgs,
    finetune_limit: Option<usize>,
    stop: &AtomicBool,
) -> Result<()> {
    let tok = Tokenizer::load(&args.tokenizer)?;
    let notes = read_input(&args.input, &args.format)?;
    let tok_hash = tok.hash();
    let mut params = match &args.ckpt {
        Some(p) => load_checkpoint::<F>(p, Some(&tok_hash))?.0,
        None => {
            let model = notegpt::model::ModelConfig { vocab_size: tok.vocab_size(), ..cfg.model.clone() };
            ModelParams::<F>::init(&model)?
        }
    };
    let phase = if finetune_limit.is_some() { "finetune" } else { "pretrain" };
    let mut tc = if finetune_limit.is_some() { cfg.finetune.clone() } else { cfg.pretrain.clone() };
    if let Some(i) = args.iterations {
        tc.max_iterations = i;
    }
    if let Some(lr) = args.lr {
        tc.learning_rate = lr;
    }
    let dir = cli.out.join(phase);
    std::fs::create_dir_all(&dir)?;
    let labeled: Vec<(&str, bool)> = notes
        .iter()
        .filter_map(|n| n.binary_label().map(|y| (n.text.as_str(), y)))
        .take(finetune_limit.unwrap_or(0))
        .collect();
    if finetune_limit.is_some() && labeled.is_empty() {
        bail!("no trauma/non-trauma labeled notes in {}", args.input.display());
    }
    let manifest = RunManifest {
        scenario: if args.ckpt.is_some() { Scenario::B } else { Scenario::A },
        case_labels: labeled.len(),
        seeds: Seeds { corpus: cfg.corpus.corpus_seed, split: cfg.corpus.split_seed, init: params.config().seed, train: tc.seed },
        model: params.config().clone(),
        train: tc.clone(),
        pretrain: None,
        tokenizer_hash: tok_hash.clone(),
        corpus_hash: corpus_hash(&notes),
        test_size: 0,
        supervised_size: labeled.len(),
        threshold: cfg.harness.threshold,
        init_checkpoint: args.ckpt.clone(),
        checkpoints: vec![dir.join("ckpt_final.mgck")],
        float_mode: F::MODE,
        nonstandard_batch: tc.batch_size != 1,
    };
    manifest.save(&dir.join("manifest.json"))?;
    let hooks = TrainHooks { on_eval: None, stop: Some(stop) };
    let trace = if finetune_limit.is_some() {
        training::finetune(&mut params, &labeled, &tok, &tc, hooks)?
    } else {
        let texts: Vec<&str> = notes.iter().map(|n| n.text.as_str()).collect();
        training::pretrain(&mut params, &texts, &tok, &tc, hooks)?
    };
    trace.write_csv(BufWriter::new(std::fs::File::create(dir.join("loss.csv"))?))?;
    let step = trace.points.last().map_or(0, |p| p.0) as u64;
    if trace.interrupted {
        let path = dir.join("ckpt_interrupted.mgck");
        save_checkpoint(&params, &tok_hash, step, &path)?;
        bail!("interrupted at iteration {step}; checkpoint written to {}", path.display());
    }
    let path = dir.join("ckpt_final.mgck");
    save_checkpoint(&params, &tok_hash, step, &path)?;
    info!("{phase}: {step} iterations, final loss {:?}, checkpoint {}", trace.last_loss(), path.display());
    Ok(())
}

fn classify_cmd<F: Real>(
    ckpt: &Path,
    tok: &Tokenizer,
    notes: &[ClinicalNote],
    threshold: f64,
    output: Option<&Path>,
) -> Result<()> {
    let (params, _) = load_checkpoint::<F>(ckpt, Some(&tok.hash()))?;
    let texts: Vec<&str> = notes.iter().map(|n| n.text.as_str()).collect();
    let preds = inference::classify_batch(&params, tok, &texts, threshold)?;
    let mut w: Box<dyn Write> = match output {
        Some(p) => Box::new(BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for (n, p) in notes.iter().zip(&preds) {
        let label = if p.predicted { TraumaLabel::Trauma } else { TraumaLabel::NonTrauma };
        let line = serde_json::json!({
            "id": n.id,
            "score": p.score,
            "predicted": label.as_str(),
            "on_vocab": p.on_vocab,
        });
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn generate_cmd<F: Real>(ckpt: &Path, tok: &Tokenizer, prompt: &str, opts: &GenerateOptions) -> Result<String> {
    let (params, _) = load_checkpoint::<F>(ckpt, Some(&tok.hash()))?;
    let ids = tok.encode(prompt);
    if ids.is_empty() {
        return Err(usage("--prompt must not be empty"));
    }
    let new = inference::generate(&params, &ids, opts, tok.specials().eot)?;
    let eot = tok.specials().eot;
    let body: Vec<u32> = new.into_iter().take_while(|&t| t != eot).collect();
    Ok(format!("{prompt}{}", tok.decode(&body)?))
}

fn experiment_cmd(cli: &Cli, cfg: &ExperimentConfig, pretrained: Option<&Path>, stop: &AtomicBool) -> Result<()> {
    let notes = match &cfg.corpus.input {
        Some(p) => {
            if !p.exists() {
                return Err(usage(format!("corpus input not found: {}", p.display())));
            }
            corpus::ingest(p, Format::from_path(p))?
        }
        None => corpus::generate_synthetic_corpus(cfg.corpus.corpus_seed, cfg.corpus.synthetic_notes, cfg.corpus.class_balance),
    };
    let outcome = harness::run_experiment_with(cfg, &notes, &cli.out, pretrained, Some(stop))?;
    let failed: Vec<String> = outcome
        .cases
        .iter()
        .filter_map(|c| c.result.as_ref().err().map(|e| format!("{} case {}: {e}", c.scenario.as_str(), c.case_labels)))
        .collect();
    println!("efficiency factor at tau {}: {}", cfg.harness.tau, outcome.report.efficiency.describe());
    if !failed.is_empty() {
        bail!("{} case(s) failed: {}", failed.len(), failed.join("; "));
    }
    Ok(())
}
