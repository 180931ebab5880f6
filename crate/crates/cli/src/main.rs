//! `grasp` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 failed gradient check.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use grasp::checkpoint::{save_checkpoint, Checkpoint};
use grasp::corpus::{corpus_stats, pooled_stats, Corpus, Split};
use grasp::encoding::MarkerPlacement;
use grasp::evaluation::{evaluate, f1c_score, sample_fewshot, select_ids, FewShotSplit};
use grasp::gradcheck::grad_check;
use grasp::model::{LossWeights, Reduction};
use grasp::pipeline::{Grasp, Pipeline, PipelineConfig};
use grasp::rcd::build_clue_labels;
use grasp::train::{train, ClueInput, TrainConfig, TriggerSource};
use grasp::{GraspError, Scalar};

#[derive(Parser, Debug)]
#[command(name = "grasp", version, about = "Prompt-based relation extraction over dialogues")]
struct Cli {
    /// Worker threads for per-instance stages (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load one or more corpus files and report statistics.
    Ingest(IngestArgs),
    /// Emit encoded prompt sequences as JSON lines.
    Encode(EncodeArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Sample a K-shot train/dev split.
    Fewshot(FewshotArgs),
    /// Print the decoded prompt sequence of one instance.
    InspectTemplate(InspectArgs),
    /// Compare analytic and numeric gradients on a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct Output {
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Corpus file (DialogRE JSON or normalized JSON); repeat to pool statistics.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Write the normalized corpus here (single input only).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Take the vocabulary from this checkpoint instead of fitting it on the input.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write the JSON lines here instead of standard output.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Add the gold clue label of every position.
    #[arg(long)]
    with_clues: bool,
    #[arg(long, default_value_t = 512)]
    max_seq_len: usize,
    #[arg(long, value_enum, default_value_t = Placement::Front)]
    placement: Placement,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    data: PathBuf,
    /// Development corpus for model selection (defaults to the training corpus).
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Restrict training to a split written by `grasp fewshot`.
    #[arg(long)]
    fewshot: Option<PathBuf>,
    #[arg(long, default_value = "checkpoint.json")]
    checkpoint: PathBuf,
    /// Write the per-epoch log as JSON lines here instead of standard output.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.3)]
    lambda2: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Epochs without dev improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 512)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, value_enum, default_value_t = Triggers::Gold)]
    trigger_source: Triggers,
    #[arg(long, value_enum, default_value_t = ClueView::Marked)]
    clue_input: ClueView,
    #[arg(long, value_enum, default_value_t = Placement::Front)]
    placement: Placement,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Write the results JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the conversational F1 (it re-encodes every dialogue prefix).
    #[arg(long)]
    no_f1c: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct FewshotArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Write the split here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Zero-based instance index.
    #[arg(long)]
    instance: usize,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    max_seq_len: usize,
    /// Also print the subject/object type priors.
    #[arg(long)]
    priors: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    instance: usize,
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 0.5)]
    init_std: f64,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long, default_value_t = 13)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Placement {
    Front,
    Surrounding,
}

impl From<Placement> for MarkerPlacement {
    fn from(p: Placement) -> Self {
        match p {
            Placement::Front => MarkerPlacement::Front,
            Placement::Surrounding => MarkerPlacement::Surrounding,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Triggers {
    Gold,
    Predicted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClueView {
    Marked,
    Unmarked,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

enum Failure {
    Usage(String),
    Data(String),
    GradCheck(String),
}

impl From<GraspError> for Failure {
    fn from(e: GraspError) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRASP_LOG", "error"))
        .format_timestamp_millis()
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Encode(a) => encode(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => eval(a),
        Command::Fewshot(a) => fewshot(a),
        Command::InspectTemplate(a) => inspect(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::GradCheck(m)) => {
            eprintln!("gradient check failed: {m}");
            ExitCode::from(3)
        }
    }
}

// ---------------------------------------------------------------------------
// Path handling

fn need_input(path: &Path) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(format!("input file {} does not exist", path.display())))
    }
}

fn need_output(path: Option<&Path>, force: bool) -> Outcome {
    match path {
        Some(p) if p.exists() && !force => Err(Failure::Usage(format!(
            "{} already exists (pass --force to overwrite)",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| Failure::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Data(format!("cannot write to standard output: {e}")))
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
}

/// Reads either a DialogRE array or a normalized corpus object.
fn read_corpus(path: &Path, split: Split) -> Result<Corpus, Failure> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Failure::Data(format!("{} is not UTF-8", path.display())))?;
    let corpus = if text.trim_start().starts_with('{') {
        Corpus::from_normalized_str(&text)
    } else {
        Corpus::from_dialogre_str(&text, split)
    }
    .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    for w in &corpus.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(corpus)
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Failure::Data(format!("{}: invalid checkpoint: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn to_line(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string(v).expect("value serializes");
    s.push('\n');
    s
}

fn to_pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Subcommands

fn ingest(a: IngestArgs) -> Outcome {
    for p in &a.input {
        need_input(p)?;
    }
    if a.out.is_some() && a.input.len() != 1 {
        return Err(Failure::Usage("--out takes exactly one --input".into()));
    }
    need_output(a.out.as_deref(), a.output.force)?;
    let corpora = a
        .input
        .iter()
        .map(|p| read_corpus(p, a.split))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = if corpora.len() == 1 {
        corpus_stats(&corpora[0])
    } else {
        pooled_stats(&corpora.iter().collect::<Vec<_>>())
    };
    if let Some(out) = &a.out {
        write_out(Some(out), &corpora[0].to_normalized_json())?;
    }
    write_out(None, &to_pretty(&stats))
}

fn encode(a: EncodeArgs) -> Outcome {
    need_input(&a.input)?;
    if let Some(ck) = &a.checkpoint {
        need_input(ck)?;
    }
    need_output(a.dump.as_deref(), a.output.force)?;
    let corpus = read_corpus(&a.input, a.split)?;
    let pipeline = match &a.checkpoint {
        Some(p) => read_checkpoint(p)?.into_model::<f64>()?.pipeline,
        None => Pipeline::fit(
            &corpus,
            PipelineConfig {
                max_seq_len: a.max_seq_len,
                placement: a.placement.into(),
                ..Default::default()
            },
        )?,
    };
    let prompts = pipeline.encode_corpus(&corpus)?;
    let vocab = &pipeline.vocab;
    let marker = vocab.specials().marker;
    let mut text = String::new();
    for p in &prompts {
        let tokens: Vec<&str> = p.token_ids.iter().map(|&id| vocab.token(id).text.as_str()).collect();
        let markers: Vec<usize> = (0..p.len()).filter(|&i| p.token_ids[i] == marker).collect();
        let mut line = json!({
            "instance_id": p.instance_id,
            "tokens": tokens,
            "marker_positions": markers,
            "spans": p.spans,
            "mask_index": p.mask_index,
            "truncated": p.truncated,
        });
        if a.with_clues {
            line["clue_labels"] = json!(build_clue_labels(p, vocab).texts(vocab));
        }
        text.push_str(&to_line(&line));
    }
    write_out(a.dump.as_deref(), &text)
}

fn run_train(a: TrainArgs) -> Outcome {
    need_input(&a.data)?;
    for p in [&a.dev, &a.fewshot].into_iter().flatten() {
        need_input(p)?;
    }
    need_output(Some(&a.checkpoint), a.output.force)?;
    need_output(a.log.as_deref(), a.output.force)?;
    let cfg = TrainConfig {
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        max_seq_len: a.max_seq_len,
        seed: a.seed,
        early_stop_patience: a.patience,
        dropout: a.dropout,
        trigger_source: match a.trigger_source {
            Triggers::Gold => TriggerSource::Gold,
            Triggers::Predicted => TriggerSource::Predicted,
        },
        clue_input: match a.clue_input {
            ClueView::Marked => ClueInput::Marked,
            ClueView::Unmarked => ClueInput::Unmarked,
        },
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if a.d_model == 0 || a.layers == 0 || a.heads == 0 || !a.d_model.is_multiple_of(a.heads) {
        return Err(Failure::Usage("--d-model must be a positive multiple of --heads".into()));
    }

    let full = read_corpus(&a.data, Split::Train)?;
    let (train_set, dev_set) = match (&a.fewshot, &a.dev) {
        (Some(split_path), dev) => {
            let split: FewShotSplit = serde_json::from_slice(&read_bytes(split_path)?).map_err(|e| {
                Failure::Data(format!("{}: invalid few-shot split: {e}", split_path.display()))
            })?;
            let train_set = select_ids(&full, &split.train_ids)?;
            let dev_set = match dev {
                Some(d) => read_corpus(d, Split::Dev)?,
                None => select_ids(&full, &split.dev_ids)?,
            };
            (train_set, dev_set)
        }
        (None, Some(d)) => (full, read_corpus(d, Split::Dev)?),
        (None, None) => {
            log::info!("no --dev given; selecting on the training corpus");
            (full.clone(), full)
        }
    };

    let pipeline = Pipeline::fit(
        &train_set,
        PipelineConfig {
            max_seq_len: a.max_seq_len,
            placement: a.placement.into(),
            ..Default::default()
        },
    )?;
    let model_cfg = pipeline.model_config(a.d_model, a.layers, a.heads);
    let log_text = match a.precision {
        Precision::F32 => train_and_save::<f32>(pipeline, model_cfg, &train_set, &dev_set, &cfg, &a.checkpoint)?,
        Precision::F64 => train_and_save::<f64>(pipeline, model_cfg, &train_set, &dev_set, &cfg, &a.checkpoint)?,
    };
    write_out(a.log.as_deref(), &log_text)
}

fn train_and_save<T: Scalar>(
    pipeline: Pipeline,
    model_cfg: grasp::model::ModelConfig,
    train_set: &Corpus,
    dev_set: &Corpus,
    cfg: &TrainConfig,
    checkpoint: &Path,
) -> Result<String, Failure> {
    let init = Grasp::<T>::init(pipeline, model_cfg, cfg.seed)?;
    let (model, log) = train(init, train_set, dev_set, cfg)?;
    save_checkpoint(&model, checkpoint)?;
    Ok(log.to_json_lines())
}

#[derive(Serialize)]
struct EvalReport {
    f1: f64,
    precision: f64,
    recall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    f1c: Option<f64>,
    per_relation: Value,
    n_instances: usize,
    config_hash: String,
}

fn eval(a: EvalArgs) -> Outcome {
    need_input(&a.checkpoint)?;
    need_input(&a.data)?;
    need_output(a.out.as_deref(), a.output.force)?;
    let ck_bytes = read_bytes(&a.checkpoint)?;
    let ck: Checkpoint = serde_json::from_slice(&ck_bytes)
        .map_err(|e| Failure::Data(format!("{}: invalid checkpoint: {e}", a.checkpoint.display())))?;
    let corpus = read_corpus(&a.data, a.split)?;
    let report = match ck.scalar.as_str() {
        "f64" => score(ck.into_model::<f64>()?, &corpus, !a.no_f1c)?,
        _ => score(ck.into_model::<f32>()?, &corpus, !a.no_f1c)?,
    };
    let provenance = json!({
        "checkpoint_sha256": sha256_hex(&ck_bytes),
        "data_sha256": sha256_hex(&read_bytes(&a.data)?),
        "split": a.split,
        "f1c": !a.no_f1c,
    });
    let report = EvalReport {
        config_hash: sha256_hex(provenance.to_string().as_bytes()),
        ..report
    };
    write_out(a.out.as_deref(), &to_pretty(&report))
}

fn score<T: Scalar>(g: Grasp<T>, corpus: &Corpus, with_f1c: bool) -> Result<EvalReport, Failure> {
    let r = evaluate(&g, corpus)?;
    let f1c = if with_f1c { Some(f1c_score(&g, corpus)?.f1) } else { None };
    Ok(EvalReport {
        f1: r.f1,
        precision: r.precision,
        recall: r.recall,
        f1c,
        per_relation: serde_json::to_value(&r.per_relation).expect("counts serialize"),
        n_instances: r.n_instances,
        config_hash: String::new(),
    })
}

fn fewshot(a: FewshotArgs) -> Outcome {
    need_input(&a.data)?;
    need_output(a.out.as_deref(), a.output.force)?;
    let corpus = read_corpus(&a.data, Split::Train)?;
    let split = sample_fewshot(&corpus, a.k, a.seed)?;
    for label in &split.exhausted_train {
        log::warn!("label `{label}` has fewer than {} training instances", a.k);
    }
    write_out(a.out.as_deref(), &to_pretty(&split))
}

fn inspect(a: InspectArgs) -> Outcome {
    need_input(&a.data)?;
    if let Some(ck) = &a.checkpoint {
        need_input(ck)?;
    }
    let corpus = read_corpus(&a.data, Split::Train)?;
    let Some(inst) = corpus.instances.get(a.instance) else {
        return Err(Failure::Usage(format!(
            "--instance {} is out of range ({} instances)",
            a.instance,
            corpus.instances.len()
        )));
    };
    let pipeline = match &a.checkpoint {
        Some(p) => read_checkpoint(p)?.into_model::<f64>()?.pipeline,
        None => Pipeline::fit(&corpus, PipelineConfig { max_seq_len: a.max_seq_len, ..Default::default() })?,
    };
    let p = pipeline.encode(corpus.dialogue_of(inst), inst)?;
    let mut text = p.decode(&pipeline.vocab);
    text.push('\n');
    if a.priors {
        text.push_str(&to_pretty(&pipeline.priors));
    }
    write_out(None, &text)
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    need_input(&a.data)?;
    if a.d_model == 0 || a.heads == 0 || !a.d_model.is_multiple_of(a.heads) {
        return Err(Failure::Usage("--d-model must be a positive multiple of --heads".into()));
    }
    let corpus = read_corpus(&a.data, Split::Train)?;
    let pipeline = Pipeline::fit(&corpus, PipelineConfig { max_seq_len: a.max_seq_len, ..Default::default() })?;
    let examples = pipeline.training_examples(&corpus)?;
    let Some(ex) = examples.get(a.instance) else {
        return Err(Failure::Usage(format!(
            "--instance {} is out of range ({} training examples)",
            a.instance,
            examples.len()
        )));
    };
    let mut cfg = pipeline.model_config(a.d_model, a.layers, a.heads);
    cfg.init_std = a.init_std;
    let g = Grasp::<f64>::init(pipeline, cfg, a.seed)?;
    let report = grad_check(
        &g.model,
        &ex.forced,
        &ex.forced_clues,
        ex.target_word,
        LossWeights::default(),
        Reduction::Mean,
        a.epsilon,
    )?;
    write_out(None, &to_pretty(&report))?;
    if report.max_relative_error < a.tolerance {
        Ok(())
    } else {
        Err(Failure::GradCheck(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_relative_error, a.tolerance
        )))
    }
}
