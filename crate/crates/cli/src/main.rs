use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use psi_core::ablation::{run_ablation, AblationAxis};
use psi_core::data::{encode_all, load_dataset, split_of, DataError, DatasetFormat, Split};
use psi_core::evaluator::{evaluate, export_embeddings};
use psi_core::model::Checkpoint;
use psi_core::pairing::{PairMode, Similarity, Strategy};
use psi_core::pipeline::{fit, init_model, PreparedData, RunConfig, RunError};
use psi_core::psi::MutualOp;
use psi_core::synthetic::{generate, write_jsonl, SyntheticConfig};
use psi_core::trainer::{Method, TrainError, Trainer};

const EXIT_DATA: u8 = 65;
const EXIT_CONFIG: u8 = 78;

#[derive(Parser)]
#[command(name = "psi", version, about = "Pairwise semantic interaction for aspect sentiment classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, report and logs.
    Train(RunArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Train every variant of one ablation axis and write a comparison table.
    Ablate(AblateArgs),
    /// Write semantic vectors of a dataset as TSV.
    ExportEmbeddings(ExportArgs),
    /// Print the pairs built for the first batches of training.
    DumpPairs(DumpArgs),
    /// Write the synthetic imbalanced corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Similar,
    Dissimilar,
    Off,
}

impl From<ModeArg> for PairMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Similar => PairMode::Similar,
            ModeArg::Dissimilar => PairMode::Dissimilar,
            ModeArg::Off => PairMode::Off,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::ALL
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("expected one of i_p, i_a, i_p_and_l_a, i_a_and_l_p, got {s}"))
}

fn parse_mutual_op(s: &str) -> Result<MutualOp, String> {
    MutualOp::ALL
        .into_iter()
        .find(|op| op.as_str() == s)
        .ok_or_else(|| format!("unknown mutual op {s}"))
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "psi" => Ok(Method::Psi),
        "baseline" => Ok(Method::Baseline),
        other => Err(format!("expected psi or baseline, got {other}")),
    }
}

fn parse_similarity(s: &str) -> Result<Similarity, String> {
    match s {
        "random" => Ok(Similarity::Random),
        "sentence_distance" => Ok(Similarity::SentenceDistance),
        other => Err(format!("expected random or sentence_distance, got {other}")),
    }
}

/// Config file plus flag overrides. Flags win.
#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    lr_psi: Option<f64>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_polarities: Option<usize>,
    #[arg(long)]
    n_sentences: Option<usize>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    #[arg(long, value_parser = parse_similarity)]
    similarity: Option<Similarity>,
    #[arg(long, value_enum)]
    intra_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    inter_mode: Option<ModeArg>,
    /// Skip pairs with an empty candidate pool instead of failing.
    #[arg(long)]
    lenient: bool,
    #[arg(long, value_parser = parse_mutual_op)]
    mutual_op: Option<MutualOp>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Semantic vector dimension D.
    #[arg(long)]
    dim: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag {
                    $field = v.into();
                }
            };
        }
        set!(cfg.dataset, self.dataset.clone());
        set!(cfg.output_dir, self.output_dir.clone());
        let t = &mut cfg.train;
        set!(t.method, self.method);
        set!(t.epochs, self.epochs);
        set!(t.patience, self.patience);
        set!(t.lr_backbone, self.lr_backbone);
        set!(t.lr_psi, self.lr_psi);
        set!(t.adam_beta1, self.adam_beta1);
        set!(t.adam_beta2, self.adam_beta2);
        set!(t.mu, self.mu);
        set!(t.epsilon, self.epsilon);
        set!(t.seed, self.seed);
        let s = &mut t.sampling;
        set!(s.n_polarities, self.n_polarities);
        set!(s.n_sentences, self.n_sentences);
        set!(s.strategy, self.strategy);
        set!(s.similarity, self.similarity);
        set!(s.intra_mode, self.intra_mode);
        set!(s.inter_mode, self.inter_mode);
        if self.lenient {
            s.strict = false;
        }
        let m = &mut cfg.model;
        set!(m.mutual_op, self.mutual_op);
        set!(m.max_len, self.max_len);
        set!(m.encoder.embed_dim, self.embed_dim);
        set!(m.encoder.hidden_dim, self.hidden_dim);
        set!(m.encoder.output_dim, self.dim);
        cfg.train.validate()?;
        cfg.model.encoder.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Drop interaction-head parameters before evaluating.
    #[arg(long)]
    strip_head: bool,
    /// Also write the metrics here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    axis: AblationAxis,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    /// Number of training batches to trace.
    #[arg(long, default_value_t = 1)]
    batches: usize,
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn prepare_output(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    write_file(&cfg.output_dir.join("config.json"), &json_pretty(cfg))
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let data = PreparedData::load(&cfg.dataset, cfg.model.max_len)?;
    prepare_output(&cfg)?;
    let log_path = cfg.output_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut log_err = None;
    let (model, mut report, optimizers) = fit(&cfg.model, &cfg.train, &data, |record| {
        let line = serde_json::to_string(record).expect("serialisable");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
        eprintln!(
            "epoch {:>3}  total {:.6}  j_ce {:.6}  j_rk {:.6}{}",
            record.epoch,
            record.loss.total,
            record.loss.j_ce,
            record.loss.j_rk,
            record
                .metrics
                .as_ref()
                .map(|m| format!("  acc {:.4}  f1 {:.4}", m.accuracy, m.macro_f1))
                .unwrap_or_default()
        );
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing training log");
    }
    log.flush()?;

    let ckpt_path = cfg.output_dir.join("checkpoint.json");
    Checkpoint::from_model(&model, &data.vocab, Some(&optimizers)).save(&ckpt_path)?;
    report.checkpoint = Some("checkpoint.json".to_string());
    write_file(&cfg.output_dir.join("train_report.json"), &json_pretty(&report))?;
    if let Some(metrics) = report.final_metrics() {
        write_file(&cfg.output_dir.join("metrics.json"), &json_pretty(metrics))?;
    }
    eprintln!("stopped after epoch {}; artifacts in {}", report.stopping_epoch, cfg.output_dir.display());
    Ok(())
}

fn load_split(path: &Path, split: SplitArg) -> Result<Vec<psi_core::data::AspectInstance>> {
    let records = load_dataset(path, DatasetFormat::from_path(path))?;
    Ok(match split.split() {
        Some(s) => split_of(&records, s),
        None => records,
    })
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut ckpt = Checkpoint::load(&args.checkpoint)?;
    if args.strip_head {
        ckpt.strip_head();
    }
    let (model, vocab) = ckpt.restore()?;
    let records = load_split(&args.dataset, args.split)?;
    let encoded = encode_all(&records, &vocab, model.config.max_len)?;
    let metrics = evaluate(&model, &encoded)?;
    let text = json_pretty(&metrics);
    if let Some(out) = &args.out {
        write_file(out, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let data = PreparedData::load(&cfg.dataset, cfg.model.max_len)?;
    prepare_output(&cfg)?;
    let table = run_ablation(args.axis, &cfg.model, &cfg.train, &data, |row| {
        eprintln!("{:<40} acc {:.4}  f1 {:.4}", row.label, row.accuracy, row.macro_f1);
    })?;
    let stem = cfg.output_dir.join(format!("ablation_{}", args.axis.as_str()));
    write_file(&stem.with_extension("tsv"), &table.to_tsv())?;
    write_file(&stem.with_extension("md"), &table.to_markdown())?;
    write_file(&stem.with_extension("json"), &json_pretty(&table))?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let (model, vocab) = Checkpoint::load(&args.checkpoint)?.restore()?;
    let records = load_split(&args.dataset, args.split)?;
    let encoded = encode_all(&records, &vocab, model.config.max_len)?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut out = BufWriter::new(file);
    let n = export_embeddings(&model, &records, &encoded, &mut out)?;
    out.flush()?;
    eprintln!("wrote {n} vectors to {}", args.out.display());
    Ok(())
}

fn cmd_dump_pairs(args: &DumpArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    if cfg.train.method != Method::Psi {
        bail!("pairs are only built by the psi method");
    }
    let data = PreparedData::load(&cfg.dataset, cfg.model.max_len)?;
    let mut model = init_model(&cfg.model, cfg.train.seed, &data)?;
    let mut trainer = Trainer::new(&mut model, &data.train_records, &data.train, cfg.train)?;
    let traces = trainer.trace(args.batches)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    for trace in &traces {
        for pair in &trace.pairs {
            let a = &data.train_records[trace.batch[pair.a]];
            let b = &data.train_records[trace.batch[pair.b]];
            let line = json!({
                "epoch": trace.epoch,
                "step": trace.step,
                "kind": pair.kind,
                "distance": pair.distance,
                "a": {"sentence_id": a.sentence_id, "aspect": a.aspect, "polarity": a.polarity},
                "b": {"sentence_id": b.sentence_id, "aspect": b.aspect, "polarity": b.polarity},
            });
            writeln!(out, "{line}")?;
        }
        if trace.skipped > 0 {
            eprintln!("step {}: {} pairs skipped", trace.step, trace.skipped);
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut cfg = SyntheticConfig::default();
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.train_size {
        cfg.train_size = n;
    }
    if let Some(n) = args.test_size {
        cfg.test_size = n;
    }
    let records = generate(&cfg);
    let mut out = BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?);
    write_jsonl(&records, &mut out)?;
    out.flush()?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return match e {
                RunError::Data(_) | RunError::EmptySplit { .. } => EXIT_DATA,
                RunError::Config { .. } | RunError::Train(TrainError::Config(_)) => EXIT_CONFIG,
                _ => 1,
            };
        }
        if cause.downcast_ref::<DataError>().is_some_and(|e| !matches!(e, DataError::Config(_))) {
            return EXIT_DATA;
        }
        if cause.downcast_ref::<TrainError>().is_some_and(|e| matches!(e, TrainError::Config(_))) {
            return EXIT_CONFIG;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
        Command::DumpPairs(a) => cmd_dump_pairs(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
