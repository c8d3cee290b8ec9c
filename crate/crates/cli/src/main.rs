//! `macroplan` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error
//! (unreadable or inconsistent inputs), 4 numeric failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use macroplan::config::{Overrides, Profile, RunConfig};
use macroplan::corpus::{
    build_plan_pool, generate_toy_corpus, read_corpus, tiny_game, write_corpus, Document, GameRecord, Schema, Table,
    ToyParams,
};
use macroplan::error::ModelError;
use macroplan::inference::{generate_document, tune_bins, validation_bleu};
use macroplan::metrics::evaluate;
use macroplan::model::{Model, ModelConfig};
use macroplan::pipeline::{build_model, encode_all, prepare};
use macroplan::training::{check_loss_gradients, train, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "macroplan", version, about = "Plan-then-write data-to-text generation")]
struct Cli {
    /// Random seed (default 1).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// toy, rotowire-like or mlb-like.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// TOML file of key = value settings; flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus as JSON lines.
    MakeToy {
        #[arg(long, default_value_t = 100)]
        games: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint and a loss log.
    Train(TrainArgs),
    /// Generate plans and summaries for every game of a corpus.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        beam_size: Option<usize>,
        #[arg(long)]
        max_paragraphs: Option<usize>,
    },
    /// Score generated summaries against a gold corpus.
    Evaluate {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Report CSV; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full loss on a small fixed game.
    GradCheck {
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 3e-3)]
        step: f64,
        /// Parameters are redrawn uniformly from [-scale, scale].
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Loss log CSV (default: checkpoint path with `.loss.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numeric(_) => CliError::Numeric(e.to_string()),
            ModelError::Input(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<macroplan::corpus::CorpusError> for CliError {
    fn from(e: macroplan::corpus::CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<macroplan::metrics::MetricsError> for CliError {
    fn from(e: macroplan::metrics::MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

/// One line of `generate` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GeneratedRecord {
    id: String,
    plan: Vec<usize>,
    plan_desc: Vec<String>,
    terminated: bool,
    summary: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, msg) = match e {
                CliError::Usage(m) => (2, m),
                CliError::Data(m) => (3, m),
                CliError::Numeric(m) => (4, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn resolve(cli: &Cli, flags: Overrides) -> Result<RunConfig, CliError> {
    let file = match &cli.config {
        Some(p) => Overrides::load(p).map_err(|e| match e {
            ModelError::Io(m) => CliError::Usage(format!("{}: {m}", p.display())),
            other => other.into(),
        })?,
        None => Overrides::default(),
    };
    let top = Overrides { seed: cli.seed, profile: cli.profile, ..Overrides::default() };
    Ok(RunConfig::resolve(&[&file, &top, &flags])?)
}

fn schema_for(cfg: &RunConfig) -> Result<Schema, CliError> {
    match (&cfg.schema, cfg.profile) {
        (Some(p), _) => Ok(Schema::load(p)?),
        (None, Profile::Toy) => Ok(Schema::toy()),
        (None, Profile::MlbLike) => Ok(Schema::mlb()),
        (None, Profile::RotowireLike) => Err(CliError::Usage("the rotowire-like profile needs --schema".into())),
    }
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    p.clone().ok_or_else(|| CliError::Usage(format!("missing --{what}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::MakeToy { games, out } => {
            let cfg = resolve(&cli, Overrides::default())?;
            let corpus = generate_toy_corpus(cfg.seed, *games, &ToyParams::default())?;
            let recs: Vec<GameRecord> = corpus
                .games
                .iter()
                .enumerate()
                .map(|(i, g)| GameRecord::from_toy(format!("toy-{}-{i}", cfg.seed), g))
                .collect();
            write_corpus(out, &recs)?;
            eprintln!("wrote {} games to {}", recs.len(), out.display());
            Ok(())
        }
        Command::Train(a) => cmd_train(&cli, a),
        Command::Generate { checkpoint, corpus, out, schema, beam_size, max_paragraphs } => {
            let flags = Overrides {
                checkpoint: checkpoint.clone(),
                schema: schema.clone(),
                beam_size: *beam_size,
                max_paragraphs: *max_paragraphs,
                ..Overrides::default()
            };
            let cfg = resolve(&cli, flags)?;
            let schema = schema_for(&cfg)?;
            let model = Model::load(&required(&cfg.checkpoint, "checkpoint")?)?;
            let recs = read_corpus(corpus)?;
            let mut lines = String::new();
            for r in &recs {
                r.table.validate(&schema)?;
                let pool = build_plan_pool(&r.table, &schema)?;
                let (ids, kinds) = model.encode_pool(&pool);
                let doc = generate_document(&model, &ids, &kinds, &cfg.decode)?;
                let rec = GeneratedRecord {
                    id: r.id.clone(),
                    plan_desc: doc.plan.steps.iter().map(|&s| pool.plans[s].descriptor()).collect(),
                    plan: doc.plan.steps,
                    terminated: doc.plan.terminated,
                    summary: doc.document.to_text(),
                };
                lines.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
                lines.push('\n');
            }
            fs::write(out, lines).map_err(io_err(out))?;
            eprintln!("wrote {} summaries to {}", recs.len(), out.display());
            Ok(())
        }
        Command::Evaluate { generated, gold, schema, out } => {
            let cfg = resolve(&cli, Overrides { schema: schema.clone(), ..Overrides::default() })?;
            let schema = schema_for(&cfg)?;
            let gold = read_corpus(gold)?;
            let text = fs::read_to_string(generated).map_err(io_err(generated))?;
            let mut gen = std::collections::HashMap::new();
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let r: GeneratedRecord = serde_json::from_str(line)
                    .map_err(|e| CliError::Data(format!("{} line {}: {e}", generated.display(), i + 1)))?;
                gen.insert(r.id.clone(), r.summary);
            }
            let mut docs: Vec<Document> = vec![];
            for g in &gold {
                let s = gen.get(&g.id).ok_or_else(|| CliError::Data(format!("no generation for game {}", g.id)))?;
                docs.push(Document::from_text(s));
            }
            let golds: Vec<Document> = gold.iter().map(GameRecord::document).collect();
            let tables: Vec<Table> = gold.iter().map(|g| g.table.clone()).collect();
            let report = evaluate(&docs, &golds, &tables, &schema)?;
            let csv = report.to_csv();
            match out {
                Some(p) => fs::write(p, &csv).map_err(io_err(p))?,
                None => std::io::stdout().write_all(csv.as_bytes()).map_err(|e| CliError::Data(e.to_string()))?,
            }
            eprintln!("{report}");
            Ok(())
        }
        Command::GradCheck { hidden, step, scale, tolerance } => {
            let cfg = resolve(&cli, Overrides::default())?;
            if !(*step > 0.0 && *scale > 0.0 && *hidden > 0) {
                return Err(CliError::Usage("step, scale and hidden must be positive".into()));
            }
            let game = tiny_game();
            let games = prepare(&[GameRecord::from_toy("tiny", &game)], &Schema::toy())?;
            let mut model = build_model(&games, ModelConfig { embed_dim: *hidden, hidden: *hidden, bins: 2 }, 1, cfg.seed)?;
            let encoded = encode_all(&model, &games)?.remove(0);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for v in model.params.values_mut() {
                v.iter_mut().for_each(|x| *x = rng.gen_range(-*scale..*scale));
            }
            let mut worst = 0.0f64;
            for epsilon in [1.0, 0.0] {
                let lc = LossConfig { lambda: cfg.train.lambda, temperature: cfg.train.temperature, epsilon };
                let r = check_loss_gradients(&mut model, &encoded, lc, *step, cfg.seed)?;
                println!(
                    "oracle rate {epsilon}: {} entries, max relative error {:.3e} at {:?} (analytic {:.6e}, numeric {:.6e})",
                    r.checked, r.max_rel_error, r.worst, r.analytic, r.numeric
                );
                worst = worst.max(r.max_rel_error);
            }
            if worst < *tolerance {
                println!("PASS");
                Ok(())
            } else {
                Err(CliError::Numeric(format!("max relative error {worst:.3e} exceeds {tolerance:.1e}")))
            }
        }
    }
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<(), CliError> {
    let flags = Overrides {
        train: a.train.clone(),
        valid: a.valid.clone(),
        checkpoint: a.checkpoint.clone(),
        schema: a.schema.clone(),
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        hidden: a.hidden,
        embed_dim: a.embed_dim,
        bins: a.bins,
        threads: a.threads,
        ..Overrides::default()
    };
    let cfg = resolve(cli, flags)?;
    let schema = schema_for(&cfg)?;
    let ckpt = required(&cfg.checkpoint, "checkpoint")?;
    let train_games = prepare(&read_corpus(&required(&cfg.train_path, "train")?)?, &schema)?;
    let valid_games = match &cfg.valid_path {
        Some(p) => prepare(&read_corpus(p)?, &schema)?,
        None => vec![],
    };
    let mut model = build_model(&train_games, cfg.model, cfg.min_count, cfg.seed)?;
    let etrain = encode_all(&model, &train_games)?;
    let evalid = encode_all(&model, &valid_games)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = ckpt.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let decode = cfg.decode;
    let threads = cfg.threads;
    let mut tiebreak = |m: &Model| {
        if evalid.is_empty() {
            Ok(0.0)
        } else {
            validation_bleu(m, &evalid, &decode, threads)
        }
    };
    let report = train(&mut model, &etrain, &evalid, &cfg.train, &mut tiebreak, |e| {
        eprintln!(
            "epoch {:>3}  loss {:>10.4}  kl {:>8.4}  valid acc {:>6.2}%",
            e.epoch, e.total, e.kl, e.valid_accuracy
        );
    })?;
    if !evalid.is_empty() {
        let scores = tune_bins(&mut model, &evalid, &cfg.decode, cfg.threads)?;
        eprintln!("inference bins {:?} (validation BLEU {:.2?})", model.kind_bins, scores);
    }
    fs::write(&log_path, report.to_csv()).map_err(io_err(&log_path))?;
    let meta = serde_json::json!({ "run": cfg, "best_epoch": report.best_epoch, "best_accuracy": report.best_accuracy });
    model.save(&ckpt, Some(meta))?;
    eprintln!("best epoch {} ({:.2}%); wrote {}", report.best_epoch, report.best_accuracy, ckpt.display());
    Ok(())
}
