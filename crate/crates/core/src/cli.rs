//! Command-line front end: `gen-data | train | eval | score | report`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::corpus::{build_corpus, load_corpus, write_corpus, CorpusError, CorpusRequest, Split, SplitSizes};
use crate::eval::{compare, eval_file_name, evaluate, EmsMode, EvalResult, GreedyPolicy, OracleProposer, Proposer};
use crate::grpo::{GrpoError, KlMode, TrainConfig, Trainer, STATE_FILE};
use crate::policy::{load_checkpoint, DecodeMode, Grammar, PolicyError, PolicyParams};
use crate::rewards::{score, RemsMode, RewardConfig};
use crate::sandbox::SandboxError;

pub const DEFAULT_SEED: u64 = 7;
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    Missing(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Missing(_) => CliError::Missing(e.to_string()),
            CorpusError::Request(_) | CorpusError::Io { .. } => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<GrpoError> for CliError {
    fn from(e: GrpoError) -> Self {
        match e {
            GrpoError::Config(_) | GrpoError::GroupTooSmall(_) => CliError::Config(e.to_string()),
            GrpoError::Sandbox(_) => CliError::Missing(e.to_string()),
            GrpoError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::Missing(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Io { ref source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::Missing(e.to_string())
            }
            PolicyError::Format(_) | PolicyError::Shape(_) => CliError::Config(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<SandboxError> for CliError {
    fn from(e: SandboxError) -> Self {
        CliError::Internal(e.to_string())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Everything that determines a run. `seed` overrides the corpus and
/// training seeds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub corpus: CorpusRequest,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub paths: Paths,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn resolve_seed(&mut self, flag: Option<u64>) -> Result<(), CliError> {
        let env = match std::env::var("RUN_SEED") {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| CliError::Config(format!("RUN_SEED '{v}' is not a u64")))?),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(DEFAULT_SEED);
        self.seed = Some(seed);
        self.corpus.seed = seed;
        self.train.seed = seed;
        Ok(())
    }

    fn save(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        write_file(&dir.join(CONFIG_FILE), &(text + "\n"))
    }
}

#[derive(Parser, Debug)]
#[command(name = "sqlgrpo", version, about = "Execution-grounded GRPO for text-to-SQL on a synthetic corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate databases and question splits.
    GenData(GenDataArgs),
    /// Train the policy with GRPO.
    Train(TrainArgs),
    /// Evaluate a policy on one or more splits.
    Eval(EvalArgs),
    /// Score one SQL string against one question.
    Score(ScoreArgs),
    /// Merge evaluation files into comparison tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON run configuration; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Falls back to RUN_SEED, then 7.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use the full-size split sizes instead of the desk-scale defaults.
    #[arg(long)]
    pub paper_scale: bool,
    /// Keep gold SQL in the split files.
    #[arg(long)]
    pub with_oracle: bool,
    #[arg(long)]
    pub n_athletes: Option<usize>,
    #[arg(long)]
    pub questions_per_db: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus directory written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// sample | topk
    #[arg(long)]
    pub decode: Option<DecodeMode>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// exact | sampled
    #[arg(long)]
    pub kl_mode: Option<KlMode>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Continue from the state saved in --out, using its stored config unless
    /// --config is given.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Policy checkpoint file.
    #[arg(long, conflicts_with = "policy")]
    pub checkpoint: Option<PathBuf>,
    /// Built-in policy: uniform | oracle.
    #[arg(long)]
    pub policy: Option<String>,
    /// Split name; repeatable. Defaults to every test split.
    #[arg(long)]
    pub split: Vec<Split>,
    /// exact | containment
    #[arg(long, default_value = "exact")]
    pub ems_mode: EmsMode,
    /// Row label in reports; defaults to the checkpoint file stem.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Question id, e.g. dev-00003.
    #[arg(long)]
    pub question: String,
    #[arg(long)]
    pub sql: String,
    /// Run against this database instead of the question's own.
    #[arg(long)]
    pub db: Option<String>,
    /// recall | jaccard
    #[arg(long)]
    pub rems_mode: Option<RemsMode>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Directories holding eval_*.json files; defaults to --out.
    #[arg(long)]
    pub inputs: Vec<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Score(a) => cmd_score(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn base_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.resolve_seed(common.seed)?;
    Ok(cfg)
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::Config(format!("--{flag} is required (flag or paths.{flag} in --config)")))
}

pub fn cmd_gen_data(a: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = base_config(&a.common)?;
    if a.paper_scale {
        cfg.corpus.sizes = SplitSizes::paper();
    }
    if let Some(n) = a.n_athletes {
        cfg.corpus.n_athletes = n;
    }
    if let Some(n) = a.questions_per_db {
        cfg.corpus.questions_per_db = n;
    }
    let out = require(a.out.or(cfg.paths.out.clone()), "out")?;
    cfg.paths.out = Some(out.clone());
    let corpus = build_corpus(&cfg.corpus)?;
    write_corpus(&corpus, &out, a.with_oracle)?;
    cfg.save(&out)?;
    for split in Split::ALL {
        println!("{:<20} {}", split.name(), corpus.split(split).len());
    }
    println!("databases            {}", corpus.databases.len());
    Ok(())
}

pub fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let stored = a.out.as_ref().map(|o| o.join(CONFIG_FILE));
    let mut cfg = match (&a.common.config, a.resume, &stored) {
        (None, true, Some(p)) => RunConfig::load(p)?,
        (Some(p), _, _) => RunConfig::load(p)?,
        _ => RunConfig::default(),
    };
    cfg.resolve_seed(a.common.seed)?;
    let t = &mut cfg.train;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = a.$flag { t.$field = v; })* };
    }
    set!(k => k, beta => beta, learning_rate => learning_rate, batch_size => batch_size, epochs => epochs,
         decode => decode, eval_every => eval_every, kl_mode => kl_mode);
    if a.max_steps.is_some() || !a.resume {
        t.max_steps = a.max_steps;
    }
    t.validate()?;
    cfg.reward.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let data = require(a.data.or(cfg.paths.data.clone()), "data")?;
    let out = require(a.out.or(cfg.paths.out.clone()), "out")?;
    cfg.paths.data = Some(data.clone());
    cfg.paths.out = Some(out.clone());
    let corpus = load_corpus(&data, false)?;
    let pool = corpus.open_sandboxes()?;
    let grammar = Grammar::standard();
    fs::create_dir_all(&out).map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    cfg.save(&out)?;

    let trainer = Trainer {
        config: cfg.train.clone(),
        reward: cfg.reward.clone(),
        grammar: &grammar,
        train: corpus.split(Split::Train),
        dev: corpus.split(Split::Dev),
        pool: &pool,
        out_dir: Some(out.clone()),
    };
    let summary = if a.resume {
        if !out.join(STATE_FILE).exists() {
            return Err(CliError::Missing(format!("{} (nothing to resume)", out.join(STATE_FILE).display())));
        }
        trainer.resume()?
    } else {
        trainer.run()?
    };
    let best = summary.state.best.as_ref().expect("dev is evaluated at step 0");
    println!("steps      {}/{}", summary.state.step, summary.total_steps);
    for d in &summary.state.dev_history {
        println!("dev step {:>4}  ems {:6.2}  error {:6.2}", d.step, d.ems, d.error_rate);
    }
    println!("best       step {} dev ems {:.2}", best.step, best.dev_ems);
    Ok(())
}

fn load_params(path: &Path, grammar: &Grammar) -> Result<PolicyParams, CliError> {
    let ckpt = load_checkpoint(path)?;
    ckpt.check_registry(grammar.registry())?;
    Ok(ckpt.params)
}

pub fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let grammar = Grammar::standard();
    let oracle = a.policy.as_deref() == Some("oracle");
    let corpus = load_corpus(&a.data, oracle)?;
    let pool = corpus.open_sandboxes()?;
    let (params, label) = match (&a.checkpoint, a.policy.as_deref()) {
        (Some(p), _) => {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint").to_string();
            (Some(load_params(p, &grammar)?), stem)
        }
        (None, Some("uniform")) => (Some(PolicyParams::uniform(grammar.registry())), "uniform".to_string()),
        (None, Some("oracle")) => (None, "oracle".to_string()),
        (None, Some(other)) => return Err(CliError::Config(format!("unknown policy '{other}' (uniform|oracle)"))),
        (None, None) => return Err(CliError::Config("give --checkpoint or --policy".into())),
    };
    if oracle && corpus.splits.values().flatten().any(|q| q.gold_sql.is_none()) {
        return Err(CliError::Missing("corpus was generated without --with-oracle".into()));
    }
    let label = a.label.unwrap_or(label);
    let greedy;
    let proposer: &dyn Proposer = match &params {
        Some(p) => {
            greedy = GreedyPolicy { grammar: &grammar, params: p };
            &greedy
        }
        None => &OracleProposer,
    };
    let splits = if a.split.is_empty() { Split::TEST.to_vec() } else { a.split };
    let mut results = Vec::new();
    for split in splits {
        let r = evaluate(proposer, split.name(), &label, corpus.split(split), &pool, a.ems_mode);
        let text = serde_json::to_string_pretty(&r).expect("result serializes");
        write_file(&a.out.join(eval_file_name(split.name(), &label)), &(text + "\n"))?;
        println!(
            "{:<20} n {:>4}  ems {:6.2}  rems {:6.2}  errors {:>4} ({:.2}%)",
            split.name(),
            r.metrics.n,
            r.metrics.ems,
            r.metrics.rems,
            r.metrics.error_count,
            r.metrics.error_rate
        );
        results.push(r);
    }
    write_report(&a.out, &results)
}

pub fn cmd_score(a: ScoreArgs) -> Result<(), CliError> {
    let mut reward = match &a.config {
        Some(p) => RunConfig::load(p)?.reward,
        None => RewardConfig::default(),
    };
    if let Some(m) = a.rems_mode {
        reward.rems_mode = m;
    }
    reward.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let corpus = load_corpus(&a.data, false)?;
    let q = corpus
        .find_question(&a.question)
        .ok_or_else(|| CliError::Missing(format!("question {} not found in {}", a.question, a.data.display())))?;
    let db_id = a.db.as_deref().unwrap_or(&q.db_id);
    let db = corpus.database(db_id).ok_or_else(|| CliError::Missing(format!("database {db_id}")))?;
    let sandbox = crate::sandbox::Sandbox::open(db)?;
    let breakdown = score(&sandbox.execute(&a.sql), &q.gold_answer, &reward).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{}", serde_json::to_string_pretty(&breakdown).expect("breakdown serializes"));
    Ok(())
}

fn write_report(out: &Path, results: &[EvalResult]) -> Result<(), CliError> {
    let report = compare(results);
    write_file(&out.join("report.csv"), &report.to_csv())?;
    let text = report.to_text();
    write_file(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let inputs = if a.inputs.is_empty() { vec![a.out.clone()] } else { a.inputs };
    let mut results = Vec::new();
    for dir in &inputs {
        let entries = fs::read_dir(dir).map_err(|e| CliError::Missing(format!("{}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("eval_") && n.ends_with(".json"))
            })
            .collect();
        files.sort();
        for f in files {
            let text = fs::read_to_string(&f).map_err(|e| CliError::Missing(format!("{}: {e}", f.display())))?;
            let r: EvalResult =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?;
            results.push(r);
        }
    }
    if results.is_empty() {
        return Err(CliError::Missing(format!("no eval_*.json files under {inputs:?}")));
    }
    write_report(&a.out, &results)
}
