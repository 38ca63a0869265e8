//! Synthetic temporal question-answering corpus: databases, templated
//! questions with gold denotations, counterfactual variants and splits.

mod generate;
mod perturb;
mod templates;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use generate::{
    athlete_views, generate_database, generate_database_with_id, generate_schema, medal_year_window, AthleteView,
    MedalView, LEVELS, MAX_YEAR, MEDAL_TYPES, MIN_YEAR,
};
pub use perturb::{perturb_counterfactual, PERTURB_FRACTION};
pub use templates::{
    derived_slots, fill, instantiate_question, instantiate_with_slots, parse_slots, template_by_id, templates,
    Difficulty, InstantiateError, QuestionInstance, QuestionTemplate, SlotAssignment,
};

use crate::sandbox::{
    canonicalize, load_database_file, to_sql, write_native, CanonicalAnswer, DatabaseInstance, SandboxError,
    SandboxPool,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad json in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error("invalid corpus request: {0}")]
    Request(String),
    #[error("could not fill split {split}: {reason}")]
    Exhausted { split: Split, reason: String },
    #[error("missing corpus artifact: {0}")]
    Missing(PathBuf),
    #[error("invalid corpus file {path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    TestOriginal,
    TestCounterfactual,
    TestEasy,
    TestMedium,
    TestHard,
}

impl Split {
    pub const ALL: [Split; 7] = [
        Split::Train,
        Split::Dev,
        Split::TestOriginal,
        Split::TestCounterfactual,
        Split::TestEasy,
        Split::TestMedium,
        Split::TestHard,
    ];

    pub const TEST: [Split; 5] =
        [Split::TestOriginal, Split::TestCounterfactual, Split::TestEasy, Split::TestMedium, Split::TestHard];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::TestOriginal => "test_original",
            Split::TestCounterfactual => "test_counterfactual",
            Split::TestEasy => "test_easy",
            Split::TestMedium => "test_medium",
            Split::TestHard => "test_hard",
        }
    }

    /// Column heading used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "Train",
            Split::Dev => "Dev",
            Split::TestOriginal => "Original",
            Split::TestCounterfactual => "Counterfactual",
            Split::TestEasy => "Easy",
            Split::TestMedium => "Medium",
            Split::TestHard => "Hard",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.name())
    }

    fn tier(self) -> Option<Difficulty> {
        match self {
            Split::TestEasy => Some(Difficulty::Easy),
            Split::TestMedium => Some(Difficulty::Medium),
            Split::TestHard => Some(Difficulty::Hard),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Split::ALL.into_iter().find(|sp| sp.name() == s).ok_or_else(|| format!("unknown split '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test_original: usize,
    pub test_counterfactual: usize,
    pub test_easy: usize,
    pub test_medium: usize,
    pub test_hard: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes::desk()
    }
}

impl SplitSizes {
    pub fn desk() -> Self {
        SplitSizes {
            train: 300,
            dev: 60,
            test_original: 100,
            test_counterfactual: 100,
            test_easy: 60,
            test_medium: 60,
            test_hard: 60,
        }
    }

    pub fn paper() -> Self {
        SplitSizes {
            train: 2961,
            dev: 282,
            test_original: 578,
            test_counterfactual: 699,
            test_easy: 732,
            test_medium: 507,
            test_hard: 719,
        }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::TestOriginal => self.test_original,
            Split::TestCounterfactual => self.test_counterfactual,
            Split::TestEasy => self.test_easy,
            Split::TestMedium => self.test_medium,
            Split::TestHard => self.test_hard,
        }
    }

    fn original_total(&self) -> usize {
        Split::ALL.iter().filter(|&&s| s != Split::TestCounterfactual).map(|&s| self.get(s)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusRequest {
    pub seed: u64,
    pub sizes: SplitSizes,
    pub n_athletes: usize,
    /// Target number of questions per generated database.
    pub questions_per_db: usize,
}

impl Default for CorpusRequest {
    fn default() -> Self {
        CorpusRequest { seed: 7, sizes: SplitSizes::desk(), n_athletes: 20, questions_per_db: 40 }
    }
}

impl CorpusRequest {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for split in Split::ALL {
            if self.sizes.get(split) == 0 {
                return Err(CorpusError::Request(format!("split {split} must have at least one question")));
            }
        }
        if self.n_athletes == 0 || self.n_athletes > 1024 {
            return Err(CorpusError::Request("n_athletes must be in 1..=1024".into()));
        }
        if self.questions_per_db == 0 {
            return Err(CorpusError::Request("questions_per_db must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub n_athletes: usize,
    pub sizes: SplitSizes,
    pub original_databases: Vec<String>,
    /// Counterfactual database id → the original it was perturbed from.
    pub counterfactual_databases: BTreeMap<String, String>,
    /// Template id → split name → question count.
    pub template_census: BTreeMap<String, BTreeMap<String, usize>>,
    /// Split name → difficulty → question count.
    pub difficulty_counts: BTreeMap<String, BTreeMap<Difficulty, usize>>,
    /// Fraction of counterfactual questions whose answer differs from the
    /// answer on the unperturbed source database.
    pub counterfactual_answer_change_rate: f64,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub databases: Vec<DatabaseInstance>,
    pub splits: BTreeMap<Split, Vec<QuestionInstance>>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[QuestionInstance] {
        self.splits.get(&split).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn database(&self, id: &str) -> Option<&DatabaseInstance> {
        self.databases.iter().find(|d| d.id == id)
    }

    pub fn open_sandboxes(&self) -> Result<SandboxPool, SandboxError> {
        SandboxPool::open_all(&self.databases)
    }

    /// Drops every gold query.
    pub fn strip_gold_sql(&mut self) {
        for qs in self.splits.values_mut() {
            for q in qs {
                q.gold_sql = None;
            }
        }
    }

    pub fn find_question(&self, id: &str) -> Option<&QuestionInstance> {
        self.splits.values().flatten().find(|q| q.id == id)
    }
}

/// Template order for a split. Mixed splits interleave tiers so that any
/// prefix is balanced across easy, medium and hard.
fn schedule(split: Split) -> Vec<QuestionTemplate> {
    let all = templates();
    if let Some(tier) = split.tier() {
        return all.into_iter().filter(|t| t.difficulty == tier).collect();
    }
    let by_tier: Vec<Vec<QuestionTemplate>> = Difficulty::ALL
        .iter()
        .map(|&d| all.iter().filter(|t| t.difficulty == d).cloned().collect())
        .collect();
    let rounds = by_tier.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for tier in &by_tier {
            if let Some(t) = tier.get(r) {
                out.push(t.clone());
            }
        }
    }
    out
}

const MAX_ATTEMPTS: usize = 500;

/// Generates databases and all seven splits.
pub fn build_corpus(request: &CorpusRequest) -> Result<Corpus, CorpusError> {
    request.validate()?;
    let seed = request.seed;
    let sizes = &request.sizes;

    let n_original = sizes.original_total().div_ceil(request.questions_per_db).max(1);
    let n_counterfactual = sizes.test_counterfactual.div_ceil(request.questions_per_db).max(1);

    let originals: Vec<DatabaseInstance> = (0..n_original)
        .map(|i| generate_database_with_id(&format!("orig{i:03}"), seed ^ i as u64, request.n_athletes))
        .collect();
    let mut cf_sources = BTreeMap::new();
    let counterfactuals: Vec<DatabaseInstance> = (0..n_counterfactual)
        .map(|i| {
            let source = &originals[i % n_original];
            let id = format!("cf{i:03}");
            cf_sources.insert(id.clone(), source.id.clone());
            perturb_counterfactual(source, seed ^ (i as u64) ^ 0xC0FF_EE00, &id)
        })
        .collect();

    let pool = SandboxPool::open_all(originals.iter().chain(&counterfactuals))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut used: HashSet<(String, String)> = HashSet::new();
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let dbs = if split == Split::TestCounterfactual { &counterfactuals } else { &originals };
        let plan = schedule(split);
        let mut questions = Vec::with_capacity(sizes.get(split));
        for i in 0..sizes.get(split) {
            let template = &plan[i % plan.len()];
            let mut accepted = None;
            for _ in 0..MAX_ATTEMPTS {
                let db = &dbs[rng.gen_range(0..dbs.len())];
                let sandbox = pool.get(&db.id).expect("opened above");
                match instantiate_question(template, db, sandbox, &mut rng) {
                    Ok(q) if used.insert((q.nlq.clone(), q.db_id.clone())) => {
                        accepted = Some(q);
                        break;
                    }
                    Ok(_) | Err(InstantiateError::Unsatisfiable) => continue,
                    Err(InstantiateError::GoldFailed(msg)) => {
                        return Err(CorpusError::Exhausted {
                            split,
                            reason: format!("gold query of {} failed on {}: {msg}", template.id, db.id),
                        })
                    }
                }
            }
            let mut q = accepted.ok_or_else(|| CorpusError::Exhausted {
                split,
                reason: format!("no fresh satisfiable instance of {} after {MAX_ATTEMPTS} attempts", template.id),
            })?;
            q.id = format!("{}-{:05}", split.name(), i);
            questions.push(q);
        }
        splits.insert(split, questions);
    }

    let mut databases = originals;
    databases.extend(counterfactuals);
    let manifest = make_manifest(request, &databases, &cf_sources, &splits, &pool);
    Ok(Corpus { manifest, databases, splits })
}

fn make_manifest(
    request: &CorpusRequest,
    databases: &[DatabaseInstance],
    cf_sources: &BTreeMap<String, String>,
    splits: &BTreeMap<Split, Vec<QuestionInstance>>,
    pool: &SandboxPool,
) -> CorpusManifest {
    let mut template_census: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut difficulty_counts: BTreeMap<String, BTreeMap<Difficulty, usize>> = BTreeMap::new();
    for (split, qs) in splits {
        for q in qs {
            *template_census.entry(q.template_id.clone()).or_default().entry(split.name().into()).or_default() += 1;
            *difficulty_counts.entry(split.name().into()).or_default().entry(q.difficulty).or_default() += 1;
        }
    }
    let cf = splits.get(&Split::TestCounterfactual).map(Vec::as_slice).unwrap_or(&[]);
    let changed = cf
        .iter()
        .filter(|q| {
            let source = &cf_sources[&q.db_id];
            let sql = q.gold_sql.as_deref().unwrap_or_default();
            let on_source = canonicalize(&pool.get(source).expect("opened").execute(sql));
            on_source.as_ref().ok() != Some(&q.gold_answer)
        })
        .count();
    CorpusManifest {
        seed: request.seed,
        n_athletes: request.n_athletes,
        sizes: request.sizes.clone(),
        original_databases: databases.iter().filter(|d| !cf_sources.contains_key(&d.id)).map(|d| d.id.clone()).collect(),
        counterfactual_databases: cf_sources.clone(),
        template_census,
        difficulty_counts,
        counterfactual_answer_change_rate: if cf.is_empty() { 0.0 } else { changed as f64 / cf.len() as f64 },
    }
}

/// One line of a split file.
#[derive(Serialize, Deserialize)]
struct QuestionLine {
    id: String,
    nlq: String,
    difficulty: Difficulty,
    db_id: String,
    gold_answer: CanonicalAnswer,
    template_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_sql: Option<String>,
}

pub const DATABASE_DIR: &str = "databases";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn database_sql_path(dir: &Path, db_id: &str) -> PathBuf {
    dir.join(DATABASE_DIR).join(format!("db_{db_id}.sql"))
}

pub fn database_native_path(dir: &Path, db_id: &str) -> PathBuf {
    dir.join(DATABASE_DIR).join(format!("db_{db_id}.sqlite"))
}

/// Writes split files, the manifest and both database forms under `dir`.
/// Gold queries are only written when `with_oracle` is set.
pub fn write_corpus(corpus: &Corpus, dir: &Path, with_oracle: bool) -> Result<(), CorpusError> {
    let db_dir = dir.join(DATABASE_DIR);
    fs::create_dir_all(&db_dir).map_err(io_err(&db_dir))?;
    for db in &corpus.databases {
        let path = database_sql_path(dir, &db.id);
        fs::write(&path, to_sql(db)).map_err(io_err(&path))?;
        write_native(db, &database_native_path(dir, &db.id))?;
    }
    for (split, qs) in &corpus.splits {
        let path = dir.join(split.file_name());
        let mut out = String::new();
        for q in qs {
            let line = QuestionLine {
                id: q.id.clone(),
                nlq: q.nlq.clone(),
                difficulty: q.difficulty,
                db_id: q.db_id.clone(),
                gold_answer: q.gold_answer.clone(),
                template_id: q.template_id.clone(),
                gold_sql: if with_oracle { q.gold_sql.clone() } else { None },
            };
            out.push_str(&serde_json::to_string(&line).expect("question serializes"));
            out.push('\n');
        }
        fs::write(&path, out).map_err(io_err(&path))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut file = fs::File::create(&path).map_err(io_err(&path))?;
    let text = serde_json::to_string_pretty(&corpus.manifest).expect("manifest serializes");
    writeln!(file, "{text}").map_err(io_err(&path))?;
    Ok(())
}

pub fn read_split(dir: &Path, split: Split, with_oracle: bool) -> Result<Vec<QuestionInstance>, CorpusError> {
    let path = dir.join(split.file_name());
    if !path.exists() {
        return Err(CorpusError::Missing(path));
    }
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(&path))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionLine =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json { path: path.clone(), source })?;
        let template = template_by_id(&q.template_id).ok_or_else(|| CorpusError::Invalid {
            path: path.clone(),
            reason: format!("unknown template '{}'", q.template_id),
        })?;
        let slots = parse_slots(template.nlq_pattern, &q.nlq).ok_or_else(|| CorpusError::Invalid {
            path: path.clone(),
            reason: format!("question {} does not match template {}", q.id, q.template_id),
        })?;
        out.push(QuestionInstance {
            id: q.id,
            nlq: q.nlq,
            difficulty: q.difficulty,
            db_id: q.db_id,
            gold_answer: q.gold_answer,
            template_id: q.template_id,
            gold_sql: if with_oracle { q.gold_sql } else { None },
            slot_assignment: slots,
        });
    }
    Ok(out)
}

/// Loads a corpus directory. Outside oracle mode gold queries are stripped
/// even when the files carry them.
pub fn load_corpus(dir: &Path, with_oracle: bool) -> Result<Corpus, CorpusError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CorpusError::Missing(manifest_path));
    }
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|source| CorpusError::Json { path: manifest_path.clone(), source })?;
    let mut databases = Vec::new();
    for id in manifest.original_databases.iter().chain(manifest.counterfactual_databases.keys()) {
        let path = database_sql_path(dir, id);
        if !path.exists() {
            return Err(CorpusError::Missing(path));
        }
        databases.push(load_database_file(&path)?);
    }
    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        splits.insert(split, read_split(dir, split, with_oracle)?);
    }
    Ok(Corpus { manifest, databases, splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_request() -> CorpusRequest {
        CorpusRequest {
            seed: 3,
            sizes: SplitSizes {
                train: 24,
                dev: 12,
                test_original: 12,
                test_counterfactual: 12,
                test_easy: 8,
                test_medium: 8,
                test_hard: 8,
            },
            ..Default::default()
        }
    }

    #[test]
    fn mixed_schedule_interleaves_tiers() {
        let plan = schedule(Split::Train);
        assert_eq!(plan.len(), 12);
        for chunk in plan.chunks(3) {
            let tiers: Vec<_> = chunk.iter().map(|t| t.difficulty).collect();
            assert_eq!(tiers, Difficulty::ALL);
        }
        assert!(schedule(Split::TestHard).iter().all(|t| t.difficulty == Difficulty::Hard));
    }

    #[test]
    fn zero_sized_split_is_rejected() {
        let mut req = small_request();
        req.sizes.dev = 0;
        assert!(matches!(build_corpus(&req), Err(CorpusError::Request(_))));
    }

    #[test]
    fn small_corpus_is_consistent() {
        let corpus = build_corpus(&small_request()).unwrap();
        let pool = corpus.open_sandboxes().unwrap();
        for q in corpus.splits.values().flatten() {
            let sql = q.gold_sql.as_deref().unwrap();
            let got = canonicalize(&pool.get(&q.db_id).unwrap().execute(sql)).unwrap();
            assert_eq!(got, q.gold_answer, "{}", q.id);
        }
        for q in corpus.split(Split::TestCounterfactual) {
            assert!(corpus.manifest.counterfactual_databases.contains_key(&q.db_id));
        }
        for split in Split::ALL.into_iter().filter(|&s| s != Split::TestCounterfactual) {
            for q in corpus.split(split) {
                assert!(!corpus.manifest.counterfactual_databases.contains_key(&q.db_id));
            }
        }
    }

    #[test]
    fn files_round_trip_and_strip_gold_sql() {
        let corpus = build_corpus(&small_request()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&corpus, dir.path(), true).unwrap();
        let with = load_corpus(dir.path(), true).unwrap();
        assert_eq!(with.splits, corpus.splits);
        assert_eq!(with.databases, corpus.databases);
        let without = load_corpus(dir.path(), false).unwrap();
        assert!(without.splits.values().flatten().all(|q| q.gold_sql.is_none()));
    }

    #[test]
    fn missing_manifest_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_corpus(dir.path(), false), Err(CorpusError::Missing(_))));
    }
}
