//! EMS, REMS and error-rate evaluation of one decoded query per question.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use report::{compare, parse_report_csv, Report, ReportRow};

use crate::corpus::{Difficulty, QuestionInstance};
use crate::policy::{greedy, Grammar, PolicyParams};
use crate::rewards::{score_answer, OutcomeClass, RewardConfig};
use crate::sandbox::{canonicalize, ErrorTag, SandboxPool};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmsMode {
    /// Canonical multiset equality with the gold answer.
    #[default]
    Exact,
    /// Every gold value appears in the prediction.
    Containment,
}

impl std::str::FromStr for EmsMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(EmsMode::Exact),
            "containment" => Ok(EmsMode::Containment),
            other => Err(format!("unknown ems mode '{other}' (expected exact|containment)")),
        }
    }
}

/// Produces one SQL string per question.
pub trait Proposer {
    fn propose(&self, question: &QuestionInstance) -> Result<String, String>;
}

/// Greedy decoding of a policy.
pub struct GreedyPolicy<'a> {
    pub grammar: &'a Grammar,
    pub params: &'a PolicyParams,
}

impl Proposer for GreedyPolicy<'_> {
    fn propose(&self, q: &QuestionInstance) -> Result<String, String> {
        greedy(self.grammar, self.params, q).map(|c| c.sql).map_err(|e| e.to_string())
    }
}

/// Emits the gold query; only usable on corpora loaded with oracle access.
pub struct OracleProposer;

impl Proposer for OracleProposer {
    fn propose(&self, q: &QuestionInstance) -> Result<String, String> {
        q.gold_sql.clone().ok_or_else(|| format!("question {} carries no gold query", q.id))
    }
}

/// Emits the same text for every question.
pub struct ConstantProposer(pub String);

impl Proposer for ConstantProposer {
    fn propose(&self, _: &QuestionInstance) -> Result<String, String> {
        Ok(self.0.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub difficulty: Difficulty,
    pub db_id: String,
    pub predicted_sql: Option<String>,
    /// Absent when the question could not be attempted at all.
    pub outcome_class: Option<OutcomeClass>,
    pub rems: f64,
    pub exact: bool,
    pub error_tag: Option<ErrorTag>,
    pub failure: Option<String>,
}

impl QuestionRecord {
    pub fn is_error(&self) -> bool {
        self.outcome_class == Some(OutcomeClass::Error)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// Percentages in [0, 100].
    pub ems: f64,
    pub rems: f64,
    pub error_count: usize,
    pub error_rate: f64,
    /// Questions that could not be attempted (e.g. missing database).
    pub failure_count: usize,
}

impl Metrics {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a QuestionRecord>) -> Self {
        let (mut n, mut exact, mut rems, mut errors, mut failures) = (0usize, 0usize, 0.0f64, 0usize, 0usize);
        for r in records {
            n += 1;
            exact += r.exact as usize;
            rems += r.rems;
            errors += r.is_error() as usize;
            failures += r.failure.is_some() as usize;
        }
        if n == 0 {
            return Metrics::default();
        }
        let pct = |x: f64| 100.0 * x / n as f64;
        Metrics {
            n,
            ems: pct(exact as f64),
            rems: pct(rems),
            error_count: errors,
            error_rate: pct(errors as f64),
            failure_count: failures,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub split: String,
    pub checkpoint: String,
    pub ems_mode: EmsMode,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub by_difficulty: BTreeMap<Difficulty, Metrics>,
    pub records: Vec<QuestionRecord>,
}

fn evaluate_one(
    proposer: &dyn Proposer,
    q: &QuestionInstance,
    pool: &SandboxPool,
    ems_mode: EmsMode,
) -> QuestionRecord {
    let mut record = QuestionRecord {
        id: q.id.clone(),
        difficulty: q.difficulty,
        db_id: q.db_id.clone(),
        predicted_sql: None,
        outcome_class: None,
        rems: 0.0,
        exact: false,
        error_tag: None,
        failure: None,
    };
    let sql = match proposer.propose(q) {
        Ok(sql) => sql,
        Err(e) => {
            record.failure = Some(e);
            return record;
        }
    };
    record.predicted_sql = Some(sql.clone());
    let Some(sandbox) = pool.get(&q.db_id) else {
        record.failure = Some(format!("database {} is not available", q.db_id));
        return record;
    };
    let answer = canonicalize(&sandbox.execute(&sql));
    let breakdown = match score_answer(answer.as_ref(), &q.gold_answer, &RewardConfig::default()) {
        Ok(b) => b,
        Err(e) => {
            record.failure = Some(e.to_string());
            return record;
        }
    };
    record.outcome_class = Some(breakdown.outcome_class);
    match &answer {
        Err(e) => record.error_tag = Some(e.tag),
        Ok(pred) => {
            record.rems = breakdown.rems;
            record.exact = match ems_mode {
                EmsMode::Exact => pred == &q.gold_answer,
                EmsMode::Containment => pred.contains_all(&q.gold_answer),
            };
        }
    }
    record
}

/// Decodes, executes and scores every question of a split. Questions whose
/// database is missing are recorded as failures and count against EMS and
/// REMS but not the error rate.
pub fn evaluate(
    proposer: &dyn Proposer,
    split: &str,
    checkpoint: &str,
    questions: &[QuestionInstance],
    pool: &SandboxPool,
    ems_mode: EmsMode,
) -> EvalResult {
    let records: Vec<QuestionRecord> = questions.iter().map(|q| evaluate_one(proposer, q, pool, ems_mode)).collect();
    let by_difficulty = Difficulty::ALL
        .into_iter()
        .filter(|d| records.iter().any(|r| r.difficulty == *d))
        .map(|d| (d, Metrics::from_records(records.iter().filter(|r| r.difficulty == d))))
        .collect();
    EvalResult {
        split: split.to_string(),
        checkpoint: checkpoint.to_string(),
        ems_mode,
        metrics: Metrics::from_records(&records),
        by_difficulty,
        records,
    }
}

pub fn eval_file_name(split: &str, checkpoint: &str) -> String {
    format!("eval_{split}_{checkpoint}.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, CorpusRequest, Split, SplitSizes};

    fn corpus() -> crate::corpus::Corpus {
        build_corpus(&CorpusRequest {
            seed: 11,
            sizes: SplitSizes {
                train: 12,
                dev: 24,
                test_original: 12,
                test_counterfactual: 12,
                test_easy: 8,
                test_medium: 8,
                test_hard: 8,
            },
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_is_perfect_and_malformed_is_all_errors() {
        let c = corpus();
        let pool = c.open_sandboxes().unwrap();
        let qs = c.split(Split::Dev);
        let top = evaluate(&OracleProposer, "dev", "oracle", qs, &pool, EmsMode::Exact);
        assert_eq!((top.metrics.ems, top.metrics.rems, top.metrics.error_rate), (100.0, 100.0, 0.0));
        let bottom = evaluate(&ConstantProposer("SELEC 1".into()), "dev", "bad", qs, &pool, EmsMode::Exact);
        assert_eq!((bottom.metrics.ems, bottom.metrics.rems, bottom.metrics.error_rate), (0.0, 0.0, 100.0));
        assert_eq!(bottom.metrics.error_count, qs.len());
        assert!(bottom.records.iter().all(|r| r.error_tag == Some(ErrorTag::Engine)));
    }

    #[test]
    fn missing_database_is_a_failure_not_an_error() {
        let c = corpus();
        let pool = SandboxPool::default();
        let r = evaluate(&OracleProposer, "dev", "oracle", c.split(Split::Dev), &pool, EmsMode::Exact);
        assert_eq!(r.metrics.failure_count, r.metrics.n);
        assert_eq!(r.metrics.error_count, 0);
        assert_eq!(r.metrics.ems, 0.0);
    }

    #[test]
    fn uniform_policy_metrics_are_ordered_and_containment_is_looser() {
        let c = corpus();
        let pool = c.open_sandboxes().unwrap();
        let g = Grammar::standard();
        let p = PolicyParams::uniform(g.registry());
        let proposer = GreedyPolicy { grammar: &g, params: &p };
        let exact = evaluate(&proposer, "dev", "uniform", c.split(Split::Dev), &pool, EmsMode::Exact);
        let loose = evaluate(&proposer, "dev", "uniform", c.split(Split::Dev), &pool, EmsMode::Containment);
        for r in [&exact, &loose] {
            assert!(r.metrics.ems <= r.metrics.rems + 1e-12);
            assert!(r.metrics.rems <= 100.0);
            assert_eq!(r.records.len(), c.split(Split::Dev).len());
        }
        assert!(loose.metrics.ems >= exact.metrics.ems);
        assert!(exact.metrics.error_count > 0, "uniform greedy should hit some engine errors");
        for rec in exact.records.iter().filter(|r| r.is_error()) {
            assert_eq!((rec.rems, rec.exact), (0.0, false));
        }
    }
}
