//! Four-tier execution reward: error penalty, syntactic credit, partial
//! overlap credit and the exact-match bonus.

use serde::{Deserialize, Serialize};

use crate::sandbox::{canonicalize, CanonicalAnswer, EngineError, ExecutionOutcome};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RewardError {
    #[error("gold answer is empty; overlap is undefined")]
    EmptyGold,
    #[error("invalid reward config: {0}")]
    Config(String),
}

/// How partial overlap is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemsMode {
    /// `|pred ⊓ gold| / |gold|`
    #[default]
    Recall,
    /// `|pred ⊓ gold| / |pred ⊔ gold|`
    Jaccard,
}

impl std::str::FromStr for RemsMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recall" => Ok(RemsMode::Recall),
            "jaccard" => Ok(RemsMode::Jaccard),
            other => Err(format!("unknown rems mode '{other}' (expected recall|jaccard)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub r_err: f64,
    pub r_syn: f64,
    /// `r_partial = rems * partial_scale`
    pub partial_scale: f64,
    pub r_full: f64,
    pub rems_mode: RemsMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { r_err: -100.0, r_syn: 1.0, partial_scale: 100.0, r_full: 1000.0, rems_mode: RemsMode::Recall }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.r_err < 0.0 && 0.0 < self.r_syn) {
            return Err(RewardError::Config(format!(
                "need r_err < 0 < r_syn, got r_err={} r_syn={}",
                self.r_err, self.r_syn
            )));
        }
        if !(self.r_full > self.partial_scale) {
            return Err(RewardError::Config(format!(
                "need r_full > partial_scale, got {} <= {}",
                self.r_full, self.partial_scale
            )));
        }
        if !(self.partial_scale >= 0.0) {
            return Err(RewardError::Config("partial_scale must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    Error,
    ExecutedWrong,
    ExecutedPartial,
    ExecutedExact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub syntactic: f64,
    pub partial: f64,
    pub full: f64,
    pub total: f64,
    pub rems: f64,
    pub outcome_class: OutcomeClass,
}

/// Recall-normalized multiset overlap, `|pred ⊓ gold| / |gold|`.
pub fn rems(pred: &CanonicalAnswer, gold: &CanonicalAnswer) -> Result<f64, RewardError> {
    rems_with_mode(pred, gold, RemsMode::Recall)
}

pub fn rems_with_mode(pred: &CanonicalAnswer, gold: &CanonicalAnswer, mode: RemsMode) -> Result<f64, RewardError> {
    if gold.is_empty() {
        return Err(RewardError::EmptyGold);
    }
    let hits = pred.overlap(gold) as f64;
    Ok(match mode {
        RemsMode::Recall => hits / gold.len() as f64,
        RemsMode::Jaccard => hits / (pred.len() as f64 + gold.len() as f64 - hits),
    })
}

/// Scores an already-canonicalized outcome.
pub fn score_answer(
    pred: Result<&CanonicalAnswer, &EngineError>,
    gold: &CanonicalAnswer,
    cfg: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    if gold.is_empty() {
        return Err(RewardError::EmptyGold);
    }
    let Ok(pred) = pred else {
        return Ok(RewardBreakdown {
            syntactic: cfg.r_err,
            partial: 0.0,
            full: 0.0,
            total: cfg.r_err,
            rems: 0.0,
            outcome_class: OutcomeClass::Error,
        });
    };
    let overlap = rems_with_mode(pred, gold, cfg.rems_mode)?;
    let (partial, full, class) = if pred == gold {
        (cfg.partial_scale, cfg.r_full, OutcomeClass::ExecutedExact)
    } else if overlap > 0.0 {
        (overlap * cfg.partial_scale, 0.0, OutcomeClass::ExecutedPartial)
    } else {
        (0.0, 0.0, OutcomeClass::ExecutedWrong)
    };
    let rems = if class == OutcomeClass::ExecutedExact { 1.0 } else { overlap };
    Ok(RewardBreakdown {
        syntactic: cfg.r_syn,
        partial,
        full,
        total: cfg.r_syn + partial + full,
        rems,
        outcome_class: class,
    })
}

pub fn score(outcome: &ExecutionOutcome, gold: &CanonicalAnswer, cfg: &RewardConfig) -> Result<RewardBreakdown, RewardError> {
    let canon = canonicalize(outcome);
    score_answer(canon.as_ref(), gold, cfg)
}
