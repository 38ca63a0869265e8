//! Question templates: NLQ pattern, gold SQL pattern and slot selection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generate::{athlete_views, AthleteView};
use crate::sandbox::{canonicalize, CanonicalAnswer, DatabaseInstance, Sandbox, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Slot name → surface value, as it appears in the question text.
pub type SlotAssignment = BTreeMap<String, String>;

/// Slots that are computed from other slots rather than read from the text.
pub fn derived_slots(slots: &SlotAssignment) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if let Some(decade) = slots.get("decade") {
        if let Some(lo) = decade_start(decade) {
            out.push(("age_lo".to_string(), lo.to_string()));
            out.push(("age_hi".to_string(), (lo + 9).to_string()));
        }
    }
    out
}

pub const DECADES: [(&str, i64); 3] = [("twenties", 20), ("thirties", 30), ("forties", 40)];

fn decade_start(word: &str) -> Option<i64> {
    DECADES.iter().find(|(w, _)| *w == word).map(|&(_, lo)| lo)
}

/// Substitutes `{slot}` placeholders. Values are escaped for SQL string
/// literals when `sql` is set.
pub fn fill(pattern: &str, slots: &SlotAssignment, sql: bool) -> String {
    let mut all: Vec<(String, String)> = slots.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    all.extend(derived_slots(slots));
    let mut out = pattern.to_string();
    for (k, v) in all {
        let value = if sql { v.replace('\'', "''") } else { v };
        out = out.replace(&format!("{{{k}}}"), &value);
    }
    out
}

/// Reads slot values back out of a question produced from `pattern`.
pub fn parse_slots(pattern: &str, text: &str) -> Option<SlotAssignment> {
    let mut slots = SlotAssignment::new();
    let mut rest_pattern = pattern;
    let mut rest_text = text;
    loop {
        match rest_pattern.find('{') {
            None => return (rest_pattern == rest_text).then_some(slots),
            Some(open) => {
                let literal = &rest_pattern[..open];
                rest_text = rest_text.strip_prefix(literal)?;
                let close = open + rest_pattern[open..].find('}')?;
                let name = &rest_pattern[open + 1..close];
                rest_pattern = &rest_pattern[close + 1..];
                let next_literal = match rest_pattern.find('{') {
                    Some(i) => &rest_pattern[..i],
                    None => rest_pattern,
                };
                let end = if next_literal.is_empty() {
                    rest_text.len()
                } else if !rest_pattern.contains('{') {
                    // Last slot: anchor on the trailing literal at the end.
                    rest_text.len().checked_sub(next_literal.len()).filter(|&e| rest_text[e..] == *next_literal)?
                } else {
                    rest_text.find(next_literal)?
                };
                slots.insert(name.to_string(), rest_text[..end].to_string());
                rest_text = &rest_text[end..];
            }
        }
    }
}

const CHAIN: &str = "medal m JOIN format f ON m.format_id = f.format_id \
JOIN tournament t ON f.tournament_id = t.tournament_id JOIN athlete a ON t.athlete_id = a.athlete_id";

#[derive(Clone, Debug)]
pub struct QuestionTemplate {
    pub id: &'static str,
    pub difficulty: Difficulty,
    pub nlq_pattern: &'static str,
    pub gold_sql_pattern: String,
}

fn tpl(id: &'static str, difficulty: Difficulty, nlq: &'static str, sql: &str) -> QuestionTemplate {
    QuestionTemplate { id, difficulty, nlq_pattern: nlq, gold_sql_pattern: sql.replace("{chain}", CHAIN) }
}

/// The full template inventory, four per difficulty tier.
pub fn templates() -> Vec<QuestionTemplate> {
    use Difficulty::*;
    vec![
        tpl("count_medals", Easy, "How many medals did {athlete} win?",
            "SELECT COUNT(*) FROM {chain} WHERE a.name = '{athlete}'"),
        tpl("list_cities", Easy, "In which cities did {athlete} win medals?",
            "SELECT DISTINCT m.city FROM {chain} WHERE a.name = '{athlete}'"),
        tpl("list_tournaments", Easy, "Which tournaments did {athlete} compete in?",
            "SELECT t.name FROM tournament t JOIN athlete a ON t.athlete_id = a.athlete_id WHERE a.name = '{athlete}'"),
        tpl("birth_year", Easy, "In which year was {athlete} born?",
            "SELECT p.birth_year FROM personalinformation p JOIN athlete a ON p.athlete_id = a.athlete_id \
             WHERE a.name = '{athlete}'"),
        tpl("count_medal_type", Medium, "How many {medal_type} medals did {athlete} win?",
            "SELECT COUNT(*) FROM {chain} WHERE a.name = '{athlete}' AND m.medal_type = '{medal_type}'"),
        tpl("cities_after_year", Medium,
            "List all the distinct cities where {athlete} won medals in tournaments held after the year {year}.",
            "SELECT DISTINCT m.city FROM {chain} WHERE a.name = '{athlete}' AND m.year > {year}"),
        tpl("span_level", Medium, "How many years passed between {athlete}'s first and most recent {level} medal?",
            "SELECT MAX(m.year) - MIN(m.year) AS years_passed FROM {chain} WHERE a.name = '{athlete}' \
             AND t.level = '{level}'"),
        tpl("first_medal_year", Medium, "In which year did {athlete} win their first medal?",
            "SELECT MIN(m.year) FROM {chain} WHERE a.name = '{athlete}'"),
        tpl("avg_medals_per_year", Hard, "What is the average number of medals won by {athlete} in one year?",
            "SELECT AVG(cnt) AS average_medals FROM (SELECT m.year, COUNT(*) AS cnt FROM {chain} \
             WHERE a.name = '{athlete}' GROUP BY m.year) AS sub"),
        tpl("medals_in_decade", Hard, "How many medals did {athlete} win in their {decade}?",
            "SELECT COUNT(m.medal_id) FROM {chain} JOIN personalinformation p ON a.athlete_id = p.athlete_id \
             WHERE a.name = '{athlete}' AND m.year >= p.birth_year + {age_lo} AND m.year <= p.birth_year + {age_hi}"),
        tpl("top_city", Hard, "In which city did {athlete} win the most medals?",
            "SELECT m.city FROM {chain} WHERE a.name = '{athlete}' GROUP BY m.city ORDER BY COUNT(*) DESC LIMIT 1"),
        tpl("age_at_first_medal", Hard, "How old was {athlete} when they won their first medal?",
            "SELECT MIN(m.year) - p.birth_year FROM {chain} JOIN personalinformation p ON a.athlete_id = p.athlete_id \
             WHERE a.name = '{athlete}'"),
    ]
}

pub fn template_by_id(id: &str) -> Option<QuestionTemplate> {
    templates().into_iter().find(|t| t.id == id)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub id: String,
    pub nlq: String,
    pub difficulty: Difficulty,
    pub db_id: String,
    pub gold_answer: CanonicalAnswer,
    pub template_id: String,
    /// Withheld from learning components; only present in oracle mode.
    pub gold_sql: Option<String>,
    pub slot_assignment: SlotAssignment,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum InstantiateError {
    #[error("template slots are not satisfiable in this database")]
    Unsatisfiable,
    #[error("gold query failed: {0}")]
    GoldFailed(String),
}

fn pick<'a, T, R: Rng>(rng: &mut R, items: &'a [T]) -> Option<&'a T> {
    items.choose(rng)
}

fn distinct_sorted<I: IntoIterator<Item = T>, T: Ord>(items: I) -> Vec<T> {
    let mut v: Vec<T> = items.into_iter().collect();
    v.sort();
    v.dedup();
    v
}

/// Chooses slot values that make the template answerable for `athlete`.
fn choose_slots<R: Rng>(template: &QuestionTemplate, athlete: &AthleteView, rng: &mut R) -> Option<SlotAssignment> {
    let mut slots = SlotAssignment::new();
    slots.insert("athlete".into(), athlete.name.clone());
    if athlete.medals.is_empty() {
        return None;
    }
    match template.id {
        "count_medal_type" => {
            let types = distinct_sorted(athlete.medals.iter().map(|m| m.medal_type.clone()));
            slots.insert("medal_type".into(), pick(rng, &types)?.clone());
        }
        "cities_after_year" => {
            let years = distinct_sorted(athlete.medals.iter().map(|m| m.year));
            let candidates = &years[..years.len().saturating_sub(1)];
            slots.insert("year".into(), pick(rng, candidates)?.to_string());
        }
        "span_level" => {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for m in &athlete.medals {
                *counts.entry(m.level.as_str()).or_default() += 1;
            }
            let levels: Vec<&str> = counts.into_iter().filter(|&(_, c)| c >= 2).map(|(l, _)| l).collect();
            slots.insert("level".into(), pick(rng, &levels)?.to_string());
        }
        "medals_in_decade" => {
            let birth = athlete.birth_year?;
            let decades: Vec<&str> = DECADES
                .iter()
                .filter(|(_, lo)| athlete.medals.iter().any(|m| (birth + lo..=birth + lo + 9).contains(&m.year)))
                .map(|(w, _)| *w)
                .collect();
            slots.insert("decade".into(), pick(rng, &decades)?.to_string());
        }
        "top_city" => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for m in &athlete.medals {
                *counts.entry(m.city.as_str()).or_default() += 1;
            }
            let best = counts.values().copied().max()?;
            let winners = counts.values().filter(|&&c| c == best).count();
            if winners != 1 || counts.len() < 2 {
                return None;
            }
        }
        "list_tournaments" => {
            if distinct_sorted(athlete.tournaments.iter()).len() != athlete.tournaments.len() {
                return None;
            }
        }
        "birth_year" | "age_at_first_medal" => {
            athlete.birth_year?;
        }
        _ => {}
    }
    Some(slots)
}

/// Instantiates `template` for a given slot assignment and computes the gold
/// answer by executing the gold query.
pub fn instantiate_with_slots(
    template: &QuestionTemplate,
    sandbox: &Sandbox,
    slots: SlotAssignment,
) -> Result<QuestionInstance, InstantiateError> {
    let nlq = fill(template.nlq_pattern, &slots, false);
    let gold_sql = fill(&template.gold_sql_pattern, &slots, true);
    let outcome = sandbox.execute(&gold_sql);
    let answer = canonicalize(&outcome).map_err(|e| InstantiateError::GoldFailed(e.message))?;
    if answer.is_empty() || answer.values().iter().any(|v| matches!(v, Scalar::Null)) {
        return Err(InstantiateError::Unsatisfiable);
    }
    Ok(QuestionInstance {
        id: String::new(),
        nlq,
        difficulty: template.difficulty,
        db_id: sandbox.db_id().to_string(),
        gold_answer: answer,
        template_id: template.id.to_string(),
        gold_sql: Some(gold_sql),
        slot_assignment: slots,
    })
}

/// Picks a random athlete and satisfiable slots, then instantiates.
pub fn instantiate_question<R: Rng>(
    template: &QuestionTemplate,
    db: &DatabaseInstance,
    sandbox: &Sandbox,
    rng: &mut R,
) -> Result<QuestionInstance, InstantiateError> {
    let views = athlete_views(db);
    let athlete = views.choose(rng).ok_or(InstantiateError::Unsatisfiable)?;
    let slots = choose_slots(template, athlete, rng).ok_or(InstantiateError::Unsatisfiable)?;
    instantiate_with_slots(template, sandbox, slots)
}
