//! Sketch grammar: per-template SQL skeletons whose `${node}` holes are filled
//! by policy decisions, followed by slot substitution from the question.

use std::collections::BTreeMap;

use super::{Decision, DecisionNode, PolicyError};
use crate::corpus::{fill, SlotAssignment};

#[derive(Clone, Debug)]
pub struct NodeDef {
    pub id: String,
    pub choices: Vec<String>,
}

impl NodeDef {
    pub fn new(id: &str, choices: &[&str]) -> Self {
        NodeDef { id: id.to_string(), choices: choices.iter().map(|c| c.to_string()).collect() }
    }
}

#[derive(Clone, Debug)]
pub struct SketchDef {
    pub template_id: String,
    /// SQL text with `${node_id}` holes; a bare name refers to
    /// `template_id/name`.
    pub skeleton: String,
}

impl SketchDef {
    pub fn new(template_id: &str, skeleton: &str) -> Self {
        SketchDef { template_id: template_id.to_string(), skeleton: skeleton.to_string() }
    }
}

#[derive(Clone, Debug)]
enum Part {
    Lit(String),
    Hole(usize),
}

#[derive(Clone, Debug)]
struct Sketch {
    parts: Vec<Part>,
    /// Distinct nodes in order of first appearance; a trace lists them in
    /// this order.
    nodes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Grammar {
    nodes: Vec<DecisionNode>,
    sketches: BTreeMap<String, Sketch>,
}

impl Grammar {
    pub fn new(nodes: Vec<NodeDef>, sketches: Vec<SketchDef>) -> Result<Self, PolicyError> {
        let mut registry: Vec<DecisionNode> = Vec::new();
        for n in nodes {
            let Some((context, _)) = n.id.split_once('/') else {
                return Err(PolicyError::Grammar(format!("node id '{}' lacks a context prefix", n.id)));
            };
            if n.choices.is_empty() {
                return Err(PolicyError::Grammar(format!("node '{}' has no choices", n.id)));
            }
            if registry.iter().any(|r| r.id == n.id) {
                return Err(PolicyError::Grammar(format!("node '{}' registered twice", n.id)));
            }
            registry.push(DecisionNode { context: context.to_string(), id: n.id, choices: n.choices });
        }
        let mut out = BTreeMap::new();
        for s in sketches {
            let sketch = parse_skeleton(&s, &registry)?;
            if out.insert(s.template_id.clone(), sketch).is_some() {
                return Err(PolicyError::Grammar(format!("template '{}' has two sketches", s.template_id)));
            }
        }
        Ok(Grammar { nodes: registry, sketches: out })
    }

    pub fn registry(&self) -> &[DecisionNode] {
        &self.nodes
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn template_ids(&self) -> impl Iterator<Item = &str> {
        self.sketches.keys().map(String::as_str)
    }

    /// Nodes a completion for `template_id` decides, in trace order.
    pub fn sketch_nodes(&self, template_id: &str) -> Result<&[usize], PolicyError> {
        self.sketches
            .get(template_id)
            .map(|s| s.nodes.as_slice())
            .ok_or_else(|| PolicyError::UnknownTemplate(template_id.to_string()))
    }

    /// Renders a complete trace. Slot values are escaped as SQL string
    /// contents.
    pub fn render(&self, template_id: &str, trace: &[Decision], slots: &SlotAssignment) -> Result<String, PolicyError> {
        let sketch =
            self.sketches.get(template_id).ok_or_else(|| PolicyError::UnknownTemplate(template_id.to_string()))?;
        if trace.len() != sketch.nodes.len() {
            return Err(PolicyError::Render(format!(
                "trace has {} decisions, sketch '{template_id}' needs {}",
                trace.len(),
                sketch.nodes.len()
            )));
        }
        let mut chosen = BTreeMap::new();
        for (d, &expected) in trace.iter().zip(&sketch.nodes) {
            if d.node != expected {
                return Err(PolicyError::Render(format!(
                    "decision for node {} where node {} ({}) was expected",
                    d.node, expected, self.nodes[expected].id
                )));
            }
            let text = self.nodes[d.node].choices.get(d.choice).ok_or_else(|| {
                PolicyError::Render(format!("choice {} out of range at {}", d.choice, self.nodes[d.node].id))
            })?;
            chosen.insert(d.node, text.as_str());
        }
        let mut text = String::new();
        for part in &sketch.parts {
            match part {
                Part::Lit(s) => text.push_str(s),
                Part::Hole(n) => text.push_str(chosen[n]),
            }
        }
        Ok(fill(&text, slots, true))
    }

    /// The action space used for the corpus templates.
    pub fn standard() -> Self {
        let (nodes, sketches) = standard_defs();
        Grammar::new(nodes, sketches).expect("standard grammar is well formed")
    }
}

fn parse_skeleton(def: &SketchDef, registry: &[DecisionNode]) -> Result<Sketch, PolicyError> {
    let mut parts = Vec::new();
    let mut nodes = Vec::new();
    let mut rest = def.skeleton.as_str();
    while let Some(open) = rest.find("${") {
        if open > 0 {
            parts.push(Part::Lit(rest[..open].to_string()));
        }
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or_else(|| PolicyError::Grammar(format!("unclosed hole in sketch '{}'", def.template_id)))?;
        let name = &rest[open + 2..close];
        let id = if name.contains('/') { name.to_string() } else { format!("{}/{name}", def.template_id) };
        let idx = registry
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| PolicyError::Grammar(format!("sketch '{}' refers to unknown node '{id}'", def.template_id)))?;
        if !nodes.contains(&idx) {
            nodes.push(idx);
        }
        parts.push(Part::Hole(idx));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        parts.push(Part::Lit(rest.to_string()));
    }
    Ok(Sketch { parts, nodes })
}

const CHAIN: &str = "medal m JOIN format f ON m.format_id = f.format_id \
JOIN tournament t ON f.tournament_id = t.tournament_id JOIN athlete a ON t.athlete_id = a.athlete_id";

/// Option lists mix the correct fragment with plausible mistakes: wrong
/// columns that the engine rejects, missing filters that over-select, and
/// aggregates that answer a different question.
fn standard_defs() -> (Vec<NodeDef>, Vec<SketchDef>) {
    let personal = format!("{CHAIN} JOIN personalinformation p ON a.athlete_id = p.athlete_id");
    let nodes = vec![
        NodeDef::new("medal_chain/source", &[CHAIN, "medal m JOIN athlete a ON m.athlete_id = a.athlete_id"]),
        NodeDef::new("personal_chain/source", &[CHAIN, &personal]),
        NodeDef::new("count_medals/agg", &["COUNT(*)", "COUNT(DISTINCT m.city)", "MAX(m.medal_count)"]),
        NodeDef::new("list_cities/proj", &["m.city", "DISTINCT m.city", "DISTINCT t.city", "DISTINCT t.name"]),
        NodeDef::new("list_tournaments/proj", &["t.name", "t.level", "t.tournament_name"]),
        NodeDef::new("list_tournaments/join", &["t.tournament_id = a.athlete_id", "t.athlete_id = a.athlete_id"]),
        NodeDef::new("birth_year/col", &["a.birth_year", "p.birth_year", "p.year"]),
        NodeDef::new(
            "birth_year/source",
            &["personalinformation p JOIN athlete a ON p.athlete_id = a.athlete_id", "athlete a"],
        ),
        NodeDef::new(
            "count_medal_type/filter",
            &[
                "",
                " AND m.medal_type = '{medal_type}'",
                " AND m.type = '{medal_type}'",
                " AND t.level = '{medal_type}'",
            ],
        ),
        NodeDef::new("cities_after_year/proj", &["DISTINCT m.city", "m.city"]),
        NodeDef::new(
            "cities_after_year/filter",
            &["", " AND m.year > {year}", " AND m.year >= {year}", " AND t.year > {year}"],
        ),
        NodeDef::new(
            "span_level/expr",
            &["MAX(m.year) - MIN(m.year) AS years_passed", "COUNT(DISTINCT m.year)", "MAX(m.year)"],
        ),
        NodeDef::new("span_level/filter", &[" AND t.name = '{level}'", " AND t.level = '{level}'", ""]),
        NodeDef::new("first_medal_year/agg", &["MIN(m.year)", "MAX(m.year)", "MIN(m.medal_year)", "m.year"]),
        NodeDef::new(
            "avg_medals_per_year/outer",
            &["AVG(m.medal_count) AS average_medals", "AVG(cnt) AS average_medals", "SUM(cnt)", "MAX(cnt)"],
        ),
        NodeDef::new("avg_medals_per_year/group", &["m.year", "m.city", "a.athlete_id"]),
        NodeDef::new(
            "medals_in_decade/window",
            &[
                " AND m.year >= 2010 AND m.year <= 2020",
                " AND m.year >= p.birth_year + {age_lo} AND m.year <= p.birth_year + {age_hi}",
                " AND m.year >= a.birth_year + {age_lo} AND m.year <= a.birth_year + {age_hi}",
                "",
            ],
        ),
        NodeDef::new("top_city/proj", &["DISTINCT m.city", "m.city"]),
        NodeDef::new(
            "top_city/tail",
            &[
                "",
                " GROUP BY m.city ORDER BY COUNT(*) DESC LIMIT 1",
                " GROUP BY m.city ORDER BY COUNT(*) ASC LIMIT 1",
                " ORDER BY m.medal_count DESC LIMIT 1",
            ],
        ),
        NodeDef::new(
            "age_at_first_medal/expr",
            &["MIN(m.year) - a.birth_year", "MIN(m.year) - p.birth_year", "MAX(m.year) - p.birth_year", "MIN(m.year)"],
        ),
    ];
    let who = "WHERE a.name = '{athlete}'";
    let sketches = vec![
        SketchDef::new("count_medals", &format!("SELECT ${{agg}} FROM ${{medal_chain/source}} {who}")),
        SketchDef::new("list_cities", &format!("SELECT ${{proj}} FROM ${{medal_chain/source}} {who}")),
        SketchDef::new("list_tournaments", &format!("SELECT ${{proj}} FROM tournament t JOIN athlete a ON ${{join}} {who}")),
        SketchDef::new("birth_year", &format!("SELECT ${{col}} FROM ${{source}} {who}")),
        SketchDef::new("count_medal_type", &format!("SELECT COUNT(*) FROM ${{medal_chain/source}} {who}${{filter}}")),
        SketchDef::new("cities_after_year", &format!("SELECT ${{proj}} FROM ${{medal_chain/source}} {who}${{filter}}")),
        SketchDef::new("span_level", &format!("SELECT ${{expr}} FROM ${{medal_chain/source}} {who}${{filter}}")),
        SketchDef::new("first_medal_year", &format!("SELECT ${{agg}} FROM ${{medal_chain/source}} {who}")),
        SketchDef::new(
            "avg_medals_per_year",
            &format!(
                "SELECT ${{outer}} FROM (SELECT ${{group}}, COUNT(*) AS cnt FROM ${{medal_chain/source}} {who} \
                 GROUP BY ${{group}}) AS sub"
            ),
        ),
        SketchDef::new("medals_in_decade", &format!("SELECT COUNT(m.medal_id) FROM ${{personal_chain/source}} {who}${{window}}")),
        SketchDef::new("top_city", &format!("SELECT ${{proj}} FROM ${{medal_chain/source}} {who}${{tail}}")),
        SketchDef::new("age_at_first_medal", &format!("SELECT ${{expr}} FROM ${{personal_chain/source}} {who}")),
    ];
    (nodes, sketches)
}
