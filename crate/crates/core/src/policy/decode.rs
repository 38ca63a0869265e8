//! Turning parameters into SQL: i.i.d. sampling, greedy argmax and top-k
//! trace enumeration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_softmax, logprob, Decision, Grammar, PolicyError, PolicyParams, Trace};
use crate::corpus::QuestionInstance;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub template_id: String,
    pub sql: String,
    pub trace: Trace,
    pub logprob: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Independent draws from the factorized distribution.
    #[default]
    Sample,
    /// The k most probable distinct traces, a stand-in for beam search.
    Topk,
}

impl std::str::FromStr for DecodeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sample" => Ok(DecodeMode::Sample),
            "topk" => Ok(DecodeMode::Topk),
            other => Err(format!("unknown decode mode '{other}' (expected sample or topk)")),
        }
    }
}

fn complete(
    grammar: &Grammar,
    params: &PolicyParams,
    question: &QuestionInstance,
    trace: Trace,
) -> Result<Completion, PolicyError> {
    let sql = grammar.render(&question.template_id, &trace, &question.slot_assignment)?;
    let logprob = logprob(params, &trace)?;
    Ok(Completion { template_id: question.template_id.clone(), sql, trace, logprob })
}

fn check_params(grammar: &Grammar, params: &PolicyParams) -> Result<(), PolicyError> {
    let reg = grammar.registry();
    if reg.len() != params.logits.len() || reg.iter().zip(&params.logits).any(|(n, l)| n.choices.len() != l.len()) {
        return Err(PolicyError::Shape("parameters do not match the grammar's node registry".into()));
    }
    Ok(())
}

fn draw<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let p = super::softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// One completion drawn node by node.
pub fn sample<R: Rng + ?Sized>(
    grammar: &Grammar,
    params: &PolicyParams,
    question: &QuestionInstance,
    rng: &mut R,
) -> Result<Completion, PolicyError> {
    check_params(grammar, params)?;
    let trace = grammar
        .sketch_nodes(&question.template_id)?
        .iter()
        .map(|&node| Decision { node, choice: draw(&params.logits[node], rng) })
        .collect();
    complete(grammar, params, question, trace)
}

/// k completions for one question. Sampled groups may contain duplicates;
/// top-k groups are distinct (and shorter when the sketch has fewer than k
/// traces).
pub fn sample_group<R: Rng + ?Sized>(
    grammar: &Grammar,
    params: &PolicyParams,
    question: &QuestionInstance,
    k: usize,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<Vec<Completion>, PolicyError> {
    if k < 2 {
        return Err(PolicyError::GroupSize(k));
    }
    match mode {
        DecodeMode::Sample => (0..k).map(|_| sample(grammar, params, question, rng)).collect(),
        DecodeMode::Topk => top_k(grammar, params, question, k),
    }
}

fn argmax(logits: &[f64]) -> usize {
    // Strict comparison keeps the lowest index on ties.
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// Per-node argmax, ties broken toward the lowest option index.
pub fn greedy(grammar: &Grammar, params: &PolicyParams, question: &QuestionInstance) -> Result<Completion, PolicyError> {
    check_params(grammar, params)?;
    let trace = grammar
        .sketch_nodes(&question.template_id)?
        .iter()
        .map(|&node| Decision { node, choice: argmax(&params.logits[node]) })
        .collect();
    complete(grammar, params, question, trace)
}

/// Every complete trace of a template's sketch, in lexicographic order.
pub fn enumerate_traces(grammar: &Grammar, template_id: &str) -> Result<Vec<Trace>, PolicyError> {
    let nodes = grammar.sketch_nodes(template_id)?;
    let reg = grammar.registry();
    let mut out: Vec<Trace> = vec![Vec::new()];
    for &node in nodes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..reg[node].choices.len()).map(move |choice| {
                    let mut t = prefix.clone();
                    t.push(Decision { node, choice });
                    t
                })
            })
            .collect();
    }
    Ok(out)
}

/// The k most probable traces; equal probabilities keep lexicographic order.
pub fn top_k(
    grammar: &Grammar,
    params: &PolicyParams,
    question: &QuestionInstance,
    k: usize,
) -> Result<Vec<Completion>, PolicyError> {
    check_params(grammar, params)?;
    let logp: Vec<Vec<f64>> = params.logits.iter().map(|l| log_softmax(l)).collect();
    let mut scored: Vec<(f64, Trace)> = enumerate_traces(grammar, &question.template_id)?
        .into_iter()
        .map(|t| (t.iter().map(|d| logp[d.node][d.choice]).sum(), t))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().take(k).map(|(_, t)| complete(grammar, params, question, t)).collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::{Difficulty, SlotAssignment};
    use crate::policy::{NodeDef, SketchDef};
    use crate::sandbox::CanonicalAnswer;

    fn question(template_id: &str) -> QuestionInstance {
        let mut slots = SlotAssignment::new();
        slots.insert("athlete".into(), "Ana Berg".into());
        QuestionInstance {
            id: "q".into(),
            nlq: String::new(),
            difficulty: Difficulty::Easy,
            db_id: "db".into(),
            gold_answer: CanonicalAnswer::new(vec![]),
            template_id: template_id.into(),
            gold_sql: None,
            slot_assignment: slots,
        }
    }

    fn four_way() -> Grammar {
        Grammar::new(vec![NodeDef::new("t/x", &["a", "b", "c", "d"])], vec![SketchDef::new("t", "${x}")]).unwrap()
    }

    #[test]
    fn seeded_groups_repeat() {
        let g = Grammar::standard();
        let p = PolicyParams::uniform(g.registry());
        let q = question("top_city");
        let a = sample_group(&g, &p, &q, 2, DecodeMode::Sample, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_group(&g, &p, &q, 2, DecodeMode::Sample, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn group_of_one_is_rejected() {
        let g = four_way();
        let p = PolicyParams::uniform(g.registry());
        let r = sample_group(&g, &p, &question("t"), 1, DecodeMode::Sample, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(PolicyError::GroupSize(1))));
    }

    #[test]
    fn unknown_template_is_a_configuration_error() {
        let g = four_way();
        let p = PolicyParams::uniform(g.registry());
        let r = sample(&g, &p, &question("nope"), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(PolicyError::UnknownTemplate(_))));
    }

    #[test]
    fn uniform_frequencies() {
        let g = four_way();
        let p = PolicyParams::uniform(g.registry());
        let q = question("t");
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample(&g, &p, &q, &mut rng).unwrap().trace[0].choice] += 1;
        }
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let g = four_way();
        let mut p = PolicyParams::uniform(g.registry());
        assert_eq!(greedy(&g, &p, &question("t")).unwrap().sql, "a");
        p.logits[0] = vec![0.0, 1.0, 1.0, 0.5];
        assert_eq!(greedy(&g, &p, &question("t")).unwrap().sql, "b");
    }

    #[test]
    fn top_k_is_ordered_and_distinct() {
        let g = Grammar::standard();
        let mut p = PolicyParams::uniform(g.registry());
        let node = g.node_index("top_city/tail").unwrap();
        p.logits[node][1] = 2.0;
        let out = top_k(&g, &p, &question("top_city"), 4).unwrap();
        assert_eq!(out.len(), 4);
        for w in out.windows(2) {
            assert!(w[0].logprob >= w[1].logprob);
            assert_ne!(w[0].trace, w[1].trace);
        }
        assert!(out[0].sql.contains("GROUP BY m.city ORDER BY COUNT(*) DESC"));
    }

    #[test]
    fn enumeration_covers_the_product() {
        let g = Grammar::standard();
        let traces = enumerate_traces(&g, "avg_medals_per_year").unwrap();
        assert_eq!(traces.len(), 4 * 3 * 2);
    }
}
