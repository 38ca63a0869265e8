//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use sqlgrpo::corpus::{Difficulty, QuestionInstance, SlotAssignment};
use sqlgrpo::policy::{Decision, Grammar, NodeDef, PolicyParams, SketchDef};
use sqlgrpo::sandbox::{CanonicalAnswer, Scalar};

/// A grammar with one sketch `t` over nodes `t/n0..` of the given arities.
pub fn toy_grammar(arities: &[usize]) -> Grammar {
    let nodes = arities
        .iter()
        .enumerate()
        .map(|(i, &n)| NodeDef {
            id: format!("t/n{i}"),
            choices: (0..n).map(|j| format!("[{i}.{j}]")).collect(),
        })
        .collect();
    let skeleton: String = (0..arities.len()).map(|i| format!("${{n{i}}}")).collect();
    Grammar::new(nodes, vec![SketchDef::new("t", &skeleton)]).unwrap()
}

pub fn toy_question() -> QuestionInstance {
    QuestionInstance {
        id: "toy".into(),
        nlq: String::new(),
        difficulty: Difficulty::Easy,
        db_id: "toy".into(),
        gold_answer: CanonicalAnswer::new(vec![Scalar::Int(1)]),
        template_id: "t".into(),
        gold_sql: None,
        slot_assignment: SlotAssignment::new(),
    }
}

pub fn random_params<R: Rng>(grammar: &Grammar, scale: f64, rng: &mut R) -> PolicyParams {
    let mut p = PolicyParams::uniform(grammar.registry());
    for row in &mut p.logits {
        for x in row.iter_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
    p
}

pub fn random_trace<R: Rng>(grammar: &Grammar, rng: &mut R) -> Vec<Decision> {
    let reg = grammar.registry();
    grammar
        .sketch_nodes("t")
        .unwrap()
        .iter()
        .map(|&node| Decision { node, choice: rng.gen_range(0..reg[node].choices.len()) })
        .collect()
}

/// Central finite differences of `f` at `params`, one coordinate at a time.
pub fn finite_diff(params: &PolicyParams, h: f64, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..params.logits.len() {
        for j in 0..params.logits[i].len() {
            let mut plus = params.clone();
            plus.logits[i][j] += h;
            let mut minus = params.clone();
            minus.logits[i][j] -= h;
            out.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
    }
    out
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), or the absolute gap when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

/// Probability of a full trace, multiplied out directly.
pub fn trace_prob(params: &PolicyParams, trace: &[Decision]) -> f64 {
    trace.iter().map(|d| naive_softmax(&params.logits[d.node])[d.choice]).product()
}

/// Every full trace of a single-sketch grammar by nested counting.
pub fn all_traces(grammar: &Grammar) -> Vec<Vec<Decision>> {
    let nodes = grammar.sketch_nodes("t").unwrap().to_vec();
    let arity: Vec<usize> = nodes.iter().map(|&n| grammar.registry()[n].choices.len()).collect();
    let total: usize = arity.iter().product();
    (0..total)
        .map(|mut code| {
            nodes
                .iter()
                .zip(&arity)
                .map(|(&node, &a)| {
                    let choice = code % a;
                    code /= a;
                    Decision { node, choice }
                })
                .collect()
        })
        .collect()
}

/// KL between the two trace distributions, summed over every trace.
pub fn brute_force_kl(grammar: &Grammar, p: &PolicyParams, q: &PolicyParams) -> f64 {
    all_traces(grammar)
        .iter()
        .map(|t| {
            let a = trace_prob(p, t);
            let b = trace_prob(q, t);
            a * (a / b).ln()
        })
        .sum()
}

/// Normal form used by the overlap oracle: numbers by value (so `3` and
/// `3.0` agree), text trimmed.
fn oracle_key(s: &Scalar) -> String {
    match s {
        Scalar::Null => "null".to_string(),
        Scalar::Int(i) => format!("n{}", *i as f64),
        Scalar::Real(r) => format!("n{r}"),
        Scalar::Text(t) => format!("t{}", t.trim()),
    }
}

/// Multiset intersection size by repeated removal. Only valid for values
/// that are either equal or far apart.
pub fn brute_force_overlap(pred: &[Scalar], gold: &[Scalar]) -> usize {
    let mut pool: Vec<String> = gold.iter().map(oracle_key).collect();
    let mut hits = 0;
    for p in pred.iter().map(oracle_key) {
        if let Some(i) = pool.iter().position(|g| *g == p) {
            pool.remove(i);
            hits += 1;
        }
    }
    hits
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// All regular files under `root`, keyed by relative path.
pub fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_sqlgrpo")
}

/// Runs the CLI in `dir` and returns (exit code, stdout, stderr).
pub fn run_cli(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("RUN_SEED")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}
