//! Factorized categorical policy over SQL sketches. Each question context owns
//! a handful of decision nodes; a completion is one choice per node, rendered
//! through the sketch grammar.

mod checkpoint;
mod decode;
mod grammar;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, checkpoint_file_name, Checkpoint, RngState};
pub use decode::{enumerate_traces, greedy, sample, sample_group, top_k, Completion, DecodeMode};
pub use grammar::{Grammar, NodeDef, SketchDef};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no decision nodes registered for template '{0}'")]
    UnknownTemplate(String),
    #[error("cannot render: {0}")]
    Render(String),
    #[error("invalid grammar: {0}")]
    Grammar(String),
    #[error("group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("checkpoint io on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("checkpoint format: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionNode {
    /// Fully qualified id, `context/name`.
    pub id: String,
    pub context: String,
    pub choices: Vec<String>,
}

/// One choice at one node; `node` indexes the registry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Decision {
    pub node: usize,
    pub choice: usize,
}

pub type Trace = Vec<Decision>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// One logit vector per registered node, aligned with the registry.
    pub logits: Vec<Vec<f64>>,
    pub version: u64,
}

impl PolicyParams {
    /// All-zero logits: the uniform policy.
    pub fn uniform(nodes: &[DecisionNode]) -> Self {
        PolicyParams { logits: nodes.iter().map(|n| vec![0.0; n.choices.len()]).collect(), version: 0 }
    }

    pub fn num_params(&self) -> usize {
        self.logits.iter().map(Vec::len).sum()
    }

    pub fn probs(&self, node: usize) -> Vec<f64> {
        softmax(&self.logits[node])
    }

    /// In-place `θ ← θ + lr·g`.
    pub fn ascend(&mut self, grad: &Grad, lr: f64) -> Result<(), PolicyError> {
        check_same_shape(&self.logits, &grad.0)?;
        for (row, g) in self.logits.iter_mut().zip(&grad.0) {
            for (x, d) in row.iter_mut().zip(g) {
                *x += lr * d;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Euclidean distance between two logit sets of the same shape.
    pub fn l2_distance(&self, other: &PolicyParams) -> Result<f64, PolicyError> {
        check_same_shape(&self.logits, &other.logits)?;
        let sq: f64 = self
            .logits
            .iter()
            .flatten()
            .zip(other.logits.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sq.sqrt())
    }

    pub fn check_trace(&self, trace: &[Decision]) -> Result<(), PolicyError> {
        for d in trace {
            let row = self
                .logits
                .get(d.node)
                .ok_or_else(|| PolicyError::Shape(format!("node {} is not registered", d.node)))?;
            if d.choice >= row.len() {
                return Err(PolicyError::Shape(format!(
                    "choice {} out of range for node {} with {} choices",
                    d.choice,
                    d.node,
                    row.len()
                )));
            }
        }
        Ok(())
    }
}

/// Frozen snapshot of the starting parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy(PolicyParams);

impl ReferencePolicy {
    pub fn snapshot(params: &PolicyParams) -> Self {
        ReferencePolicy(params.clone())
    }

    pub fn params(&self) -> &PolicyParams {
        &self.0
    }
}

/// A vector in logit space, e.g. a gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grad(pub Vec<Vec<f64>>);

impl Grad {
    pub fn zeros_like(params: &PolicyParams) -> Self {
        Grad(params.logits.iter().map(|r| vec![0.0; r.len()]).collect())
    }

    pub fn add_scaled(&mut self, other: &Grad, scale: f64) -> Result<(), PolicyError> {
        check_same_shape(&self.0, &other.0)?;
        for (row, o) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in row.iter_mut().zip(o) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}

fn check_same_shape(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(), PolicyError> {
    if a.len() != b.len() {
        return Err(PolicyError::Shape(format!("{} nodes vs {}", a.len(), b.len())));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(PolicyError::Shape(format!("node {i}: {} choices vs {}", x.len(), y.len())));
        }
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// log π(trace) = Σ log softmax(θ_node)[choice].
pub fn logprob(params: &PolicyParams, trace: &[Decision]) -> Result<f64, PolicyError> {
    params.check_trace(trace)?;
    Ok(trace.iter().map(|d| log_softmax(&params.logits[d.node])[d.choice]).sum())
}

/// ∇θ log π(trace): onehot(choice) − softmax at each touched node.
pub fn logprob_grad(params: &PolicyParams, trace: &[Decision]) -> Result<Grad, PolicyError> {
    params.check_trace(trace)?;
    let mut grad = Grad::zeros_like(params);
    for d in trace {
        let p = softmax(&params.logits[d.node]);
        let row = &mut grad.0[d.node];
        for (j, pj) in p.into_iter().enumerate() {
            row[j] -= pj;
        }
        row[d.choice] += 1.0;
    }
    Ok(grad)
}

fn node_kl(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum()
}

/// Exact KL(π_θ ∥ π_ref), a sum of per-node categorical divergences because
/// nodes are independent.
pub fn kl_divergence(params: &PolicyParams, reference: &ReferencePolicy) -> Result<f64, PolicyError> {
    let r = reference.params();
    check_same_shape(&params.logits, &r.logits)?;
    Ok(params.logits.iter().zip(&r.logits).map(|(p, q)| node_kl(p, q).max(0.0)).sum())
}

/// ∇θ KL: per node, p_j (l_j − KL_node) with l = log p − log q.
pub fn kl_grad(params: &PolicyParams, reference: &ReferencePolicy) -> Result<Grad, PolicyError> {
    let r = reference.params();
    check_same_shape(&params.logits, &r.logits)?;
    let rows = params
        .logits
        .iter()
        .zip(&r.logits)
        .map(|(p, q)| {
            let lp = log_softmax(p);
            let lq = log_softmax(q);
            let l: Vec<f64> = lp.iter().zip(&lq).map(|(a, b)| a - b).collect();
            let kl: f64 = lp.iter().zip(&l).map(|(a, d)| a.exp() * d).sum();
            lp.iter().zip(&l).map(|(a, d)| a.exp() * (d - kl)).collect()
        })
        .collect();
    Ok(Grad(rows))
}
