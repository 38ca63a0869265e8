//! Group-relative policy optimization: group-normalized advantages, the
//! KL-regularized objective and its score-function gradient.

mod train;

use serde::{Deserialize, Serialize};

pub use train::{
    BestCheckpoint, CompletionLog, DevEval, OptimizerConfig, OptimizerKind, RunningStats, StepLog, TrainConfig,
    TrainState, TrainSummary, Trainer, BEST_CHECKPOINT, CHECKPOINT_DIR, STATE_FILE, TRAIN_LOG,
};

use crate::policy::{kl_divergence, kl_grad, logprob, logprob_grad, Completion, Grad, PolicyError, PolicyParams, ReferencePolicy};

pub const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("sandbox unavailable: {0}")]
    Sandbox(String),
    #[error("non-finite gradient at step {0}")]
    NonFinite(usize),
    #[error("reward: {0}")]
    Reward(#[from] crate::rewards::RewardError),
    #[error("io on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("bad state file {path}: {reason}")]
    State { path: std::path::PathBuf, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub advantages: Vec<f64>,
}

/// `A_i = (r_i − μ) / (σ + ε)`; a constant group yields exact zeros.
pub fn compute_advantages(rewards: &[f64]) -> Result<GroupStats, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    let constant = rewards.iter().all(|&r| r == rewards[0]);
    let advantages =
        rewards.iter().map(|&r| if constant { 0.0 } else { (r - mean) / (std + ADVANTAGE_EPS) }).collect();
    Ok(GroupStats { rewards: rewards.to_vec(), mean, std, advantages })
}

/// How the KL penalty is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMode {
    /// Closed form over all decision nodes.
    #[default]
    Exact,
    /// Monte Carlo estimate from the step's own completions.
    Sampled,
}

impl std::str::FromStr for KlMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(KlMode::Exact),
            "sampled" => Ok(KlMode::Sampled),
            other => Err(format!("unknown kl mode '{other}' (expected exact|sampled)")),
        }
    }
}

/// `(1/k) Σ A_i ∇ log π(y_i)`.
pub fn advantage_grad(group: &[(Completion, f64)], params: &PolicyParams) -> Result<Grad, GrpoError> {
    let mut g = Grad::zeros_like(params);
    let k = group.len().max(1) as f64;
    for (c, a) in group {
        if *a != 0.0 {
            g.add_scaled(&logprob_grad(params, &c.trace)?, a / k)?;
        }
    }
    Ok(g)
}

/// Gradient of `(1/k) Σ A_i log π(y_i) − β·KL(π ∥ π_ref)` for one group.
pub fn objective_grad(
    group: &[(Completion, f64)],
    params: &PolicyParams,
    reference: &ReferencePolicy,
    beta: f64,
) -> Result<Grad, GrpoError> {
    let mut g = advantage_grad(group, params)?;
    if beta != 0.0 {
        g.add_scaled(&kl_grad(params, reference)?, -beta)?;
    }
    Ok(g)
}

/// The sampled surrogate whose gradient [`objective_grad`] returns.
pub fn surrogate(
    group: &[(Completion, f64)],
    params: &PolicyParams,
    reference: &ReferencePolicy,
    beta: f64,
) -> Result<f64, GrpoError> {
    let k = group.len().max(1) as f64;
    let mut total = 0.0;
    for (c, a) in group {
        total += a * logprob(params, &c.trace)? / k;
    }
    Ok(total - beta * kl_divergence(params, reference)?)
}

/// Monte Carlo KL from on-policy samples: the value is the mean of
/// `log π − log π_ref`, the gradient the mean of `(log π − log π_ref) ∇ log π`.
pub fn sampled_kl(
    completions: &[&Completion],
    params: &PolicyParams,
    reference: &ReferencePolicy,
) -> Result<(f64, Grad), GrpoError> {
    let mut g = Grad::zeros_like(params);
    let mut value = 0.0;
    let n = completions.len().max(1) as f64;
    for c in completions {
        let diff = logprob(params, &c.trace)? - logprob(reference.params(), &c.trace)?;
        value += diff / n;
        g.add_scaled(&logprob_grad(params, &c.trace)?, diff / n)?;
    }
    Ok((value, g))
}
