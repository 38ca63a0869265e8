//! The training loop: sample a group per prompt, execute, score, normalize,
//! take one gradient-ascent step per batch, evaluate on dev periodically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{advantage_grad, compute_advantages, sampled_kl, GrpoError, KlMode};
use crate::corpus::QuestionInstance;
use crate::eval::{evaluate, EmsMode, GreedyPolicy};
use crate::policy::{
    checkpoint_file_name, kl_divergence, kl_grad, sample_group, save_checkpoint, Checkpoint, Completion, DecodeMode,
    Grammar, PolicyParams, ReferencePolicy, RngState,
};
use crate::rewards::{score, RewardBreakdown, RewardConfig};
use crate::sandbox::SandboxPool;

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const STATE_FILE: &str = "train_state.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const BEST_CHECKPOINT: &str = "policy_best.json";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient ascent.
    #[default]
    Sgd,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Completions per prompt.
    pub k: usize,
    pub beta: f64,
    pub learning_rate: f64,
    /// Prompts per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub decode: DecodeMode,
    pub seed: u64,
    /// Steps between dev evaluations (dev is also evaluated at step 0 and at
    /// the final step).
    pub eval_every: usize,
    pub kl_mode: KlMode,
    pub optimizer: OptimizerConfig,
    /// Stop early after this many steps; a later run can resume.
    pub max_steps: Option<usize>,
    pub ems_mode: EmsMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 2,
            beta: 0.04,
            learning_rate: 0.5,
            batch_size: 2,
            epochs: 1,
            decode: DecodeMode::Sample,
            seed: 7,
            eval_every: 10,
            kl_mode: KlMode::Exact,
            optimizer: OptimizerConfig::default(),
            max_steps: None,
            ems_mode: EmsMode::Exact,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: String| Err(GrpoError::Config(m));
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and non-negative, got {}", self.beta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return bad("batch_size, epochs and eval_every must be positive".into());
        }
        Ok(())
    }
}

/// Welford accumulator over every sampled reward.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCheckpoint {
    pub step: usize,
    pub dev_ems: f64,
    pub params: PolicyParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevEval {
    pub step: usize,
    pub ems: f64,
    pub error_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Optimizer steps completed.
    pub step: usize,
    pub params: PolicyParams,
    pub reference: ReferencePolicy,
    pub best: Option<BestCheckpoint>,
    pub rng: RngState,
    pub reward_stats: RunningStats,
    pub dev_history: Vec<DevEval>,
}

impl TrainState {
    pub fn load(path: &Path) -> Result<Self, GrpoError> {
        let text = fs::read_to_string(path).map_err(|source| GrpoError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| GrpoError::State { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> Result<(), GrpoError> {
        let text = serde_json::to_string(self).expect("state serializes");
        fs::write(path, text + "\n").map_err(|source| GrpoError::Io { path: path.to_path_buf(), source })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionLog {
    pub prompt_id: String,
    pub sql: String,
    pub reward: RewardBreakdown,
    pub advantage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub prompt_ids: Vec<String>,
    pub completions: Vec<CompletionLog>,
    pub advantages: Vec<Vec<f64>>,
    pub mean_reward: f64,
    /// KL before the update; reported even when beta is 0.
    pub kl: f64,
    pub grad_norm: f64,
    pub dev_ems: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub state: TrainState,
    pub log: Vec<StepLog>,
    pub total_steps: usize,
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub reward: RewardConfig,
    pub grammar: &'a Grammar,
    pub train: &'a [QuestionInstance],
    pub dev: &'a [QuestionInstance],
    pub pool: &'a SandboxPool,
    /// Where logs, checkpoints and the resumable state go; `None` keeps
    /// everything in memory.
    pub out_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn total_steps(&self) -> usize {
        (self.train.len() * self.config.epochs).div_ceil(self.config.batch_size)
    }

    /// Prompt indices in visiting order: one fresh permutation per epoch.
    pub fn prompt_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.train.len() * self.config.epochs);
        for epoch in 0..self.config.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(1 + epoch as u64);
            let mut idx: Vec<usize> = (0..self.train.len()).collect();
            idx.shuffle(&mut rng);
            out.extend(idx);
        }
        out
    }

    pub fn initial_state(&self) -> TrainState {
        let params = PolicyParams::uniform(self.grammar.registry());
        TrainState {
            step: 0,
            reference: ReferencePolicy::snapshot(&params),
            params,
            best: None,
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(self.config.seed)),
            reward_stats: RunningStats::default(),
            dev_history: Vec::new(),
        }
    }

    fn check(&self, state: &TrainState) -> Result<(), GrpoError> {
        self.config.validate()?;
        self.reward.validate()?;
        if self.train.is_empty() {
            return Err(GrpoError::Config("train split is empty".into()));
        }
        let reg = self.grammar.registry();
        let fits = |p: &PolicyParams| {
            p.logits.len() == reg.len() && p.logits.iter().zip(reg).all(|(l, n)| l.len() == n.choices.len())
        };
        if !fits(&state.params) || !fits(state.reference.params()) {
            return Err(GrpoError::Config("state parameters do not match the grammar".into()));
        }
        for q in self.train.iter().chain(self.dev) {
            if self.pool.get(&q.db_id).is_none() {
                return Err(GrpoError::Sandbox(format!("no sandbox for database {} (question {})", q.db_id, q.id)));
            }
        }
        Ok(())
    }

    fn dev_eval(&self, params: &PolicyParams, step: usize) -> DevEval {
        let proposer = GreedyPolicy { grammar: self.grammar, params };
        let label = format!("step{step}");
        let r = evaluate(&proposer, "dev", &label, self.dev, self.pool, self.config.ems_mode);
        DevEval { step, ems: r.metrics.ems, error_rate: r.metrics.error_rate }
    }

    fn record_eval(&self, state: &mut TrainState, rng: &ChaCha8Rng) -> Result<f64, GrpoError> {
        let ev = self.dev_eval(&state.params, state.step);
        let ems = ev.ems;
        state.dev_history.push(ev);
        let improved = state.best.as_ref().is_none_or(|b| ems > b.dev_ems);
        if improved {
            state.best = Some(BestCheckpoint { step: state.step, dev_ems: ems, params: state.params.clone() });
        }
        if let Some(dir) = &self.out_dir {
            let ckpt = Checkpoint {
                step: state.step,
                registry: self.grammar.registry().to_vec(),
                params: state.params.clone(),
                rng: Some(RngState::capture(rng)),
            };
            let cdir = dir.join(CHECKPOINT_DIR);
            save_checkpoint(&ckpt, &cdir.join(checkpoint_file_name(state.step)))?;
            if improved {
                save_checkpoint(&ckpt, &cdir.join(BEST_CHECKPOINT))?;
            }
        }
        Ok(ems)
    }

    fn execute_and_score(&self, q: &QuestionInstance, c: &Completion) -> Result<RewardBreakdown, GrpoError> {
        let sandbox = self
            .pool
            .get(&q.db_id)
            .ok_or_else(|| GrpoError::Sandbox(format!("no sandbox for database {}", q.db_id)))?;
        Ok(score(&sandbox.execute(&c.sql), &q.gold_answer, &self.reward)?)
    }

    fn step(&self, state: &mut TrainState, prompts: &[usize], rng: &mut ChaCha8Rng) -> Result<StepLog, GrpoError> {
        let cfg = &self.config;
        let params = &state.params;
        let mut grad = crate::policy::Grad::zeros_like(params);
        let mut log = StepLog {
            step: state.step + 1,
            prompt_ids: Vec::new(),
            completions: Vec::new(),
            advantages: Vec::new(),
            mean_reward: 0.0,
            kl: 0.0,
            grad_norm: 0.0,
            dev_ems: None,
        };
        let mut all = Vec::new();
        let mut reward_sum = 0.0;
        for &i in prompts {
            let q = &self.train[i];
            let group = sample_group(self.grammar, params, q, cfg.k, cfg.decode, rng)?;
            let rewards: Vec<RewardBreakdown> =
                group.iter().map(|c| self.execute_and_score(q, c)).collect::<Result<_, _>>()?;
            let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
            let stats = compute_advantages(&totals)?;
            let pairs: Vec<(Completion, f64)> = group.into_iter().zip(stats.advantages.iter().copied()).collect();
            // Batch gradients add up; the KL term below is applied once per step.
            grad.add_scaled(&advantage_grad(&pairs, params)?, 1.0)?;
            for ((c, a), r) in pairs.iter().zip(rewards) {
                state.reward_stats.push(r.total);
                reward_sum += r.total;
                log.completions.push(CompletionLog { prompt_id: q.id.clone(), sql: c.sql.clone(), reward: r, advantage: *a });
            }
            log.prompt_ids.push(q.id.clone());
            log.advantages.push(stats.advantages);
            all.extend(pairs.into_iter().map(|(c, _)| c));
        }
        log.mean_reward = reward_sum / log.completions.len().max(1) as f64;
        let (kl, kl_g) = match cfg.kl_mode {
            KlMode::Exact => (kl_divergence(params, &state.reference)?, kl_grad(params, &state.reference)?),
            KlMode::Sampled => sampled_kl(&all.iter().collect::<Vec<_>>(), params, &state.reference)?,
        };
        log.kl = kl;
        if cfg.beta != 0.0 {
            grad.add_scaled(&kl_g, -cfg.beta)?;
        }
        if !grad.is_finite() {
            return Err(GrpoError::NonFinite(log.step));
        }
        log.grad_norm = grad.norm();
        state.params.ascend(&grad, cfg.learning_rate)?;
        state.step += 1;
        Ok(log)
    }

    /// Starts from scratch.
    pub fn run(&self) -> Result<TrainSummary, GrpoError> {
        self.run_from(self.initial_state())
    }

    /// Continues from the state saved in `out_dir`.
    pub fn resume(&self) -> Result<TrainSummary, GrpoError> {
        let dir = self.out_dir.as_ref().ok_or_else(|| GrpoError::Config("resume needs an output directory".into()))?;
        self.run_from(TrainState::load(&dir.join(STATE_FILE))?)
    }

    pub fn run_from(&self, mut state: TrainState) -> Result<TrainSummary, GrpoError> {
        self.check(&state)?;
        let total = self.total_steps();
        let stop = self.config.max_steps.map_or(total, |m| m.min(total));
        let order = self.prompt_order();
        let mut rng = state.rng.restore()?;
        let mut log_file = match &self.out_dir {
            Some(dir) => Some(open_log(dir, state.step)?),
            None => None,
        };
        let mut log = Vec::new();

        if state.step == 0 && state.dev_history.is_empty() {
            self.record_eval(&mut state, &rng)?;
            self.save_state(&state)?;
        }
        while state.step < stop {
            let b = self.config.batch_size;
            let start = state.step * b;
            let prompts = &order[start..(start + b).min(order.len())];
            let mut entry = self.step(&mut state, prompts, &mut rng)?;
            state.rng = RngState::capture(&rng);
            let eval_now = state.step % self.config.eval_every == 0 || state.step == total;
            if eval_now {
                entry.dev_ems = Some(self.record_eval(&mut state, &rng)?);
            }
            if let Some((file, path)) = log_file.as_mut() {
                let line = serde_json::to_string(&entry).expect("log serializes");
                writeln!(file, "{line}").map_err(|source| GrpoError::Io { path: path.clone(), source })?;
            }
            log.push(entry);
            if eval_now || state.step == stop {
                self.save_state(&state)?;
            }
        }
        Ok(TrainSummary { state, log, total_steps: total })
    }

    fn save_state(&self, state: &TrainState) -> Result<(), GrpoError> {
        match &self.out_dir {
            Some(dir) => state.save(&dir.join(STATE_FILE)),
            None => Ok(()),
        }
    }
}

/// Opens the step log for appending, dropping entries past `step` left by
/// an interrupted run.
fn open_log(dir: &Path, step: usize) -> Result<(fs::File, PathBuf), GrpoError> {
    let path = dir.join(TRAIN_LOG);
    let io = |source| GrpoError::Io { path: path.clone(), source };
    fs::create_dir_all(dir).map_err(io)?;
    let mut kept = String::new();
    if step > 0 && path.exists() {
        let text = fs::read_to_string(&path).map_err(|source| GrpoError::Io { path: path.clone(), source })?;
        for line in text.lines() {
            let entry: StepLog = serde_json::from_str(line)
                .map_err(|e| GrpoError::State { path: path.clone(), reason: e.to_string() })?;
            if entry.step <= step {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    fs::write(&path, kept).map_err(|source| GrpoError::Io { path: path.clone(), source })?;
    let file = fs::OpenOptions::new().append(true).open(&path).map_err(|source| GrpoError::Io { path: path.clone(), source })?;
    Ok((file, path))
}
