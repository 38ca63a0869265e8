//! `policy_<step>.json`: registry, logits, version and sampler state.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DecisionNode, PolicyError, PolicyParams};

/// Exact position of a ChaCha8 stream. The word position is a u128, kept as
/// a decimal string so JSON readers do not truncate it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, PolicyError> {
        use rand::SeedableRng;
        let pos: u128 =
            self.word_pos.parse().map_err(|_| PolicyError::Format(format!("bad rng word_pos '{}'", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub registry: Vec<DecisionNode>,
    pub params: PolicyParams,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.registry.len() != self.params.logits.len() {
            return Err(PolicyError::Shape(format!(
                "checkpoint lists {} nodes but {} logit vectors",
                self.registry.len(),
                self.params.logits.len()
            )));
        }
        for (node, logits) in self.registry.iter().zip(&self.params.logits) {
            if node.choices.len() != logits.len() {
                return Err(PolicyError::Shape(format!("node {} arity mismatch", node.id)));
            }
            if logits.iter().any(|x| !x.is_finite()) {
                return Err(PolicyError::Format(format!("non-finite logit at {}", node.id)));
            }
        }
        Ok(())
    }

    /// Ensures the checkpoint was produced for `registry`.
    pub fn check_registry(&self, registry: &[DecisionNode]) -> Result<(), PolicyError> {
        if self.registry != registry {
            return Err(PolicyError::Shape("checkpoint node registry differs from the grammar".into()));
        }
        Ok(())
    }
}

pub fn checkpoint_file_name(step: usize) -> String {
    format!("policy_{step}.json")
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), PolicyError> {
    let io = |source| PolicyError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let text = serde_json::to_string_pretty(ckpt).map_err(|e| PolicyError::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PolicyError> {
    let text = fs::read_to_string(path).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| PolicyError::Format(format!("{}: {e}", path.display())))?;
    ckpt.validate()?;
    Ok(ckpt)
}
