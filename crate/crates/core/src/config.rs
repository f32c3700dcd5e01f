//! Training configuration and the flat `key = value` file format used by
//! config files and `split.conf`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Read a flat config file into `(line_no, key, value)` triples.
/// `#` comments and blank lines are skipped; every other line must
/// contain `key = value`.
pub(crate) fn read_kv_file(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::parse(path, line_no, format!("expected `key = value`, got {trimmed:?}")));
        };
        out.push((line_no, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// All knobs for a training run. Defaults follow the reference settings:
/// d = 64, Adam at 0.001, batches of 1024, two propagation layers on both
/// graphs, mutual-learning weight 0.5 at temperature 2, L2 at 1e-5.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Bipartite propagation depth L.
    pub layers: usize,
    /// Social propagation depth.
    pub social_layers: usize,
    /// Weight λ₁ of the mutual-learning loss.
    pub lambda_mutual: f64,
    /// L2 regularization strength λ₂.
    pub lambda_reg: f64,
    /// Weight of the emotion-affinity score term.
    pub lambda_emotion: f64,
    /// Softmax temperature τ for mutual learning.
    pub temperature: f64,
    pub negatives_per_positive: usize,
    /// Negatives sampled per positive for the mutual-learning candidate set.
    pub candidate_negatives: usize,
    pub seed: u64,
    pub no_social: bool,
    pub no_mutual: bool,
    pub no_emotion: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            embedding_dim: 64,
            learning_rate: 0.001,
            batch_size: 1024,
            epochs: 30,
            layers: 2,
            social_layers: 2,
            lambda_mutual: 0.5,
            lambda_reg: 1e-5,
            lambda_emotion: 0.1,
            temperature: 2.0,
            negatives_per_positive: 1,
            candidate_negatives: 4,
            seed: 42,
            no_social: false,
            no_mutual: false,
            no_emotion: false,
        }
    }
}

fn parse_bool(path: &Path, line_no: usize, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::parse(path, line_no, format!("expected true/false, got {value:?}"))),
    }
}

impl TrainConfig {
    /// Load a config file, overriding defaults. Unknown keys are errors.
    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        macro_rules! parse_num {
            ($path:expr, $line:expr, $value:expr, $key:expr) => {
                $value
                    .parse()
                    .map_err(|_| Error::parse($path, $line, format!("bad {} value {:?}", $key, $value)))?
            };
        }
        for (line_no, key, value) in read_kv_file(path)? {
            match key.as_str() {
                "embedding_dim" => cfg.embedding_dim = parse_num!(path, line_no, value, key),
                "learning_rate" => cfg.learning_rate = parse_num!(path, line_no, value, key),
                "batch_size" => cfg.batch_size = parse_num!(path, line_no, value, key),
                "epochs" => cfg.epochs = parse_num!(path, line_no, value, key),
                "layers" => cfg.layers = parse_num!(path, line_no, value, key),
                "social_layers" => cfg.social_layers = parse_num!(path, line_no, value, key),
                "lambda_mutual" => cfg.lambda_mutual = parse_num!(path, line_no, value, key),
                "lambda_reg" => cfg.lambda_reg = parse_num!(path, line_no, value, key),
                "lambda_emotion" => cfg.lambda_emotion = parse_num!(path, line_no, value, key),
                "temperature" => cfg.temperature = parse_num!(path, line_no, value, key),
                "negatives_per_positive" => {
                    cfg.negatives_per_positive = parse_num!(path, line_no, value, key)
                }
                "candidate_negatives" => {
                    cfg.candidate_negatives = parse_num!(path, line_no, value, key)
                }
                "seed" => cfg.seed = parse_num!(path, line_no, value, key),
                "no_social" => cfg.no_social = parse_bool(path, line_no, &value)?,
                "no_mutual" => cfg.no_mutual = parse_bool(path, line_no, &value)?,
                "no_emotion" => cfg.no_emotion = parse_bool(path, line_no, &value)?,
                other => {
                    return Err(Error::parse(path, line_no, format!("unknown key {other:?}")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".to_string()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        for (name, v) in [
            ("lambda_mutual", self.lambda_mutual),
            ("lambda_reg", self.lambda_reg),
            ("lambda_emotion", self.lambda_emotion),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be positive".to_string()));
        }
        if self.candidate_negatives == 0 {
            return Err(Error::Config("candidate_negatives must be positive".to_string()));
        }
        Ok(())
    }
}
