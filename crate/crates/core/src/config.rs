use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Every tunable of a run. The JSON file form uses these field names; keys
/// left out take the values from [`RunConfig::default`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub brain_dim: usize,
    pub brain_layers: usize,
    pub brain_heads: usize,
    pub decoder_dim: usize,
    pub decoder_blocks: usize,
    pub decoder_heads: usize,
    pub patch_size: usize,
    pub encoder_blocks: usize,
    pub encoder_heads: usize,
    pub image_tokens: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub max_answer_tokens: usize,

    pub rethink_factor: f64,
    pub rethink_cooldown: usize,
    pub reanchor_tau: bool,

    pub lambda_text: f64,
    pub lambda_mask: f64,
    pub lambda_po: f64,
    pub bce_weight: f64,
    pub dice_weight: f64,
    pub dice_eps: f64,

    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub steps: usize,
    pub log_every: usize,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            brain_dim: 128,
            brain_layers: 2,
            brain_heads: 4,
            decoder_dim: 64,
            decoder_blocks: 2,
            decoder_heads: 4,
            patch_size: 8,
            encoder_blocks: 2,
            encoder_heads: 4,
            image_tokens: 16,
            lora_rank: 4,
            lora_alpha: 8.0,
            max_answer_tokens: 16,
            rethink_factor: 0.5,
            rethink_cooldown: 2,
            reanchor_tau: false,
            lambda_text: 1.0,
            lambda_mask: 1.0,
            lambda_po: 1.0,
            bce_weight: 2.0,
            dice_weight: 0.5,
            dice_eps: 1.0,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            batch_size: 4,
            grad_clip: 1.0,
            steps: 500,
            log_every: 50,
            seed: 7,
        }
    }
}

fn config_err(key: &str, reason: impl Into<String>) -> CoreError {
    CoreError::Config { key: key.to_string(), reason: reason.into() }
}

impl RunConfig {
    /// Parses JSON text. An empty or whitespace-only document means "all defaults".
    pub fn from_json_str(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| config_err("<document>", format!("line {}: {e}", e.line())))?;
        let obj = value.as_object().ok_or_else(|| config_err("<document>", "expected a JSON object"))?;
        let known = serde_json::to_value(Self::default()).expect("config serializes");
        let known = known.as_object().expect("config is an object");
        if let Some(k) = obj.keys().find(|k| !known.contains_key(*k)) {
            return Err(config_err(k, "unknown key"));
        }
        for (k, v) in obj {
            let mut probe = known.clone();
            probe.insert(k.clone(), v.clone());
            serde_json::from_value::<Self>(serde_json::Value::Object(probe))
                .map_err(|e| config_err(k, format!("bad value {v}: {e}")))?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| config_err("<document>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("brain_dim", self.brain_dim),
            ("brain_layers", self.brain_layers),
            ("brain_heads", self.brain_heads),
            ("decoder_dim", self.decoder_dim),
            ("decoder_blocks", self.decoder_blocks),
            ("decoder_heads", self.decoder_heads),
            ("patch_size", self.patch_size),
            ("encoder_heads", self.encoder_heads),
            ("image_tokens", self.image_tokens),
            ("lora_rank", self.lora_rank),
            ("max_answer_tokens", self.max_answer_tokens),
            ("batch_size", self.batch_size),
            ("log_every", self.log_every),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(config_err(k, "must be positive"));
            }
        }
        for (k, d, h) in [
            ("brain_heads", self.brain_dim, self.brain_heads),
            ("decoder_heads", self.decoder_dim, self.decoder_heads),
            ("encoder_heads", self.decoder_dim, self.encoder_heads),
        ] {
            if d % h != 0 {
                return Err(config_err(k, format!("{h} heads do not divide width {d}")));
            }
        }
        if !self.patch_size.is_multiple_of(2) {
            return Err(config_err("patch_size", "must be even (two-stage upscaling)"));
        }
        if !(self.rethink_factor > 0.0 && self.rethink_factor <= 1.0) {
            return Err(config_err("rethink_factor", format!("{} is outside (0, 1]", self.rethink_factor)));
        }
        let non_negative = [
            ("lambda_text", self.lambda_text),
            ("lambda_mask", self.lambda_mask),
            ("lambda_po", self.lambda_po),
            ("bce_weight", self.bce_weight),
            ("dice_weight", self.dice_weight),
            ("weight_decay", self.weight_decay),
        ];
        for (k, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(k, format!("{v} must be finite and non-negative")));
            }
        }
        for (k, v) in [
            ("lora_alpha", self.lora_alpha),
            ("dice_eps", self.dice_eps),
            ("learning_rate", self.learning_rate),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(k, format!("{v} must be finite and positive")));
            }
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    RunConfig::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(e: CoreError) -> String {
        match e {
            CoreError::Config { key, .. } => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_is_defaults() {
        let cfg = RunConfig::from_json_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.rethink_factor, 0.5);
        assert_eq!(RunConfig::from_json_str("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn omitted_keys_take_defaults() {
        let cfg = RunConfig::from_json_str(r#"{"lambda_text": 0.25}"#).unwrap();
        assert_eq!(cfg.lambda_mask, 1.0);
        assert_eq!(cfg.lambda_po, 1.0);
        assert_eq!(cfg.lambda_text, 0.25);
        assert_eq!((cfg.bce_weight, cfg.dice_weight), (2.0, 0.5));
    }

    #[test]
    fn rejects_bad_values_by_key() {
        assert_eq!(key_of(RunConfig::from_json_str(r#"{"rethink_factor": 1.5}"#).unwrap_err()), "rethink_factor");
        assert_eq!(key_of(RunConfig::from_json_str(r#"{"rethink_factor": 0}"#).unwrap_err()), "rethink_factor");
        assert_eq!(key_of(RunConfig::from_json_str(r#"{"brain_dim": 0}"#).unwrap_err()), "brain_dim");
        assert_eq!(key_of(RunConfig::from_json_str(r#"{"lora_rank": "four"}"#).unwrap_err()), "lora_rank");
        assert!(RunConfig::from_json_str(r#"{"rethink_factor": 1.0}"#).is_ok());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert_eq!(key_of(RunConfig::from_json_str(r#"{"learnig_rate": 0.1}"#).unwrap_err()), "learnig_rate");
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.reanchor_tau = true;
        assert_eq!(RunConfig::from_json_str(&cfg.to_json_string()).unwrap(), cfg);
    }
}
