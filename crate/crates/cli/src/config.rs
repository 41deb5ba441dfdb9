//! Flat JSON run configuration; command-line flags override file values.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub glyph_size: Option<usize>,
    pub threshold: Option<f64>,
    pub strict: Option<bool>,
    pub mode: Option<String>,
    pub overlap: Option<usize>,
    pub count: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<String>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub split: Option<f64>,
    pub patience: Option<usize>,
    pub model: Option<String>,
    pub class_unit: Option<String>,
    pub target_loss: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Values set in `flags` win over values in `self`.
    pub fn overridden_by(self, flags: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: flags.$f.or(self.$f)),* } };
        }
        pick!(
            seed, glyph_size, threshold, strict, mode, overlap, count, epochs, batch_size,
            learning_rate, optimizer, beta1, beta2, epsilon, split, patience, model, class_unit,
            target_loss
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: RunConfig = serde_json::from_str(r#"{"epochs": 5, "seed": 3}"#).unwrap();
        let flags = RunConfig {
            epochs: Some(9),
            ..Default::default()
        };
        let merged = file.overridden_by(flags);
        assert_eq!(merged.epochs, Some(9));
        assert_eq!(merged.seed, Some(3));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"epoch": 5}"#).is_err());
    }
}
