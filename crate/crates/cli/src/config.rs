use std::path::Path;

use anyhow::{bail, Context, Result};
use exformer_core::embedder::{EmbedderConfig, PretrainConfig};
use exformer_core::model::ExformerConfig;
use exformer_core::training::{MixConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Utterances per speaker held out of the training mixtures for validation.
    pub val_utts_per_speaker: usize,
    /// Number of fixed validation mixtures.
    pub val_items: usize,
    /// Number of mixtures built from a test manifest by `evaluate`.
    pub test_items: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            val_utts_per_speaker: 2,
            val_items: 8,
            test_items: 20,
        }
    }
}

/// Everything a run needs; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub mix: MixConfig,
    pub embedder: EmbedderConfig,
    pub pretrain: PretrainConfig,
    pub model: ExformerConfig,
    pub train: TrainConfig,
    pub semi: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            mix: MixConfig::default(),
            embedder: EmbedderConfig::default(),
            pretrain: PretrainConfig::default(),
            model: ExformerConfig::default(),
            train: TrainConfig::stage1(),
            semi: TrainConfig::stage2(),
        }
    }
}

impl RunConfig {
    /// Reads an optional TOML file and applies `key.path=value` overrides on top.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // Merge onto the serialized defaults so that a partial `[semi]` section
        // keeps the second-stage defaults rather than the generic ones.
        let mut full = toml::Table::try_from(RunConfig::default())?;
        merge(&mut full, table);
        let cfg: RunConfig = toml::Value::Table(full)
            .try_into()
            .context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.semi.validate()?;
        if self.embedder.embed_dim != self.model.embed_dim {
            bail!(
                "embedder.embed_dim ({}) must equal model.embed_dim ({})",
                self.embedder.embed_dim,
                self.model.embed_dim
            );
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c=value` in `table`. The value is parsed as a TOML literal and
/// falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not of the form key=value");
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("bad override key {key:?}");
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {key:?}: {p:?} is not a table"),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use exformer_core::model::FusionMode;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = RunConfig::resolve(
            None,
            &[
                "model.fusion_mode=mult".into(),
                "model.feature_dim=64".into(),
                "train.init_lr=1e-3".into(),
                "seed=9".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.fusion_mode, FusionMode::Mult);
        assert_eq!(cfg.model.feature_dim, 64);
        assert_eq!(cfg.train.init_lr, 1e-3);
        assert_eq!(cfg.seed, 9);
        assert!(RunConfig::resolve(None, &["model.nope=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["model.n_heads=7".into()]).is_err());
        assert!(RunConfig::resolve(None, &["garbage".into()]).is_err());
        let semi = RunConfig::resolve(None, &["semi.max_epochs=3".into()])
            .unwrap()
            .semi;
        assert_eq!(semi.init_lr, 7.5e-5);
        assert_eq!(semi.unlabeled_prob, 0.1);
    }
}
