//! Run configuration: one JSON document drives every command. Unknown keys
//! are rejected, defaults fill anything omitted, and `SYNMT_*` environment
//! variables override top-level fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Limits, Variant};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const ENV_PREFIX: &str = "SYNMT_";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // model
    pub variant: Variant,
    pub word_emb_dim: usize,
    pub hidden_dim: usize,
    pub label_emb_dim: usize,
    pub label_hidden_dim: usize,
    /// Source vocabulary cap (reserved tokens included).
    pub source_vocab: usize,
    /// Target vocabulary cap.
    pub target_vocab: usize,
    /// Label vocabulary cap (parallel/hierarchical).
    pub label_vocab: usize,
    pub dropout: f64,

    // data
    pub train_source: Option<PathBuf>,
    pub train_trees: Option<PathBuf>,
    pub train_target: Option<PathBuf>,
    pub limits: Limits,
    /// Include closing brackets in linearized label/mixed sequences.
    pub closing_brackets: bool,

    // run
    pub seed: u64,
    pub beam: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub out_dir: PathBuf,

    // analysis
    pub bucket_edges: Vec<usize>,
    pub phrase_categories: Vec<String>,
    pub pos_groups: BTreeMap<String, Vec<String>>,
    pub case_insensitive_bleu: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        let model = ModelConfig::default();
        let pos_groups = [
            ("NR", vec!["NR", "NNP", "NNPS"]),
            ("CD", vec!["CD"]),
            ("DT", vec!["DT"]),
            ("NN", vec!["NN", "NNS"]),
            ("VV", vec!["VV", "VB", "VBP", "VBZ", "VBD", "VBN", "VBG"]),
        ];
        RunConfig {
            variant: model.variant,
            word_emb_dim: model.word_emb_dim,
            hidden_dim: model.hidden_dim,
            label_emb_dim: model.label_emb_dim,
            label_hidden_dim: model.label_hidden_dim,
            source_vocab: model.source_vocab,
            target_vocab: model.target_vocab,
            label_vocab: model.label_vocab,
            dropout: model.dropout,
            train_source: None,
            train_trees: None,
            train_target: None,
            limits: Limits::default(),
            closing_brackets: false,
            seed: 1,
            beam: 10,
            epochs: 10,
            batch_size: 80,
            clip_norm: 1.0,
            out_dir: PathBuf::from("out"),
            bucket_edges: vec![10, 20, 30, 40, 50],
            phrase_categories: vec!["NP".into(), "VP".into(), "PP".into()],
            pos_groups: pos_groups
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
                .collect(),
            case_insensitive_bleu: true,
        }
    }
}

impl RunConfig {
    /// Read the file (or start from defaults), apply `SYNMT_*` environment
    /// overrides, and validate. Errors name the offending field.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::config(format!("cannot read config {}: {}", p.display(), e))
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {}", p.display(), e)))?
            }
            None => serde_json::Value::Object(Default::default()),
        };
        apply_env_overrides(&mut value)?;
        let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "config".to_string() } else { path };
            Error::config(format!("{}: {}", field, e.inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(self.source_vocab, self.target_vocab, self.label_vocab)
            .validate()?;
        let checks = [
            ("beam", self.beam),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in checks {
            if v == 0 {
                return Err(Error::config(format!("{}: must be at least 1", name)));
            }
        }
        if self.clip_norm < 0.0 || !self.clip_norm.is_finite() {
            return Err(Error::config("clip_norm: must be finite and non-negative"));
        }
        if self.bucket_edges.is_empty() || self.bucket_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "bucket_edges: must be non-empty and strictly increasing",
            ));
        }
        Ok(())
    }

    /// Model hyperparameters with the actual (post-build) vocabulary sizes.
    pub fn model_config(&self, src: usize, tgt: usize, label: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            word_emb_dim: self.word_emb_dim,
            hidden_dim: self.hidden_dim,
            label_emb_dim: self.label_emb_dim,
            label_hidden_dim: self.label_hidden_dim,
            source_vocab: src,
            target_vocab: tgt,
            label_vocab: label,
            dropout: self.dropout,
        }
    }

    pub fn pos_group_list(&self) -> Vec<(String, Vec<String>)> {
        self.pos_groups.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

/// Overlay `SYNMT_FIELD=json-or-string` onto the raw config document.
/// Values that parse as JSON are taken as-is, anything else as a string;
/// unknown field names fail later with the usual unknown-key error.
fn apply_env_overrides(value: &mut serde_json::Value) -> Result<()> {
    overlay_vars(value, std::env::vars())
}

fn overlay_vars(
    value: &mut serde_json::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::config("config root must be a JSON object"))?;
    let mut vars: Vec<(String, String)> =
        vars.filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let field = key[ENV_PREFIX.len()..].to_lowercase();
        let parsed = serde_json::from_str(&raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        obj.insert(field, parsed);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn defaults_fill_and_file_overrides() {
        let f = write_config(r#"{"hidden_dim": 64, "variant": "mixed", "seed": 9}"#);
        let cfg = RunConfig::load(Some(f.path())).unwrap();
        assert_eq!(cfg.hidden_dim, 64);
        assert_eq!(cfg.variant, Variant::Mixed);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.word_emb_dim, 620);
        assert_eq!(cfg.bucket_edges, vec![10, 20, 30, 40, 50]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_field_name() {
        let f = write_config(r#"{"hidden_dims": 64}"#);
        let err = RunConfig::load(Some(f.path())).unwrap_err().to_string();
        assert!(err.contains("hidden_dims"), "{}", err);
    }

    #[test]
    fn type_errors_name_the_field_path() {
        let f = write_config(r#"{"bucket_edges": [10, "twenty"]}"#);
        let err = RunConfig::load(Some(f.path())).unwrap_err().to_string();
        assert!(err.contains("bucket_edges[1]"), "{}", err);
    }

    #[test]
    fn validation_catches_bad_values() {
        let f = write_config(r#"{"beam": 0}"#);
        let err = RunConfig::load(Some(f.path())).unwrap_err().to_string();
        assert!(err.contains("beam"), "{}", err);

        let f = write_config(r#"{"bucket_edges": [20, 10]}"#);
        let err = RunConfig::load(Some(f.path())).unwrap_err().to_string();
        assert!(err.contains("bucket_edges"), "{}", err);
    }

    #[test]
    fn env_overlay_parses_json_values_and_rejects_misspellings() {
        let mut value = serde_json::json!({"seed": 3});
        let vars = [
            ("SYNMT_EPOCHS".to_string(), "17".to_string()),
            ("SYNMT_VARIANT".to_string(), "parallel".to_string()),
            ("PATH".to_string(), "/usr/bin".to_string()),
        ];
        overlay_vars(&mut value, vars.into_iter()).unwrap();
        let cfg: RunConfig = serde_path_to_error::deserialize(value).unwrap();
        assert_eq!(cfg.epochs, 17);
        assert_eq!(cfg.variant, Variant::Parallel);
        assert_eq!(cfg.seed, 3);

        let mut value = serde_json::json!({});
        let vars = [("SYNMT_EPOCH".to_string(), "17".to_string())];
        overlay_vars(&mut value, vars.into_iter()).unwrap();
        let err = serde_path_to_error::deserialize::<_, RunConfig>(value)
            .unwrap_err()
            .to_string();
        assert!(err.contains("epoch"), "{}", err);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let value = cfg.to_value().unwrap();
        let back: RunConfig = serde_json::from_value(value).unwrap();
        assert_eq!(back.hidden_dim, cfg.hidden_dim);
        assert_eq!(back.pos_groups, cfg.pos_groups);
    }
}
