//! Versioned binary checkpoints.
//!
//! Layout: an 8-byte magic, a little-endian u64 header length, a JSON header
//! (format version, model config, vocabularies, training metadata, and a
//! tensor index), then every tensor's elements as little-endian f64 in index
//! order. Optimizer accumulators ride along under `opt.`-prefixed names so a
//! resumed run continues bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SYNMTCK\n";
const FORMAT_VERSION: u32 = 1;

/// Training progress stored alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    /// Epochs fully completed when the checkpoint was written.
    pub epoch: usize,
    /// Total parameter updates applied so far.
    pub update: u64,
    /// Training seed; shuffling and dropout derive from it per epoch.
    pub seed: u64,
    /// Best per-token validation (or training) loss seen so far.
    pub best_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    /// The run configuration that produced the checkpoint, verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_config: Option<serde_json::Value>,
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    label_vocab: Option<Vec<String>>,
    meta: TrainMeta,
    tensors: Vec<TensorEntry>,
}

/// Everything a checkpoint holds.
#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub run_config: Option<serde_json::Value>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub label_vocab: Option<Vocabulary>,
    pub meta: TrainMeta,
    /// Model parameters plus any `opt.`-prefixed optimizer tensors.
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Split tensors into model parameters and optimizer accumulators, and
    /// rebuild the model (verifying shapes against the config).
    pub fn into_model(self) -> Result<(ModelParams, Vec<(String, Tensor)>, TrainMeta)> {
        let (opt, model): (Vec<_>, Vec<_>) =
            self.tensors.into_iter().partition(|(n, _)| n.starts_with("opt."));
        let params = ModelParams::from_named(&self.config, model)?;
        Ok((params, opt, self.meta))
    }
}

pub fn save(
    path: &Path,
    config: &ModelConfig,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
    label_vocab: Option<&Vocabulary>,
    meta: &TrainMeta,
    run_config: Option<&serde_json::Value>,
    tensors: &[(String, Tensor)],
) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: config.clone(),
        run_config: run_config.cloned(),
        src_vocab: src_vocab.tokens().to_vec(),
        tgt_vocab: tgt_vocab.tokens().to_vec(),
        label_vocab: label_vocab.map(|v| v.tokens().to_vec()),
        meta: meta.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry { name: name.clone(), rows: t.rows(), cols: t.cols() })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (_, t) in tensors {
        for v in t.to_vec() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: too short for a checkpoint", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated header", path.display())))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {}", path.display(), e)))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} unsupported (expected {})",
            path.display(),
            header.format_version,
            FORMAT_VERSION
        )));
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n = entry.rows * entry.cols;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(|_| {
            Error::Checkpoint(format!("{}: truncated data for tensor {}", path.display(), entry.name))
        })?;
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(entry.rows, entry.cols, data)
            .map_err(|e| Error::Checkpoint(format!("{}: tensor {}: {}", path.display(), entry.name, e)))?;
        tensors.push((entry.name.clone(), t));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after tensor data",
            path.display()
        )));
    }

    Ok(Checkpoint {
        config: header.config,
        run_config: header.run_config,
        src_vocab: Vocabulary::from_tokens(header.src_vocab)
            .map_err(|e| Error::Checkpoint(format!("{}: source vocabulary: {}", path.display(), e)))?,
        tgt_vocab: Vocabulary::from_tokens(header.tgt_vocab)
            .map_err(|e| Error::Checkpoint(format!("{}: target vocabulary: {}", path.display(), e)))?,
        label_vocab: match header.label_vocab {
            Some(toks) => Some(
                Vocabulary::from_tokens(toks).map_err(|e| {
                    Error::Checkpoint(format!("{}: label vocabulary: {}", path.display(), e))
                })?,
            ),
            None => None,
        },
        meta: header.meta,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, tokenize, Variant};
    use crate::model::count_params_config;

    fn small_setup(variant: Variant) -> (ModelConfig, Vocabulary, Vocabulary, Option<Vocabulary>) {
        let cfg = ModelConfig {
            variant,
            word_emb_dim: 4,
            hidden_dim: 5,
            label_emb_dim: 3,
            label_hidden_dim: 3,
            source_vocab: 8,
            target_vocab: 8,
            label_vocab: 6,
            dropout: 0.0,
        };
        let corpus: Vec<Vec<String>> = ["the cat sat", "a dog ran he saw"]
            .iter()
            .map(|s| tokenize(s))
            .collect();
        let (sv, _) = build_vocab(&corpus, 8, &[]).unwrap();
        let (tv, _) = build_vocab(&corpus, 8, &[]).unwrap();
        let lv = variant.needs_labels().then(|| {
            let labels: Vec<Vec<String>> =
                vec![vec!["S".into(), "NP".into(), "VP".into()]];
            build_vocab(&labels, 6, &[]).unwrap().0
        });
        (cfg, sv, tv, lv)
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        for variant in [Variant::Baseline, Variant::Parallel] {
            let (cfg, sv, tv, lv) = small_setup(variant);
            let params = ModelParams::init(&cfg, 42).unwrap();
            let meta = TrainMeta { epoch: 3, update: 77, seed: 42, best_loss: Some(1.25) };
            let mut tensors = params.named();
            tensors.push((
                "opt.g2.src_emb".to_string(),
                Tensor::new(cfg.source_vocab, cfg.word_emb_dim, vec![0.5; cfg.source_vocab * 4])
                    .unwrap(),
            ));

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.ckpt");
            save(&path, &cfg, &sv, &tv, lv.as_ref(), &meta, None, &tensors).unwrap();
            let loaded = load(&path).unwrap();

            assert_eq!(loaded.config, cfg);
            assert_eq!(loaded.meta, meta);
            assert_eq!(loaded.src_vocab.tokens(), sv.tokens());
            assert_eq!(loaded.tgt_vocab.tokens(), tv.tokens());
            assert_eq!(
                loaded.label_vocab.as_ref().map(|v| v.tokens().to_vec()),
                lv.as_ref().map(|v| v.tokens().to_vec())
            );
            assert_eq!(loaded.tensors.len(), tensors.len());
            for ((na, ta), (nb, tb)) in loaded.tensors.iter().zip(&tensors) {
                assert_eq!(na, nb);
                let (da, db) = (ta.to_vec(), tb.to_vec());
                assert_eq!(da.len(), db.len());
                for (x, y) in da.iter().zip(&db) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }

            let (model, opt, meta2) = loaded.into_model().unwrap();
            assert_eq!(meta2.update, 77);
            assert_eq!(model.count_params(), count_params_config(&cfg));
            assert_eq!(opt.len(), 1);
            assert_eq!(opt[0].0, "opt.g2.src_emb");
        }
    }

    #[test]
    fn shape_mismatch_is_reported_by_name() {
        let (cfg, sv, tv, _) = small_setup(Variant::Baseline);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let mut tensors = params.named();
        let at = tensors.iter().position(|(n, _)| n == "att.v").unwrap();
        tensors[at].1 = Tensor::zeros(2, 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let meta = TrainMeta::default();
        save(&path, &cfg, &sv, &tv, None, &meta, None, &tensors).unwrap();
        let err = load(&path).unwrap().into_model().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("att.v"), "message was: {}", msg);
    }

    #[test]
    fn missing_tensor_is_reported_by_name() {
        let (cfg, sv, tv, _) = small_setup(Variant::Baseline);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let mut tensors = params.named();
        tensors.retain(|(n, _)| n != "out.w2");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.ckpt");
        save(&path, &cfg, &sv, &tv, None, &TrainMeta::default(), None, &tensors).unwrap();
        let err = load(&path).unwrap().into_model().unwrap_err();
        assert!(err.to_string().contains("out.w2"));
    }

    #[test]
    fn garbage_and_truncation_are_clean_errors() {
        let dir = tempfile::tempdir().unwrap();
        let garbage = dir.path().join("garbage.ckpt");
        std::fs::write(&garbage, b"not a checkpoint at all").unwrap();
        assert!(matches!(load(&garbage), Err(Error::Checkpoint(_))));

        let (cfg, sv, tv, _) = small_setup(Variant::Baseline);
        let params = ModelParams::init(&cfg, 1).unwrap();
        let path = dir.path().join("full.ckpt");
        save(&path, &cfg, &sv, &tv, None, &TrainMeta::default(), None, &params.named()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
        let err = load(&cut).unwrap_err();
        assert!(err.to_string().contains("truncated"), "message was: {}", err);
    }
}
