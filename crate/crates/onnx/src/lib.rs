//! NLI backend running an exported ONNX sequence-classification model.
//!
//! A model directory holds `manifest.json`, the ONNX graph and a
//! `tokenizer.json`. The manifest pins both files by SHA-256 and records
//! which logit index belongs to which NLI class.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use entailrank::scorer::{entailment_probability, softmax, LabelOrder, NliClass, Normalization};
use entailrank::segmenter::TokenCounter;
use entailrank::{EntailmentBackend, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokenizers::Tokenizer;
use tract_onnx::prelude::*;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub backend_id: String,
    pub source_checkpoint: String,
    pub revision: String,
    pub model_file: String,
    pub model_sha256: String,
    pub tokenizer_file: String,
    pub tokenizer_sha256: String,
    pub label_order: LabelOrder,
    pub max_tokens: usize,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::BackendConfig(format!("{}: {e}", path.display())))
    }

    /// Checks both artifact checksums, returning their resolved paths.
    pub fn verify(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let model = dir.join(&self.model_file);
        let tokenizer = dir.join(&self.tokenizer_file);
        for (path, expected) in [(&model, &self.model_sha256), (&tokenizer, &self.tokenizer_sha256)] {
            let actual = sha256_file(path)?;
            if !actual.eq_ignore_ascii_case(expected) {
                return Err(Error::BackendConfig(format!(
                    "checksum mismatch for {}: manifest {expected}, file {actual}",
                    path.display()
                )));
            }
        }
        Ok((model, tokenizer))
    }
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Token counter backed by a `tokenizer.json`.
pub struct HfTokenCounter {
    tokenizer: Tokenizer,
    pair_special: usize,
}

impl HfTokenCounter {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut tokenizer = Tokenizer::from_file(path)
            .map_err(|e| Error::Tokenizer(format!("{}: {e}", path.display())))?;
        tokenizer
            .with_truncation(None)
            .map_err(|e| Error::Tokenizer(e.to_string()))?;
        tokenizer.with_padding(None);
        let pair_special = tokenizer
            .get_post_processor()
            .map_or(0, |p| tokenizers::PostProcessor::added_tokens(p, true));
        Ok(Self {
            tokenizer,
            pair_special,
        })
    }

    fn ids(&self, text: &str) -> Result<tokenizers::Encoding> {
        self.tokenizer
            .encode(text, false)
            .map_err(|e| Error::Tokenizer(e.to_string()))
    }

    /// Full model input for a premise/hypothesis pair.
    pub fn encode_pair(&self, premise: &str, hypothesis: &str) -> Result<tokenizers::Encoding> {
        self.tokenizer
            .encode((premise, hypothesis), true)
            .map_err(|e| Error::Tokenizer(e.to_string()))
    }
}

impl TokenCounter for HfTokenCounter {
    fn count(&self, text: &str) -> Result<usize> {
        Ok(self.ids(text)?.get_ids().len())
    }

    fn truncate(&self, text: &str, max_tokens: usize) -> Result<String> {
        let enc = self.ids(text)?;
        if enc.get_ids().len() <= max_tokens {
            return Ok(text.to_string());
        }
        if max_tokens == 0 {
            return Ok(String::new());
        }
        let end = enc.get_offsets()[max_tokens - 1].1;
        let prefix = text.get(..end).ok_or_else(|| {
            Error::Tokenizer(format!("token offset {end} is not a character boundary"))
        })?;
        Ok(prefix.trim_end().to_string())
    }

    fn pair_special_tokens(&self) -> usize {
        self.pair_special
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum InputKind {
    Ids,
    Mask,
    TypeIds,
}

/// Entailment backend over a verified model directory.
pub struct OnnxNliBackend {
    id: String,
    manifest: Manifest,
    tokenizer: HfTokenCounter,
    plan: Arc<TypedRunnableModel>,
    inputs: Vec<InputKind>,
    normalization: Normalization,
}

impl OnnxNliBackend {
    pub fn open(dir: &Path, normalization: Normalization) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let (model_path, tokenizer_path) = manifest.verify(dir)?;
        let tokenizer = HfTokenCounter::from_file(&tokenizer_path)?;
        let backend = manifest.backend_id.clone();
        let err = |e: TractError| Error::Backend {
            backend: backend.clone(),
            msg: format!("{e:#}"),
        };
        let model = tract_onnx::onnx()
            .model_for_path(&model_path)
            .map_err(err)?
            .into_optimized()
            .map_err(err)?;
        let inputs = model
            .input_outlets()
            .map_err(err)?
            .iter()
            .map(|o| match model.node(o.node).name.as_str() {
                "input_ids" => Ok(InputKind::Ids),
                "attention_mask" => Ok(InputKind::Mask),
                "token_type_ids" => Ok(InputKind::TypeIds),
                other => Err(Error::BackendConfig(format!("unexpected model input `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if !inputs.contains(&InputKind::Ids) {
            return Err(Error::BackendConfig("model has no `input_ids` input".into()));
        }
        let plan = model.into_runnable().map_err(err)?;
        Ok(Self {
            id: manifest.backend_id.clone(),
            manifest,
            tokenizer,
            plan,
            inputs,
            normalization,
        })
    }

    /// Overrides the backend id reported in scores (e.g. "dlm").
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Raw logits in model output order.
    pub fn logits(&self, premise: &str, hypothesis: &str) -> Result<[f64; 3]> {
        let enc = self.tokenizer.encode_pair(premise, hypothesis)?;
        let n = enc.get_ids().len();
        if n > self.manifest.max_tokens {
            return Err(Error::InputTooLong {
                tokens: n,
                max: self.manifest.max_tokens,
            });
        }
        let column = |v: &[u32]| -> Result<TValue> {
            let data: Vec<i64> = v.iter().map(|&x| i64::from(x)).collect();
            let t = tract_ndarray::Array2::from_shape_vec((1, n), data)
                .map_err(|e| self.backend_err(e.to_string()))?;
            Ok(t.into_tensor().into_tvalue())
        };
        let values = self
            .inputs
            .iter()
            .map(|k| match k {
                InputKind::Ids => column(enc.get_ids()),
                InputKind::Mask => column(enc.get_attention_mask()),
                InputKind::TypeIds => column(enc.get_type_ids()),
            })
            .collect::<Result<TVec<_>>>()?;
        let out = self
            .plan
            .run(values)
            .map_err(|e| self.backend_err(format!("{e:#}")))?;
        let logits = out[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| self.backend_err(format!("{e:#}")))?;
        if logits.len() != 3 {
            return Err(self.backend_err(format!(
                "expected 3 logits, got shape {:?}",
                logits.shape()
            )));
        }
        let mut it = logits.iter().map(|&x| f64::from(x));
        Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
    }

    fn backend_err(&self, msg: String) -> Error {
        Error::Backend {
            backend: self.id.clone(),
            msg,
        }
    }
}

impl EntailmentBackend for OnnxNliBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn tokenizer(&self) -> &dyn TokenCounter {
        &self.tokenizer
    }

    fn max_tokens(&self) -> usize {
        self.manifest.max_tokens
    }

    fn max_parallelism(&self) -> usize {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }

    fn score_pair(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        let logits = self.logits(premise, hypothesis)?;
        Ok(entailment_probability(
            &logits,
            &self.manifest.label_order,
            self.normalization,
        ))
    }

    fn class_probabilities(&self, premise: &str, hypothesis: &str) -> Result<Option<[f64; 3]>> {
        let p = softmax(&self.logits(premise, hypothesis)?);
        let order = &self.manifest.label_order;
        Ok(Some([
            p[order.index_of(NliClass::Contradiction)],
            p[order.index_of(NliClass::Neutral)],
            p[order.index_of(NliClass::Entailment)],
        ]))
    }
}
