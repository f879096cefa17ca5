//! Model checkpoints: manifest (configs, vocabulary, parameter layout) plus a
//! blob of `f32` parameters in declared order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::blobfile;
use crate::csfm::CsfmConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::SegmenterModel;
use crate::tensor::Tensor;
use crate::textprep::{PreprocessConfig, Vocabulary};

pub const CHECKPOINT_FORMAT: &str = "segcross-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    preprocess: PreprocessConfig,
    encoder: EncoderConfig,
    csfm: CsfmConfig,
    vocab: Vec<String>,
    parameters: Vec<ParamEntry>,
}

pub fn save_checkpoint(path: &Path, model: &SegmenterModel) -> Result<()> {
    let named = model.named_parameters();
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        preprocess: model.preprocess.clone(),
        encoder: model.encoder_config.clone(),
        csfm: model.csfm_config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        parameters: named.iter().map(|(n, t)| ParamEntry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let values: Vec<f32> = named.iter().flat_map(|(_, t)| t.data().iter().map(|&v| v as f32)).collect();
    let Value::Object(map) = serde_json::to_value(&manifest).map_err(|e| Error::json("checkpoint manifest", e))?
    else {
        unreachable!("struct serializes to an object")
    };
    blobfile::write(path, map, &values)
}

pub fn load_checkpoint(path: &Path) -> Result<SegmenterModel> {
    let (map, values) = blobfile::read(path)?;
    let corrupt = |reason: String| Error::Corrupt { path: path.to_path_buf(), reason };
    if map.get("format").and_then(Value::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(corrupt("not a segcross checkpoint".into()));
    }
    let version = map.get("version").and_then(Value::as_u64).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let manifest: Manifest =
        serde_json::from_value(Value::Object(map)).map_err(|e| Error::json(format!("{} manifest", path.display()), e))?;

    let vocab = Vocabulary::from_tokens(manifest.vocab)?;
    if vocab.size() != manifest.encoder.vocab_size {
        return Err(corrupt("vocabulary size disagrees with encoder config".into()));
    }
    let mut model = SegmenterModel::new(vocab, manifest.preprocess, manifest.encoder, manifest.csfm)?;

    let expected: Vec<(String, Vec<usize>)> =
        model.named_parameters().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if expected.len() != manifest.parameters.len() {
        return Err(corrupt(format!("{} parameters declared, {} expected", manifest.parameters.len(), expected.len())));
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.parameters) {
        if *name != entry.name || *shape != entry.shape {
            return Err(corrupt(format!("parameter {} {:?} does not match {name} {shape:?}", entry.name, entry.shape)));
        }
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if total != values.len() {
        return Err(corrupt(format!("blob holds {} values, layout needs {total}", values.len())));
    }
    let mut offset = 0;
    for t in model.parameters_mut() {
        let n = t.numel();
        let data = values[offset..offset + n].iter().map(|&v| v as f64).collect();
        *t = Tensor::new(t.shape().to_vec(), data)?;
        offset += n;
    }
    Ok(model)
}
