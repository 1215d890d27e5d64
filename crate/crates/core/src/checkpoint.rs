//! Weights checkpoint: a single JSON archive mapping hierarchical layer
//! names to arrays, with a manifest carrying the model configuration and,
//! for text-conditioned variants, the raw embedding matrix.
//!
//! Values are stored as base64 row-major little-endian f64, so a save/load
//! round trip is bit-exact for f64 models.

use crate::backbone::{GruNet, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use base64::Engine;
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub data_b64: String,
}

impl TensorBlob {
    fn from_array<F: Scalar>(a: &ArrayD<F>) -> Self {
        let mut bytes = Vec::with_capacity(a.len() * 8);
        for v in a.iter() {
            bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        TensorBlob {
            shape: a.shape().to_vec(),
            data_b64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    fn to_array<F: Scalar>(&self, name: &str) -> Result<ArrayD<F>> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.data_b64)
            .map_err(|e| Error::Checkpoint(format!("layer {name}: bad base64: {e}")))?;
        let n: usize = self.shape.iter().product();
        if bytes.len() != n * 8 {
            return Err(Error::Checkpoint(format!(
                "layer {name}: {} bytes for shape {:?}",
                bytes.len(),
                self.shape
            )));
        }
        let values: Vec<F> = bytes
            .chunks_exact(8)
            .map(|c| F::of_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        ArrayD::from_shape_vec(IxDyn(&self.shape), values)
            .map_err(|e| Error::Checkpoint(format!("layer {name}: {e}")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub text_embeddings: Option<TensorBlob>,
    pub format_version: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: BTreeMap<String, TensorBlob>,
}

pub const FORMAT_VERSION: u32 = 1;

pub fn save<F: Scalar>(
    path: &Path,
    model: &GruNet<F>,
    text_raw: Option<&Array2<f64>>,
) -> Result<()> {
    let tensors: BTreeMap<String, TensorBlob> = model
        .params
        .iter()
        .map(|(n, v)| (n.clone(), TensorBlob::from_array(v)))
        .collect();
    let ckpt = Checkpoint {
        manifest: Manifest {
            config: model.cfg.clone(),
            text_embeddings: text_raw.map(|t| TensorBlob::from_array(&t.clone().into_dyn())),
            format_version: FORMAT_VERSION,
        },
        tensors,
    };
    let json = serde_json::to_string(&ckpt).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load a model (and its embedding matrix, when present). Every stored
/// tensor is validated against the expected shape for the embedded config.
pub fn load<F: Scalar>(path: &Path) -> Result<(GruNet<F>, Option<Array2<f64>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if ckpt.manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {}",
            ckpt.manifest.format_version
        )));
    }
    let text_raw = match &ckpt.manifest.text_embeddings {
        Some(blob) => {
            let arr: ArrayD<f64> = blob.to_array("text_embeddings")?;
            let shape = (arr.shape()[0], arr.shape()[1]);
            Some(
                Array2::from_shape_vec(shape, arr.iter().cloned().collect())
                    .map_err(|e| Error::Checkpoint(e.to_string()))?,
            )
        }
        None => None,
    };

    let mut model = GruNet::<F>::new(ckpt.manifest.config.clone())?;
    for (name, blob) in &ckpt.tensors {
        model.params.set(name, blob.to_array(name)?);
    }
    // Materialize against the config: a reference model exposes the expected
    // parameter set, so mismatches are reported by layer name.
    let mut reference = GruNet::<F>::new(ckpt.manifest.config.clone())?;
    reference.build(text_raw.as_ref())?;
    for (name, expected) in reference.params.iter() {
        match model.params.get(name) {
            None => {
                return Err(Error::Checkpoint(format!(
                    "checkpoint is missing layer {name}"
                )))
            }
            Some(found) if found.shape() != expected.shape() => {
                return Err(Error::Checkpoint(format!(
                    "layer {name}: checkpoint shape {:?} does not match config shape {:?}",
                    found.shape(),
                    expected.shape()
                )))
            }
            Some(_) => {}
        }
    }
    Ok((model, text_raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Variant;
    use crate::data::make_synthetic;
    use crate::gdam::Mode;
    use crate::text::{encode_labels, LabelSet, StubEncoder};
    use crate::train::predict;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            input_height: 16,
            input_width: 16,
            depth: 2,
            base_width: 8,
            alpha: 1.0,
            variant: Variant::Full,
            seed: 4,
            ..ModelConfig::default()
        }
    }

    fn built_model() -> (GruNet<f64>, Array2<f64>) {
        let text = encode_labels(&LabelSet::default_labels(), &StubEncoder::new(4, 2)).unwrap();
        let mut model = GruNet::<f64>::new(tiny_cfg()).unwrap();
        model.build(Some(&text)).unwrap();
        (model, text)
    }

    #[test]
    fn round_trip_reproduces_forward_outputs_exactly() {
        let (mut model, text) = built_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt.json");
        save(&path, &model, Some(&text)).unwrap();
        let (mut loaded, text_back) = load::<f64>(&path).unwrap();
        let text_back = text_back.unwrap();
        for (a, b) in text.iter().zip(text_back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let sample = &make_synthetic(1, 16, 1)[0];
        let a = predict(&mut model, sample, Some(&text)).unwrap();
        let b = predict(&mut loaded, sample, Some(&text_back)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saved_file_is_byte_stable() {
        let (model, text) = built_model();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
        save(&p1, &model, Some(&text)).unwrap();
        save(&p2, &model, Some(&text)).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn tampered_shape_is_reported_by_layer_name() {
        let (model, text) = built_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt.json");
        save(&path, &model, Some(&text)).unwrap();
        let mut ckpt: Checkpoint =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let blob = ckpt.tensors.get_mut("head/w").unwrap();
        blob.shape = vec![3, 3, blob.shape[2], blob.shape[3]];
        std::fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
        let err = load::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("head/w"), "{err}");
    }

    #[test]
    fn missing_layer_is_reported_by_name() {
        let (model, text) = built_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt.json");
        save(&path, &model, Some(&text)).unwrap();
        let mut ckpt: Checkpoint =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        ckpt.tensors.remove("bottleneck/mrb/shortcut/w");
        std::fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
        let err = load::<f64>(&path).unwrap_err().to_string();
        assert!(err.contains("bottleneck/mrb/shortcut/w"), "{err}");
    }

    #[test]
    fn unknown_format_version_is_rejected() {
        let (model, text) = built_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt.json");
        save(&path, &model, Some(&text)).unwrap();
        let mut ckpt: Checkpoint =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        ckpt.manifest.format_version = 99;
        std::fs::write(&path, serde_json::to_string(&ckpt).unwrap()).unwrap();
        assert!(load::<f64>(&path).is_err());
    }

    #[test]
    fn variants_without_text_store_no_embeddings() {
        let mut model = GruNet::<f64>::new(ModelConfig {
            variant: Variant::Baseline,
            ..tiny_cfg()
        })
        .unwrap();
        model.build(None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt.json");
        save(&path, &model, None).unwrap();
        let (mut loaded, text_back) = load::<f64>(&path).unwrap();
        assert!(text_back.is_none());
        let sample = &make_synthetic(1, 16, 2)[0];
        let (images, _) = crate::data::make_batch::<f64>(&[sample]);
        loaded
            .forward(&images, None, Mode::Infer, 0, false, false)
            .unwrap();
    }
}
