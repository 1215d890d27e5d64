//! Text label handling, pluggable encoders and the embeddings interchange
//! format.
//!
//! The language model itself is never a build dependency. Embeddings either
//! come from a one-file interchange format produced offline, or from a
//! deterministic hash-based stub encoder used by the test suites.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::{Ctx, Init};
use crate::scalar::Scalar;
use base64::Engine;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const NUM_LABELS: usize = 16;

/// Side of the projected text matrix consumed by the attention module.
pub const PROJECTED_SIZE: usize = 32;

const DEFAULT_LABELS: &str = include_str!("../assets/labels.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    /// The bundled histopathology label list.
    pub fn default_labels() -> Self {
        Self::from_lines(DEFAULT_LABELS).expect("bundled labels are valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read labels file {}: {e}", path.display())))?;
        Self::from_lines(&text)
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let labels: Vec<String> = text
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if labels.len() != NUM_LABELS {
            return Err(Error::Data(format!(
                "expected {NUM_LABELS} labels, found {}",
                labels.len()
            )));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Data(format!("duplicate label: {l:?}")));
            }
        }
        Ok(LabelSet { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

pub trait TextEncoder {
    fn encode(&self, labels: &LabelSet) -> Result<Array2<f64>>;
    fn id(&self) -> String;
}

/// Deterministic stand-in for an external language model: each label hashes
/// to a seeded stream of uniform values in [-1, 1].
pub struct StubEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl StubEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        StubEncoder { dim, seed }
    }
}

fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl TextEncoder for StubEncoder {
    fn encode(&self, labels: &LabelSet) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((NUM_LABELS, self.dim));
        for (i, label) in labels.labels().iter().enumerate() {
            let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ label_hash(label));
            for j in 0..self.dim {
                out[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        Ok(out)
    }

    fn id(&self) -> String {
        format!("stub-v1(dim={},seed={})", self.dim, self.seed)
    }
}

/// Encoder backed by a previously exported interchange file.
pub struct FileEncoder {
    pub path: std::path::PathBuf,
}

impl TextEncoder for FileEncoder {
    fn encode(&self, labels: &LabelSet) -> Result<Array2<f64>> {
        let file = EmbeddingFile::load(&self.path)?;
        if file.labels != labels.labels() {
            return Err(Error::Data(format!(
                "labels in {} do not match the requested label set",
                self.path.display()
            )));
        }
        file.matrix()
    }

    fn id(&self) -> String {
        match EmbeddingFile::load(&self.path) {
            Ok(f) => f.encoder_id,
            Err(_) => format!("file:{}", self.path.display()),
        }
    }
}

/// One-file embeddings interchange: JSON header plus a base64 row-major
/// little-endian f64 body. Round-trips bit-exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingFile {
    pub labels: Vec<String>,
    pub dim: usize,
    pub encoder_id: String,
    pub data_b64: String,
}

impl EmbeddingFile {
    pub fn from_matrix(labels: &LabelSet, matrix: &Array2<f64>, encoder_id: &str) -> Self {
        let mut bytes = Vec::with_capacity(matrix.len() * 8);
        for v in matrix.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        EmbeddingFile {
            labels: labels.labels().to_vec(),
            dim: matrix.ncols(),
            encoder_id: encoder_id.to_string(),
            data_b64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn matrix(&self) -> Result<Array2<f64>> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.data_b64)
            .map_err(|e| Error::Data(format!("invalid embeddings body: {e}")))?;
        let expected = self.labels.len() * self.dim * 8;
        if bytes.len() != expected {
            return Err(Error::Data(format!(
                "embeddings body has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Array2::from_shape_vec((self.labels.len(), self.dim), values)
            .map_err(|e| Error::Data(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Data(format!(
                "missing embeddings file {}: {e}",
                path.display()
            ))
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad embeddings file: {e}")))
    }
}

/// Encode all labels into the raw 16xN matrix.
pub fn encode_labels(labels: &LabelSet, encoder: &dyn TextEncoder) -> Result<Array2<f64>> {
    let m = encoder.encode(labels)?;
    if m.nrows() != NUM_LABELS {
        return Err(Error::Data(format!(
            "encoder produced {} rows, expected {NUM_LABELS}",
            m.nrows()
        )));
    }
    if m.ncols() == 0 {
        return Err(Error::Data("encoder produced empty vectors".into()));
    }
    Ok(m)
}

/// Learnable projection of the raw 16xN embedding matrix to 32x32: flatten,
/// one dense layer to 1024, reshape. The dense weights live in the model's
/// parameter store.
pub fn project_embeddings<F: Scalar>(
    ctx: &mut Ctx<F>,
    raw: &Array2<f64>,
    name: &str,
) -> Tensor<F> {
    let n = raw.len();
    let flat: Vec<F> = raw.iter().map(|&v| F::of_f64(v)).collect();
    let x = Tensor::constant(
        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[1, n]), flat).unwrap(),
    );
    let out = PROJECTED_SIZE * PROJECTED_SIZE;
    let w = ctx.param(
        &format!("{name}/w"),
        &[n, out],
        Init::HeUniform { fan_in: n },
    );
    let b = ctx.param(&format!("{name}/b"), &[out], Init::Zeros);
    x.matmul(&w)
        .add_bias(&b)
        .reshape(&[PROJECTED_SIZE, PROJECTED_SIZE])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    #[test]
    fn bundled_labels_are_the_sixteen_tissue_types() {
        let set = LabelSet::default_labels();
        assert_eq!(set.labels().len(), NUM_LABELS);
        assert_eq!(set.labels()[0], "tumor epithelial tissue");
        assert_eq!(set.labels()[NUM_LABELS - 1], "dysplasia");
    }

    #[test]
    fn wrong_label_count_is_rejected_with_the_count() {
        let fifteen = (0..15)
            .map(|i| format!("label {i}\n"))
            .collect::<String>();
        let err = LabelSet::from_lines(&fifteen).unwrap_err().to_string();
        assert!(err.contains("expected 16 labels, found 15"), "{err}");
    }

    #[test]
    fn duplicate_labels_are_rejected_by_name() {
        let mut lines: Vec<String> = (0..15).map(|i| format!("label {i}")).collect();
        lines.push("label 3".into());
        let err = LabelSet::from_lines(&lines.join("\n")).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("label 3"), "{err}");
    }

    #[test]
    fn blank_lines_and_whitespace_are_ignored() {
        let text = LabelSet::default_labels()
            .labels()
            .iter()
            .map(|l| format!("  {l}  \n\n"))
            .collect::<String>();
        assert_eq!(LabelSet::from_lines(&text).unwrap(), LabelSet::default_labels());
    }

    #[test]
    fn stub_encoder_is_deterministic_with_distinct_rows() {
        let labels = LabelSet::default_labels();
        let enc = StubEncoder::new(64, 9);
        let a = encode_labels(&labels, &enc).unwrap();
        let b = encode_labels(&labels, &enc).unwrap();
        assert_eq!(a.dim(), (NUM_LABELS, 64));
        assert_eq!(a, b);
        for i in 0..NUM_LABELS {
            for j in (i + 1)..NUM_LABELS {
                assert_ne!(a.row(i), a.row(j));
            }
        }
        let other = encode_labels(&labels, &StubEncoder::new(64, 10)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn embedding_file_round_trips_bit_exactly() {
        let labels = LabelSet::default_labels();
        let matrix = StubEncoder::new(48, 3).encode(&labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.json");
        EmbeddingFile::from_matrix(&labels, &matrix, "stub-v1").save(&path).unwrap();
        let loaded = EmbeddingFile::load(&path).unwrap();
        assert_eq!(loaded.encoder_id, "stub-v1");
        assert_eq!(loaded.labels, labels.labels());
        let back = loaded.matrix().unwrap();
        assert_eq!(back.dim(), matrix.dim());
        for (a, b) in matrix.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn file_encoder_reports_missing_file_path() {
        let enc = FileEncoder {
            path: "/nonexistent/emb.json".into(),
        };
        let err = enc.encode(&LabelSet::default_labels()).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/emb.json"), "{err}");
    }

    #[test]
    fn file_encoder_rejects_mismatched_labels() {
        let labels = LabelSet::default_labels();
        let other = LabelSet::from_lines(
            &(0..16).map(|i| format!("other {i}\n")).collect::<String>(),
        )
        .unwrap();
        let matrix = StubEncoder::new(8, 1).encode(&other).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.json");
        EmbeddingFile::from_matrix(&other, &matrix, "stub-v1").save(&path).unwrap();
        assert!(FileEncoder { path }.encode(&labels).is_err());
    }

    #[test]
    fn projection_maps_any_width_to_32x32() {
        for n in [64usize, 768] {
            let raw = StubEncoder::new(n, 2)
                .encode(&LabelSet::default_labels())
                .unwrap();
            let mut store = ParamStore::<f64>::new();
            let mut ctx = Ctx::new(&mut store, 1, false);
            let t = project_embeddings(&mut ctx, &raw, "proj");
            assert_eq!(t.shape(), &[PROJECTED_SIZE, PROJECTED_SIZE]);
            assert!(t.value().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_projection_weights_give_zero_matrix() {
        let raw = StubEncoder::new(16, 4)
            .encode(&LabelSet::default_labels())
            .unwrap();
        let mut store = ParamStore::<f64>::new();
        {
            let mut ctx = Ctx::new(&mut store, 1, false);
            project_embeddings(&mut ctx, &raw, "proj");
        }
        for (_, v) in store.iter_mut() {
            v.fill(0.0);
        }
        let mut ctx = Ctx::new(&mut store, 1, false);
        let t = project_embeddings(&mut ctx, &raw, "proj");
        assert!(t.value().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn changing_one_label_changes_the_projection() {
        let labels = LabelSet::default_labels();
        let mut edited: Vec<String> = labels.labels().to_vec();
        edited[5] = "something else entirely".into();
        let edited = LabelSet::from_lines(&edited.join("\n")).unwrap();
        let enc = StubEncoder::new(32, 6);
        let mut store = ParamStore::<f64>::new();
        let a = {
            let mut ctx = Ctx::new(&mut store, 1, false);
            project_embeddings(&mut ctx, &enc.encode(&labels).unwrap(), "proj")
        };
        let b = {
            let mut ctx = Ctx::new(&mut store, 1, false);
            project_embeddings(&mut ctx, &enc.encode(&edited).unwrap(), "proj")
        };
        assert_ne!(a.value(), b.value());
    }
}
