//! TOML run configuration with flat `--set key=value` overrides.

use grunet_core::backbone::{ModelConfig, Variant};
use grunet_core::data::{load_dataset, make_synthetic, split, Sample, SplitSpec};
use grunet_core::text::{encode_labels, FileEncoder, LabelSet, StubEncoder, TextEncoder};
use grunet_core::train::TrainConfig;
use grunet_core::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            model: ModelSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub depth: usize,
    pub base_width: usize,
    pub alpha: f64,
    pub variant: String,
    pub seed: u64,
    pub gdam_broadcast: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        ModelSection {
            input_height: d.input_height,
            input_width: d.input_width,
            input_channels: d.input_channels,
            depth: d.depth,
            base_width: d.base_width,
            alpha: d.alpha,
            variant: d.variant.as_str().to_string(),
            seed: d.seed,
            gdam_broadcast: d.gdam_broadcast,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            lr: d.lr,
            batch_size: d.batch_size,
            epochs: d.epochs,
            optimizer: d.optimizer,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            seed: d.seed,
            max_steps: d.max_steps,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset directory with images/ and masks/. When absent, a synthetic
    /// dataset is generated in memory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    pub synthetic_n: usize,
    pub synthetic_size: usize,
    pub synthetic_seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub split_seed: u64,
    /// Label list file, one label per line; bundled labels when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Exported embedding interchange file; the stub encoder when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub stub_dim: usize,
    pub stub_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            root: None,
            synthetic_n: 8,
            synthetic_size: 64,
            synthetic_seed: 42,
            train_frac: 0.7,
            val_frac: 0.2,
            test_frac: 0.1,
            split_seed: 42,
            labels: None,
            embeddings: None,
            stub_dim: 64,
            stub_seed: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("bad config {}: {e}", p.display())))
            }
        }
    }

    /// Apply one `key=value` override; keys are flat aliases into the
    /// sections.
    pub fn apply_set(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "variant" => self.model.variant = value.to_string(),
            "input_height" => self.model.input_height = num(key, value)?,
            "input_width" => self.model.input_width = num(key, value)?,
            "input_channels" => self.model.input_channels = num(key, value)?,
            "depth" => self.model.depth = num(key, value)?,
            "base_width" => self.model.base_width = num(key, value)?,
            "alpha" => self.model.alpha = num(key, value)?,
            "gdam_broadcast" => self.model.gdam_broadcast = num(key, value)?,
            "seed" => {
                let s = num(key, value)?;
                self.model.seed = s;
                self.train.seed = s;
            }
            "model_seed" => self.model.seed = num(key, value)?,
            "train_seed" => self.train.seed = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "optimizer" => self.train.optimizer = value.to_string(),
            "max_steps" => self.train.max_steps = Some(num(key, value)?),
            "data_root" => self.data.root = Some(PathBuf::from(value)),
            "synthetic_n" => self.data.synthetic_n = num(key, value)?,
            "synthetic_size" => self.data.synthetic_size = num(key, value)?,
            "synthetic_seed" => self.data.synthetic_seed = num(key, value)?,
            "train_frac" => self.data.train_frac = num(key, value)?,
            "val_frac" => self.data.val_frac = num(key, value)?,
            "test_frac" => self.data.test_frac = num(key, value)?,
            "split_seed" => self.data.split_seed = num(key, value)?,
            "labels" => self.data.labels = Some(PathBuf::from(value)),
            "embeddings" => self.data.embeddings = Some(PathBuf::from(value)),
            "stub_dim" => self.data.stub_dim = num(key, value)?,
            "stub_seed" => self.data.stub_seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Override seeds from `--seed` and the output dir from GRUNET_OUT.
    pub fn finish(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.model.seed = s;
            self.train.seed = s;
        }
        if let Ok(dir) = std::env::var("GRUNET_OUT") {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            input_height: self.model.input_height,
            input_width: self.model.input_width,
            input_channels: self.model.input_channels,
            depth: self.model.depth,
            base_width: self.model.base_width,
            alpha: self.model.alpha,
            variant: Variant::from_str(&self.model.variant)?,
            seed: self.model.seed,
            gdam_broadcast: self.model.gdam_broadcast,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            optimizer: self.train.optimizer.clone(),
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.eps,
            seed: self.train.seed,
            max_steps: self.train.max_steps,
            checkpoint_dir: Some(self.out_dir.clone()),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loaded (or generated) dataset, already split.
    pub fn load_splits(&self) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
        let samples = match &self.data.root {
            Some(root) => {
                if !root.is_dir() {
                    return Err(Error::Config(format!(
                        "data root {} does not exist",
                        root.display()
                    )));
                }
                load_dataset(root)?
            }
            None => make_synthetic(
                self.data.synthetic_n,
                self.data.synthetic_size,
                self.data.synthetic_seed,
            ),
        };
        let spec = SplitSpec {
            train_frac: self.data.train_frac,
            val_frac: self.data.val_frac,
            test_frac: self.data.test_frac,
            seed: self.data.split_seed,
        };
        split(&samples, &spec)
    }

    /// The 16xN embedding matrix when the variant needs text, else None.
    pub fn text_matrix(&self) -> Result<Option<Array2<f64>>> {
        let variant = Variant::from_str(&self.model.variant)?;
        if !variant.uses_text() {
            return Ok(None);
        }
        self.text_matrix_for_full()
    }

    /// Same, but unconditional; the ablation driver always includes the
    /// text-conditioned variant.
    pub fn text_matrix_for_full(&self) -> Result<Option<Array2<f64>>> {
        let labels = match &self.data.labels {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "labels file {} does not exist",
                        p.display()
                    )));
                }
                LabelSet::load(p)?
            }
            None => LabelSet::default_labels(),
        };
        let matrix = match &self.data.embeddings {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "embeddings file {} does not exist",
                        p.display()
                    )));
                }
                encode_labels(&labels, &FileEncoder { path: p.clone() })?
            }
            None => {
                let stub = StubEncoder::new(self.data.stub_dim, self.data.stub_seed);
                encode_labels(&labels, &stub as &dyn TextEncoder)?
            }
        };
        Ok(Some(matrix))
    }

    /// Echo the effective merged config into the output dir so a run can be
    /// reproduced from its artifacts alone.
    pub fn echo(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
        std::fs::write(self.out_dir.join("config.toml"), text)?;
        Ok(())
    }
}
