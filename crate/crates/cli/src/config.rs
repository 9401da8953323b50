use std::fs;
use std::path::{Path, PathBuf};

use amvdsn::clustering::AffinityOptions;
use amvdsn::data::{
    load_dataset, load_uci_digit, normalize, synth_subspaces, MultiViewDataset, NormalizeMode, SynthSpec,
};
use amvdsn::model::ModelConfig;
use amvdsn::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Directory with `meta`, `view_<v>.csv` and optional `labels.csv`.
    #[default]
    Dataset,
    /// The UCI multiple-features digit files.
    UciDigit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: DataFormat,
    #[serde(default)]
    pub normalize: NormalizeMode,
}

/// One run: data source, model, training and clustering settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives parameter initialization and spectral clustering.
    #[serde(default)]
    pub seed: u64,
    pub k: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    pub synth: Option<SynthSpec>,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub affinity: AffinityOptions,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(p) = config.data.path.as_mut() {
            if p.is_relative() {
                if let Some(base) = path.parent() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// Parses and validates; view dims left empty are filled in later from
    /// the data.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.model.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let key = |name: &str, e: amvdsn::Error| CliError::Config(format!("{name}: {e}"));
        match (&self.data.path, &self.synth) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either data.path or [synth], not both".into()));
            }
            (None, None) => return Err(CliError::Config("no data source: set data.path or [synth]".into())),
            _ => {}
        }
        if self.k < 2 {
            return Err(CliError::Config(format!("k: must be at least 2, got {}", self.k)));
        }
        if let Some(spec) = &self.synth {
            spec.validate().map_err(|e| key("synth", e))?;
            if !self.model.view_dims.is_empty() && self.model.view_dims != spec.ambient_dims {
                return Err(CliError::Config(format!(
                    "model.view_dims: {:?} disagrees with synth.ambient_dims {:?}",
                    self.model.view_dims, spec.ambient_dims
                )));
            }
        }
        let mut model = self.model.clone();
        if model.view_dims.is_empty() {
            model.view_dims = vec![1];
        }
        model.validate().map_err(|e| key("model", e))?;
        self.train.validate().map_err(|e| key("train", e))?;
        self.affinity.validate().map_err(|e| key("affinity", e))?;
        Ok(())
    }

    /// Loads or generates the data, normalizes it and fills in
    /// `model.view_dims` when the config left it empty.
    pub fn dataset(&mut self) -> Result<MultiViewDataset> {
        let raw = match (&self.data.path, &self.synth) {
            (Some(path), _) => match self.data.format {
                DataFormat::Dataset => load_dataset(path)?,
                DataFormat::UciDigit => load_uci_digit(path)?,
            },
            (None, Some(spec)) => synth_subspaces(spec)?,
            (None, None) => return Err(CliError::Config("no data source".into())),
        };
        let dataset = normalize(&raw, self.data.normalize);
        if self.model.view_dims.is_empty() {
            self.model.view_dims = dataset.view_dims();
        } else if self.model.view_dims != dataset.view_dims() {
            return Err(CliError::Config(format!(
                "model.view_dims: {:?} disagrees with the data's {:?}",
                self.model.view_dims,
                dataset.view_dims()
            )));
        }
        if self.k > dataset.n_samples() {
            return Err(CliError::Config(format!(
                "k: {} exceeds the {} samples",
                self.k,
                dataset.n_samples()
            )));
        }
        Ok(dataset)
    }
}
