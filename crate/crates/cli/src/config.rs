//! Run configuration: a preset, an optional TOML file layered on top, then
//! command-line flags layered on top of that.

use std::path::Path;

use anyhow::{bail, Context, Result};
use corradaptor::data_eval::SceneParams;
use corradaptor::model::{CorrAdaptorConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small network, one pair per step, for 500-correspondence synthetic pairs.
    #[default]
    Desk,
    /// Full-size network (d=128, 250 clusters) and batch 32.
    Full,
}

impl Preset {
    pub fn model(self) -> CorrAdaptorConfig {
        match self {
            Self::Desk => CorrAdaptorConfig::desk(),
            Self::Full => CorrAdaptorConfig::default(),
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Self::Desk => TrainConfig {
                batch: 1,
                ..TrainConfig::default()
            },
            Self::Full => TrainConfig {
                batch: 32,
                ..TrainConfig::default()
            },
        }
    }
}

/// Dataset generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Total pairs over all splits.
    pub pairs: usize,
    pub n: usize,
    pub outliers: f64,
    pub noise: f64,
    pub seed: u64,
    /// Validation pairs; a tenth of the total when absent.
    pub val_pairs: Option<usize>,
    /// Test pairs; a fifth of the total when absent.
    pub test_pairs: Option<usize>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            pairs: 250,
            n: 500,
            outliers: 0.5,
            noise: 1e-3,
            seed: 0,
            val_pairs: None,
            test_pairs: None,
        }
    }
}

impl GenConfig {
    /// `(train, val, test)` pair counts.
    pub fn split_counts(&self) -> Result<(usize, usize, usize)> {
        let val = self.val_pairs.unwrap_or(self.pairs / 10);
        let test = self.test_pairs.unwrap_or(self.pairs / 5);
        if val + test > self.pairs {
            bail!(
                "{val} validation and {test} test pairs exceed the total of {}",
                self.pairs
            );
        }
        Ok((self.pairs - val - test, val, test))
    }

    pub fn scene(&self, seed: u64) -> SceneParams {
        SceneParams {
            n: self.n,
            outlier_ratio: self.outliers,
            noise_sigma: self.noise,
            seed,
        }
    }
}

/// Contents of a `--config` file. Every section is optional and only the
/// keys it names override the preset.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<Preset>,
    pub gen: Option<toml::Table>,
    pub model: Option<toml::Table>,
    pub train: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Overrides the fields of `base` named in `table`. Unknown keys are
/// rejected by the target type.
pub fn overlay<T: Serialize + DeserializeOwned>(base: T, table: Option<&toml::Table>) -> Result<T> {
    let Some(table) = table else {
        return Ok(base);
    };
    let mut value = toml::Table::try_from(&base).context("serialising defaults")?;
    for (k, v) in table {
        value.insert(k.clone(), v.clone());
    }
    toml::Value::Table(value)
        .try_into()
        .context("invalid configuration")
}

/// Model and training settings as recorded next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub model: CorrAdaptorConfig,
    pub train: TrainConfig,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(crate::RUN_CONFIG_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
