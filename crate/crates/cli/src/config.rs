use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volsr_core::arch::{Dimensionality, Family, NetworkSpec};
use volsr_core::experiment::{ComparisonConfig, EvalSettings, TrainOverride};
use volsr_core::phantom::{DatasetConfig, DegradationSpec, PartShape, PhantomTemplate};
use volsr_core::seeds::derive;
use volsr_core::slidewin::TileSpec;
use volsr_core::train::TrainConfig;
use volsr_core::volume::NormBounds;

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub n_train_parts: usize,
    pub n_test_parts: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_train_parts: 2,
            n_test_parts: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComparisonSection {
    pub families: Vec<Family>,
    pub modes: Vec<Dimensionality>,
    pub n_seeds: usize,
    /// Per-family learning rate, batch and patch overrides of `[train]`.
    pub family_train: BTreeMap<Family, TrainOverride>,
}

impl Default for ComparisonSection {
    fn default() -> Self {
        Self {
            families: vec![Family::Srcnn, Family::Edsr],
            modes: vec![Dimensionality::D2, Dimensionality::D25],
            n_seeds: 3,
            family_train: ComparisonConfig::desk_scale(0).family_train,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    /// Raw intensities mapped to 0 and 1; the input's own range when absent.
    pub normalization: Option<NormBounds>,
}

/// One experiment; every section is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub phantom: PhantomTemplate,
    pub degradation: DegradationSpec,
    pub dataset: DatasetSection,
    pub network: Option<NetworkSpec>,
    pub train: TrainConfig,
    pub tiles: TileSpec,
    pub eval: EvalSettings,
    pub comparison: ComparisonSection,
    pub infer: InferSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            phantom: PhantomTemplate::new([64, 256, 256], PartShape::Cylinder),
            degradation: DegradationSpec::default(),
            dataset: DatasetSection::default(),
            network: None,
            train: TrainConfig::default(),
            tiles: TileSpec::default(),
            eval: EvalSettings::default(),
            comparison: ComparisonSection::default(),
            infer: InferSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::validation(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::validation(format!("invalid config {}:\n{e}", path.display())))
    }

    pub fn hash(&self) -> String {
        volsr_core::experiment::config_hash(self)
    }

    pub fn network(&self) -> Result<&NetworkSpec, Failure> {
        self.network
            .as_ref()
            .ok_or_else(|| Failure::validation("config has no [network] section".into()))
    }

    pub fn dataset_seed(&self) -> u64 {
        derive(self.seed, "dataset")
    }

    pub fn train_seed(&self) -> u64 {
        derive(self.seed, "train")
    }

    pub fn phantom_seed(&self) -> u64 {
        derive(self.seed, "phantom")
    }

    pub fn degrade_seed(&self) -> u64 {
        derive(self.seed, "degrade")
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.dataset_seed(),
            n_train_parts: self.dataset.n_train_parts,
            n_test_parts: self.dataset.n_test_parts,
            phantom: self.phantom.clone(),
            degradation: self.degradation,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train_seed(),
            ..self.train.clone()
        }
    }

    pub fn comparison_config(&self) -> ComparisonConfig {
        ComparisonConfig {
            seed: self.seed,
            dataset: self.dataset_config(),
            families: self.comparison.families.clone(),
            modes: self.comparison.modes.clone(),
            n_seeds: self.comparison.n_seeds,
            train: self.train.clone(),
            family_train: self.comparison.family_train.clone(),
            tiles: self.tiles,
            eval: self.eval.clone(),
        }
    }
}
