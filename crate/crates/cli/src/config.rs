//! JSON experiment configuration. Every section and field is optional and
//! falls back to its default; unknown keys are rejected.

use std::path::Path;

use framenet::data::{CorruptionMode, SyntheticSpec};
use framenet::network::{InitScheme, InputLayout, LayerSpec};
use framenet::optim::{OptimizerConfig, OptimizerKind};
use framenet::training::TrainConfig;
use framenet::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub optimizer: OptimizerConfig,
    pub training: TrainConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub synthetic: SyntheticSpec,
    /// Frames per class in the generated dev split.
    pub dev_frames_per_class: usize,
    /// Frames spliced on each side of the centre frame.
    pub context: usize,
    pub normalize: bool,
    /// Fraction of training labels replaced by a wrong class.
    pub corruption_rate: f64,
    pub corruption_mode: CorruptionMode,
    /// Scramble feature columns with one seeded permutation.
    pub permute: bool,
    /// Class → group map for CSV imports (each class is its own group otherwise).
    pub group_of: Option<Vec<usize>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: SyntheticSpec::default(),
            dev_frames_per_class: 50,
            context: 0,
            normalize: true,
            corruption_rate: 0.0,
            corruption_mode: CorruptionMode::WithinGroup,
            permute: false,
            group_of: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden layers in order; the softmax output is sized from the data.
    pub hidden: Vec<LayerSpec>,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: vec![LayerSpec::Dense(256), LayerSpec::Dense(256)],
            init: InitScheme::default(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Input layout and full layer list for data with `dim` features, `classes`
    /// classes and an optional `(time, freq)` grid.
    pub fn resolve(
        &self,
        dim: usize,
        classes: usize,
        grid: Option<(usize, usize)>,
    ) -> Result<(InputLayout, Vec<LayerSpec>)> {
        let local = matches!(
            self.hidden.first(),
            Some(LayerSpec::Conv(_) | LayerSpec::Untied(_))
        );
        let input = match (local, grid) {
            (false, _) => InputLayout::Flat(dim),
            (true, Some((time, freq))) => InputLayout::Grid { time, freq },
            (true, None) => return Err(Error::Config(
                "convolutional and untied layers need grid data; set data.context when generating"
                    .into(),
            )),
        };
        let mut layers = self.hidden.clone();
        layers.push(LayerSpec::SoftmaxOutput(classes));
        Ok((input, layers))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Inputs analysed; all of them up to 512,000 when absent.
    pub sample_size: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Hidden-layer counts.
    pub depths: Vec<usize>,
    /// Fixed hidden widths.
    pub layer_sizes: Vec<usize>,
    /// Total parameter counts; the width is solved per depth.
    pub target_params: Vec<u64>,
    /// Optimizers to try; the `optimizer` section's kind when empty.
    pub optimizers: Vec<OptimizerKind>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_json(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }

    /// Replaces every seed in the document with `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.data.synthetic.seed = seed;
        self.network.seed = seed;
        self.training.shuffle_seed = seed;
        self.analysis.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synthetic.validate()?;
        if self.data.dev_frames_per_class == 0 {
            return Err(Error::Config(
                "data.dev_frames_per_class must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.data.corruption_rate) {
            return Err(Error::Config(format!(
                "data.corruption_rate must lie in [0, 1], got {}",
                self.data.corruption_rate
            )));
        }
        if let InitScheme::Gaussian(s) = self.network.init {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!(
                    "network.init scale must be positive, got {s}"
                )));
            }
        }
        if self
            .network
            .hidden
            .iter()
            .any(|l| matches!(l, LayerSpec::SoftmaxOutput(_)))
        {
            return Err(Error::Config(
                "network.hidden lists hidden layers only; the softmax output is added automatically".into(),
            ));
        }
        self.optimizer.validate()?;
        self.training.validate()?;
        if self.analysis.sample_size == Some(0) {
            return Err(Error::Config(
                "analysis.sample_size must be at least 1".into(),
            ));
        }
        if self.sweep.depths.contains(&0) {
            return Err(Error::Config(
                "sweep.depths entries must be at least 1".into(),
            ));
        }
        if self.sweep.layer_sizes.contains(&0) {
            return Err(Error::Config(
                "sweep.layer_sizes entries must be at least 1".into(),
            ));
        }
        Ok(())
    }
}
