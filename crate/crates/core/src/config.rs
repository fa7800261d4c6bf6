//! Run configuration: a nested, human-editable TOML file with documented
//! defaults, plus dataset resolution and a content hash for reproducibility.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::augment::AugmentationPolicy;
use crate::data::generators::{gen_mini_digits, gen_shifted_blobs, gen_two_moons};
use crate::data::io::load_dataset;
use crate::data::{Domain, DomainDataset};
use crate::error::{Error, Result};
use crate::losses::MixParams;
use crate::models::ModelSpec;
use crate::optim::OptimizerKind;
use crate::rng::{derive_seed, StreamTag};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IimtConfig {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mix: MixConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub augment: AugmentationPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embedding")]
    pub embedding_dim: usize,
    #[serde(default = "default_disc_hidden")]
    pub disc_hidden: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_embedding() -> usize {
    32
}
fn default_disc_hidden() -> usize {
    128
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: default_hidden(),
            embedding_dim: default_embedding(),
            disc_hidden: default_disc_hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_k_augment")]
    pub k_augment: usize,
}

fn default_alpha() -> f64 {
    0.75
}
fn default_temperature() -> f64 {
    0.5
}
fn default_k_augment() -> usize {
    2
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            alpha: default_alpha(),
            temperature: default_temperature(),
            k_augment: default_k_augment(),
        }
    }
}

impl MixConfig {
    pub fn params(&self) -> MixParams {
        MixParams {
            alpha: self.alpha,
            temperature: self.temperature,
            k_augment: self.k_augment,
        }
    }
}

/// Loss weights. Everything defaults to 1; only the target-mixup weight has
/// a schedule (linear ramp from 0 to `t_max`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(default = "default_weight")]
    pub q: f64,
    #[serde(default = "default_weight")]
    pub d: f64,
    #[serde(default = "default_weight")]
    pub z: f64,
    #[serde(default = "default_weight")]
    pub s: f64,
    #[serde(default = "default_weight")]
    pub t_max: f64,
}

fn default_weight() -> f64 {
    1.0
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            q: 1.0,
            d: 1.0,
            z: 1.0,
            s: 1.0,
            t_max: 1.0,
        }
    }
}

/// Which features feed the domain adversarial loss. `Mixed` is the full
/// method (source- vs target-dominant mixes); `Raw` is plain adversarial
/// alignment on unmixed batches, used by the DANN baseline rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdversarialFeatures {
    Mixed,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    /// Steps over which w_t ramps linearly from 0; defaults to half the run.
    #[serde(default)]
    pub wt_ramp_steps: Option<u64>,
    /// Evaluate every N steps (0 = final evaluation only).
    #[serde(default)]
    pub eval_every: u64,
    /// Write a checkpoint every N steps (0 = none beyond the final one).
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_mu")]
    pub grl_mu: f64,
    /// Optional linear ramp of the reversal coefficient (0 = constant).
    #[serde(default)]
    pub grl_mu_ramp_steps: u64,
    /// Force every mixing weight to 1, degenerating all mixup terms to
    /// their dominant operand. Used by the baseline ablation rows.
    #[serde(default)]
    pub force_unit_lambda: bool,
    #[serde(default = "default_adv_features")]
    pub adversarial_features: AdversarialFeatures,
}

fn default_mu() -> f64 {
    1.0
}
fn default_adv_features() -> AdversarialFeatures {
    AdversarialFeatures::Mixed
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_opt_kind")]
    pub kind: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
}

fn default_opt_kind() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_lr() -> f64 {
    3e-4
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: default_opt_kind(),
            lr: default_lr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Two interleaved half-circles; the target domain is rotated.
    TwoMoons {
        n: usize,
        noise: f64,
        target_rotation_deg: f64,
    },
    /// Gaussian blobs; the target domain is displaced by `shift`.
    Blobs {
        n: usize,
        means: Vec<Vec<f64>>,
        covariance: Vec<Vec<f64>>,
        shift: Vec<f64>,
    },
    /// Procedurally rendered digit glyphs; the target domain is rotated.
    MiniDigits {
        n_per_class: usize,
        resolution: usize,
        target_rotation_deg: f64,
    },
    /// Pre-generated dataset directories.
    Dirs {
        source_dir: PathBuf,
        target_dir: PathBuf,
    },
}

impl IimtConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: IimtConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    /// sha256 of the canonical serialized form.
    pub fn content_hash(&self) -> Result<Vec<u8>> {
        Ok(Sha256::digest(self.to_toml()?.as_bytes()).to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [
            ("q", w.q),
            ("d", w.d),
            ("z", w.z),
            ("s", w.s),
            ("t_max", w.t_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("weight {name} must be >= 0, got {v}")));
            }
        }
        self.mix.params().validate()?;
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.weights.t_max > 0.0 {
            let ramp = self.wt_ramp_steps();
            if ramp == 0 {
                return Err(Error::Config(
                    "wt_ramp_steps must be >= 1 when t_max > 0".into(),
                ));
            }
            if self.train.total_steps > 0 && ramp > self.train.total_steps {
                return Err(Error::Config(format!(
                    "wt_ramp_steps {ramp} exceeds total_steps {}",
                    self.train.total_steps
                )));
            }
        }
        if self.train.grl_mu < 0.0 {
            return Err(Error::Config("grl_mu must be >= 0".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        Ok(())
    }

    /// Resolved w_t ramp length: configured value or half the run.
    pub fn wt_ramp_steps(&self) -> u64 {
        self.train
            .wt_ramp_steps
            .unwrap_or_else(|| (self.train.total_steps / 2).max(1))
    }

    /// Model spec completed with the dataset's dimensions.
    pub fn model_spec(&self, input_dim: usize, class_count: usize) -> ModelSpec {
        ModelSpec {
            input_dim,
            hidden: self.model.hidden.clone(),
            embedding_dim: self.model.embedding_dim,
            class_count,
            disc_hidden: self.model.disc_hidden,
        }
    }
}

/// Build or load the `(source, target)` dataset pair for one run seed.
///
/// Generator-backed configs derive their own sub-seeds, so different run
/// seeds see different data while dir-backed configs are shared.
pub fn resolve_datasets<T: Scalar>(
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<(DomainDataset<T>, DomainDataset<T>)> {
    match cfg {
        DatasetConfig::TwoMoons {
            n,
            noise,
            target_rotation_deg,
        } => {
            let src_seed = derive_seed(seed, StreamTag::DatasetGen, 100);
            let tgt_seed = derive_seed(seed, StreamTag::DatasetGen, 101);
            let source = gen_two_moons(*n, *noise, 0.0, src_seed)?;
            let target = gen_two_moons(*n, *noise, *target_rotation_deg, tgt_seed)?
                .with_domain(Domain::Target);
            Ok((source, target))
        }
        DatasetConfig::Blobs {
            n,
            means,
            covariance,
            shift,
        } => gen_shifted_blobs(*n, means, covariance, shift, seed),
        DatasetConfig::MiniDigits {
            n_per_class,
            resolution,
            target_rotation_deg,
        } => gen_mini_digits(*n_per_class, *resolution, *target_rotation_deg, seed),
        DatasetConfig::Dirs {
            source_dir,
            target_dir,
        } => {
            let (source, _) = load_dataset(source_dir)?;
            let (target, _) = load_dataset(target_dir)?;
            if source.labels.is_none() {
                return Err(Error::Validation(format!(
                    "source dataset in {} has no labels",
                    source_dir.display()
                )));
            }
            Ok((source, target))
        }
    }
}
