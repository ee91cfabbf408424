//! JSON experiment configuration.
//!
//! Unknown keys are rejected everywhere. Errors carry the dotted path of the
//! offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channels::{
    BandwidthLimitedSpec, BandwidthPartition, ChannelSpec, GaussianChannelSpec, Marginalization,
    RelaxedBinarySpec,
};
use crate::data::{generate_synthetic, load_idx, Dataset, SyntheticKind};
use crate::error::{Error, Result};
use crate::mmd::KernelBandwidth;
use crate::models::ModelConfig;
use crate::objectives::{BetaTarget, ObjectiveSettings, PosteriorMode};

/// Overrides `output.directory` when set.
pub const OUT_DIR_ENV: &str = "JSCC_OUT_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    GaussBlobs,
    Sprites,
    Idx,
}

fn default_size() -> usize {
    2000
}
fn default_side() -> usize {
    8
}
fn default_eval_fraction() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default)]
    pub seed: u64,
    /// IDX file, for `kind = "idx"` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
}

impl DatasetConfig {
    pub fn gauss_blobs(size: usize, side: usize, seed: u64) -> Self {
        DatasetConfig {
            kind: DatasetKind::GaussBlobs,
            size,
            side,
            seed,
            path: None,
            eval_fraction: default_eval_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DatasetKind::Idx => {
                if self.path.is_none() {
                    return Err(Error::config("dataset.path", "required for idx datasets"));
                }
            }
            _ => {
                if self.size == 0 {
                    return Err(Error::config("dataset.size", "must be at least 1"));
                }
                if !(4..=32).contains(&self.side) {
                    return Err(Error::config("dataset.side", "must lie in [4, 32]"));
                }
            }
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::config("dataset.eval_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// The full dataset, before the train / eval split.
    pub fn load(&self) -> Result<Dataset> {
        self.validate()?;
        match self.kind {
            DatasetKind::GaussBlobs => generate_synthetic(SyntheticKind::GaussBlobs, self.size, self.side, self.seed),
            DatasetKind::Sprites => generate_synthetic(SyntheticKind::Sprites, self.size, self.side, self.seed),
            DatasetKind::Idx => load_idx(self.path.as_deref().expect("validated")),
        }
    }

    /// `(train, eval)` halves of the loaded dataset.
    pub fn load_split(&self) -> Result<(Dataset, Dataset)> {
        self.load()?.split(self.eval_fraction)
    }
}

fn default_snr() -> f64 {
    1.0
}
fn default_marginalization() -> Marginalization {
    Marginalization::FullSum
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelConfig {
    Gaussian {
        #[serde(default = "default_snr")]
        snr: f64,
    },
    BandwidthLimited {
        #[serde(default = "default_snr")]
        snr: f64,
        /// `P(B = b)` for `b = 0..=T`; uniform over `1..=T` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        probs: Option<Vec<f64>>,
        #[serde(default = "default_marginalization")]
        marginalization: Marginalization,
    },
    RelaxedBinary {
        keep_prob: f64,
        noise_temperature: f64,
        input_temperature: f64,
    },
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig::Gaussian { snr: default_snr() }
    }
}

impl ChannelConfig {
    pub fn snr(&self) -> Option<f64> {
        match self {
            ChannelConfig::Gaussian { snr } | ChannelConfig::BandwidthLimited { snr, .. } => Some(*snr),
            ChannelConfig::RelaxedBinary { .. } => None,
        }
    }

    /// Same channel family at a different signal-to-noise ratio.
    pub fn with_snr(&self, s: f64) -> ChannelConfig {
        let mut c = self.clone();
        match &mut c {
            ChannelConfig::Gaussian { snr } | ChannelConfig::BandwidthLimited { snr, .. } => *snr = s,
            ChannelConfig::RelaxedBinary { .. } => {}
        }
        c
    }

    pub fn to_spec(&self, partition: &BandwidthPartition) -> Result<ChannelSpec> {
        let key = |k: &str| format!("channel.{k}");
        match self {
            ChannelConfig::Gaussian { snr } => Ok(ChannelSpec::Gaussian(
                GaussianChannelSpec::new(*snr).map_err(|e| Error::config(key("snr"), e.to_string()))?,
            )),
            ChannelConfig::BandwidthLimited {
                snr,
                probs,
                marginalization,
            } => {
                let inner = GaussianChannelSpec::new(*snr).map_err(|e| Error::config(key("snr"), e.to_string()))?;
                let spec = match probs {
                    Some(p) => BandwidthLimitedSpec::new(partition.clone(), p.clone(), inner, *marginalization)
                        .map_err(|e| Error::config(key("probs"), e.to_string()))?,
                    None => BandwidthLimitedSpec::uniform_training(partition.clone(), inner, *marginalization)
                        .map_err(|e| Error::config(key("marginalization"), e.to_string()))?,
                };
                Ok(ChannelSpec::BandwidthLimited(spec))
            }
            ChannelConfig::RelaxedBinary {
                keep_prob,
                noise_temperature,
                input_temperature,
            } => Ok(ChannelSpec::RelaxedBinary(
                RelaxedBinarySpec::new(*keep_prob, *noise_temperature, *input_temperature)
                    .map_err(|e| Error::config("channel", e.to_string()))?,
            )),
        }
    }
}

/// Which system is trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Encoder, channel and decoder trained end to end.
    #[default]
    Joint,
    /// Joint, with the auxiliary-latent decoder bound as distortion term.
    Alv,
    /// Source VAE, then a channel-coder pair on standard-normal codes.
    Separate,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Joint => "joint",
            TrainMode::Alv => "alv",
            TrainMode::Separate => "separate",
        }
    }
}

fn default_beta() -> f64 {
    1.0
}
fn default_weight() -> f64 {
    1.0
}

/// Seven log-spaced values from 1e-3 to 1e1.
pub fn default_beta_grid() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-3.0 + 4.0 * i as f64 / 6.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    #[serde(default)]
    pub mode: TrainMode,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    #[serde(default)]
    pub beta_target: BetaTarget,
    #[serde(default = "default_weight")]
    pub prior_matching_weight: f64,
    #[serde(default)]
    pub posterior: PosteriorMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            mode: TrainMode::default(),
            beta: default_beta(),
            beta_grid: default_beta_grid(),
            beta_target: BetaTarget::default(),
            prior_matching_weight: default_weight(),
            posterior: PosteriorMode::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            beta: self.beta,
            beta_target: self.beta_target,
            prior_matching_weight: self.prior_matching_weight,
            posterior: self.posterior,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("objective.beta", "must be finite and non-negative"));
        }
        if self.beta_grid.is_empty() {
            return Err(Error::config("objective.beta_grid", "must not be empty"));
        }
        if self.beta_grid.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::config("objective.beta_grid", "entries must be finite and non-negative"));
        }
        if !(self.prior_matching_weight >= 0.0 && self.prior_matching_weight.is_finite()) {
            return Err(Error::config("objective.prior_matching_weight", "must be finite and non-negative"));
        }
        Ok(())
    }
}

fn default_lr() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_steps() -> usize {
    1000
}
fn default_batch() -> usize {
    64
}
fn default_clip() -> Option<f64> {
    Some(10.0)
}
fn default_log_every() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Root seed of parameter initialization, batch order and all noise.
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Global gradient-norm limit; `null` disables clipping.
    #[serde(default = "default_clip")]
    pub max_grad_norm: Option<f64>,
    /// Steps between trace rows. The first and last step are always recorded.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl TrainingConfig {
    pub fn with_seed(seed: u64) -> Self {
        TrainingConfig {
            seed,
            learning_rate: default_lr(),
            momentum: default_momentum(),
            steps: default_steps(),
            batch_size: default_batch(),
            max_grad_norm: default_clip(),
            log_every: default_log_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("training.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("training.momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("training.log_every", "must be at least 1"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::config("training.max_grad_norm", "must be positive"));
            }
        }
        Ok(())
    }
}

fn default_snr_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0]
}
fn default_seeds() -> usize {
    1
}
fn default_mmd_samples() -> usize {
    200
}
fn default_sample_images() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_snr_grid")]
    pub snr_grid: Vec<f64>,
    /// Bandwidths evaluated by the bandwidth sweep; all of `0..=T` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidths: Option<Vec<usize>>,
    /// Independent repetitions; repetition `i` uses seed `training.seed ^ i`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Eval images used for the MMD statistic; 0 skips it.
    #[serde(default = "default_mmd_samples")]
    pub mmd_samples: usize,
    #[serde(default)]
    pub mmd_bandwidth: KernelBandwidth,
    /// Cap on eval images used for the other estimates; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_eval_images: Option<usize>,
    /// Columns of the `sample` grid.
    #[serde(default = "default_sample_images")]
    pub sample_images: usize,
    /// Upper bound on concurrent training runs; rayon's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            snr_grid: default_snr_grid(),
            bandwidths: None,
            seeds: default_seeds(),
            mmd_samples: default_mmd_samples(),
            mmd_bandwidth: KernelBandwidth::default(),
            max_eval_images: None,
            sample_images: default_sample_images(),
            workers: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_grid.is_empty() || self.snr_grid.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("eval.snr_grid", "must be non-empty with positive entries"));
        }
        if self.seeds == 0 {
            return Err(Error::config("eval.seeds", "must be at least 1"));
        }
        if self.mmd_samples == 1 {
            return Err(Error::config("eval.mmd_samples", "must be 0 or at least 2"));
        }
        if let KernelBandwidth::Fixed(s) = self.mmd_bandwidth {
            if !(s > 0.0) {
                return Err(Error::config("eval.mmd_bandwidth", "must be positive"));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::config("eval.workers", "must be at least 1"));
        }
        Ok(())
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub directory: PathBuf,
    /// Record measured run times; when off the column holds 0 so reruns are
    /// byte-identical.
    #[serde(default)]
    pub wall_clock: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_out(),
            wall_clock: false,
        }
    }
}

/// Everything one training run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    pub training: TrainingConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        validate_model(&self.model)?;
        self.objective.validate()?;
        self.training.validate()?;
        self.channel_spec()?;
        if matches!(self.channel, ChannelConfig::RelaxedBinary { .. }) {
            return Err(Error::config(
                "channel.kind",
                "relaxed_binary has no training objective; use gaussian or bandwidth_limited",
            ));
        }
        if self.objective.mode == TrainMode::Alv && !self.model.alv {
            return Err(Error::config("model.alv", "must be true for objective.mode = alv"));
        }
        Ok(())
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec> {
        let partition = self
            .model
            .partition()
            .map_err(|e| Error::config("model.slots", e.to_string()))?;
        self.channel.to_spec(&partition)
    }
}

fn validate_model(m: &ModelConfig) -> Result<()> {
    if m.latent_dim == 0 {
        return Err(Error::config("model.latent_dim", "must be at least 1"));
    }
    if m.slots == 0 || m.slots > m.latent_dim {
        return Err(Error::config("model.slots", "must lie in [1, latent_dim]"));
    }
    for (key, widths) in [
        ("model.hidden", &m.hidden),
        ("model.prior_hidden", &m.prior_hidden),
        ("model.alv_hidden", &m.alv_hidden),
        ("model.coder_hidden", &m.coder_hidden),
    ] {
        if widths.contains(&0) {
            return Err(Error::config(key, "layer widths must be positive"));
        }
    }
    if m.alv && m.alv_dim == 0 {
        return Err(Error::config("model.alv_dim", "must be at least 1"));
    }
    if !(m.obs_scale > 0.0 && m.obs_scale.is_finite()) {
        return Err(Error::config("model.obs_scale", "must be positive"));
    }
    Ok(())
}

/// The whole configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    pub training: TrainingConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            Error::Config {
                key,
                detail: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a file, then applies the output-directory override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::from_json(&text)?;
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.output.directory = PathBuf::from(dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.eval.validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dataset: self.dataset.clone(),
            model: self.model.clone(),
            channel: self.channel.clone(),
            objective: self.objective.clone(),
            training: self.training.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
