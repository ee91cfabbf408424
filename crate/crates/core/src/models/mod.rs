//! Encoders, decoders, priors, the auxiliary-latent decoder posterior and the
//! channel-coder pair, all backed by one namespaced [`ParameterStore`].

pub mod alv;
pub mod coder;
pub mod mlp;
pub mod nets;
pub mod prior;

use serde::{Deserialize, Serialize};

pub use alv::AlvComponents;
pub use coder::ChannelCoderPair;
pub use mlp::Mlp;
pub use nets::{squared_error, DecoderNet, EncoderNet};
pub use prior::{PriorKind, PriorModel};

use crate::autodiff::ParameterStore;
use crate::channels::BandwidthPartition;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeded_rng;

fn default_latent_dim() -> usize {
    20
}
fn default_slots() -> usize {
    5
}
fn default_hidden() -> Vec<usize> {
    vec![256, 256]
}
fn default_small_hidden() -> Vec<usize> {
    vec![64]
}
fn default_alv_dim() -> usize {
    4
}
fn default_obs_scale() -> f64 {
    1.0
}

/// Architecture hyperparameters. The source dimension comes from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Number of transmission slots the code is split into.
    #[serde(default = "default_slots")]
    pub slots: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub prior: PriorKind,
    #[serde(default = "default_small_hidden")]
    pub prior_hidden: Vec<usize>,
    #[serde(default)]
    pub alv: bool,
    #[serde(default = "default_alv_dim")]
    pub alv_dim: usize,
    /// Condition the auxiliary posterior on the code `y` as well as `x` and `z`.
    #[serde(default)]
    pub alv_use_y: bool,
    #[serde(default = "default_small_hidden")]
    pub alv_hidden: Vec<usize>,
    #[serde(default = "default_obs_scale")]
    pub obs_scale: f64,
    #[serde(default = "default_small_hidden")]
    pub coder_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: default_latent_dim(),
            slots: default_slots(),
            hidden: default_hidden(),
            prior: PriorKind::default(),
            prior_hidden: default_small_hidden(),
            alv: false,
            alv_dim: default_alv_dim(),
            alv_use_y: false,
            alv_hidden: default_small_hidden(),
            obs_scale: default_obs_scale(),
            coder_hidden: default_small_hidden(),
        }
    }
}

impl ModelConfig {
    pub fn partition(&self) -> Result<BandwidthPartition> {
        BandwidthPartition::equal(self.latent_dim, self.slots)
    }
}

/// All networks of one system plus the store holding their parameters.
///
/// Parameter names are prefixed `encoder.`, `decoder.`, `prior.`, `alv.`,
/// `coder.` and `inference.`.
#[derive(Clone, Debug)]
pub struct ModelBundle<S: Scalar> {
    pub store: ParameterStore<S>,
    pub encoder: EncoderNet,
    pub decoder: DecoderNet,
    pub prior: PriorModel,
    pub alv: Option<AlvComponents>,
    pub coder: Option<ChannelCoderPair>,
    /// Separate posterior network over the code, used only by the
    /// inference-network posterior mode of the joint objective.
    pub inference: Option<EncoderNet>,
    pub config: ModelConfig,
}

impl<S: Scalar> ModelBundle<S> {
    /// Joint system: encoder, decoder, configured prior, optional auxiliary latent.
    pub fn joint(config: &ModelConfig, x_dim: usize, seed: u64) -> Result<Self> {
        ModelBundle::build(config, x_dim, seed, false)
    }

    /// Separate system: source VAE with the standard prior and a channel-coder pair.
    pub fn separate(config: &ModelConfig, x_dim: usize, seed: u64) -> Result<Self> {
        let mut c = config.clone();
        c.prior = PriorKind::Standard;
        c.alv = false;
        ModelBundle::build(&c, x_dim, seed, true)
    }

    fn build(config: &ModelConfig, x_dim: usize, seed: u64, with_coder: bool) -> Result<Self> {
        if x_dim == 0 {
            return Err(Error::InvalidArgument("source dimension must be positive".into()));
        }
        let partition = config.partition()?;
        let aux = if config.alv { config.alv_dim } else { 0 };
        if config.alv && config.alv_dim == 0 {
            return Err(Error::InvalidArgument("auxiliary latent dimension must be positive".into()));
        }
        let encoder = EncoderNet::new("encoder", x_dim, &config.hidden, config.latent_dim)?;
        let mut dec_hidden = config.hidden.clone();
        dec_hidden.reverse();
        let decoder = DecoderNet::new(
            "decoder",
            config.latent_dim,
            aux,
            &dec_hidden,
            x_dim,
            config.obs_scale,
        )?;
        let prior = PriorModel::new(config.prior, "prior", partition, &config.prior_hidden)?;
        let alv = if config.alv {
            Some(AlvComponents::new(
                "alv",
                x_dim,
                config.latent_dim,
                config.alv_dim,
                &config.alv_hidden,
                config.alv_use_y,
            )?)
        } else {
            None
        };
        let coder = if with_coder {
            Some(ChannelCoderPair::new("coder", config.latent_dim, &config.coder_hidden)?)
        } else {
            None
        };

        let mut store = ParameterStore::new(seed);
        let mut rng = seeded_rng(seed);
        encoder.init(&mut store, &mut rng)?;
        decoder.init(&mut store, &mut rng)?;
        prior.init(&mut store, &mut rng)?;
        if let Some(a) = &alv {
            a.init(&mut store, &mut rng)?;
        }
        if let Some(c) = &coder {
            c.init(&mut store, &mut rng)?;
        }
        Ok(ModelBundle {
            store,
            encoder,
            decoder,
            prior,
            alv,
            coder,
            inference: None,
            config: config.clone(),
        })
    }

    /// Adds the `inference.` posterior network, initialized from its own stream.
    pub fn with_inference_network(mut self) -> Result<Self> {
        if self.inference.is_some() {
            return Ok(self);
        }
        let net = EncoderNet::new(
            "inference",
            self.x_dim(),
            &self.config.hidden,
            self.latent_dim(),
        )?;
        let mut rng = seeded_rng(self.store.seed() ^ 0x1f0e_u64);
        net.init(&mut self.store, &mut rng)?;
        self.inference = Some(net);
        Ok(self)
    }

    pub fn x_dim(&self) -> usize {
        self.encoder.x_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }
}
