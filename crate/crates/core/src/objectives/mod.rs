//! Training objectives and the distortion / rate / transmission estimators.

pub mod estimators;
pub mod losses;

use serde::{Deserialize, Serialize};

pub use estimators::{rate_estimators, rate_terms, transmission_terms, McEstimate, RateEstimates};
pub use losses::{alv_loss, channel_ae_loss, joint_loss, source_vae_loss, Loss};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which rate-like term β multiplies in the joint objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaTarget {
    /// `D + β·rate + posterior_kl`: β weights the prior-matching KL.
    #[default]
    Rate,
    /// `D + rate + β·posterior_kl`: β weights the posterior KL.
    PosteriorKl,
}

/// Variational posterior over `(y, z)` in the joint objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMode {
    /// Encoder times channel; the KL term vanishes pointwise.
    #[default]
    EncoderChannel,
    /// A separate inference network for `y`, times the channel; KL by one sample.
    InferenceNetwork,
}

fn default_beta() -> f64 {
    1.0
}
fn default_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSettings {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub beta_target: BetaTarget,
    /// Scales `KL(E(Y|X) ‖ prior)` before it enters the rate term.
    #[serde(default = "default_weight")]
    pub prior_matching_weight: f64,
    #[serde(default)]
    pub posterior: PosteriorMode,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        ObjectiveSettings {
            beta: default_beta(),
            beta_target: BetaTarget::default(),
            prior_matching_weight: default_weight(),
            posterior: PosteriorMode::default(),
        }
    }
}

impl ObjectiveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.prior_matching_weight >= 0.0 && self.prior_matching_weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "prior matching weight must be non-negative, got {}",
                self.prior_matching_weight
            )));
        }
        Ok(())
    }
}

/// Per-batch loss terms, all in nats per example.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown<S> {
    /// Expected negative log-likelihood of the source; includes the
    /// auxiliary-latent KL when that decoder is trained.
    pub distortion: S,
    pub rate: S,
    pub posterior_kl: S,
    pub alv_kl: Option<S>,
    pub prior_fit: Option<S>,
    pub beta: S,
    pub beta_target: BetaTarget,
    pub total: S,
}

impl<S: Scalar> LossBreakdown<S> {
    /// The total implied by the other fields, summed in the same order as the objective.
    pub fn expected_total(&self) -> S {
        let weighted = match self.beta_target {
            BetaTarget::Rate => self.distortion + self.beta * self.rate + self.posterior_kl,
            BetaTarget::PosteriorKl => self.distortion + self.rate + self.beta * self.posterior_kl,
        };
        weighted + self.prior_fit.unwrap_or_else(S::zero)
    }

    pub fn is_finite(&self) -> bool {
        [self.distortion, self.rate, self.posterior_kl, self.total]
            .into_iter()
            .chain(self.alv_kl)
            .chain(self.prior_fit)
            .all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> LossBreakdown<f64> {
        LossBreakdown {
            distortion: self.distortion.as_f64(),
            rate: self.rate.as_f64(),
            posterior_kl: self.posterior_kl.as_f64(),
            alv_kl: self.alv_kl.map(|v| v.as_f64()),
            prior_fit: self.prior_fit.map(|v| v.as_f64()),
            beta: self.beta.as_f64(),
            beta_target: self.beta_target,
            total: self.total.as_f64(),
        }
    }
}
