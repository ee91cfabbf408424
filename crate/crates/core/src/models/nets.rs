use rand::Rng;

use super::mlp::Mlp;
use crate::autodiff::{ParameterStore, Tape, Var};
use crate::distributions::{half_log_two_pi, DiagonalGaussian};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Maps raw network outputs into `(LOG_STD_MIN, LOG_STD_MAX)`.
pub fn squash_log_std<S: Scalar>(tape: &mut Tape<'_, S>, raw: Var) -> Result<Var> {
    let mid = 0.5 * (LOG_STD_MIN + LOG_STD_MAX);
    let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
    let t = tape.tanh(raw)?;
    let t = tape.scale(t, S::lit(half))?;
    tape.shift(t, S::lit(mid))
}

/// Splits `[rows, 2d]` network output into a Gaussian with bounded scale.
pub fn gaussian_head<S: Scalar>(tape: &mut Tape<'_, S>, out: Var, d: usize) -> Result<DiagonalGaussian> {
    let mean = tape.slice(out, 0, d)?;
    let raw = tape.slice(out, d, 2 * d)?;
    let log_std = squash_log_std(tape, raw)?;
    Ok(DiagonalGaussian { mean, log_std })
}

/// Amortized encoder `x ↦ N(μ(x), diag σ(x)²)` over the latent code.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderNet {
    net: Mlp,
    latent_dim: usize,
}

impl EncoderNet {
    pub fn new(prefix: &str, x_dim: usize, hidden: &[usize], latent_dim: usize) -> Result<Self> {
        let mut dims = vec![x_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * latent_dim);
        Ok(EncoderNet {
            net: Mlp::new(prefix, dims)?,
            latent_dim,
        })
    }

    pub fn init<S: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<S>, rng: &mut R) -> Result<()> {
        self.net.init(store, rng)
    }

    pub fn x_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn encode<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<DiagonalGaussian> {
        let out = self.net.forward(tape, x)?;
        gaussian_head(tape, out, self.latent_dim)
    }
}

/// Decoder `z (, v) ↦ N(mean, σ_obs² I)` over the source.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderNet {
    net: Mlp,
    latent_dim: usize,
    aux_dim: usize,
    obs_scale: f64,
}

impl DecoderNet {
    pub fn new(
        prefix: &str,
        latent_dim: usize,
        aux_dim: usize,
        hidden: &[usize],
        x_dim: usize,
        obs_scale: f64,
    ) -> Result<Self> {
        if !(obs_scale > 0.0 && obs_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "observation scale must be positive, got {obs_scale}"
            )));
        }
        let mut dims = vec![latent_dim + aux_dim];
        dims.extend_from_slice(hidden);
        dims.push(x_dim);
        Ok(DecoderNet {
            net: Mlp::new(prefix, dims)?,
            latent_dim,
            aux_dim,
            obs_scale,
        })
    }

    pub fn init<S: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<S>, rng: &mut R) -> Result<()> {
        self.net.init(store, rng)
    }

    pub fn x_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_dim
    }

    pub fn obs_scale(&self) -> f64 {
        self.obs_scale
    }

    /// Mean reconstruction. `v` is required exactly when the decoder has auxiliary inputs.
    pub fn decode<S: Scalar>(&self, tape: &mut Tape<'_, S>, z: Var, v: Option<Var>) -> Result<Var> {
        let input = match (v, self.aux_dim) {
            (None, 0) => z,
            (Some(v), d) if d > 0 => tape.concat(&[z, v])?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "decoder expects {} auxiliary inputs",
                    self.aux_dim
                )))
            }
        };
        if tape.shape(z).get(1) != Some(&self.latent_dim) {
            return Err(Error::shape("decode", tape.shape(z), &[0, self.latent_dim]));
        }
        self.net.forward(tape, input)
    }

    /// Per-row `−log N(x; mean, σ_obs² I)`.
    pub fn nll<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var, mean: Var) -> Result<Var> {
        let sq = squared_error(tape, x, mean)?;
        let scaled = tape.scale(sq, S::lit(0.5 / (self.obs_scale * self.obs_scale)))?;
        let d = self.x_dim() as f64;
        let c = S::lit(d) * (S::lit(self.obs_scale.ln()) + half_log_two_pi());
        tape.shift(scaled, c)
    }
}

/// Per-row `‖x − x̂‖²`.
pub fn squared_error<S: Scalar>(tape: &mut Tape<'_, S>, x: Var, x_hat: Var) -> Result<Var> {
    if tape.shape(x) != tape.shape(x_hat) {
        return Err(Error::shape("squared_error", tape.shape(x), tape.shape(x_hat)));
    }
    let d = tape.sub(x, x_hat)?;
    let d2 = tape.square(d)?;
    tape.sum_last(d2)
}
