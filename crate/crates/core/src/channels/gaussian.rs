use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::distributions::half_log_two_pi;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Additive Gaussian channel holding the signal-to-noise ratio `s` fixed:
/// noise on coordinate `i` has standard deviation `|μ_i| / s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianChannelSpec {
    snr: f64,
}

impl GaussianChannelSpec {
    pub fn new(snr: f64) -> Result<Self> {
        if !(snr > 0.0 && snr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "channel snr must be positive and finite, got {snr}"
            )));
        }
        Ok(GaussianChannelSpec { snr })
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn capacity_bits(&self) -> f64 {
        gaussian_capacity(self.snr)
    }
}

/// `½ log₂(1 + s)` bits per transmission.
pub fn gaussian_capacity<S: Scalar>(s: S) -> S {
    S::lit(0.5) * s.ln_1p() / S::LN_2()
}

/// `z = y_sample + (|y_mean| / s) · w` for caller-supplied standard normal `w`.
pub fn gaussian_transmit_with_noise<S: Scalar>(
    tape: &mut Tape<'_, S>,
    y_sample: Var,
    y_mean: Var,
    spec: &GaussianChannelSpec,
    w: Var,
) -> Result<Var> {
    if tape.shape(y_sample) != tape.shape(y_mean) {
        return Err(Error::shape(
            "gaussian_transmit",
            tape.shape(y_sample),
            tape.shape(y_mean),
        ));
    }
    let scale = tape.abs(y_mean)?;
    let scale = tape.scale(scale, S::lit(1.0 / spec.snr))?;
    let noise = tape.mul(scale, w)?;
    tape.add(y_sample, noise)
}

pub fn gaussian_transmit<S: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<'_, S>,
    y_sample: Var,
    y_mean: Var,
    spec: &GaussianChannelSpec,
    rng: &mut R,
) -> Result<Var> {
    let shape = tape.shape(y_sample).to_vec();
    let w = tape.constant(Tensor::randn(&shape, S::one(), rng))?;
    gaussian_transmit_with_noise(tape, y_sample, y_mean, spec, w)
}

/// Channel log-density `log C(z | y)` summed over the last axis.
pub fn gaussian_channel_log_density<S: Scalar>(
    tape: &mut Tape<'_, S>,
    z: Var,
    y_sample: Var,
    y_mean: Var,
    spec: &GaussianChannelSpec,
) -> Result<Var> {
    let std = tape.abs(y_mean)?;
    let std = tape.scale(std, S::lit(1.0 / spec.snr))?;
    let d = tape.sub(z, y_sample)?;
    let r = tape.div(d, std)?;
    let r2 = tape.square(r)?;
    let half = tape.scale(r2, S::lit(0.5))?;
    let log_std = tape.log(std)?;
    let nll = tape.add(half, log_std)?;
    let nll = tape.shift(nll, half_log_two_pi())?;
    let per_row = tape.sum_last(nll)?;
    tape.neg(per_row)
}
