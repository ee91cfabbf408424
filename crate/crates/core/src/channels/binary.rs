use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::distributions::{binary_concrete_log_density, BinaryConcrete};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Inputs closer than this to 0.5 are pushed away before transmission.
pub const SINGULAR_CLAMP: f64 = 1e-6;

/// Relaxed binary symmetric channel: a bit survives with probability `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxedBinarySpec {
    keep_prob: f64,
    noise_temperature: f64,
    input_temperature: f64,
}

impl RelaxedBinarySpec {
    pub fn new(keep_prob: f64, noise_temperature: f64, input_temperature: f64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep probability must lie in (0, 1), got {keep_prob}"
            )));
        }
        if !(noise_temperature > 0.0 && input_temperature > 0.0) {
            return Err(Error::InvalidArgument(
                "relaxed binary temperatures must be positive".into(),
            ));
        }
        Ok(RelaxedBinarySpec {
            keep_prob,
            noise_temperature,
            input_temperature,
        })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn noise_temperature(&self) -> f64 {
        self.noise_temperature
    }

    pub fn input_temperature(&self) -> f64 {
        self.input_temperature
    }

    /// `log(p / (1 − p))`, the noise location.
    pub fn noise_log_alpha(&self) -> f64 {
        (self.keep_prob / (1.0 - self.keep_prob)).ln()
    }

    /// Relaxed input bits `σ((L + log α) / T_y)` from encoder logits.
    pub fn relax_inputs<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        log_alpha: Var,
        rng: &mut R,
    ) -> Result<Var> {
        let bc = BinaryConcrete::new(log_alpha, S::lit(self.input_temperature))?;
        Ok(bc.sample(tape, rng)?.1)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RelaxedBinaryOutput {
    pub z: Var,
    pub w: Var,
    /// Inputs that had to be moved away from 0.5.
    pub clamped: usize,
}

/// `z = (2w − 1) / (2(2y − 1)) + ½` for a given noise sample `w`.
pub fn relaxed_binary_transmit_with_noise<S: Scalar>(
    tape: &mut Tape<'_, S>,
    y: Var,
    w: Var,
) -> Result<RelaxedBinaryOutput> {
    let (yc, clamped) = tape.clamp_away(y, S::lit(0.5), S::lit(SINGULAR_CLAMP))?;
    let num = tape.scale(w, S::lit(2.0))?;
    let num = tape.shift(num, -S::one())?;
    let den = tape.scale(yc, S::lit(4.0))?;
    let den = tape.shift(den, S::lit(-2.0))?;
    let q = tape.div(num, den)?;
    let z = tape.shift(q, S::lit(0.5))?;
    Ok(RelaxedBinaryOutput { z, w, clamped })
}

pub fn relaxed_binary_transmit<S: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<'_, S>,
    y: Var,
    spec: &RelaxedBinarySpec,
    rng: &mut R,
) -> Result<RelaxedBinaryOutput> {
    let shape = tape.shape(y).to_vec();
    let la = tape.constant(crate::autodiff::Tensor::full(&shape, S::lit(spec.noise_log_alpha())))?;
    let bc = BinaryConcrete::new(la, S::lit(spec.noise_temperature))?;
    let (_, w) = bc.sample(tape, rng)?;
    relaxed_binary_transmit_with_noise(tape, y, w)
}

/// The noise value `w = (2z − 1)(2y − 1)/2 + ½` that maps `y` to `z`.
pub fn noise_argument<S: Scalar>(z: S, y: S) -> Result<S> {
    let two = S::lit(2.0);
    let w = (two * z - S::one()) * (two * y - S::one()) / two + S::lit(0.5);
    if !(w > S::zero() && w < S::one()) {
        return Err(Error::Domain {
            op: "relaxed_binary_density",
            detail: format!("noise argument {w} outside (0, 1) for z={z}, y={y}"),
        });
    }
    Ok(w)
}

/// Noise log-density at the transformed argument, evaluated in pre-sigmoid space.
pub fn relaxed_binary_log_density<S: Scalar>(z: S, y: S, spec: &RelaxedBinarySpec) -> Result<S> {
    let w = noise_argument(z, y)?;
    let logit = w.ln() - (S::one() - w).ln();
    Ok(binary_concrete_log_density(
        logit,
        S::lit(spec.noise_log_alpha()),
        S::lit(spec.noise_temperature),
    ))
}

/// Log-density of the output `z` itself: the pre-sigmoid density plus the
/// Jacobians of `w ↦ logit w` and `z ↦ w`.
pub fn relaxed_binary_log_density_z<S: Scalar>(z: S, y: S, spec: &RelaxedBinarySpec) -> Result<S> {
    let w = noise_argument(z, y)?;
    let pre = relaxed_binary_log_density(z, y, spec)?;
    let slope = (S::lit(2.0) * y - S::one()).abs();
    Ok(pre - w.ln() - (S::one() - w).ln() + slope.ln())
}

/// Signal-to-noise ratio of a binary channel with keep-probability `p` and
/// input bit probability `p_y`:
/// `(2 p p_y + 0.5 − p − p_y) / (−2 p_y p − 0.5 − p − p_y)`.
///
/// Note this also vanishes for a noiseless channel (`p = 1`, `p_y = 0.5`), so
/// it does not order channels by quality.
pub fn binary_snr(p: f64, p_y: f64) -> f64 {
    // numerator factored as (2p − 1)(p_y − ½) so that p = ½ gives exactly 0
    (2.0 * p - 1.0) * (p_y - 0.5) / (-2.0 * p_y * p - 0.5 - p - p_y)
}
