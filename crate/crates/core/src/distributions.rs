//! Reparameterized distributions: diagonal Gaussian and Binary Concrete.
//!
//! Tape-level types ([`DiagonalGaussian`], [`BinaryConcrete`]) produce
//! differentiable samples and densities; the free functions evaluate the same
//! densities on plain values.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::{softplus, Scalar};

/// Distance kept between a uniform draw and the ends of `(0, 1)`.
pub const UNIFORM_CLAMP: f64 = 1e-12;

pub fn half_log_two_pi<S: Scalar>() -> S {
    S::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

/// Log-density of `N(mean, std²)` at `x`.
pub fn normal_log_pdf<S: Scalar>(x: S, mean: S, std: S) -> S {
    let z = (x - mean) / std;
    -S::lit(0.5) * z * z - std.ln() - half_log_two_pi()
}

/// `KL(N(mq, sq²) || N(mp, sp²))` for one coordinate.
pub fn normal_kl<S: Scalar>(mq: S, sq: S, mp: S, sp: S) -> S {
    let d = mq - mp;
    (sp / sq).ln() + (sq * sq + d * d) / (S::lit(2.0) * sp * sp) - S::lit(0.5)
}

pub fn standard_normal_tensor<S: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    Tensor::randn(shape, S::one(), rng)
}

/// Diagonal Gaussian whose parameters live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DiagonalGaussian {
    pub mean: Var,
    pub log_std: Var,
}

impl DiagonalGaussian {
    pub fn new<S: Scalar>(tape: &Tape<'_, S>, mean: Var, log_std: Var) -> Result<Self> {
        if tape.shape(mean) != tape.shape(log_std) {
            return Err(crate::Error::shape(
                "diagonal_gaussian",
                tape.shape(mean),
                tape.shape(log_std),
            ));
        }
        Ok(DiagonalGaussian { mean, log_std })
    }

    /// Zero mean, unit scale, with the given shape.
    pub fn standard<S: Scalar>(tape: &mut Tape<'_, S>, shape: &[usize]) -> Result<Self> {
        let mean = tape.constant(Tensor::zeros(shape))?;
        let log_std = tape.constant(Tensor::zeros(shape))?;
        Ok(DiagonalGaussian { mean, log_std })
    }

    /// `mean + exp(log_std) · eps` for caller-supplied noise.
    pub fn sample_with_noise<S: Scalar>(&self, tape: &mut Tape<'_, S>, eps: Var) -> Result<Var> {
        let std = tape.exp(self.log_std)?;
        let scaled = tape.mul(std, eps)?;
        tape.add(self.mean, scaled)
    }

    pub fn sample<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        rng: &mut R,
    ) -> Result<Var> {
        let shape = tape.shape(self.mean).to_vec();
        let eps = tape.constant(standard_normal_tensor(&shape, rng))?;
        self.sample_with_noise(tape, eps)
    }

    /// Log-density summed over the last axis, one value per row.
    pub fn log_density<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let d = tape.sub(x, self.mean)?;
        let neg_log_std = tape.neg(self.log_std)?;
        let inv_std = tape.exp(neg_log_std)?;
        let z = tape.mul(d, inv_std)?;
        let z2 = tape.square(z)?;
        let half = tape.scale(z2, S::lit(0.5))?;
        let nll = tape.add(half, self.log_std)?;
        let nll = tape.shift(nll, half_log_two_pi())?;
        let per_row = tape.sum_last(nll)?;
        tape.neg(per_row)
    }

    /// Closed-form `KL(self || other)` summed over the last axis.
    pub fn kl<S: Scalar>(&self, tape: &mut Tape<'_, S>, other: &DiagonalGaussian) -> Result<Var> {
        // log σp − log σq + (σq² + (μq − μp)²) / (2σp²) − ½
        let log_ratio = tape.sub(other.log_std, self.log_std)?;
        let two_lq = tape.scale(self.log_std, S::lit(2.0))?;
        let var_q = tape.exp(two_lq)?;
        let d = tape.sub(self.mean, other.mean)?;
        let d2 = tape.square(d)?;
        let num = tape.add(var_q, d2)?;
        let neg_two_lp = tape.scale(other.log_std, S::lit(-2.0))?;
        let inv_var_p = tape.exp(neg_two_lp)?;
        let frac = tape.mul(num, inv_var_p)?;
        let frac = tape.scale(frac, S::lit(0.5))?;
        let per = tape.add(log_ratio, frac)?;
        let per = tape.shift(per, S::lit(-0.5))?;
        tape.sum_last(per)
    }

    /// `KL(self || N(0, I))` summed over the last axis.
    pub fn kl_to_standard<S: Scalar>(&self, tape: &mut Tape<'_, S>) -> Result<Var> {
        // ½(σ² + μ² − 1) − log σ
        let two_l = tape.scale(self.log_std, S::lit(2.0))?;
        let var = tape.exp(two_l)?;
        let m2 = tape.square(self.mean)?;
        let s = tape.add(var, m2)?;
        let s = tape.shift(s, -S::one())?;
        let s = tape.scale(s, S::lit(0.5))?;
        let per = tape.sub(s, self.log_std)?;
        tape.sum_last(per)
    }
}

/// Logistic variate from a uniform draw, `log u − log(1 − u)`, with `u`
/// clamped into `(UNIFORM_CLAMP, 1 − UNIFORM_CLAMP)`.
pub fn logistic_from_uniform<S: Scalar>(u: S) -> S {
    let eps = S::lit(UNIFORM_CLAMP);
    let u = u.max(eps).min(S::one() - eps);
    u.ln() - (S::one() - u).ln()
}

pub fn logistic_sample<S: Scalar, R: Rng + ?Sized>(rng: &mut R) -> S {
    logistic_from_uniform(S::lit(rng.random::<f64>()))
}

pub fn logistic_tensor<S: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| logistic_sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Relaxed Bernoulli with location `exp(log_alpha)` and temperature `temperature`.
///
/// Sampling draws `y = (L + log α) / T` with logistic `L` and returns `x = σ(y)`.
/// The log-density [`binary_concrete_log_density`] is exactly the
/// change-of-variables density of that `y`.
#[derive(Clone, Copy, Debug)]
pub struct BinaryConcrete<S> {
    pub log_alpha: Var,
    pub temperature: S,
}

impl<S: Scalar> BinaryConcrete<S> {
    pub fn new(log_alpha: Var, temperature: S) -> Result<Self> {
        if !(temperature > S::zero()) {
            return Err(crate::Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(BinaryConcrete {
            log_alpha,
            temperature,
        })
    }

    /// Returns `(y_pre, x_post)` for caller-supplied logistic noise.
    pub fn sample_with_noise(&self, tape: &mut Tape<'_, S>, logistic: Var) -> Result<(Var, Var)> {
        let shifted = tape.add(logistic, self.log_alpha)?;
        let y = tape.scale(shifted, S::one() / self.temperature)?;
        let x = tape.sigmoid(y)?;
        Ok((y, x))
    }

    pub fn sample<R: Rng + ?Sized>(&self, tape: &mut Tape<'_, S>, rng: &mut R) -> Result<(Var, Var)> {
        let shape = tape.shape(self.log_alpha).to_vec();
        let l = tape.constant(logistic_tensor(&shape, rng))?;
        self.sample_with_noise(tape, l)
    }
}

/// Pre-sigmoid log-density
/// `log T − T y + log α − 2 log(1 + exp(−T y + log α))`.
pub fn binary_concrete_log_density<S: Scalar>(y: S, log_alpha: S, temperature: S) -> S {
    let a = -temperature * y + log_alpha;
    temperature.ln() + a - S::lit(2.0) * softplus(a)
}

/// Post-sigmoid log-density with `x` clipped into `[clip, 1 − clip]`.
///
/// Saturated samples make this lose precision; prefer the pre-sigmoid form.
pub fn binary_concrete_log_density_post<S: Scalar>(x: S, log_alpha: S, temperature: S, clip: S) -> S {
    let x = x.max(clip).min(S::one() - clip);
    let y = x.ln() - (S::one() - x).ln();
    binary_concrete_log_density(y, log_alpha, temperature) - x.ln() - (S::one() - x).ln()
}
