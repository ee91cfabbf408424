use rand::{Rng, SeedableRng};

use crate::autodiff::{Tape, Tensor, Var};
use crate::channels::{
    conditional_log_density, gaussian_channel_log_density, transmit, ChannelSpec,
};
use crate::distributions::DiagonalGaussian;
use crate::error::{Error, Result};
use crate::models::{ModelBundle, PriorModel};
use crate::scalar::Scalar;
use crate::SimRng;

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl McEstimate {
    pub fn from_samples<S: Scalar>(xs: &[S]) -> Self {
        let n = xs.len();
        if n == 0 {
            return McEstimate {
                mean: f64::NAN,
                std_err: f64::NAN,
                samples: 0,
            };
        }
        let mean = xs.iter().map(|x| x.as_f64()).sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            let var = xs.iter().map(|x| (x.as_f64() - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        McEstimate {
            mean,
            std_err,
            samples: n,
        }
    }

    /// Converts an estimate in nats to bits.
    pub fn to_bits(self) -> Self {
        let l = std::f64::consts::LN_2;
        McEstimate {
            mean: self.mean / l,
            std_err: self.std_err / l,
            samples: self.samples,
        }
    }
}

/// Per-row `log E(y|x) − log M(y)` with the prior as `M`, accumulated slot by slot.
pub fn rate_terms<S: Scalar>(
    tape: &mut Tape<'_, S>,
    q: &DiagonalGaussian,
    y: Var,
    prior: &PriorModel,
) -> Result<Vec<S>> {
    let partition = crate::channels::SlotPrior::<S>::partition(prior).clone();
    let conds = prior.conditionals(tape, y, false)?;
    let rows = tape.shape(y)[0];
    let mut acc = vec![S::zero(); rows];
    for (t, c) in conds.iter().enumerate() {
        let r = partition.slot_range(t);
        let ys = tape.slice(y, r.start, r.end)?;
        let qs = DiagonalGaussian {
            mean: tape.slice(q.mean, r.start, r.end)?,
            log_std: tape.slice(q.log_std, r.start, r.end)?,
        };
        let lq = qs.log_density(tape, ys)?;
        let lp = c.log_density(tape, ys)?;
        let diff = tape.sub(lq, lp)?;
        for (a, &d) in acc.iter_mut().zip(tape.value(diff)) {
            *a += d;
        }
    }
    Ok(acc)
}

/// Per-row `log C(z|y) − log N(z)` with the prior as `N`.
pub fn transmission_terms<S: Scalar>(
    tape: &mut Tape<'_, S>,
    z: Var,
    y_sample: Var,
    y_mean: Var,
    channel: &ChannelSpec,
    prior: &PriorModel,
) -> Result<Vec<S>> {
    let log_c: Vec<S> = match channel {
        ChannelSpec::Gaussian(g) => {
            let lc = gaussian_channel_log_density(tape, z, y_sample, y_mean, g)?;
            tape.value(lc).to_vec()
        }
        ChannelSpec::BandwidthLimited(b) => conditional_log_density(tape, z, y_sample, y_mean, b, prior)?,
        ChannelSpec::RelaxedBinary(_) => {
            return Err(Error::InvalidArgument(
                "transmission estimates need a Gaussian or bandwidth-limited channel".into(),
            ))
        }
    };
    let parts = prior.slot_log_densities_with(tape, z, false)?;
    let mut log_n = parts[0];
    for &p in &parts[1..] {
        log_n = tape.add(log_n, p)?;
    }
    Ok(log_c.iter().zip(tape.value(log_n)).map(|(&c, &n)| c - n).collect())
}

/// Distortion `D`, rate `R` and transmission `T` of a joint system, in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateEstimates {
    pub distortion: McEstimate,
    pub rate: McEstimate,
    pub transmission: McEstimate,
}

/// One encoder sample and one channel draw per row of `x`.
pub fn rate_estimators<S: Scalar>(
    bundle: &ModelBundle<S>,
    x: &Tensor<S>,
    channel: &ChannelSpec,
    rng: &mut SimRng,
) -> Result<RateEstimates> {
    let mut tape = Tape::new(&bundle.store);
    let xv = tape.constant(x.clone())?;
    let q = bundle.encoder.encode(&mut tape, xv)?;
    let y = q.sample(&mut tape, rng)?;
    let rate = rate_terms(&mut tape, &q, y, &bundle.prior)?;
    let out = transmit(&mut tape, y, q.mean, channel, &bundle.prior, rng)?;
    let trans = transmission_terms(&mut tape, out.z, y, q.mean, channel, &bundle.prior)?;
    let v = match &bundle.alv {
        Some(a) => {
            let mut inner = SimRng::seed_from_u64(rng.random());
            Some(a.prior_sample(&mut tape, x.rows(), &mut inner)?)
        }
        None => None,
    };
    let x_hat = bundle.decoder.decode(&mut tape, out.z, v)?;
    let nll = bundle.decoder.nll(&mut tape, xv, x_hat)?;
    Ok(RateEstimates {
        distortion: McEstimate::from_samples(tape.value(nll)),
        rate: McEstimate::from_samples(&rate),
        transmission: McEstimate::from_samples(&trans),
    })
}
