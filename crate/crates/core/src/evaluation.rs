//! End-to-end evaluation of trained systems on held-out data.

use rand::{Rng, SeedableRng};

use crate::autodiff::{Tape, Tensor};
use crate::channels::{transmit, ChannelSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mmd::{median_pairwise_distance, mmd_statistic, KernelBandwidth};
use crate::models::ModelBundle;
use crate::objectives::{rate_terms, transmission_terms, McEstimate};
use crate::scalar::Scalar;
use crate::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PipelineMode {
    /// `x → E → channel → D`.
    Joint,
    /// `x → E^S → E^C → channel → D^C → D^S`.
    Separate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Images compared by the MMD statistic; 0 skips it.
    pub mmd_samples: usize,
    /// `Auto` resolves to the median pairwise distance of the source images,
    /// so systems evaluated on the same data share one kernel.
    pub mmd_bandwidth: KernelBandwidth,
    pub max_images: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mmd_samples: 200,
            mmd_bandwidth: KernelBandwidth::Auto,
            max_images: None,
        }
    }
}

/// Distortion, the rate and transmission estimates in nats, and the MMD proxy.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineMetrics {
    /// Mean over images of the per-pixel squared error.
    pub distortion_l2: f64,
    pub rate: McEstimate,
    pub transmission: McEstimate,
    pub mmd: Option<f64>,
}

/// Reconstructions of every row of `x`. `channel = None` skips the channel
/// (and the channel coder in separate mode). An auxiliary-latent decoder gets
/// `v` from its prior, since the receiver never sees `x`.
pub fn reconstruct<S: Scalar>(
    bundle: &ModelBundle<S>,
    x: &Tensor<S>,
    channel: Option<&ChannelSpec>,
    mode: PipelineMode,
    rng: &mut SimRng,
) -> Result<Tensor<S>> {
    let mut tape = Tape::new(&bundle.store);
    let xv = tape.constant(x.clone())?;
    let q = bundle.encoder.encode(&mut tape, xv)?;
    let y = q.sample(&mut tape, rng)?;
    let z = match (mode, channel) {
        (_, None) => y,
        (PipelineMode::Joint, Some(ch)) => transmit(&mut tape, y, q.mean, ch, &bundle.prior, rng)?.z,
        (PipelineMode::Separate, Some(ch)) => {
            let coder = bundle
                .coder
                .as_ref()
                .ok_or(Error::MissingComponent("channel coder pair"))?;
            coder.channel_code(&mut tape, y, ch, &bundle.prior, rng)?
        }
    };
    let v = match &bundle.alv {
        Some(a) => {
            let mut inner = SimRng::seed_from_u64(rng.random());
            Some(a.prior_sample(&mut tape, x.rows(), &mut inner)?)
        }
        None => None,
    };
    let x_hat = bundle.decoder.decode(&mut tape, z, v)?;
    Ok(tape.tensor(x_hat))
}

/// Mean over images of the per-pixel squared error.
pub fn mean_squared_error<S: Scalar>(x: &Tensor<S>, x_hat: &Tensor<S>) -> f64 {
    let n = x.numel().max(1) as f64;
    x.data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| (a - b).as_f64().powi(2))
        .sum::<f64>()
        / n
}

/// Runs `data` through the pipeline once and reports its metrics.
pub fn evaluate_pipeline<S: Scalar>(
    bundle: &ModelBundle<S>,
    channel: &ChannelSpec,
    data: &Dataset,
    mode: PipelineMode,
    options: &EvalOptions,
    rng: &mut SimRng,
) -> Result<PipelineMetrics> {
    if mode == PipelineMode::Separate && bundle.coder.is_none() {
        return Err(Error::MissingComponent("channel coder pair"));
    }
    if data.dim() != bundle.x_dim() {
        return Err(Error::InvalidArgument(format!(
            "images have {} pixels, the model expects {}",
            data.dim(),
            bundle.x_dim()
        )));
    }
    let data = match options.max_images {
        Some(n) => data.head(n),
        None => data.clone(),
    };
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let x = data.to_tensor::<S>();
    let x_hat = reconstruct(bundle, &x, Some(channel), mode, rng)?;
    let distortion_l2 = mean_squared_error(&x, &x_hat);
    let (rate, transmission) = estimates(bundle, &x, channel, mode, rng)?;
    let mmd = if options.mmd_samples >= 2 && data.len() >= 2 {
        let n = options.mmd_samples.min(data.len());
        let d = data.dim();
        let src: Vec<&[f64]> = data.iter().take(n).collect();
        let rec: Vec<Vec<f64>> = x_hat.data()[..n * d]
            .chunks_exact(d)
            .map(|r| r.iter().map(|v| v.as_f64()).collect())
            .collect();
        let rec: Vec<&[f64]> = rec.iter().map(Vec::as_slice).collect();
        let bw = match options.mmd_bandwidth {
            KernelBandwidth::Auto => KernelBandwidth::Fixed(median_pairwise_distance(&src)),
            fixed => fixed,
        };
        Some(mmd_statistic(&rec, &src, bw)?)
    } else {
        None
    };
    Ok(PipelineMetrics {
        distortion_l2,
        rate,
        transmission,
        mmd,
    })
}

/// Rate against the model prior and transmission of the actual channel input.
fn estimates<S: Scalar>(
    bundle: &ModelBundle<S>,
    x: &Tensor<S>,
    channel: &ChannelSpec,
    mode: PipelineMode,
    rng: &mut SimRng,
) -> Result<(McEstimate, McEstimate)> {
    let mut tape = Tape::new(&bundle.store);
    let xv = tape.constant(x.clone())?;
    let q = bundle.encoder.encode(&mut tape, xv)?;
    let y = q.sample(&mut tape, rng)?;
    let rate = rate_terms(&mut tape, &q, y, &bundle.prior)?;
    if matches!(channel, ChannelSpec::RelaxedBinary(_)) {
        return Ok((McEstimate::from_samples(&rate), McEstimate::from_samples::<f64>(&[])));
    }
    let (ys, ym) = match mode {
        PipelineMode::Joint => (y, q.mean),
        PipelineMode::Separate => {
            let c = bundle
                .coder
                .as_ref()
                .ok_or(Error::MissingComponent("channel coder pair"))?
                .encode(&mut tape, y)?;
            (c, c)
        }
    };
    let out = transmit(&mut tape, ys, ym, channel, &bundle.prior, rng)?;
    let trans = transmission_terms(&mut tape, out.z, ys, ym, channel, &bundle.prior)?;
    Ok((McEstimate::from_samples(&rate), McEstimate::from_samples(&trans)))
}
