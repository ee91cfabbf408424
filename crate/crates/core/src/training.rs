//! Mini-batch SGD over the configured objective.

use crate::autodiff::{finite_difference_check, GradCheckOptions, GradCheckReport, Sgd, Tape};
use crate::channels::{BandwidthLimitedSpec, ChannelSpec, GaussianChannelSpec, Marginalization};
use crate::config::{TrainConfig, TrainMode};
use crate::data::{sample_batch, Dataset};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::objectives::{
    alv_loss, channel_ae_loss, joint_loss, source_vae_loss, Loss, LossBreakdown, PosteriorMode,
};
use crate::scalar::Scalar;
use crate::{seeded_rng, SimRng};

/// Separates the batch / noise stream from the initialization stream.
const TRAIN_STREAM: u64 = 0x7472_6169_6e00;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Joint,
    Alv,
    SourceVae,
    ChannelCoder,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Joint => "joint",
            Stage::Alv => "alv",
            Stage::SourceVae => "source_vae",
            Stage::ChannelCoder => "channel_coder",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub stage: Stage,
    pub step: usize,
    pub breakdown: LossBreakdown<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S: Scalar> {
    pub bundle: ModelBundle<S>,
    pub trace: Vec<TraceRow>,
}

/// Freshly initialized networks for the configured mode.
pub fn build_bundle<S: Scalar>(config: &TrainConfig, x_dim: usize) -> Result<ModelBundle<S>> {
    let seed = config.training.seed;
    let bundle = match config.objective.mode {
        TrainMode::Separate => ModelBundle::separate(&config.model, x_dim, seed)?,
        TrainMode::Joint | TrainMode::Alv => ModelBundle::joint(&config.model, x_dim, seed)?,
    };
    if config.objective.posterior == PosteriorMode::InferenceNetwork && config.objective.mode != TrainMode::Separate {
        return bundle.with_inference_network();
    }
    Ok(bundle)
}

/// Loads the configured dataset and trains on its train split.
pub fn train<S: Scalar>(config: &TrainConfig) -> Result<TrainOutcome<S>> {
    let (train_split, _) = config.dataset.load_split()?;
    train_on(config, &train_split)
}

/// Trains on `data`; the dataset section of `config` is ignored.
///
/// Separate mode runs the source VAE for `steps` steps, then the channel-coder
/// pair for `steps` steps with a fresh optimizer.
pub fn train_on<S: Scalar>(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome<S>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut bundle = build_bundle::<S>(config, data.dim())?;
    let channel = config.channel_spec()?;
    let settings = config.objective.settings();
    let t = &config.training;
    let mut rng = seeded_rng(t.seed ^ TRAIN_STREAM);
    let mut trace = Vec::new();

    let batch = |rng: &mut SimRng| data.batch::<S>(&sample_batch(data.len(), t.batch_size, rng));
    match config.objective.mode {
        TrainMode::Joint | TrainMode::Alv => {
            let stage = if config.objective.mode == TrainMode::Alv { Stage::Alv } else { Stage::Joint };
            run_stage(&mut bundle, config, stage, &mut rng, &mut trace, |tape, b, rng| {
                let x = tape.constant(batch(rng))?;
                match stage {
                    Stage::Alv => alv_loss(tape, b, x, &channel, &settings, rng),
                    _ => joint_loss(tape, b, x, &channel, &settings, rng),
                }
            })?;
        }
        TrainMode::Separate => {
            run_stage(&mut bundle, config, Stage::SourceVae, &mut rng, &mut trace, |tape, b, rng| {
                let x = tape.constant(batch(rng))?;
                source_vae_loss(tape, b, x, &settings, rng)
            })?;
            run_stage(&mut bundle, config, Stage::ChannelCoder, &mut rng, &mut trace, |tape, b, rng| {
                channel_ae_loss(tape, b, t.batch_size, &channel, rng)
            })?;
        }
    }
    Ok(TrainOutcome { bundle, trace })
}

fn diverged(step: usize, last: &Option<LossBreakdown<f64>>) -> Error {
    Error::Diverged {
        step,
        last_total: last.as_ref().map(|b| b.total),
        last: last.clone().map(Box::new),
    }
}

fn run_stage<S, F>(
    bundle: &mut ModelBundle<S>,
    config: &TrainConfig,
    stage: Stage,
    rng: &mut SimRng,
    trace: &mut Vec<TraceRow>,
    mut loss_fn: F,
) -> Result<()>
where
    S: Scalar,
    F: FnMut(&mut Tape<'_, S>, &ModelBundle<S>, &mut SimRng) -> Result<Loss<S>>,
{
    let t = &config.training;
    let mut opt = Sgd::new(S::lit(t.learning_rate), S::lit(t.momentum))?.with_max_grad_norm(t.max_grad_norm.map(S::lit));
    let mut last: Option<LossBreakdown<f64>> = None;
    for step in 0..t.steps {
        let (grads, breakdown) = {
            let mut tape = Tape::new(&bundle.store);
            let loss = match loss_fn(&mut tape, bundle, rng) {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => return Err(diverged(step, &last)),
                Err(e) => return Err(e),
            };
            if !loss.breakdown.is_finite() {
                return Err(diverged(step, &last));
            }
            let grads = match tape.backward(loss.total) {
                Ok(g) => g.into_params(),
                Err(Error::NonFinite { .. }) => return Err(diverged(step, &last)),
                Err(e) => return Err(e),
            };
            (grads, loss.breakdown.to_f64())
        };
        opt.step(&mut bundle.store, &grads)?;
        if step % t.log_every == 0 || step + 1 == t.steps {
            trace.push(TraceRow {
                stage,
                step,
                breakdown: breakdown.clone(),
            });
        }
        last = Some(breakdown);
    }
    Ok(())
}

/// Gradient check of every objective on the first few images of `data`,
/// using the configured architecture and objective settings: the source VAE
/// and channel coder of the separate system, the joint objective through the
/// configured channel and through the bandwidth-limited channel summed
/// exactly over `B`, and the auxiliary-latent objective.
pub fn check_gradients(
    config: &TrainConfig,
    data: &Dataset,
    images: usize,
    options: &GradCheckOptions,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    config.validate()?;
    let n = images.min(data.len());
    if n == 0 {
        return Err(Error::InvalidArgument("gradient check needs at least one image".into()));
    }
    let x = data.batch::<f64>(&(0..n).collect::<Vec<_>>());
    let settings = config.objective.settings();
    let seed = config.training.seed;
    let channel = config.channel_spec()?;
    let snr = channel.snr().unwrap_or(1.0);
    let partition = config.model.partition()?;
    let full_sum = ChannelSpec::BandwidthLimited(BandwidthLimitedSpec::uniform_training(
        partition,
        GaussianChannelSpec::new(snr)?,
        Marginalization::FullSum,
    )?);

    let mut plain = config.model.clone();
    plain.alv = false;
    let mut aux = config.model.clone();
    aux.alv = true;
    let joint = ModelBundle::<f64>::joint(&plain, data.dim(), seed)?;
    let alv = ModelBundle::<f64>::joint(&aux, data.dim(), seed)?;
    let separate = ModelBundle::<f64>::separate(&config.model, data.dim(), seed)?;

    let run = |bundle: &ModelBundle<f64>, f: &dyn Fn(&mut Tape<'_, f64>, &ModelBundle<f64>, &mut SimRng) -> Result<Loss<f64>>| {
        finite_difference_check(&bundle.store, options, |tape, rng| {
            Ok(f(tape, bundle, rng)?.total)
        })
    };
    let with_x = |tape: &mut Tape<'_, f64>| tape.constant(x.clone());
    Ok(vec![
        (
            "source_vae",
            run(&separate, &|t, b, r| {
                let xv = with_x(t)?;
                source_vae_loss(t, b, xv, &settings, r)
            })?,
        ),
        ("channel_coder", run(&separate, &|t, b, r| channel_ae_loss(t, b, n, &channel, r))?),
        (
            "joint",
            run(&joint, &|t, b, r| {
                let xv = with_x(t)?;
                joint_loss(t, b, xv, &channel, &settings, r)
            })?,
        ),
        (
            "joint_full_sum",
            run(&joint, &|t, b, r| {
                let xv = with_x(t)?;
                joint_loss(t, b, xv, &full_sum, &settings, r)
            })?,
        ),
        (
            "alv",
            run(&alv, &|t, b, r| {
                let xv = with_x(t)?;
                alv_loss(t, b, xv, &full_sum, &settings, r)
            })?,
        ),
    ])
}
