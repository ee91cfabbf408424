use rand::{Rng, SeedableRng};

use super::{BetaTarget, LossBreakdown, ObjectiveSettings, PosteriorMode};
use crate::autodiff::{Tape, Var};
use crate::channels::{
    gaussian_transmit, marginalize_bandwidth, ChannelOutput, ChannelSpec, Marginalization,
};
use crate::distributions::{standard_normal_tensor, DiagonalGaussian};
use crate::error::{Error, Result};
use crate::models::{ModelBundle, PriorModel};
use crate::scalar::Scalar;
use crate::SimRng;

/// A differentiable objective value and its reported terms.
#[derive(Clone, Debug)]
pub struct Loss<S> {
    pub total: Var,
    pub breakdown: LossBreakdown<S>,
}

fn combine<S: Scalar>(
    tape: &mut Tape<'_, S>,
    distortion: Var,
    rate: Var,
    posterior_kl: Var,
    prior_fit: Option<Var>,
    alv_kl: Option<S>,
    settings: &ObjectiveSettings,
) -> Result<Loss<S>> {
    let beta = S::lit(settings.beta);
    let weighted = match settings.beta_target {
        BetaTarget::Rate => {
            let br = tape.scale(rate, beta)?;
            let t = tape.add(distortion, br)?;
            tape.add(t, posterior_kl)?
        }
        BetaTarget::PosteriorKl => {
            let bk = tape.scale(posterior_kl, beta)?;
            let t = tape.add(distortion, rate)?;
            tape.add(t, bk)?
        }
    };
    let total = match prior_fit {
        Some(p) => tape.add(weighted, p)?,
        None => weighted,
    };
    let breakdown = LossBreakdown {
        distortion: tape.item(distortion),
        rate: tape.item(rate),
        posterior_kl: tape.item(posterior_kl),
        alv_kl,
        prior_fit: prior_fit.map(|p| tape.item(p)),
        beta,
        beta_target: settings.beta_target,
        total: tape.item(total),
    };
    Ok(Loss { total, breakdown })
}

/// Source VAE: `D + β·KL(E(Y′|X) ‖ N(0, I))` with one reparameterized sample.
pub fn source_vae_loss<S: Scalar>(
    tape: &mut Tape<'_, S>,
    bundle: &ModelBundle<S>,
    x: Var,
    settings: &ObjectiveSettings,
    rng: &mut SimRng,
) -> Result<Loss<S>> {
    settings.validate()?;
    let q = bundle.encoder.encode(tape, x)?;
    let y = q.sample(tape, rng)?;
    let x_hat = bundle.decoder.decode(tape, y, None)?;
    let nll = bundle.decoder.nll(tape, x, x_hat)?;
    let distortion = tape.mean(nll)?;
    let kl = q.kl_to_standard(tape)?;
    let rate = tape.mean(kl)?;
    let zero = tape.scalar(S::zero())?;
    let plain = ObjectiveSettings {
        beta_target: BetaTarget::Rate,
        ..settings.clone()
    };
    combine(tape, distortion, rate, zero, None, None, &plain)
}

/// Channel autoencoder of the separate system: `‖y′ − D^C(C(E^C(y′)))‖²`
/// averaged over `rows` draws `y′ ~ N(0, I)`.
pub fn channel_ae_loss<S: Scalar>(
    tape: &mut Tape<'_, S>,
    bundle: &ModelBundle<S>,
    rows: usize,
    channel: &ChannelSpec,
    rng: &mut SimRng,
) -> Result<Loss<S>> {
    let coder = bundle
        .coder
        .as_ref()
        .ok_or(Error::MissingComponent("channel coder pair"))?;
    let y_prime = tape.constant(standard_normal_tensor(&[rows, coder.dim()], rng))?;
    let recon = coder.channel_code(tape, y_prime, channel, &bundle.prior, rng)?;
    let err = crate::models::squared_error(tape, y_prime, recon)?;
    let distortion = tape.mean(err)?;
    let zero = tape.scalar(S::zero())?;
    let settings = ObjectiveSettings {
        beta: 0.0,
        ..ObjectiveSettings::default()
    };
    combine(tape, distortion, zero, zero, None, None, &settings)
}

/// Joint objective: reconstruction through encoder, channel and decoder plus
/// the configured rate terms. An auxiliary-latent decoder is fed `v ~ P(V)`.
pub fn joint_loss<S: Scalar>(
    tape: &mut Tape<'_, S>,
    bundle: &ModelBundle<S>,
    x: Var,
    channel: &ChannelSpec,
    settings: &ObjectiveSettings,
    rng: &mut SimRng,
) -> Result<Loss<S>> {
    joint_objective(tape, bundle, x, channel, settings, false, rng)
}

/// Joint objective with the distortion term replaced by the auxiliary-latent
/// bound `E_Q[−log D(x | z, v)] + KL(Q(V | ·) ‖ P(V))`.
pub fn alv_loss<S: Scalar>(
    tape: &mut Tape<'_, S>,
    bundle: &ModelBundle<S>,
    x: Var,
    channel: &ChannelSpec,
    settings: &ObjectiveSettings,
    rng: &mut SimRng,
) -> Result<Loss<S>> {
    if bundle.alv.is_none() {
        return Err(Error::MissingComponent("auxiliary latent components"));
    }
    joint_objective(tape, bundle, x, channel, settings, true, rng)
}

/// Mean over rows of the per-row reconstruction term for one channel output.
/// Returns the term and, when the auxiliary posterior is used, its mean KL.
pub(crate) fn reconstruction_term<S: Scalar>(
    tape: &mut Tape<'_, S>,
    bundle: &ModelBundle<S>,
    x: Var,
    y: Var,
    out: &ChannelOutput,
    use_alv: bool,
    rng: &mut SimRng,
) -> Result<(Var, Option<Var>)> {
    let rows = tape.shape(x)[0];
    let (v, kl) = match &bundle.alv {
        None => (None, None),
        Some(alv) if use_alv => {
            let y_in = alv.uses_y().then_some(y);
            let (v, kl) = alv.infer(tape, x, y_in, out.z, rng)?;
            (Some(v), Some(tape.mean(kl)?))
        }
        Some(alv) => (Some(alv.prior_sample(tape, rows, rng)?), None),
    };
    let x_hat = bundle.decoder.decode(tape, out.z, v)?;
    let nll = bundle.decoder.nll(tape, x, x_hat)?;
    let mut term = tape.mean(nll)?;
    if let Some(k) = kl {
        term = tape.add(term, k)?;
    }
    Ok((term, kl))
}

fn joint_objective<S: Scalar>(
    tape: &mut Tape<'_, S>,
    bundle: &ModelBundle<S>,
    x: Var,
    channel: &ChannelSpec,
    settings: &ObjectiveSettings,
    use_alv: bool,
    rng: &mut SimRng,
) -> Result<Loss<S>> {
    settings.validate()?;
    let q = bundle.encoder.encode(tape, x)?;

    let (y, posterior_kl, y_rate) = match settings.posterior {
        PosteriorMode::EncoderChannel => {
            // Q = E·C: both log-densities are the same number, so the ratio is exactly zero.
            let y = q.sample(tape, rng)?;
            let lq = q.log_density(tape, y)?;
            let ratio = tape.sub(lq, lq)?;
            (y, tape.mean(ratio)?, y)
        }
        PosteriorMode::InferenceNetwork => {
            let net = bundle
                .inference
                .as_ref()
                .ok_or(Error::MissingComponent("inference network"))?;
            let qi = net.encode(tape, x)?;
            let y = qi.sample(tape, rng)?;
            let lqi = qi.log_density(tape, y)?;
            let le = q.log_density(tape, y)?;
            let ratio = tape.sub(lqi, le)?;
            let y_rate = q.sample(tape, rng)?;
            (y, tape.mean(ratio)?, y_rate)
        }
    };

    let mut inner = SimRng::seed_from_u64(rng.random());
    let (distortion, alv_kl) = match channel {
        ChannelSpec::Gaussian(g) => {
            let z = gaussian_transmit(tape, y, q.mean, g, rng)?;
            let out = ChannelOutput {
                z,
                bandwidth: None,
                prior_filled: Vec::new(),
            };
            let (term, kl) = reconstruction_term(tape, bundle, x, y, &out, use_alv, &mut inner)?;
            (term, kl.map(|k| tape.item(k)))
        }
        ChannelSpec::BandwidthLimited(spec) => {
            let mut kls = Vec::new();
            let m = marginalize_bandwidth(tape, y, q.mean, spec, &bundle.prior, rng, |t, out| {
                let (term, kl) = reconstruction_term(t, bundle, x, y, out, use_alv, &mut inner)?;
                if let Some(k) = kl {
                    kls.push(t.item(k));
                }
                Ok(term)
            })?;
            let alv_kl = if kls.is_empty() {
                None
            } else {
                Some(weighted_mean(spec.marginalization(), spec.bandwidth_probs(), &m.draws, &kls))
            };
            (m.value, alv_kl)
        }
        ChannelSpec::RelaxedBinary(_) => {
            return Err(Error::InvalidArgument(
                "the relaxed binary channel is not wired into the training objectives".into(),
            ))
        }
    };

    let kl = prior_matching_kl(tape, &q, y_rate, &bundle.prior)?;
    let rate = tape.scale(kl, S::lit(settings.prior_matching_weight))?;
    let prior_fit = if bundle.prior.has_parameters() {
        let fixed = tape.detach(y_rate)?;
        let lp = bundle.prior.log_density(tape, fixed)?;
        let m = tape.mean(lp)?;
        Some(tape.neg(m)?)
    } else {
        None
    };
    combine(tape, distortion, rate, posterior_kl, prior_fit, alv_kl, settings)
}

fn weighted_mean<S: Scalar>(
    mode: Marginalization,
    probs: &[f64],
    draws: &[(usize, S)],
    values: &[S],
) -> S {
    let mut acc = S::zero();
    for ((b, _), &v) in draws.iter().zip(values) {
        let w = match mode {
            Marginalization::FullSum => probs[*b],
            Marginalization::MonteCarlo { samples } => 1.0 / samples as f64,
        };
        acc += S::lit(w) * v;
    }
    acc
}

/// Mean over rows of `KL(E(Y|X) ‖ prior)`: closed form for the standard prior,
/// one-sample estimate at `y` for the autoregressive prior.
fn prior_matching_kl<S: Scalar>(
    tape: &mut Tape<'_, S>,
    q: &DiagonalGaussian,
    y: Var,
    prior: &PriorModel,
) -> Result<Var> {
    let per_row = match prior {
        PriorModel::Standard { .. } => q.kl_to_standard(tape)?,
        PriorModel::Autoregressive { .. } => {
            let lq = q.log_density(tape, y)?;
            let parts = prior.slot_log_densities_with(tape, y, false)?;
            let mut lp = parts[0];
            for &p in &parts[1..] {
                lp = tape.add(lp, p)?;
            }
            tape.sub(lq, lp)?
        }
    };
    tape.mean(per_row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, GradCheckOptions, Tensor};
    use crate::channels::{BandwidthLimitedSpec, GaussianChannelSpec};
    use crate::models::{ModelConfig, PriorKind};
    use crate::seeded_rng;

    fn cfg(prior: PriorKind, alv: bool) -> ModelConfig {
        ModelConfig {
            latent_dim: 6,
            slots: 3,
            hidden: vec![12],
            prior,
            prior_hidden: vec![8],
            alv,
            alv_dim: 2,
            alv_hidden: vec![8],
            coder_hidden: vec![8],
            ..ModelConfig::default()
        }
    }

    fn batch(rows: usize, seed: u64) -> Tensor<f64> {
        let mut rng = seeded_rng(seed);
        let data = (0..rows * 9).map(|_| rng.random::<f64>()).collect();
        Tensor::new(vec![rows, 9], data).unwrap()
    }

    fn gaussian(s: f64) -> ChannelSpec {
        ChannelSpec::Gaussian(GaussianChannelSpec::new(s).unwrap())
    }

    fn bandwidth(c: &ModelConfig, m: Marginalization) -> ChannelSpec {
        ChannelSpec::BandwidthLimited(
            BandwidthLimitedSpec::uniform_training(
                c.partition().unwrap(),
                GaussianChannelSpec::new(1.0).unwrap(),
                m,
            )
            .unwrap(),
        )
    }

    fn eval<F>(bundle: &ModelBundle<f64>, f: F) -> LossBreakdown<f64>
    where
        F: FnOnce(&mut Tape<'_, f64>, Var, &mut SimRng) -> Result<Loss<f64>>,
    {
        let mut t = Tape::new(&bundle.store);
        let x = t.constant(batch(8, 1)).unwrap();
        let mut rng = seeded_rng(2);
        f(&mut t, x, &mut rng).unwrap().breakdown
    }

    #[test]
    fn totals_match_their_terms() {
        for prior in [PriorKind::Standard, PriorKind::Autoregressive] {
            for target in [BetaTarget::Rate, BetaTarget::PosteriorKl] {
                let c = cfg(prior, true);
                let m = ModelBundle::<f64>::joint(&c, 9, 0).unwrap();
                let s = ObjectiveSettings {
                    beta: 0.37,
                    beta_target: target,
                    ..Default::default()
                };
                for ch in [gaussian(1.0), bandwidth(&c, Marginalization::FullSum)] {
                    let b = eval(&m, |t, x, r| joint_loss(t, &m, x, &ch, &s, r));
                    assert_eq!(b.total, b.expected_total());
                    let b = eval(&m, |t, x, r| alv_loss(t, &m, x, &ch, &s, r));
                    assert_eq!(b.total, b.expected_total());
                    assert!(b.alv_kl.unwrap() >= 0.0);
                }
            }
        }
    }

    #[test]
    fn default_posterior_kl_is_exactly_zero() {
        let c = cfg(PriorKind::Standard, false);
        let m = ModelBundle::<f64>::joint(&c, 9, 3).unwrap();
        for seed in 0..10 {
            let mut t = Tape::new(&m.store);
            let x = t.constant(batch(6, seed)).unwrap();
            let l = joint_loss(&mut t, &m, x, &gaussian(0.5), &Default::default(), &mut seeded_rng(seed))
                .unwrap();
            assert_eq!(l.breakdown.posterior_kl, 0.0);
        }
    }

    #[test]
    fn inference_network_posterior_kl_is_non_negative_on_average() {
        let c = cfg(PriorKind::Standard, false);
        let m = ModelBundle::<f64>::joint(&c, 9, 3).unwrap().with_inference_network().unwrap();
        let s = ObjectiveSettings {
            posterior: PosteriorMode::InferenceNetwork,
            ..Default::default()
        };
        let mut vals = Vec::new();
        for seed in 0..200 {
            let mut t = Tape::new(&m.store);
            let x = t.constant(batch(4, 7)).unwrap();
            let l = joint_loss(&mut t, &m, x, &gaussian(1.0), &s, &mut seeded_rng(seed)).unwrap();
            vals.push(l.breakdown.posterior_kl);
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean > -3.0 * sd / n.sqrt(), "{mean} ± {sd}");
        let plain = ModelBundle::<f64>::joint(&c, 9, 3).unwrap();
        let mut t = Tape::new(&plain.store);
        let x = t.constant(batch(4, 7)).unwrap();
        assert!(joint_loss(&mut t, &plain, x, &gaussian(1.0), &s, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn beta_zero_leaves_reconstruction() {
        let c = cfg(PriorKind::Standard, false);
        let m = ModelBundle::<f64>::separate(&c, 9, 0).unwrap();
        let s = ObjectiveSettings {
            beta: 0.0,
            ..Default::default()
        };
        let b = eval(&m, |t, x, r| source_vae_loss(t, &m, x, &s, r));
        assert_eq!(b.total, b.distortion);
        assert!(b.rate > 0.0);
    }

    #[test]
    fn zero_bandwidth_reconstruction_ignores_input() {
        let c = cfg(PriorKind::Standard, false);
        let m = ModelBundle::<f64>::joint(&c, 9, 1).unwrap();
        let spec = ChannelSpec::BandwidthLimited(
            BandwidthLimitedSpec::point_mass(c.partition().unwrap(), GaussianChannelSpec::new(1.0).unwrap(), 0)
                .unwrap(),
        );
        let s = ObjectiveSettings {
            beta: 0.0,
            ..Default::default()
        };
        let run = |data: Tensor<f64>| {
            let mut t = Tape::new(&m.store);
            let x = t.constant(data.clone()).unwrap();
            let l = joint_loss(&mut t, &m, x, &spec, &s, &mut seeded_rng(5)).unwrap();
            // decode the same prior draw directly
            let mut t2 = Tape::new(&m.store);
            let x2 = t2.constant(data).unwrap();
            let mut rng = seeded_rng(5);
            let q = m.encoder.encode(&mut t2, x2).unwrap();
            let _ = q.sample(&mut t2, &mut rng).unwrap();
            let _: u64 = rng.random();
            let z = m.prior.sample(&mut t2, 8, &mut rng).unwrap();
            let xh = m.decoder.decode(&mut t2, z, None).unwrap();
            let nll = m.decoder.nll(&mut t2, x2, xh).unwrap();
            let d = t2.mean(nll).unwrap();
            (l.breakdown.distortion, t2.item(d), t2.value(z).to_vec())
        };
        let (a, direct, za) = run(batch(8, 1));
        assert!((a - direct).abs() < 1e-12);
        let (_, _, zb) = run(batch(8, 2));
        assert_eq!(za, zb, "received code must not depend on the source");
    }

    #[test]
    fn alv_pinned_to_prior_equals_joint_with_prior_draw() {
        // zero output weights plus biases that put the head at mean 0, log-scale 0
        let c = cfg(PriorKind::Standard, true);
        let mut m = ModelBundle::<f64>::joint(&c, 9, 2).unwrap();
        let w = m.store.get_mut("alv.l1.w").unwrap();
        let shape = w.shape().to_vec();
        *w = Tensor::zeros(&shape);
        let raw = 0.5f64.atanh();
        let b = m.store.get_mut("alv.l1.b").unwrap();
        b.data_mut().copy_from_slice(&[0.0, 0.0, raw, raw]);
        let s = ObjectiveSettings::default();
        for ch in [gaussian(2.0), bandwidth(&c, Marginalization::FullSum)] {
            let pinned = eval(&m, |t, x, r| alv_loss(t, &m, x, &ch, &s, r));
            let plain = eval(&m, |t, x, r| joint_loss(t, &m, x, &ch, &s, r));
            assert!(pinned.alv_kl.unwrap().abs() < 1e-14);
            assert!((pinned.total - plain.total).abs() < 1e-10, "{pinned:?} {plain:?}");
        }
    }

    #[test]
    fn relaxed_binary_is_not_trainable() {
        let c = cfg(PriorKind::Standard, false);
        let m = ModelBundle::<f64>::joint(&c, 9, 0).unwrap();
        let ch = ChannelSpec::RelaxedBinary(crate::channels::RelaxedBinarySpec::new(0.9, 0.5, 0.5).unwrap());
        let mut t = Tape::new(&m.store);
        let x = t.constant(batch(2, 0)).unwrap();
        assert!(joint_loss(&mut t, &m, x, &ch, &Default::default(), &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn channel_ae_loss_needs_coder() {
        let c = cfg(PriorKind::Standard, false);
        let j = ModelBundle::<f64>::joint(&c, 9, 0).unwrap();
        let mut t = Tape::new(&j.store);
        assert!(channel_ae_loss(&mut t, &j, 4, &gaussian(1.0), &mut seeded_rng(0)).is_err());
        let s = ModelBundle::<f64>::separate(&c, 9, 0).unwrap();
        let mut t = Tape::new(&s.store);
        let l = channel_ae_loss(&mut t, &s, 4, &gaussian(1.0), &mut seeded_rng(0)).unwrap();
        assert!(l.breakdown.distortion > 0.0);
    }

    fn check(bundle: &ModelBundle<f64>, f: impl Fn(&mut Tape<'_, f64>, Var, &mut SimRng) -> Result<Loss<f64>>) -> f64 {
        check_with(bundle, true, f)
    }

    fn check_with(
        bundle: &ModelBundle<f64>,
        hold_stopped: bool,
        f: impl Fn(&mut Tape<'_, f64>, Var, &mut SimRng) -> Result<Loss<f64>>,
    ) -> f64 {
        let data = batch(4, 9);
        let opts = GradCheckOptions {
            coords_per_param: 4,
            hold_stopped,
            ..Default::default()
        };
        finite_difference_check(&bundle.store, &opts, |t, rng| {
            let x = t.constant(data.clone())?;
            Ok(f(t, x, rng)?.total)
        })
        .unwrap()
        .max_rel_error
    }

    #[test]
    fn objectives_pass_gradient_checks() {
        let s = ObjectiveSettings {
            beta: 0.5,
            ..Default::default()
        };
        let c = cfg(PriorKind::Autoregressive, true);
        let joint = ModelBundle::<f64>::joint(&c, 9, 11).unwrap();
        let sep = ModelBundle::<f64>::separate(&c, 9, 11).unwrap();
        let g = gaussian(1.0);
        let bw = bandwidth(&c, Marginalization::FullSum);
        let errs = [
            check(&sep, |t, x, r| source_vae_loss(t, &sep, x, &s, r)),
            check(&joint, |t, x, r| joint_loss(t, &joint, x, &g, &s, r)),
            check(&joint, |t, x, r| joint_loss(t, &joint, x, &bw, &s, r)),
            check(&joint, |t, x, r| alv_loss(t, &joint, x, &bw, &s, r)),
        ];
        for e in errs {
            assert!(e < 1e-3, "{errs:?}");
        }
    }

    #[test]
    fn standard_prior_objectives_are_true_gradients() {
        // no stop-gradient nodes on this path, so plain central differences must agree
        let s = ObjectiveSettings::default();
        let c = cfg(PriorKind::Standard, true);
        let joint = ModelBundle::<f64>::joint(&c, 9, 12).unwrap();
        let g = gaussian(2.0);
        let bw = bandwidth(&c, Marginalization::FullSum);
        let errs = [
            check_with(&joint, false, |t, x, r| joint_loss(t, &joint, x, &g, &s, r)),
            check_with(&joint, false, |t, x, r| joint_loss(t, &joint, x, &bw, &s, r)),
            check_with(&joint, false, |t, x, r| alv_loss(t, &joint, x, &bw, &s, r)),
        ];
        for e in errs {
            assert!(e < 1e-3, "{errs:?}");
        }
    }
}
