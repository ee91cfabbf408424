use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gaussian::{gaussian_channel_log_density, gaussian_transmit, GaussianChannelSpec};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Contiguous split of an `n`-dimensional code into `T` transmission slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthPartition {
    boundaries: Vec<usize>,
}

impl BandwidthPartition {
    /// `boundaries` must start at 0, end at `n` and be strictly increasing.
    pub fn new(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != 0 {
            return Err(Error::InvalidArgument(format!(
                "slot boundaries must start at 0 and describe at least one slot, got {boundaries:?}"
            )));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "slot boundaries must be strictly increasing, got {boundaries:?}"
            )));
        }
        Ok(BandwidthPartition { boundaries })
    }

    /// `slots` slots of (nearly) equal size; earlier slots take the remainder.
    pub fn equal(dim: usize, slots: usize) -> Result<Self> {
        if slots == 0 || dim < slots {
            return Err(Error::InvalidArgument(format!(
                "cannot split {dim} dimensions into {slots} slots"
            )));
        }
        let base = dim / slots;
        let extra = dim % slots;
        let mut b = vec![0];
        for t in 0..slots {
            let size = base + usize::from(t < extra);
            b.push(b[t] + size);
        }
        BandwidthPartition::new(b)
    }

    pub fn slots(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.boundaries.last().unwrap()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Latent indices of slot `t` (0-based).
    pub fn slot_range(&self, t: usize) -> Range<usize> {
        self.boundaries[t]..self.boundaries[t + 1]
    }

    /// Number of latent coordinates carried when the first `b` slots are transmitted.
    pub fn prefix_len(&self, b: usize) -> usize {
        self.boundaries[b]
    }

    pub fn slot_of(&self, index: usize) -> Option<usize> {
        if index >= self.dim() {
            return None;
        }
        Some(self.boundaries.partition_point(|&x| x <= index) - 1)
    }
}

/// How the objective integrates over the bandwidth variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginalization {
    /// Weighted sum over every bandwidth with non-zero probability.
    FullSum,
    /// Average over `samples` draws of the bandwidth.
    MonteCarlo { samples: usize },
}

/// A model of the code distribution used to fill slots that were not transmitted.
pub trait SlotPrior<S: Scalar> {
    fn partition(&self) -> &BandwidthPartition;

    /// Samples slots `first..T` given `prefix` holding the values of slots
    /// `0..first` (`None` when `first == 0`). Returns `[rows, n - prefix_len(first)]`.
    fn sample_tail<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        prefix: Option<Var>,
        first: usize,
        rows: usize,
        rng: &mut R,
    ) -> Result<Var>;

    /// `log p(z_t | z_<t)` for every slot, each of shape `[rows]`.
    fn slot_log_densities(&self, tape: &mut Tape<'_, S>, z: Var) -> Result<Vec<Var>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthLimitedSpec {
    partition: BandwidthPartition,
    bandwidth_probs: Vec<f64>,
    inner: GaussianChannelSpec,
    marginalization: Marginalization,
}

impl BandwidthLimitedSpec {
    /// `bandwidth_probs[b]` is `P(B = b)` for `b` in `0..=T`.
    pub fn new(
        partition: BandwidthPartition,
        bandwidth_probs: Vec<f64>,
        inner: GaussianChannelSpec,
        marginalization: Marginalization,
    ) -> Result<Self> {
        if bandwidth_probs.len() != partition.slots() + 1 {
            return Err(Error::InvalidArgument(format!(
                "bandwidth distribution needs {} entries, got {}",
                partition.slots() + 1,
                bandwidth_probs.len()
            )));
        }
        if bandwidth_probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(
                "bandwidth probabilities must be finite and non-negative".into(),
            ));
        }
        let total: f64 = bandwidth_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "bandwidth probabilities sum to {total}, expected 1"
            )));
        }
        if let Marginalization::MonteCarlo { samples: 0 } = marginalization {
            return Err(Error::InvalidArgument(
                "Monte Carlo marginalization needs at least one sample".into(),
            ));
        }
        Ok(BandwidthLimitedSpec {
            partition,
            bandwidth_probs,
            inner,
            marginalization,
        })
    }

    /// Uniform over `1..=T`, so every slot is exercised during training.
    pub fn uniform_training(
        partition: BandwidthPartition,
        inner: GaussianChannelSpec,
        marginalization: Marginalization,
    ) -> Result<Self> {
        let t = partition.slots();
        let mut p = vec![1.0 / t as f64; t + 1];
        p[0] = 0.0;
        BandwidthLimitedSpec::new(partition, p, inner, marginalization)
    }

    pub fn point_mass(
        partition: BandwidthPartition,
        inner: GaussianChannelSpec,
        bandwidth: usize,
    ) -> Result<Self> {
        if bandwidth > partition.slots() {
            return Err(bandwidth_range_error(bandwidth, partition.slots()));
        }
        let mut p = vec![0.0; partition.slots() + 1];
        p[bandwidth] = 1.0;
        BandwidthLimitedSpec::new(partition, p, inner, Marginalization::FullSum)
    }

    pub fn partition(&self) -> &BandwidthPartition {
        &self.partition
    }

    pub fn bandwidth_probs(&self) -> &[f64] {
        &self.bandwidth_probs
    }

    pub fn inner(&self) -> &GaussianChannelSpec {
        &self.inner
    }

    pub fn marginalization(&self) -> Marginalization {
        self.marginalization
    }

    pub fn with_marginalization(mut self, m: Marginalization) -> Result<Self> {
        if let Marginalization::MonteCarlo { samples: 0 } = m {
            return Err(Error::InvalidArgument(
                "Monte Carlo marginalization needs at least one sample".into(),
            ));
        }
        self.marginalization = m;
        Ok(self)
    }

    pub fn sample_bandwidth<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (b, &p) in self.bandwidth_probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = b;
                if u < acc {
                    return b;
                }
            }
        }
        last
    }
}

fn bandwidth_range_error(b: usize, t: usize) -> Error {
    Error::InvalidArgument(format!("bandwidth {b} outside 0..={t}"))
}

#[derive(Clone, Debug)]
pub struct ChannelOutput {
    pub z: Var,
    /// Number of transmitted slots, when the channel has a bandwidth.
    pub bandwidth: Option<usize>,
    /// One flag per slot; `true` marks a slot drawn from the prior.
    pub prior_filled: Vec<bool>,
}

fn check_prior<S: Scalar, P: SlotPrior<S>>(spec: &BandwidthLimitedSpec, prior: &P) -> Result<()> {
    if prior.partition() != spec.partition() {
        return Err(Error::InvalidArgument(
            "prior and channel use different slot partitions".into(),
        ));
    }
    Ok(())
}

fn check_code<S: Scalar>(tape: &Tape<'_, S>, y: Var, spec: &BandwidthLimitedSpec) -> Result<usize> {
    let shape = tape.shape(y);
    if shape.len() != 2 || shape[1] != spec.partition.dim() {
        return Err(Error::shape(
            "bandwidth_transmit",
            shape,
            &[0, spec.partition.dim()],
        ));
    }
    Ok(shape[0])
}

/// Transmits slots `0..b` through the inner Gaussian channel and fills the
/// rest with prior samples conditioned on what was received.
pub fn bandwidth_transmit<S, P, R>(
    tape: &mut Tape<'_, S>,
    y_sample: Var,
    y_mean: Var,
    b: usize,
    spec: &BandwidthLimitedSpec,
    prior: &P,
    rng: &mut R,
) -> Result<ChannelOutput>
where
    S: Scalar,
    P: SlotPrior<S>,
    R: Rng + ?Sized,
{
    let slots = spec.partition.slots();
    if b > slots {
        return Err(bandwidth_range_error(b, slots));
    }
    check_prior(spec, prior)?;
    let rows = check_code(tape, y_sample, spec)?;
    if tape.shape(y_mean) != tape.shape(y_sample) {
        return Err(Error::shape(
            "bandwidth_transmit",
            tape.shape(y_sample),
            tape.shape(y_mean),
        ));
    }
    let cut = spec.partition.prefix_len(b);
    let prefix = if b == 0 {
        None
    } else {
        let ys = tape.slice(y_sample, 0, cut)?;
        let ym = tape.slice(y_mean, 0, cut)?;
        Some(gaussian_transmit(tape, ys, ym, &spec.inner, rng)?)
    };
    let z = if b == slots {
        prefix.expect("at least one slot")
    } else {
        let tail = prior.sample_tail(tape, prefix, b, rows, rng)?;
        match prefix {
            Some(p) => tape.concat(&[p, tail])?,
            None => tail,
        }
    };
    Ok(ChannelOutput {
        z,
        bandwidth: Some(b),
        prior_filled: (0..slots).map(|t| t >= b).collect(),
    })
}

/// Result of integrating a scalar over the bandwidth variable.
#[derive(Clone, Debug)]
pub struct Marginal<S> {
    pub value: Var,
    /// `(bandwidth, integrand value)` for every evaluated draw.
    pub draws: Vec<(usize, S)>,
}

/// Integrates `integrand` over `P(B)` with the marginalization mode of `spec`.
pub fn marginalize_bandwidth<S, P, R, F>(
    tape: &mut Tape<'_, S>,
    y_sample: Var,
    y_mean: Var,
    spec: &BandwidthLimitedSpec,
    prior: &P,
    rng: &mut R,
    mut integrand: F,
) -> Result<Marginal<S>>
where
    S: Scalar,
    P: SlotPrior<S>,
    R: Rng + ?Sized,
    F: FnMut(&mut Tape<'_, S>, &ChannelOutput) -> Result<Var>,
{
    let mut draws = Vec::new();
    let mut terms = Vec::new();
    match spec.marginalization {
        Marginalization::FullSum => {
            for (b, &p) in spec.bandwidth_probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let out = bandwidth_transmit(tape, y_sample, y_mean, b, spec, prior, rng)?;
                let f = integrand(tape, &out)?;
                draws.push((b, tape.item(f)));
                terms.push(tape.scale(f, S::lit(p))?);
            }
        }
        Marginalization::MonteCarlo { samples } => {
            let w = S::lit(1.0 / samples as f64);
            for _ in 0..samples {
                let b = spec.sample_bandwidth(rng);
                let out = bandwidth_transmit(tape, y_sample, y_mean, b, spec, prior, rng)?;
                let f = integrand(tape, &out)?;
                draws.push((b, tape.item(f)));
                terms.push(tape.scale(f, w)?);
            }
        }
    }
    let mut value = terms[0];
    for &t in &terms[1..] {
        value = tape.add(value, t)?;
    }
    Ok(Marginal { value, draws })
}

/// Per-row `log C(z | y, B = b)`: inner-channel density on slots `0..b`,
/// prior conditionals on the rest.
pub fn conditional_log_density_given<S, P>(
    tape: &mut Tape<'_, S>,
    z: Var,
    y_sample: Var,
    y_mean: Var,
    b: usize,
    spec: &BandwidthLimitedSpec,
    prior: &P,
) -> Result<Vec<S>>
where
    S: Scalar,
    P: SlotPrior<S>,
{
    let terms = slot_terms(tape, z, y_sample, y_mean, spec, prior)?;
    let rows = terms.0[0].len();
    Ok((0..rows)
        .map(|r| {
            let mut acc = S::zero();
            for t in 0..spec.partition.slots() {
                acc += if t < b { terms.0[t][r] } else { terms.1[t][r] };
            }
            acc
        })
        .collect())
}

/// Per-row `log C(z | y) = log Σ_B P(B) C(z, B | y)`.
pub fn conditional_log_density<S, P>(
    tape: &mut Tape<'_, S>,
    z: Var,
    y_sample: Var,
    y_mean: Var,
    spec: &BandwidthLimitedSpec,
    prior: &P,
) -> Result<Vec<S>>
where
    S: Scalar,
    P: SlotPrior<S>,
{
    let (chan, pri) = slot_terms(tape, z, y_sample, y_mean, spec, prior)?;
    let rows = chan[0].len();
    let slots = spec.partition.slots();
    Ok((0..rows)
        .map(|r| {
            let mut parts = Vec::new();
            for (b, &p) in spec.bandwidth_probs.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let mut acc = S::lit(p.ln());
                for t in 0..slots {
                    acc += if t < b { chan[t][r] } else { pri[t][r] };
                }
                parts.push(acc);
            }
            log_sum_exp(&parts)
        })
        .collect())
}

type SlotTerms<S> = (Vec<Vec<S>>, Vec<Vec<S>>);

/// Per-slot channel and prior log-densities, indexed `[slot][row]`.
fn slot_terms<S, P>(
    tape: &mut Tape<'_, S>,
    z: Var,
    y_sample: Var,
    y_mean: Var,
    spec: &BandwidthLimitedSpec,
    prior: &P,
) -> Result<SlotTerms<S>>
where
    S: Scalar,
    P: SlotPrior<S>,
{
    check_prior(spec, prior)?;
    check_code(tape, z, spec)?;
    let mut chan = Vec::new();
    for t in 0..spec.partition.slots() {
        let r = spec.partition.slot_range(t);
        let zs = tape.slice(z, r.start, r.end)?;
        let ys = tape.slice(y_sample, r.start, r.end)?;
        let ym = tape.slice(y_mean, r.start, r.end)?;
        let lp = gaussian_channel_log_density(tape, zs, ys, ym, &spec.inner)?;
        chan.push(tape.value(lp).to_vec());
    }
    let pri = prior
        .slot_log_densities(tape, z)?
        .into_iter()
        .map(|v| tape.value(v).to_vec())
        .collect();
    Ok((chan, pri))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::distributions::{normal_log_pdf, standard_normal_tensor};
    use crate::seeded_rng;

    /// Unit Gaussian on every slot, enough to exercise the channel on its own.
    struct UnitPrior(BandwidthPartition);

    impl SlotPrior<f64> for UnitPrior {
        fn partition(&self) -> &BandwidthPartition {
            &self.0
        }

        fn sample_tail<R: Rng + ?Sized>(
            &self,
            tape: &mut Tape<'_, f64>,
            _prefix: Option<Var>,
            first: usize,
            rows: usize,
            rng: &mut R,
        ) -> Result<Var> {
            let width = self.0.dim() - self.0.prefix_len(first);
            tape.constant(standard_normal_tensor(&[rows, width], rng))
        }

        fn slot_log_densities(&self, tape: &mut Tape<'_, f64>, z: Var) -> Result<Vec<Var>> {
            let rows = tape.shape(z)[0];
            (0..self.0.slots())
                .map(|t| {
                    let r = self.0.slot_range(t);
                    let vals: Vec<f64> = (0..rows)
                        .map(|i| {
                            let row = &tape.value(z)[i * self.0.dim()..(i + 1) * self.0.dim()];
                            row[r.clone()].iter().map(|&x| normal_log_pdf(x, 0.0, 1.0)).sum()
                        })
                        .collect();
                    tape.constant_from(&[rows], vals)
                })
                .collect()
        }
    }

    fn two_slot() -> (BandwidthPartition, UnitPrior) {
        let p = BandwidthPartition::new(vec![0, 1, 2]).unwrap();
        (p.clone(), UnitPrior(p))
    }

    fn spec_with(probs: Vec<f64>, m: Marginalization) -> BandwidthLimitedSpec {
        let (p, _) = two_slot();
        BandwidthLimitedSpec::new(p, probs, GaussianChannelSpec::new(1.0).unwrap(), m).unwrap()
    }

    #[test]
    fn partition_layout() {
        let p = BandwidthPartition::equal(100, 5).unwrap();
        assert_eq!(p.boundaries(), &[0, 20, 40, 60, 80, 100]);
        let q = BandwidthPartition::equal(7, 3).unwrap();
        assert_eq!(q.boundaries(), &[0, 3, 5, 7]);
        assert_eq!(q.slot_of(0), Some(0));
        assert_eq!(q.slot_of(2), Some(0));
        assert_eq!(q.slot_of(3), Some(1));
        assert_eq!(q.slot_of(6), Some(2));
        assert_eq!(q.slot_of(7), None);
        assert!(BandwidthPartition::new(vec![0, 2, 2]).is_err());
        assert!(BandwidthPartition::new(vec![1, 2]).is_err());
        assert!(BandwidthPartition::new(vec![0]).is_err());
        assert!(BandwidthPartition::equal(3, 4).is_err());
    }

    #[test]
    fn spec_validation() {
        let (p, _) = two_slot();
        let g = GaussianChannelSpec::new(1.0).unwrap();
        assert!(BandwidthLimitedSpec::new(p.clone(), vec![0.5, 0.5], g, Marginalization::FullSum).is_err());
        assert!(BandwidthLimitedSpec::new(p.clone(), vec![0.5, 0.5, 0.5], g, Marginalization::FullSum).is_err());
        assert!(BandwidthLimitedSpec::new(
            p.clone(),
            vec![0.0, 0.5, 0.5],
            g,
            Marginalization::MonteCarlo { samples: 0 }
        )
        .is_err());
        let u = BandwidthLimitedSpec::uniform_training(p.clone(), g, Marginalization::FullSum).unwrap();
        assert_eq!(u.bandwidth_probs(), &[0.0, 0.5, 0.5]);
        assert!(BandwidthLimitedSpec::point_mass(p, g, 3).is_err());
    }

    #[test]
    fn full_bandwidth_fills_nothing_and_zero_fills_everything() {
        let (p, prior) = two_slot();
        let spec = BandwidthLimitedSpec::point_mass(p, GaussianChannelSpec::new(1.0).unwrap(), 2).unwrap();
        let mut rng = seeded_rng(0);
        let mut t = Tape::<f64>::detached();
        let y = t.constant_from(&[1, 2], vec![0.5, 0.7]).unwrap();
        let out = bandwidth_transmit(&mut t, y, y, 2, &spec, &prior, &mut rng).unwrap();
        assert_eq!(out.prior_filled, vec![false, false]);
        let out = bandwidth_transmit(&mut t, y, y, 0, &spec, &prior, &mut rng).unwrap();
        assert_eq!(out.prior_filled, vec![true, true]);
        assert_eq!(out.bandwidth, Some(0));
        assert!(bandwidth_transmit(&mut t, y, y, 3, &spec, &prior, &mut rng).is_err());
    }

    #[test]
    fn transmitted_slots_see_inner_channel() {
        // zero mean means zero channel noise, so slot 1 arrives exactly
        let (_, prior) = two_slot();
        let spec = spec_with(vec![0.0, 1.0, 0.0], Marginalization::FullSum);
        let mut rng = seeded_rng(1);
        let mut t = Tape::<f64>::detached();
        let y = t.constant_from(&[1, 2], vec![0.25, 0.75]).unwrap();
        let m = t.constant(Tensor::zeros(&[1, 2])).unwrap();
        let out = bandwidth_transmit(&mut t, y, m, 1, &spec, &prior, &mut rng).unwrap();
        assert_eq!(t.value(out.z)[0], 0.25);
        assert_eq!(out.prior_filled, vec![false, true]);
    }

    /// Sum of the slots that actually went through the channel.
    fn transmitted_sum(t: &mut Tape<'_, f64>, out: &ChannelOutput) -> Result<Var> {
        let mut parts = Vec::new();
        for (i, &filled) in out.prior_filled.iter().enumerate() {
            if !filled {
                parts.push(t.slice(out.z, i, i + 1)?);
            }
        }
        if parts.is_empty() {
            return t.scalar(0.0);
        }
        let all = t.concat(&parts)?;
        t.sum(all)
    }

    #[test]
    fn full_sum_matches_enumeration() {
        let (_, prior) = two_slot();
        let spec = spec_with(vec![1.0 / 3.0; 3], Marginalization::FullSum);
        let mut rng = seeded_rng(2);
        let mut t = Tape::<f64>::detached();
        let (y1, y2) = (0.6, -1.3);
        let y = t.constant_from(&[1, 2], vec![y1, y2]).unwrap();
        let m = t.constant(Tensor::zeros(&[1, 2])).unwrap();
        let got = marginalize_bandwidth(&mut t, y, m, &spec, &prior, &mut rng, transmitted_sum).unwrap();
        let hand = (0.0 + y1 + (y1 + y2)) / 3.0;
        assert!((t.item(got.value) - hand).abs() < 1e-12);
        assert_eq!(got.draws.len(), 3);
    }

    #[test]
    fn degenerate_distribution_gives_conditional_value() {
        let (_, prior) = two_slot();
        for mode in [Marginalization::FullSum, Marginalization::MonteCarlo { samples: 5 }] {
            let spec = spec_with(vec![0.0, 1.0, 0.0], mode);
            let mut rng = seeded_rng(3);
            let mut t = Tape::<f64>::detached();
            let y = t.constant_from(&[1, 2], vec![0.6, -1.3]).unwrap();
            let m = t.constant(Tensor::zeros(&[1, 2])).unwrap();
            let got = marginalize_bandwidth(&mut t, y, m, &spec, &prior, &mut rng, transmitted_sum).unwrap();
            assert!((t.item(got.value) - 0.6).abs() < 1e-15);
        }
    }

    #[test]
    fn monte_carlo_converges_to_full_sum() {
        let (_, prior) = two_slot();
        let k = 10_000;
        let probs = vec![0.2, 0.3, 0.5];
        let full = spec_with(probs.clone(), Marginalization::FullSum);
        let mc = spec_with(probs, Marginalization::MonteCarlo { samples: k });
        let mut rng = seeded_rng(4);
        let mut t = Tape::<f64>::detached();
        let y = t.constant_from(&[1, 2], vec![0.6, -1.3]).unwrap();
        let m = t.constant(Tensor::zeros(&[1, 2])).unwrap();
        let exact = marginalize_bandwidth(&mut t, y, m, &full, &prior, &mut rng, transmitted_sum).unwrap();
        let est = marginalize_bandwidth(&mut t, y, m, &mc, &prior, &mut rng, transmitted_sum).unwrap();
        let vals: Vec<f64> = est.draws.iter().map(|d| d.1).collect();
        let mean = vals.iter().sum::<f64>() / k as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        let se = (var / k as f64).sqrt();
        assert!((t.item(est.value) - mean).abs() < 1e-12);
        assert!((mean - t.item(exact.value)).abs() < 3.0 * se);
    }

    #[test]
    fn zero_bandwidth_output_is_uncorrelated_with_input() {
        let n = 10_000;
        let p = BandwidthPartition::new(vec![0, 1]).unwrap();
        let prior = UnitPrior(p.clone());
        let spec = BandwidthLimitedSpec::point_mass(p, GaussianChannelSpec::new(1.0).unwrap(), 0).unwrap();
        let mut rng = seeded_rng(5);
        let mut t = Tape::<f64>::detached();
        let y = t.constant(Tensor::randn(&[n, 1], 1.0, &mut rng)).unwrap();
        let out = bandwidth_transmit(&mut t, y, y, 0, &spec, &prior, &mut rng).unwrap();
        let (a, b) = (t.value(y), t.value(out.z));
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        assert!(r.abs() < 3.0 / (n as f64).sqrt(), "r = {r}");
    }

    #[test]
    fn conditional_density_factorizes_per_slot() {
        let (_, prior) = two_slot();
        let spec = spec_with(vec![0.0, 1.0, 0.0], Marginalization::FullSum);
        let mut t = Tape::<f64>::detached();
        let z = t.constant_from(&[1, 2], vec![0.3, -0.4]).unwrap();
        let y = t.constant_from(&[1, 2], vec![0.1, 0.9]).unwrap();
        let m = t.constant_from(&[1, 2], vec![0.5, 0.8]).unwrap();
        let got = conditional_log_density_given(&mut t, z, y, m, 1, &spec, &prior).unwrap();
        let hand = normal_log_pdf(0.3, 0.1, 0.5) + normal_log_pdf(-0.4, 0.0, 1.0);
        assert!((got[0] - hand).abs() < 1e-13);
        let marg = conditional_log_density(&mut t, z, y, m, &spec, &prior).unwrap();
        assert!((marg[0] - hand).abs() < 1e-13);
    }

    #[test]
    fn conditional_density_integrates_to_one() {
        let (_, prior) = two_slot();
        let spec = spec_with(vec![0.2, 0.3, 0.5], Marginalization::FullSum);
        let (y1, y2, m1, m2) = (0.4, -0.6, 0.8, -0.7);
        let n = 401;
        let (lo, hi) = (-9.0, 9.0);
        let h = (hi - lo) / (n - 1) as f64;
        let mut zs = Vec::with_capacity(n * n * 2);
        for i in 0..n {
            for j in 0..n {
                zs.push(lo + i as f64 * h);
                zs.push(lo + j as f64 * h);
            }
        }
        let rows = n * n;
        let mut t = Tape::<f64>::detached();
        let z = t.constant_from(&[rows, 2], zs).unwrap();
        let y = t.constant(Tensor::new(vec![rows, 2], [y1, y2].repeat(rows)).unwrap()).unwrap();
        let m = t.constant(Tensor::new(vec![rows, 2], [m1, m2].repeat(rows)).unwrap()).unwrap();
        let lp = conditional_log_density(&mut t, z, y, m, &spec, &prior).unwrap();
        // trapezoid weights on the 2-D grid
        let w = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += w(i) * w(j) * lp[i * n + j].exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }
}
