//! Differentiable channel models.

pub mod bandwidth;
pub mod binary;
pub mod gaussian;

pub use bandwidth::{
    bandwidth_transmit, conditional_log_density, conditional_log_density_given,
    marginalize_bandwidth, BandwidthLimitedSpec, BandwidthPartition, ChannelOutput, Marginal,
    Marginalization, SlotPrior,
};
pub use binary::{
    binary_snr, relaxed_binary_log_density, relaxed_binary_log_density_z, relaxed_binary_transmit,
    relaxed_binary_transmit_with_noise, RelaxedBinaryOutput, RelaxedBinarySpec,
};
pub use gaussian::{
    gaussian_capacity, gaussian_channel_log_density, gaussian_transmit,
    gaussian_transmit_with_noise, GaussianChannelSpec,
};

/// One channel, as used by the objectives and the evaluation pipeline.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelSpec {
    Gaussian(GaussianChannelSpec),
    BandwidthLimited(BandwidthLimitedSpec),
    RelaxedBinary(RelaxedBinarySpec),
}

impl ChannelSpec {
    /// Signal-to-noise ratio of the (inner) Gaussian channel, if any.
    pub fn snr(&self) -> Option<f64> {
        match self {
            ChannelSpec::Gaussian(g) => Some(g.snr()),
            ChannelSpec::BandwidthLimited(b) => Some(b.inner().snr()),
            ChannelSpec::RelaxedBinary(_) => None,
        }
    }
}

/// One draw through `spec`. A bandwidth-limited channel first samples its
/// bandwidth; the relaxed binary channel ignores `y_mean`.
pub fn transmit<S, P, R>(
    tape: &mut crate::Tape<'_, S>,
    y_sample: crate::Var,
    y_mean: crate::Var,
    spec: &ChannelSpec,
    prior: &P,
    rng: &mut R,
) -> crate::Result<ChannelOutput>
where
    S: crate::Scalar,
    P: SlotPrior<S>,
    R: rand::Rng + ?Sized,
{
    match spec {
        ChannelSpec::Gaussian(g) => Ok(ChannelOutput {
            z: gaussian_transmit(tape, y_sample, y_mean, g, rng)?,
            bandwidth: None,
            prior_filled: Vec::new(),
        }),
        ChannelSpec::BandwidthLimited(b) => {
            let bw = b.sample_bandwidth(rng);
            bandwidth_transmit(tape, y_sample, y_mean, bw, b, prior, rng)
        }
        ChannelSpec::RelaxedBinary(r) => Ok(ChannelOutput {
            z: relaxed_binary_transmit(tape, y_sample, r, rng)?.z,
            bandwidth: None,
            prior_filled: Vec::new(),
        }),
    }
}
