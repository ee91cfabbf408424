use rand::Rng;

use super::mlp::Mlp;
use crate::autodiff::{ParameterStore, Tape, Var};
use crate::channels::{transmit, ChannelSpec, SlotPrior};
use crate::error::Result;
use crate::scalar::Scalar;

/// Deterministic channel encoder/decoder of the separate system.
///
/// Both maps are residual networks whose output layers start at zero, so an
/// untrained pair passes codes through unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelCoderPair {
    encoder: Mlp,
    decoder: Mlp,
}

impl ChannelCoderPair {
    pub fn new(prefix: &str, dim: usize, hidden: &[usize]) -> Result<Self> {
        let mut dims = vec![dim];
        dims.extend_from_slice(hidden);
        dims.push(dim);
        Ok(ChannelCoderPair {
            encoder: Mlp::new(format!("{prefix}.enc"), dims.clone())?.residual()?,
            decoder: Mlp::new(format!("{prefix}.dec"), dims)?.residual()?,
        })
    }

    pub fn init<S: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<S>, rng: &mut R) -> Result<()> {
        for net in [&self.encoder, &self.decoder] {
            net.init(store, rng)?;
            net.zero_output_layer(store)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encode<S: Scalar>(&self, tape: &mut Tape<'_, S>, y_prime: Var) -> Result<Var> {
        self.encoder.forward(tape, y_prime)
    }

    pub fn decode<S: Scalar>(&self, tape: &mut Tape<'_, S>, z: Var) -> Result<Var> {
        self.decoder.forward(tape, z)
    }

    /// `D^C(channel(E^C(y′)))`. The channel input is deterministic, so it
    /// serves as both sample and mean of the code.
    pub fn channel_code<S, P, R>(
        &self,
        tape: &mut Tape<'_, S>,
        y_prime: Var,
        channel: &ChannelSpec,
        prior: &P,
        rng: &mut R,
    ) -> Result<Var>
    where
        S: Scalar,
        P: SlotPrior<S>,
        R: Rng + ?Sized,
    {
        let y = self.encode(tape, y_prime)?;
        let out = transmit(tape, y, y, channel, prior, rng)?;
        self.decode(tape, out.z)
    }
}
