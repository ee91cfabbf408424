use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::autodiff::{ParameterStore, Tape, Tensor, Var};
use crate::channels::{BandwidthPartition, SlotPrior};
use crate::distributions::{standard_normal_tensor, DiagonalGaussian};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Bound on the autoregressive prior's conditional log-scales.
pub const PRIOR_LOG_STD_BOUND: f64 = 3.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    #[default]
    Standard,
    Autoregressive,
}

/// Model of the latent code used for rates and for in-filling lost slots.
///
/// The autoregressive variant gives slot 0 a learned diagonal Gaussian and
/// every later slot `t` a Gaussian whose parameters come from a small network
/// applied to the values of slots `0..t`. Output layers start at zero, so a
/// fresh autoregressive prior equals the standard one.
#[derive(Clone, Debug, PartialEq)]
pub enum PriorModel {
    Standard {
        partition: BandwidthPartition,
    },
    Autoregressive {
        partition: BandwidthPartition,
        prefix: String,
        slot_nets: Vec<Mlp>,
    },
}

impl PriorModel {
    pub fn standard(partition: BandwidthPartition) -> Self {
        PriorModel::Standard { partition }
    }

    pub fn autoregressive(prefix: &str, partition: BandwidthPartition, hidden: &[usize]) -> Result<Self> {
        let mut slot_nets = Vec::new();
        for t in 1..partition.slots() {
            let mut dims = vec![partition.prefix_len(t)];
            dims.extend_from_slice(hidden);
            dims.push(2 * partition.slot_range(t).len());
            slot_nets.push(Mlp::new(format!("{prefix}.slot{t}"), dims)?);
        }
        Ok(PriorModel::Autoregressive {
            partition,
            prefix: prefix.to_string(),
            slot_nets,
        })
    }

    pub fn new(kind: PriorKind, prefix: &str, partition: BandwidthPartition, hidden: &[usize]) -> Result<Self> {
        match kind {
            PriorKind::Standard => Ok(PriorModel::standard(partition)),
            PriorKind::Autoregressive => PriorModel::autoregressive(prefix, partition, hidden),
        }
    }

    pub fn kind(&self) -> PriorKind {
        match self {
            PriorModel::Standard { .. } => PriorKind::Standard,
            PriorModel::Autoregressive { .. } => PriorKind::Autoregressive,
        }
    }

    pub fn has_parameters(&self) -> bool {
        matches!(self, PriorModel::Autoregressive { .. })
    }

    pub fn init<S: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<S>, rng: &mut R) -> Result<()> {
        if let PriorModel::Autoregressive {
            partition,
            prefix,
            slot_nets,
        } = self
        {
            let d0 = partition.slot_range(0).len();
            store.insert(format!("{prefix}.slot0.mean"), Tensor::zeros(&[d0]))?;
            store.insert(format!("{prefix}.slot0.log_std"), Tensor::zeros(&[d0]))?;
            for net in slot_nets {
                net.init(store, rng)?;
                net.zero_output_layer(store)?;
            }
        }
        Ok(())
    }

    fn dim(&self) -> usize {
        SlotPrior::<f64>::partition(self).dim()
    }

    /// `p(z_t | z_<t)` for `rows` rows. `prefix` holds slots `0..t`.
    pub fn conditional<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        prefix: Option<Var>,
        t: usize,
        rows: usize,
        frozen: bool,
    ) -> Result<DiagonalGaussian> {
        let partition = SlotPrior::<S>::partition(self);
        let d = partition.slot_range(t).len();
        match self {
            PriorModel::Standard { .. } => DiagonalGaussian::standard(tape, &[rows, d]),
            PriorModel::Autoregressive {
                prefix: name,
                slot_nets,
                ..
            } => {
                if t == 0 {
                    let get = |tape: &mut Tape<'_, S>, n: &str| {
                        if frozen {
                            tape.frozen(n)
                        } else {
                            tape.param(n)
                        }
                    };
                    let mean = get(tape, &format!("{name}.slot0.mean"))?;
                    let log_std = get(tape, &format!("{name}.slot0.log_std"))?;
                    let zeros = tape.constant(Tensor::zeros(&[rows, d]))?;
                    let mean = tape.add(zeros, mean)?;
                    let log_std = tape.add(zeros, log_std)?;
                    return Ok(DiagonalGaussian { mean, log_std });
                }
                let input = prefix.ok_or_else(|| {
                    Error::InvalidArgument(format!("slot {t} needs the preceding slots"))
                })?;
                if tape.shape(input) != [rows, partition.prefix_len(t)] {
                    return Err(Error::shape(
                        "prior_conditional",
                        tape.shape(input),
                        &[rows, partition.prefix_len(t)],
                    ));
                }
                let net = &slot_nets[t - 1];
                let out = if frozen {
                    net.forward_frozen(tape, input)?
                } else {
                    net.forward(tape, input)?
                };
                let mean = tape.slice(out, 0, d)?;
                let raw = tape.slice(out, d, 2 * d)?;
                let log_std = tape.tanh(raw)?;
                let log_std = tape.scale(log_std, S::lit(PRIOR_LOG_STD_BOUND))?;
                Ok(DiagonalGaussian { mean, log_std })
            }
        }
    }

    /// Conditionals of every slot given the preceding slots of `z`.
    pub fn conditionals<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        z: Var,
        frozen: bool,
    ) -> Result<Vec<DiagonalGaussian>> {
        let shape = tape.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::shape("prior_log_density", &shape, &[0, self.dim()]));
        }
        let partition = SlotPrior::<S>::partition(self).clone();
        let rows = shape[0];
        (0..partition.slots())
            .map(|t| {
                let prefix = if t == 0 {
                    None
                } else {
                    Some(tape.slice(z, 0, partition.prefix_len(t))?)
                };
                self.conditional(tape, prefix, t, rows, frozen)
            })
            .collect()
    }

    pub fn slot_log_densities_with<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        z: Var,
        frozen: bool,
    ) -> Result<Vec<Var>> {
        let partition = SlotPrior::<S>::partition(self).clone();
        let conds = self.conditionals(tape, z, frozen)?;
        conds
            .iter()
            .enumerate()
            .map(|(t, c)| {
                let r = partition.slot_range(t);
                let zs = tape.slice(z, r.start, r.end)?;
                c.log_density(tape, zs)
            })
            .collect()
    }

    /// Per-row `log p(z)`.
    pub fn log_density<S: Scalar>(&self, tape: &mut Tape<'_, S>, z: Var) -> Result<Var> {
        let parts = self.slot_log_densities_with(tape, z, false)?;
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = tape.add(acc, p)?;
        }
        Ok(acc)
    }

    pub fn sample<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        rows: usize,
        rng: &mut R,
    ) -> Result<Var> {
        self.sample_tail(tape, None, 0, rows, rng)
    }
}

impl<S: Scalar> SlotPrior<S> for PriorModel {
    fn partition(&self) -> &BandwidthPartition {
        match self {
            PriorModel::Standard { partition } | PriorModel::Autoregressive { partition, .. } => partition,
        }
    }

    /// Reparameterized in-fill: gradients reach both the received prefix and
    /// the prior's parameters.
    fn sample_tail<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        prefix: Option<Var>,
        first: usize,
        rows: usize,
        rng: &mut R,
    ) -> Result<Var> {
        let partition = SlotPrior::<S>::partition(self).clone();
        if first >= partition.slots() {
            return Err(Error::InvalidArgument(format!(
                "no slots left to sample after slot {first}"
            )));
        }
        if let PriorModel::Standard { .. } = self {
            let width = partition.dim() - partition.prefix_len(first);
            return tape.constant(standard_normal_tensor(&[rows, width], rng));
        }
        let mut sofar = prefix;
        let mut tail = Vec::new();
        for t in first..partition.slots() {
            let c = self.conditional(tape, sofar, t, rows, false)?;
            let s = c.sample(tape, rng)?;
            tail.push(s);
            sofar = Some(match sofar {
                Some(p) => tape.concat(&[p, s])?,
                None => s,
            });
        }
        if tail.len() == 1 {
            Ok(tail[0])
        } else {
            tape.concat(&tail)
        }
    }

    fn slot_log_densities(&self, tape: &mut Tape<'_, S>, z: Var) -> Result<Vec<Var>> {
        self.slot_log_densities_with(tape, z, false)
    }
}
