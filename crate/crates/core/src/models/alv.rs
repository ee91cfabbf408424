use rand::Rng;

use super::mlp::Mlp;
use super::nets::gaussian_head;
use crate::autodiff::{ParameterStore, Tape, Var};
use crate::distributions::{standard_normal_tensor, DiagonalGaussian};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Auxiliary latent `V` for the decoder: posterior `Q(V | x, [y,] z)`, prior `N(0, I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlvComponents {
    posterior: Mlp,
    x_dim: usize,
    latent_dim: usize,
    v_dim: usize,
    use_y: bool,
}

impl AlvComponents {
    pub fn new(
        prefix: &str,
        x_dim: usize,
        latent_dim: usize,
        v_dim: usize,
        hidden: &[usize],
        use_y: bool,
    ) -> Result<Self> {
        let inputs = x_dim + latent_dim * if use_y { 2 } else { 1 };
        let mut dims = vec![inputs];
        dims.extend_from_slice(hidden);
        dims.push(2 * v_dim);
        Ok(AlvComponents {
            posterior: Mlp::new(prefix, dims)?,
            x_dim,
            latent_dim,
            v_dim,
            use_y,
        })
    }

    pub fn init<S: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<S>, rng: &mut R) -> Result<()> {
        self.posterior.init(store, rng)
    }

    pub fn v_dim(&self) -> usize {
        self.v_dim
    }

    pub fn uses_y(&self) -> bool {
        self.use_y
    }

    pub fn posterior<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        x: Var,
        y: Option<Var>,
        z: Var,
    ) -> Result<DiagonalGaussian> {
        let input = match (self.use_y, y) {
            (false, _) => tape.concat(&[x, z])?,
            (true, Some(y)) => tape.concat(&[x, y, z])?,
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "auxiliary posterior is configured to condition on y".into(),
                ))
            }
        };
        debug_assert_eq!(
            tape.shape(input)[1],
            self.x_dim + self.latent_dim * if self.use_y { 2 } else { 1 }
        );
        let out = self.posterior.forward(tape, input)?;
        gaussian_head(tape, out, self.v_dim)
    }

    /// Reparameterized `v` and per-row `KL(Q(V | ·) ‖ N(0, I))`.
    pub fn infer<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        x: Var,
        y: Option<Var>,
        z: Var,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let q = self.posterior(tape, x, y, z)?;
        let v = q.sample(tape, rng)?;
        let kl = q.kl_to_standard(tape)?;
        Ok((v, kl))
    }

    pub fn prior_sample<S: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, S>,
        rows: usize,
        rng: &mut R,
    ) -> Result<Var> {
        tape.constant(standard_normal_tensor(&[rows, self.v_dim], rng))
    }
}
