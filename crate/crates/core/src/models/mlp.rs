use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense network with tanh hidden layers and a linear output layer.
///
/// Layer `i` owns parameters `{prefix}.l{i}.w` and `{prefix}.l{i}.b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    prefix: String,
    dims: Vec<usize>,
    residual: bool,
}

impl Mlp {
    /// `dims` lists input, hidden and output widths.
    pub fn new(prefix: impl Into<String>, dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "network needs at least input and output widths, all positive; got {dims:?}"
            )));
        }
        Ok(Mlp {
            prefix: prefix.into(),
            dims,
            residual: false,
        })
    }

    /// Adds the input to the output; needs equal input and output widths.
    pub fn residual(mut self) -> Result<Self> {
        if self.input_dim() != self.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "residual network needs equal input and output widths, got {:?}",
                self.dims
            )));
        }
        self.residual = true;
        Ok(self)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn layer(&self, i: usize) -> String {
        format!("{}.l{i}", self.prefix)
    }

    pub fn init<S: Scalar, R: Rng + ?Sized>(&self, store: &mut ParameterStore<S>, rng: &mut R) -> Result<()> {
        for i in 0..self.dims.len() - 1 {
            store.init_dense(&self.layer(i), self.dims[i], self.dims[i + 1], rng)?;
        }
        Ok(())
    }

    /// Zeroes the output layer, so a residual network starts as the identity.
    pub fn zero_output_layer<S: Scalar>(&self, store: &mut ParameterStore<S>) -> Result<()> {
        let last = self.layer(self.dims.len() - 2);
        for suffix in ["w", "b"] {
            let t = store.get_mut(&format!("{last}.{suffix}"))?;
            let shape = t.shape().to_vec();
            *t = Tensor::zeros(&shape);
        }
        Ok(())
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        self.run(tape, x, false)
    }

    /// Same as [`Mlp::forward`] with parameters read as constants.
    pub fn forward_frozen<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        self.run(tape, x, true)
    }

    fn run<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var, frozen: bool) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::shape(
                "mlp",
                shape,
                &[shape.first().copied().unwrap_or(0), self.input_dim()],
            ));
        }
        let layers = self.dims.len() - 1;
        let mut h = x;
        for i in 0..layers {
            let name = self.layer(i);
            let (w, b) = if frozen {
                (tape.frozen(&format!("{name}.w"))?, tape.frozen(&format!("{name}.b"))?)
            } else {
                (tape.param(&format!("{name}.w"))?, tape.param(&format!("{name}.b"))?)
            };
            h = tape.affine(h, w, b)?;
            if i + 1 < layers {
                h = tape.tanh(h)?;
            }
        }
        if self.residual {
            h = tape.add(h, x)?;
        }
        Ok(h)
    }
}
