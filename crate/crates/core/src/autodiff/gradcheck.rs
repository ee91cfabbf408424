use rand::seq::index::sample;

use crate::autodiff::store::ParameterStore;
use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::{seeded_rng, SimRng};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Seed of the RNG substream handed to every loss evaluation.
    pub seed: u64,
    /// Coordinates checked per parameter tensor; smaller tensors are checked exhaustively.
    pub coords_per_param: usize,
    /// Multiplies analytic gradients before comparison. Only useful to test the checker.
    pub gradient_scale: f64,
    /// Hold `frozen` and `detach` nodes at their unperturbed values while probing,
    /// so the numeric derivative sees them as the constants backprop treats them as.
    pub hold_stopped: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            seed: 0,
            coords_per_param: 8,
            gradient_scale: 1.0,
            hold_stopped: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

fn eval_loss<S, F>(
    store: &ParameterStore<S>,
    seed: u64,
    held: Option<&[Vec<S>]>,
    loss_fn: &mut F,
) -> Result<(S, Vec<Vec<S>>)>
where
    S: Scalar,
    F: FnMut(&mut Tape<'_, S>, &mut SimRng) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    if let Some(h) = held {
        tape.replay_stopped(h.to_vec());
    }
    let mut rng = seeded_rng(seed);
    let root = loss_fn(&mut tape, &mut rng)?;
    Ok((tape.item(root), tape.stopped_values().to_vec()))
}

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// The loss is rebuilt for every probe with a fresh RNG seeded from
/// `options.seed`, so stochastic objectives are compared on one fixed noise
/// realization. Returns the maximum of `|analytic - numeric| / (|numeric| + 1e-8)`.
pub fn finite_difference_check<S, F>(
    store: &ParameterStore<S>,
    options: &GradCheckOptions,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: FnMut(&mut Tape<'_, S>, &mut SimRng) -> Result<Var>,
{
    if !(options.epsilon > 0.0 && options.epsilon <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1e-2], got {}",
            options.epsilon
        )));
    }
    let (first, stopped) = eval_loss(store, options.seed, None, &mut loss_fn)?;
    let (second, _) = eval_loss(store, options.seed, None, &mut loss_fn)?;
    let held = options.hold_stopped.then_some(stopped.as_slice());
    if first != second {
        return Err(Error::NonDeterministic {
            first: first.as_f64(),
            second: second.as_f64(),
        });
    }

    let analytic = {
        let mut tape = Tape::new(store);
        let mut rng = seeded_rng(options.seed);
        let root = loss_fn(&mut tape, &mut rng)?;
        tape.backward(root)?.into_params()
    };

    let eps = S::lit(options.epsilon);
    let mut probe = store.clone();
    let mut picker = seeded_rng(options.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (name, grad) in &analytic {
        let n = grad.numel();
        let coords: Vec<usize> = if n <= options.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut picker, n, options.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let original = probe.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = original + eps;
            let (plus, _) = eval_loss(&probe, options.seed, held, &mut loss_fn)?;
            probe.get_mut(name)?.data_mut()[i] = original - eps;
            let (minus, _) = eval_loss(&probe, options.seed, held, &mut loss_fn)?;
            probe.get_mut(name)?.data_mut()[i] = original;

            let numeric = ((plus - minus) / (eps + eps)).as_f64();
            let a = grad.data()[i].as_f64() * options.gradient_scale;
            let rel = (a - numeric).abs() / (numeric.abs() + 1e-8);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
