use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Layout, ParamVector};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// A mean loss over an indexable collection of samples, recordable on a tape.
///
/// Implementors only describe the forward computation; values, gradients and
/// Hessian-vector products all come from the tape.
pub trait Objective: Sync {
    fn layout(&self) -> &Arc<Layout>;

    fn num_samples(&self) -> usize;

    /// Records the mean loss over `idx` given per-entry parameter leaves.
    fn record_loss(&self, tape: &mut Tape, params: &[Var], idx: &[usize]) -> Result<Var>;

    fn loss(&self, params: &ParamVector, idx: &[usize]) -> Result<f64> {
        self.check(params, idx)?;
        let mut tape = Tape::new();
        let vars = params.load(&mut tape, false);
        let l = self.record_loss(&mut tape, &vars, idx)?;
        finite_scalar(&tape, l)
    }

    fn value_and_gradient(&self, params: &ParamVector, idx: &[usize]) -> Result<(f64, ParamVector)> {
        self.check(params, idx)?;
        let mut tape = Tape::new();
        let vars = params.load(&mut tape, true);
        let l = self.record_loss(&mut tape, &vars, idx)?;
        let value = finite_scalar(&tape, l)?;
        let grads = tape.backward(l, &vars);
        Ok((value, ParamVector::gather(self.layout(), &tape, &grads)))
    }

    fn gradient(&self, params: &ParamVector, idx: &[usize]) -> Result<ParamVector> {
        self.value_and_gradient(params, idx).map(|(_, g)| g)
    }

    /// H·v where H is the Hessian of the mean loss over `idx`.
    fn hvp(&self, params: &ParamVector, idx: &[usize], v: &ParamVector) -> Result<ParamVector> {
        self.check(params, idx)?;
        params.check_layout(v)?;
        let mut tape = Tape::new();
        let vars = params.load(&mut tape, true);
        let l = self.record_loss(&mut tape, &vars, idx)?;
        finite_scalar(&tape, l)?;
        let grads = tape.backward(l, &vars);
        let dirs = v.load(&mut tape, false);
        let mut gv: Option<Var> = None;
        for (g, d) in grads.iter().zip(&dirs) {
            let term = tape.dot(*g, *d);
            gv = Some(match gv {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
        let gv = gv.ok_or_else(|| Error::contract("empty parameter layout"))?;
        let hv = tape.backward(gv, &vars);
        let out = ParamVector::gather(self.layout(), &tape, &hv);
        if !out.is_finite() {
            return Err(Error::Numeric {
                context: "hessian-vector product".into(),
            });
        }
        Ok(out)
    }

    fn all_indices(&self) -> Vec<usize> {
        (0..self.num_samples()).collect()
    }

    fn check(&self, params: &ParamVector, idx: &[usize]) -> Result<()> {
        if **params.layout() != **self.layout() {
            return Err(Error::contract("parameters do not match the objective layout"));
        }
        if idx.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= self.num_samples()) {
            return Err(Error::contract(format!(
                "sample index {bad} out of range ({} samples)",
                self.num_samples()
            )));
        }
        Ok(())
    }
}

fn finite_scalar(tape: &Tape, v: Var) -> Result<f64> {
    let x = tape.scalar(v);
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numeric { context: "loss".into() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub steps: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Draws `batch_size` distinct indices out of `n` (all of them when the batch
/// covers the set), sorted ascending.
pub fn draw_batch(rng: &mut ChaCha8Rng, n: usize, batch_size: usize) -> Vec<usize> {
    if batch_size >= n {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, batch_size).into_vec();
    idx.sort_unstable();
    idx
}

/// Plain minibatch SGD with a constant step size.
pub fn train<O: Objective + ?Sized>(objective: &O, params: &ParamVector, schedule: &Schedule) -> Result<ParamVector> {
    let mut p = params.clone();
    if schedule.steps == 0 {
        return Ok(p);
    }
    if schedule.batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let n = objective.num_samples();
    if n == 0 {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    for step in 0..schedule.steps {
        let idx = draw_batch(&mut rng, n, schedule.batch_size);
        let (_, g) = objective.value_and_gradient(&p, &idx).map_err(|e| Error::Training {
            step,
            reason: e.to_string(),
        })?;
        p.axpy(-schedule.step_size, &g);
        if !p.is_finite() {
            return Err(Error::Training {
                step,
                reason: "parameters became non-finite".into(),
            });
        }
    }
    Ok(p)
}
