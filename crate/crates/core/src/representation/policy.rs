use std::sync::Arc;

use ndarray::Array2;

use super::{EncodedBatch, EncoderDims, EncoderStack};
use crate::diffcore::{mse, Layer, Layout, Mlp, Objective, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::toyworld::{evaluate_success, Sample, Trajectory};

/// Trajectory regressor: the encoder stack with the action code masked,
/// followed by a tanh MLP head. Guide models and downstream policies share
/// this architecture.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    encoders: EncoderStack,
    head: Mlp,
    layout: Arc<Layout>,
    n_encoder_entries: usize,
    n_encoder_values: usize,
}

impl PolicyNet {
    pub fn new(dims: EncoderDims, hidden: usize) -> Result<Self> {
        let encoders = EncoderStack::new(dims)?;
        let head = Mlp::stack("head", &[dims.d_model, hidden, 2 * dims.horizon], Layer::Tanh, None)?;
        let layout = Arc::new(Layout::concat(&[
            ("enc", encoders.layout().as_ref()),
            ("head", head.layout().as_ref()),
        ]));
        Ok(Self {
            n_encoder_entries: encoders.layout().entries().len(),
            n_encoder_values: encoders.layout().total_len(),
            encoders,
            head,
            layout,
        })
    }

    pub fn encoders(&self) -> &EncoderStack {
        &self.encoders
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn horizon(&self) -> usize {
        self.encoders.dims().horizon
    }

    pub fn init(&self, seed: u64) -> ParamVector {
        let mut values = self.encoders.init(seed).into_values();
        values.extend(self.head.init(seed.wrapping_add(100)).into_values());
        ParamVector::new(self.layout.clone(), values).unwrap()
    }

    /// The Φ parameters embedded in a full policy parameter vector.
    pub fn encoder_params(&self, params: &ParamVector) -> Result<ParamVector> {
        self.check(params)?;
        ParamVector::new(self.encoders.layout().clone(), params.values()[..self.n_encoder_values].to_vec())
    }

    fn check(&self, params: &ParamVector) -> Result<()> {
        if **params.layout() != *self.layout {
            return Err(Error::contract("parameters do not match the policy layout"));
        }
        Ok(())
    }

    pub fn record_prediction(&self, tape: &mut Tape, params: &[Var], scene: Var, instruction: Var) -> Result<Var> {
        let (enc, head) = params.split_at(self.n_encoder_entries);
        let ev = self.encoders.split(enc);
        let n = tape.shape(instruction).0;
        let no_action = tape.constant(Array2::zeros((n, 2 * self.horizon())));
        let h = self.encoders.record(tape, &ev, scene, instruction, no_action, false)?;
        self.head.forward(tape, head, h)
    }

    pub fn predict(&self, params: &ParamVector, batch: &EncodedBatch) -> Result<Array2<f64>> {
        self.check(params)?;
        let mut tape = Tape::new();
        let vars = params.load(&mut tape, false);
        let s = tape.constant(batch.scene.clone());
        let i = tape.constant(batch.instruction.clone());
        let y = self.record_prediction(&mut tape, &vars, s, i)?;
        Ok(tape.value(y).clone())
    }

    pub fn predict_trajectories(&self, params: &ParamVector, samples: &[Sample]) -> Result<Vec<Trajectory>> {
        let b = EncodedBatch::from_samples(samples)?;
        let y = self.predict(params, &b)?;
        Ok(y.outer_iter()
            .map(|r| Trajectory::from_flat(r.as_slice().unwrap()).clamped())
            .collect())
    }

    /// Fraction of samples whose predicted trajectory is a success.
    pub fn success_rate(&self, params: &ParamVector, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::contract("success rate over an empty evaluation set"));
        }
        let preds = self.predict_trajectories(params, samples)?;
        let mut hits = 0usize;
        for (s, p) in samples.iter().zip(&preds) {
            if evaluate_success(s, p)?.success {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.len() as f64)
    }
}

/// Mean squared trajectory error of a [`PolicyNet`] over a fixed batch.
pub struct PolicyObjective<'a> {
    net: &'a PolicyNet,
    data: &'a EncodedBatch,
}

impl<'a> PolicyObjective<'a> {
    pub fn new(net: &'a PolicyNet, data: &'a EncodedBatch) -> Result<Self> {
        if data.action.ncols() != 2 * net.horizon() {
            return Err(Error::contract(format!(
                "targets have {} columns, policy predicts {}",
                data.action.ncols(),
                2 * net.horizon()
            )));
        }
        Ok(Self { net, data })
    }

    pub fn data(&self) -> &EncodedBatch {
        self.data
    }
}

impl Objective for PolicyObjective<'_> {
    fn layout(&self) -> &Arc<Layout> {
        self.net.layout()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn record_loss(&self, tape: &mut Tape, params: &[Var], idx: &[usize]) -> Result<Var> {
        let b = self.data.select(idx);
        let s = tape.constant(b.scene);
        let i = tape.constant(b.instruction);
        let y = tape.constant(b.action);
        let pred = self.net.record_prediction(tape, params, s, i)?;
        Ok(mse(tape, pred, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{train, Schedule};
    use crate::toyworld::{generate_dataset, DatasetConfig};

    #[test]
    fn policy_learns_clean_data() {
        let data = generate_dataset(&DatasetConfig {
            n_samples: 300,
            fraction_noisy: 0.0,
            fraction_redundant: 0.0,
            seed: 3,
            horizon: 8,
        })
        .unwrap();
        let net = PolicyNet::new(EncoderDims::new(32, 8), 64).unwrap();
        let batch = EncodedBatch::from_samples(&data).unwrap();
        let obj = PolicyObjective::new(&net, &batch).unwrap();
        let p0 = net.init(1);
        let l0 = obj.loss(&p0, &obj.all_indices()).unwrap();
        let sched = Schedule {
            steps: 400,
            step_size: 0.05,
            batch_size: 32,
            seed: 2,
        };
        let p = train(&obj, &p0, &sched).unwrap();
        let l1 = obj.loss(&p, &obj.all_indices()).unwrap();
        assert!(l1 < 0.5 * l0, "{l0} -> {l1}");
        let enc = net.encoder_params(&p).unwrap();
        assert_eq!(enc.len(), net.encoders().layout().total_len());
    }
}
