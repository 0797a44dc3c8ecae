use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::objective::Objective;
use super::params::{Layout, ParamVector};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Linear {
        name: String,
        inputs: usize,
        outputs: usize,
    },
    Tanh,
    LeakyRelu {
        slope: f64,
    },
    /// Normalizes each row to zero mean and unit variance, then applies a
    /// learned per-feature gain and shift.
    LayerNorm {
        name: String,
        dim: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    #[default]
    MeanSquaredError,
}

/// Inputs with regression targets, one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::contract(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (
            self.inputs.select(ndarray::Axis(0), idx),
            self.targets.select(ndarray::Axis(0), idx),
        )
    }
}

/// Feed-forward network with a scalar regression loss.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Layer>,
    /// Index of each layer's first layout entry (unused for activations).
    param_slots: Vec<usize>,
    layout: Arc<Layout>,
    loss_kind: LossKind,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut layout = Layout::new();
        let mut param_slots = Vec::with_capacity(layers.len());
        let mut width: Option<usize> = None;
        for layer in &layers {
            param_slots.push(layout.entries().len());
            match layer {
                Layer::Linear { name, inputs, outputs } => {
                    if let Some(w) = width {
                        if w != *inputs {
                            return Err(Error::contract(format!("layer {name} expects {inputs} inputs but receives {w}")));
                        }
                    }
                    layout.push(format!("{name}.weight"), vec![*inputs, *outputs]);
                    layout.push(format!("{name}.bias"), vec![*outputs]);
                    width = Some(*outputs);
                }
                Layer::LayerNorm { name, dim } => {
                    if width.is_some_and(|w| w != *dim) {
                        return Err(Error::contract(format!("layer norm {name} width mismatch")));
                    }
                    layout.push(format!("{name}.gain"), vec![*dim]);
                    layout.push(format!("{name}.shift"), vec![*dim]);
                }
                Layer::Tanh | Layer::LeakyRelu { .. } => {}
            }
        }
        if width.is_none() {
            return Err(Error::contract("network has no linear layer"));
        }
        Ok(Self {
            layers,
            param_slots,
            layout: Arc::new(layout),
            loss_kind: LossKind::MeanSquaredError,
        })
    }

    /// Linear layers of the given widths with `hidden` activation between them.
    pub fn stack(prefix: &str, widths: &[usize], hidden: Layer, output: Option<Layer>) -> Result<Self> {
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            layers.push(Layer::Linear {
                name: format!("{prefix}{i}"),
                inputs: w[0],
                outputs: w[1],
            });
            if i + 2 < widths.len() {
                layers.push(hidden.clone());
            }
        }
        if let Some(out) = output {
            layers.push(out);
        }
        Self::new(layers)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Linear { inputs, .. } => Some(*inputs),
                _ => None,
            })
            .unwrap()
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Linear { outputs, .. } => Some(*outputs),
                _ => None,
            })
            .unwrap()
    }

    /// Gaussian weights with variance 1/fan-in, zero biases, unit gains.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamVector::zeros(self.layout.clone());
        for (layer, &slot) in self.layers.iter().zip(&self.param_slots) {
            match layer {
                Layer::Linear { inputs, .. } => {
                    let sd = 1.0 / (*inputs as f64).sqrt();
                    for w in p.entry_mut(slot) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *w = sd * z;
                    }
                }
                Layer::LayerNorm { .. } => p.entry_mut(slot).fill(1.0),
                _ => {}
            }
        }
        p
    }

    /// Records the forward pass. `params` are this network's layout entries
    /// in order.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        debug_assert_eq!(params.len(), self.layout.entries().len());
        let cols = tape.shape(x).1;
        if cols != self.input_dim() {
            return Err(Error::contract(format!(
                "input has {cols} features, network expects {}",
                self.input_dim()
            )));
        }
        let mut h = x;
        for (i, (layer, &slot)) in self.layers.iter().zip(&self.param_slots).enumerate() {
            h = match layer {
                Layer::Linear { .. } => {
                    let z = tape.matmul(h, params[slot]);
                    tape.add_row(z, params[slot + 1])
                }
                Layer::Tanh => tape.tanh(h),
                Layer::LeakyRelu { slope } => tape.leaky_relu(h, *slope),
                Layer::LayerNorm { .. } => layer_norm(tape, h, params[slot], params[slot + 1]),
            };
            if !tape.is_finite(h) {
                return Err(Error::Numeric {
                    context: layer_label(layer, i),
                });
            }
        }
        Ok(h)
    }

    /// Plain forward evaluation without gradient bookkeeping.
    pub fn predict(&self, params: &ParamVector, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars = params.load(&mut tape, false);
        let x = tape.constant(inputs.clone());
        let y = self.forward(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        let obj = Supervised::new(self, batch)?;
        obj.loss(params, &obj.all_indices())
    }

    pub fn gradient(&self, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
        let obj = Supervised::new(self, batch)?;
        obj.gradient(params, &obj.all_indices())
    }

    pub fn hvp(&self, params: &ParamVector, batch: &Batch, v: &ParamVector) -> Result<ParamVector> {
        let obj = Supervised::new(self, batch)?;
        obj.hvp(params, &obj.all_indices(), v)
    }
}

fn layer_label(layer: &Layer, i: usize) -> String {
    match layer {
        Layer::Linear { name, .. } | Layer::LayerNorm { name, .. } => name.clone(),
        Layer::Tanh => format!("layer {i} (tanh)"),
        Layer::LeakyRelu { .. } => format!("layer {i} (leaky relu)"),
    }
}

/// Row-wise layer normalization built from differentiable primitives.
pub fn layer_norm(tape: &mut Tape, x: Var, gain: Var, shift: Var) -> Var {
    let (m, n) = tape.shape(x);
    let inv_n = 1.0 / n as f64;
    let s = tape.sum_cols(x);
    let mu = tape.scale(s, inv_n);
    let mu = tape.tile_cols(mu, n);
    let xc = tape.sub(x, mu);
    let sq = tape.mul(xc, xc);
    let ss = tape.sum_cols(sq);
    let var = tape.scale(ss, inv_n);
    let var = tape.add_scalar(var, LAYER_NORM_EPS);
    let rstd = tape.powf(var, -0.5);
    let rstd = tape.tile_cols(rstd, n);
    let y = tape.mul(xc, rstd);
    let g = tape.tile_rows(gain, m);
    let y = tape.mul(y, g);
    tape.add_row(y, shift)
}

/// Mean over rows of the per-row squared error summed across outputs.
pub fn mse(tape: &mut Tape, pred: Var, target: Var) -> Var {
    let rows = tape.shape(pred).0 as f64;
    let r = tape.sub(pred, target);
    let ss = tape.sum_squares(r);
    tape.scale(ss, 1.0 / rows)
}

/// An [`Mlp`] paired with a fixed labeled dataset.
pub struct Supervised<'a> {
    model: &'a Mlp,
    data: &'a Batch,
}

impl<'a> Supervised<'a> {
    pub fn new(model: &'a Mlp, data: &'a Batch) -> Result<Self> {
        if data.inputs.ncols() != model.input_dim() {
            return Err(Error::contract(format!(
                "batch has {} input features, model expects {}",
                data.inputs.ncols(),
                model.input_dim()
            )));
        }
        if data.targets.ncols() != model.output_dim() {
            return Err(Error::contract(format!(
                "batch has {} targets per row, model predicts {}",
                data.targets.ncols(),
                model.output_dim()
            )));
        }
        Ok(Self { model, data })
    }
}

impl Objective for Supervised<'_> {
    fn layout(&self) -> &Arc<Layout> {
        self.model.layout()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn record_loss(&self, tape: &mut Tape, params: &[Var], idx: &[usize]) -> Result<Var> {
        let (x, y) = self.data.select(idx);
        let x = tape.constant(x);
        let y = tape.constant(y);
        let pred = self.model.forward(tape, params, x)?;
        match self.model.loss_kind {
            LossKind::MeanSquaredError => Ok(mse(tape, pred, y)),
        }
    }
}
