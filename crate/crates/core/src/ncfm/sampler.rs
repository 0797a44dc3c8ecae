use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{Layer, Mlp, ParamVector, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_NOISE_DIM: usize = 16;
pub const DEFAULT_FREQUENCY_SCALE: f64 = 0.3;
pub const DEFAULT_SAMPLER_HIDDEN: usize = 32;

/// ψ: noise → frequency vector. Three linear layers, each followed by layer
/// normalization; leaky ReLU (slope 0.2) after the first two and tanh after
/// the last, so every component lies in (−scale, scale).
#[derive(Clone, Debug)]
pub struct SamplerNet {
    mlp: Mlp,
    noise_dim: usize,
    scale: f64,
}

impl SamplerNet {
    pub fn new(noise_dim: usize, hidden: usize, out_dim: usize, frequency_scale: f64) -> Result<Self> {
        if !(frequency_scale > 0.0) {
            return Err(Error::contract("frequency scale must be positive"));
        }
        let lin = |name: &str, i, o| Layer::Linear {
            name: name.into(),
            inputs: i,
            outputs: o,
        };
        let ln = |name: &str, dim| Layer::LayerNorm { name: name.into(), dim };
        let leaky = Layer::LeakyRelu { slope: 0.2 };
        let mlp = Mlp::new(vec![
            lin("psi.l0", noise_dim, hidden),
            ln("psi.n0", hidden),
            leaky.clone(),
            lin("psi.l1", hidden, hidden),
            ln("psi.n1", hidden),
            leaky,
            lin("psi.l2", hidden, out_dim),
            ln("psi.n2", out_dim),
            Layer::Tanh,
        ])?;
        Ok(Self {
            mlp,
            noise_dim,
            scale: frequency_scale,
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn frequency_scale(&self) -> f64 {
        self.scale
    }

    pub fn layout(&self) -> &std::sync::Arc<crate::diffcore::Layout> {
        self.mlp.layout()
    }

    pub fn init(&self, seed: u64) -> ParamVector {
        self.mlp.init(seed)
    }

    pub fn draw_noise(&self, rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, self.noise_dim), || StandardNormal.sample(rng))
    }

    pub fn record(&self, tape: &mut Tape, params: &[Var], noise: Var) -> Result<Var> {
        let t = self.mlp.forward(tape, params, noise)?;
        Ok(tape.scale(t, self.scale))
    }

    pub fn frequencies(&self, params: &ParamVector, noise: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.mlp.predict(params, noise)? * self.scale)
    }
}

/// `n` frequency vectors from seeded standard-normal noise, one per row.
pub fn sample_frequencies(sampler: &SamplerNet, params: &ParamVector, n: usize, seed: u64) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::contract("at least one frequency is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = sampler.draw_noise(&mut rng, n);
    sampler.frequencies(params, &noise)
}
