use ndarray::{s, Array1, Array2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::discrepancy::record_cf_discrepancy;
use super::sampler::{SamplerNet, DEFAULT_FREQUENCY_SCALE, DEFAULT_NOISE_DIM, DEFAULT_SAMPLER_HIDDEN};
use crate::diffcore::{ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::ft_engine::InfluenceRecord;
use crate::representation::{EncodedBatch, EncoderStack, SyntheticSample, INSTR_DIM, OBJECT_DIM, SLOTS};
use crate::toyworld::Sample;

const LINE_SEARCH_TOLERANCE: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;
const SAMPLER_SEED_SALT: u64 = 0x5A3D_11C7_0F9E_2B41;
const INIT_SEED_SALT: u64 = 0x1B87_3C4D_9E2A_6F05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    /// Coreset size as a fraction of the real dataset.
    pub eta: f64,
    pub n_frequencies: usize,
    pub steps: usize,
    /// Step applied to each synthetic sample: the gradient of the mean
    /// discrepancy is multiplied by the coreset size.
    pub generator_step_size: f64,
    pub sampler_step_size: f64,
    pub sampler_updates: usize,
    pub real_batch_size: usize,
    pub noise_dim: usize,
    pub sampler_hidden: usize,
    pub frequency_scale: f64,
    /// Use every real sample with its exact weight instead of sampling.
    pub full_sum: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            n_frequencies: 64,
            steps: 1000,
            generator_step_size: 1.0,
            sampler_step_size: 0.05,
            sampler_updates: 1,
            real_batch_size: 256,
            noise_dim: DEFAULT_NOISE_DIM,
            sampler_hidden: DEFAULT_SAMPLER_HIDDEN,
            frequency_scale: DEFAULT_FREQUENCY_SCALE,
            full_sum: false,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::contract(format!("eta {} outside (0, 1]", self.eta)));
        }
        if self.n_frequencies == 0 || self.real_batch_size == 0 || self.noise_dim == 0 || self.sampler_hidden == 0 {
            return Err(Error::contract("frequency count, batch size and sampler sizes must be positive"));
        }
        if !(self.generator_step_size > 0.0) || !(self.sampler_step_size >= 0.0) {
            return Err(Error::contract("step sizes must be positive"));
        }
        Ok(())
    }
}

/// ⌈η · n⌉, rejecting ratios that leave the coreset empty.
pub fn coreset_size(n: usize, eta: f64) -> Result<usize> {
    let exact = eta * n as f64;
    if !(eta > 0.0 && eta <= 1.0) || exact < 1.0 - 1e-9 {
        return Err(Error::contract(format!("eta {eta} of {n} samples leaves an empty coreset")));
    }
    Ok(((exact - 1e-9).ceil() as usize).clamp(1, n))
}

/// Discrepancy before and after each half of one minimax round, all on the
/// same real batch and noise draw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub start: f64,
    pub after_sampler: f64,
    pub after_generator: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticCoreset {
    pub samples: Vec<SyntheticSample>,
    pub rounds: Vec<RoundStats>,
    pub sampler: ParamVector,
}

#[derive(Clone, Debug)]
pub struct FeatureCoreset {
    pub features: Array2<f64>,
    pub rounds: Vec<RoundStats>,
    pub sampler: ParamVector,
}

trait Generator {
    fn record(&self, tape: &mut Tape, state: &[Var]) -> Result<Var>;
}

struct RawGenerator<'a> {
    encoders: &'a EncoderStack,
    params: &'a ParamVector,
}

impl Generator for RawGenerator<'_> {
    fn record(&self, tape: &mut Tape, state: &[Var]) -> Result<Var> {
        let vars = self.params.load(tape, false);
        let ev = self.encoders.split(&vars);
        self.encoders.record(tape, &ev, state[0], state[1], state[2], true)
    }
}

struct FeatureGenerator;

impl Generator for FeatureGenerator {
    fn record(&self, _tape: &mut Tape, state: &[Var]) -> Result<Var> {
        Ok(state[0])
    }
}

struct Game<'a, G> {
    generator: G,
    sampler: SamplerNet,
    psi: ParamVector,
    state: Vec<Array2<f64>>,
    coreset: usize,
    real: &'a Array2<f64>,
    weights: Vec<f64>,
    sampling: Option<WeightedIndex<f64>>,
    cfg: DistillConfig,
    rng: ChaCha8Rng,
}

fn finite(x: f64, step: usize, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Training {
            step,
            reason: format!("non-finite discrepancy during {what}"),
        })
    }
}

impl<'a, G: Generator> Game<'a, G> {
    fn new(
        generator: G,
        real: &'a Array2<f64>,
        weights: &[f64],
        state: Vec<Array2<f64>>,
        coreset: usize,
        cfg: &DistillConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if weights.len() != real.nrows() || real.nrows() == 0 {
            return Err(Error::contract("one weight per real feature is required"));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(total > 0.0) {
            return Err(Error::contract("weights must be nonnegative with a positive sum"));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let sampling = if cfg.full_sum {
            None
        } else {
            Some(WeightedIndex::new(&weights).map_err(|e| Error::contract(e.to_string()))?)
        };
        let sampler = SamplerNet::new(cfg.noise_dim, cfg.sampler_hidden, real.ncols(), cfg.frequency_scale)?;
        let psi = sampler.init(cfg.seed ^ SAMPLER_SEED_SALT);
        Ok(Self {
            generator,
            sampler,
            psi,
            state,
            coreset,
            real,
            weights,
            sampling,
            cfg: *cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    fn batch(&mut self) -> (Array2<f64>, Vec<f64>) {
        match &self.sampling {
            None => (self.real.clone(), self.weights.clone()),
            Some(dist) => {
                let b = self.cfg.real_batch_size;
                let idx: Vec<usize> = (0..b).map(|_| dist.sample(&mut self.rng)).collect();
                (self.real.select(Axis(0), &idx), vec![1.0 / b as f64; b])
            }
        }
    }

    fn syn_features(&self) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.state.iter().map(|a| tape.constant(a.clone())).collect();
        let h = self.generator.record(&mut tape, &vars)?;
        Ok(tape.value(h).clone())
    }

    /// Discrepancy and its gradient with respect to ψ, synthetic side fixed.
    fn sampler_objective(
        &self,
        psi: &ParamVector,
        noise: &Array2<f64>,
        real: &Array2<f64>,
        w: &[f64],
        syn: &Array2<f64>,
        with_grad: bool,
    ) -> Result<(f64, Option<ParamVector>)> {
        let mut tape = Tape::new();
        let vars = psi.load(&mut tape, with_grad);
        let z = tape.constant(noise.clone());
        let f = self.sampler.record(&mut tape, &vars, z)?;
        let r = tape.constant(real.clone());
        let sy = tape.constant(syn.clone());
        let d = record_cf_discrepancy(&mut tape, r, w, sy, f);
        let value = tape.scalar(d);
        let grad = if with_grad && value.is_finite() {
            let g = tape.backward(d, &vars);
            Some(ParamVector::gather(psi.layout(), &tape, &g))
        } else {
            None
        };
        Ok((value, grad))
    }

    fn generator_objective(
        &self,
        state: &[Array2<f64>],
        real: &Array2<f64>,
        w: &[f64],
        freqs: &Array2<f64>,
        with_grad: bool,
    ) -> Result<(f64, Option<Vec<Array2<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = state
            .iter()
            .map(|a| {
                if with_grad {
                    tape.variable(a.clone())
                } else {
                    tape.constant(a.clone())
                }
            })
            .collect();
        let h = self.generator.record(&mut tape, &vars)?;
        let r = tape.constant(real.clone());
        let f = tape.constant(freqs.clone());
        let d = record_cf_discrepancy(&mut tape, r, w, h, f);
        let value = tape.scalar(d);
        let grad = if with_grad && value.is_finite() {
            let g = tape.backward(d, &vars);
            Some(g.iter().map(|v| tape.value(*v).clone()).collect())
        } else {
            None
        };
        Ok((value, grad))
    }

    fn round(&mut self, step: usize) -> Result<RoundStats> {
        let (real, w) = self.batch();
        let noise = self.sampler.draw_noise(&mut self.rng, self.cfg.n_frequencies);
        let syn = self.syn_features()?;

        let mut start = None;
        let mut current = 0.0;
        for _ in 0..self.cfg.sampler_updates.max(1) {
            let (d0, grad) = self.sampler_objective(&self.psi, &noise, &real, &w, &syn, self.cfg.sampler_updates > 0)?;
            let d0 = finite(d0, step, "sampler evaluation")?;
            start.get_or_insert(d0);
            current = d0;
            let Some(grad) = grad else { break };
            let mut eta = self.cfg.sampler_step_size;
            for _ in 0..MAX_HALVINGS {
                let mut trial = self.psi.clone();
                trial.axpy(eta, &grad);
                let (d1, _) = self.sampler_objective(&trial, &noise, &real, &w, &syn, false)?;
                if d1.is_finite() && d1 >= d0 - LINE_SEARCH_TOLERANCE {
                    self.psi = trial;
                    current = d1;
                    break;
                }
                eta *= 0.5;
            }
        }
        let after_sampler = current;

        let freqs = self.sampler.frequencies(&self.psi, &noise)?;
        let (d0, grad) = self.generator_objective(&self.state, &real, &w, &freqs, true)?;
        let d0 = finite(d0, step, "generator evaluation")?;
        let grad = grad.expect("gradient requested");
        let mut eta = self.cfg.generator_step_size * self.coreset as f64;
        let mut after_generator = d0;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<Array2<f64>> = self.state.iter().zip(&grad).map(|(s, g)| s - &(g * eta)).collect();
            let (d1, _) = self.generator_objective(&trial, &real, &w, &freqs, false)?;
            if d1.is_finite() && d1 <= d0 + LINE_SEARCH_TOLERANCE {
                self.state = trial;
                after_generator = d1;
                break;
            }
            eta *= 0.5;
        }
        if self.state.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::Training {
                step,
                reason: "non-finite synthetic sample".into(),
            });
        }
        Ok(RoundStats {
            start: start.unwrap_or(after_sampler),
            after_sampler,
            after_generator,
        })
    }

    fn run(mut self) -> Result<(Vec<Array2<f64>>, Vec<RoundStats>, ParamVector)> {
        let mut rounds = Vec::with_capacity(self.cfg.steps);
        for step in 0..self.cfg.steps {
            rounds.push(self.round(step)?);
        }
        Ok((self.state, rounds, self.psi))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn align_weights(dataset: &[Sample], records: &[InfluenceRecord]) -> Result<Vec<f64>> {
    let by_id: std::collections::HashMap<u32, f64> = records.iter().map(|r| (r.sample_id, r.weight)).collect();
    if by_id.len() != records.len() {
        return Err(Error::contract("duplicate sample ids in influence records"));
    }
    let total: f64 = records.iter().map(|r| r.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("influence weights sum to {total}, expected 1")));
    }
    dataset
        .iter()
        .map(|s| {
            by_id
                .get(&s.id)
                .copied()
                .ok_or_else(|| Error::contract(format!("no influence record for sample {}", s.id)))
        })
        .collect()
}

/// Synthesizes ⌈η·N⌉ samples in the continuous input space whose features
/// match the influence-weighted real feature distribution.
pub fn distill(
    dataset: &[Sample],
    records: &[InfluenceRecord],
    encoders: &EncoderStack,
    encoder_params: &ParamVector,
    cfg: &DistillConfig,
) -> Result<SyntheticCoreset> {
    cfg.validate()?;
    let m = coreset_size(dataset.len(), cfg.eta)?;
    let weights = align_weights(dataset, records)?;
    let real = encoders.features(encoder_params, &EncodedBatch::from_samples(dataset)?)?;
    let horizon = encoders.dims().horizon;

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_SEED_SALT);
    let state = vec![
        gaussian(&mut init_rng, m * SLOTS, OBJECT_DIM),
        gaussian(&mut init_rng, m, INSTR_DIM),
        gaussian(&mut init_rng, m, 2 * horizon),
    ];
    let generator = RawGenerator {
        encoders,
        params: encoder_params,
    };
    let (state, rounds, sampler) = Game::new(generator, &real, &weights, state, m, cfg)?.run()?;
    let samples = (0..m)
        .map(|i| SyntheticSample {
            scene: state[0].slice(s![i * SLOTS..(i + 1) * SLOTS, ..]).to_owned(),
            instruction: state[1].row(i).to_owned(),
            action: Array1::from(state[2].row(i).to_vec()),
        })
        .collect();
    Ok(SyntheticCoreset { samples, rounds, sampler })
}

/// Feature-space variant: the synthetic features themselves are optimized.
pub fn distill_features(real: &Array2<f64>, weights: &[f64], size: usize, cfg: &DistillConfig) -> Result<FeatureCoreset> {
    if size == 0 {
        return Err(Error::contract("coreset size must be positive"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_SEED_SALT);
    let state = vec![gaussian(&mut init_rng, size, real.ncols())];
    let (mut state, rounds, sampler) = Game::new(FeatureGenerator, real, weights, state, size, cfg)?.run()?;
    Ok(FeatureCoreset {
        features: state.remove(0),
        rounds,
        sampler,
    })
}

/// Real-sample indices drawn with replacement with probability ∝ weight.
pub fn weighted_draws(weights: &[f64], n: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::contract(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}
