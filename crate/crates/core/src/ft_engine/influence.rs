use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::guide::GuideModel;
use super::lissa::{lissa_ihvp, LissaConfig};
use crate::diffcore::{Objective, ParamVector};
use crate::error::{Error, Result};
use crate::representation::{EncodedBatch, PolicyObjective};
use crate::toyworld::{instantiate_counterexample, select_template, semantic_parse, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulationConfig {
    pub beta: f64,
    pub weight_floor: f64,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            weight_floor: 1e-6,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::contract("beta must be a finite nonnegative number"));
        }
        if !(self.weight_floor > 0.0) {
            return Err(Error::contract("weight floor must be positive"));
        }
        Ok(())
    }
}

/// w = base · (1 + tanh(β · (score_i − score_contrast))), floored.
pub fn modulate_weight(score_base: f64, score_i: f64, score_contrast: f64, cfg: &ModulationConfig) -> f64 {
    let w = score_base * (1.0 + (cfg.beta * (score_i - score_contrast)).tanh());
    if w.is_nan() {
        return cfg.weight_floor;
    }
    w.max(cfg.weight_floor)
}

/// Gradient of the loss on each listed sample on its own.
pub fn per_sample_gradients<O: Objective + ?Sized>(objective: &O, params: &ParamVector, idx: &[usize]) -> Result<Vec<ParamVector>> {
    idx.par_iter().map(|&i| objective.gradient(params, &[i])).collect()
}

pub fn mean_gradient<O: Objective + ?Sized>(objective: &O, params: &ParamVector) -> Result<ParamVector> {
    let grads = per_sample_gradients(objective, params, &objective.all_indices())?;
    let mut mean = ParamVector::zeros(params.layout().clone());
    let inv = 1.0 / grads.len() as f64;
    for g in &grads {
        mean.axpy(inv, g);
    }
    Ok(mean)
}

/// Mean over test samples of (H + λI)⁻¹ ∇L(test).
///
/// Every test sample's recursion uses the same minibatch sequence, which
/// makes the estimator linear in its input; the mean of the per-sample
/// estimates therefore equals one recursion on the mean test gradient.
pub fn test_ihvp<O, T>(train: &O, test: &T, params: &ParamVector, cfg: &LissaConfig, seed: u64) -> Result<ParamVector>
where
    O: Objective + ?Sized,
    T: Objective + ?Sized,
{
    if test.num_samples() == 0 {
        return Err(Error::contract("influence needs a nonempty test set"));
    }
    let g = mean_gradient(test, params)?;
    lissa_ihvp(train, params, &g, cfg, seed)
}

/// Stored scores sᵀ∇L(train) for given train gradients: the negated influence
/// on test loss, so that helpful samples score positive.
pub fn scores_from_gradients(test_ihvp: &ParamVector, grads: &[ParamVector]) -> Vec<f64> {
    grads.iter().map(|g| test_ihvp.dot(g)).collect()
}

/// Base influence of every training sample on the mean test loss.
///
/// The influence of upweighting sample i on the test loss is
/// −∇L(test)ᵀ H⁻¹ ∇L(i), negative for helpful samples; the returned score
/// flips the sign so that larger is better.
pub fn score_base<O, T>(train: &O, test: &T, params: &ParamVector, cfg: &LissaConfig, seed: u64) -> Result<Vec<f64>>
where
    O: Objective + ?Sized,
    T: Objective + ?Sized,
{
    let s = test_ihvp(train, test, params, cfg, seed)?;
    train
        .all_indices()
        .par_iter()
        .map(|&i| Ok(s.dot(&train.gradient(params, &[i])?)))
        .collect()
}

fn sample_gradient(guide: &GuideModel, sample: &Sample) -> Result<ParamVector> {
    let batch = EncodedBatch::from_samples(std::slice::from_ref(sample))?;
    let obj = PolicyObjective::new(&guide.net, &batch)?;
    obj.gradient(&guide.params, &[0])
}

/// Gradient-dot-product influence of an elite sample and of its
/// counterexample(s) on the test set: mean_t ∇L(t)ᵀ∇L(d). Contrast scores
/// are averaged when several counterexamples are given.
pub fn contrastive_scores(
    guide: &GuideModel,
    elite: &Sample,
    contrasts: &[Sample],
    mean_test_gradient: &ParamVector,
) -> Result<(f64, f64)> {
    if contrasts.is_empty() {
        return Err(Error::contract("contrastive scoring needs at least one counterexample"));
    }
    let si = mean_test_gradient.dot(&sample_gradient(guide, elite)?);
    let mut sc = 0.0;
    for c in contrasts {
        sc += mean_test_gradient.dot(&sample_gradient(guide, c)?);
    }
    Ok((si, sc / contrasts.len() as f64))
}

/// Number of elites for `percent` of `n`: ⌈percent · n / 100⌉.
pub fn elite_count(n: usize, percent: f64) -> Result<usize> {
    let exact = percent * n as f64 / 100.0;
    if !(percent > 0.0 && percent <= 100.0) || exact < 1.0 - 1e-9 {
        return Err(Error::contract(format!(
            "elite ratio {percent}% of {n} samples selects fewer than one sample"
        )));
    }
    Ok(((exact - 1e-9).ceil() as usize).clamp(1, n))
}

/// Positions of the `count` highest scores; ties go to the smaller id.
pub fn top_positions(scores: &[f64], ids: &[u32], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b])));
    order.truncate(count);
    order
}

/// Divides by the sum. Fails when every weight sits at the floor unless the
/// uniform fallback is enabled.
pub fn normalize_weights(raw: &[f64], floor: f64, uniform_fallback: bool) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::contract("no weights to normalize"));
    }
    if raw.iter().all(|&w| w <= floor) {
        if uniform_fallback {
            return Ok(vec![1.0 / raw.len() as f64; raw.len()]);
        }
        return Err(Error::DegenerateWeights { floor });
    }
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|w| w / total).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRecord {
    pub sample_id: u32,
    pub score_base: f64,
    pub is_elite: bool,
    pub score_i: Option<f64>,
    pub score_contrast: Option<f64>,
    /// Normalized weight; all records of one assessment sum to 1.
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssessConfig {
    pub lissa: LissaConfig,
    pub modulation: ModulationConfig,
    pub elite_percent: f64,
    #[serde(default = "one")]
    pub counterexamples: usize,
    #[serde(default)]
    pub uniform_fallback: bool,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl Default for AssessConfig {
    fn default() -> Self {
        Self {
            lissa: LissaConfig::default(),
            modulation: ModulationConfig::default(),
            elite_percent: 5.0,
            counterexamples: 1,
            uniform_fallback: false,
            seed: 0,
        }
    }
}

impl AssessConfig {
    pub fn validate(&self) -> Result<()> {
        self.lissa.validate()?;
        self.modulation.validate()?;
        if self.counterexamples == 0 {
            return Err(Error::contract("at least one counterexample per elite"));
        }
        Ok(())
    }
}

/// Base scores for every sample, contrastive refinement for the top-K%,
/// then normalized weights. Records come back in dataset order.
pub fn assess(guide: &GuideModel, dataset: &[Sample], test_set: &[Sample], cfg: &AssessConfig) -> Result<Vec<InfluenceRecord>> {
    cfg.validate()?;
    let n_elite = elite_count(dataset.len(), cfg.elite_percent)?;
    let ids: Vec<u32> = dataset.iter().map(|s| s.id).collect();
    let test_ids: std::collections::HashSet<u32> = test_set.iter().map(|s| s.id).collect();
    if dataset.iter().any(|s| test_ids.contains(&s.id) && test_set.contains(s)) {
        return Err(Error::contract("test set overlaps the training set"));
    }

    let train_batch = EncodedBatch::from_samples(dataset)?;
    let test_batch = EncodedBatch::from_samples(test_set)?;
    let train_obj = PolicyObjective::new(&guide.net, &train_batch)?;
    let test_obj = PolicyObjective::new(&guide.net, &test_batch)?;

    let g_test = mean_gradient(&test_obj, &guide.params)?;
    let s = lissa_ihvp(&train_obj, &guide.params, &g_test, &cfg.lissa, cfg.seed)?;
    let base: Vec<f64> = train_obj
        .all_indices()
        .par_iter()
        .map(|&i| Ok(s.dot(&train_obj.gradient(&guide.params, &[i])?)))
        .collect::<Result<_>>()?;

    let elites = top_positions(&base, &ids, n_elite);
    let mut contrast: Vec<Option<(f64, f64)>> = vec![None; dataset.len()];
    let refined: Vec<(usize, (f64, f64))> = elites
        .par_iter()
        .map(|&pos| {
            let sample = &dataset[pos];
            let parse = semantic_parse(&sample.instruction);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (u64::from(sample.id) << 20));
            let cex = (0..cfg.counterexamples)
                .map(|_| {
                    let template = select_template(&parse, rng.random());
                    instantiate_counterexample(sample, &template)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((pos, contrastive_scores(guide, sample, &cex, &g_test)?))
        })
        .collect::<Result<_>>()?;
    for (pos, pair) in refined {
        contrast[pos] = Some(pair);
    }

    let floor = cfg.modulation.weight_floor;
    let raw: Vec<f64> = base
        .iter()
        .zip(&contrast)
        .map(|(&b, c)| match c {
            Some((si, sc)) => modulate_weight(b, *si, *sc, &cfg.modulation),
            None => b.max(floor),
        })
        .collect();
    let weights = normalize_weights(&raw, floor, cfg.uniform_fallback)?;
    Ok(dataset
        .iter()
        .enumerate()
        .map(|(i, s)| InfluenceRecord {
            sample_id: s.id,
            score_base: base[i],
            is_elite: contrast[i].is_some(),
            score_i: contrast[i].map(|c| c.0),
            score_contrast: contrast[i].map(|c| c.1),
            weight: weights[i],
        })
        .collect())
}

/// Weights from base scores alone: max(score, floor), normalized.
pub fn base_only_weights(records: &[InfluenceRecord], cfg: &ModulationConfig, uniform_fallback: bool) -> Result<Vec<f64>> {
    let raw: Vec<f64> = records.iter().map(|r| r.score_base.max(cfg.weight_floor)).collect();
    normalize_weights(&raw, cfg.weight_floor, uniform_fallback)
}

/// Copy of `records` with weights replaced.
pub fn reweighted(records: &[InfluenceRecord], weights: &[f64]) -> Vec<InfluenceRecord> {
    records
        .iter()
        .zip(weights)
        .map(|(r, &w)| InfluenceRecord { weight: w, ..r.clone() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modulation_reference_values() {
        let cfg = ModulationConfig::default();
        assert_eq!(modulate_weight(2.0, 0.3, 0.3, &cfg), 2.0);
        assert!((modulate_weight(2.0, 1.5, 0.5, &cfg) - 2.0 * (1.0 + 1f64.tanh())).abs() < 1e-12);
        let off = ModulationConfig { beta: 0.0, ..cfg };
        assert_eq!(modulate_weight(0.7, 9.0, -4.0, &off), 0.7);
        assert_eq!(modulate_weight(0.7, 1e6, -1e6, &cfg), 1.4);
        assert_eq!(modulate_weight(0.7, -1e6, 1e6, &cfg), 1e-6);
    }

    #[test]
    fn elite_counts() {
        assert_eq!(elite_count(100, 5.0).unwrap(), 5);
        assert_eq!(elite_count(1000, 5.0).unwrap(), 50);
        assert_eq!(elite_count(30, 5.0).unwrap(), 2);
        assert!(elite_count(10, 5.0).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let scores = [1.0, 3.0, 3.0, 0.5];
        let ids = [7, 9, 4, 1];
        assert_eq!(top_positions(&scores, &ids, 2), vec![2, 1]);
        assert_eq!(top_positions(&scores, &ids, 3), vec![2, 1, 0]);
    }

    #[test]
    fn degenerate_weights() {
        assert!(matches!(
            normalize_weights(&[1e-6, 1e-6], 1e-6, false),
            Err(Error::DegenerateWeights { .. })
        ));
        assert_eq!(normalize_weights(&[1e-6, 1e-6], 1e-6, true).unwrap(), vec![0.5, 0.5]);
        let w = normalize_weights(&[1.0, 3.0], 1e-6, false).unwrap();
        assert_eq!(w, vec![0.25, 0.75]);
    }
}
