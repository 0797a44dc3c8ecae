use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::artifacts::{self as names, ensure_dir, seed_dir};
use super::config::{PipelineConfig, SyntheticInput};
use super::report::{MethodMetrics, RunReport, SeedTimings, Timings, WeightStats};
use crate::diffcore::{checkpoint, train, ParamVector};
use crate::error::{Error, Result};
use crate::ft_engine::{self, report as influence_csv, GuideModel, InfluenceRecord, ModulationConfig};
use crate::ncfm::{self, SyntheticCoreset};
use crate::representation::{EncodedBatch, PolicyNet, PolicyObjective};
use crate::toyworld::{evaluate_success, generate_dataset, io, Sample};

const TEST_SEED_SALT: u64 = 0x7E57_0000_0000_0001;
const EVAL_SEED_SALT: u64 = 0xE7A1_0000_0000_0002;
const DOWNSTREAM_SEED_SALT: u64 = 0xD0E5_0000_0000_0003;
const RANDOM_CORESET_SALT: u64 = 0x4A4D_0000_0000_0004;
const RANDOM_WEIGHTS_SALT: u64 = 0x3E16_0000_0000_0005;

/// Ids of held-out samples start here so they never collide with training ids.
pub const TEST_ID_BASE: u32 = 1_000_000;
pub const EVAL_ID_BASE: u32 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FtNcfm,
    RandomCoreset,
    InfluenceCoreset,
    FullData,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FtNcfm, Method::RandomCoreset, Method::InfluenceCoreset, Method::FullData];

    pub fn name(self) -> &'static str {
        match self {
            Method::FtNcfm => "ft-ncfm",
            Method::RandomCoreset => "random-coreset",
            Method::InfluenceCoreset => "influence-coreset",
            Method::FullData => "full-data",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    NoContrastive,
    RandomWeights,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::NoContrastive, Ablation::RandomWeights];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoContrastive => "no-contrastive",
            Ablation::RandomWeights => "random-weights",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

/// Training data (quality tags stripped), influence test set and downstream
/// evaluation set for one seed.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub eval: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success_rate: f64,
    pub mean_error: f64,
}

fn offset_ids(samples: Vec<Sample>, base: u32) -> Vec<Sample> {
    samples
        .into_iter()
        .map(|mut s| {
            s.id += base;
            s.public()
        })
        .collect()
}

/// Generates the three splits. The held-out sets are clean and drawn from
/// seeds derived from `seed`.
pub fn generate_splits(cfg: &PipelineConfig, seed: u64) -> Result<Splits> {
    let d = &cfg.dataset;
    Ok(Splits {
        train: generate_dataset(&d.dataset(seed))?.iter().map(Sample::public).collect(),
        test: offset_ids(generate_dataset(&d.clean(d.test_size, seed ^ TEST_SEED_SALT))?, TEST_ID_BASE),
        eval: offset_ids(generate_dataset(&d.clean(d.eval_size, seed ^ EVAL_SEED_SALT))?, EVAL_ID_BASE),
    })
}

pub fn write_splits(splits: &Splits, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    io::write_samples(&dir.join(names::DATASET), &splits.train, false)?;
    io::write_samples(&dir.join(names::TEST_SET), &splits.test, false)?;
    io::write_samples(&dir.join(names::EVAL_SET), &splits.eval, false)?;
    Ok(())
}

pub fn read_splits(dir: &Path) -> Result<Splits> {
    Ok(Splits {
        train: io::read_samples(&dir.join(names::DATASET))?,
        test: io::read_samples(&dir.join(names::TEST_SET))?,
        eval: io::read_samples(&dir.join(names::EVAL_SET))?,
    })
}

/// Phase 1: the guide trained for a fraction of the full schedule.
pub fn guide_phase(cfg: &PipelineConfig, seed: u64, train_set: &[Sample]) -> Result<GuideModel> {
    let net = cfg.policy_net()?;
    ft_engine::train_guide(
        train_set,
        &net,
        &net.init(seed),
        &cfg.guide.full().with_seed(seed),
        cfg.guide.training_fraction,
    )
    .map_err(|e| e.in_phase("guide training"))
}

/// Phase 2: influence records for the training set.
pub fn assess_phase(cfg: &PipelineConfig, seed: u64, guide: &GuideModel, splits: &Splits) -> Result<Vec<InfluenceRecord>> {
    ft_engine::assess(guide, &splits.train, &splits.test, &cfg.assess_config(seed)).map_err(|e| e.in_phase("influence assessment"))
}

/// Phase 3: the synthetic coreset distilled under the records' weights.
pub fn distill_phase(
    cfg: &PipelineConfig,
    seed: u64,
    guide: &GuideModel,
    train_set: &[Sample],
    records: &[InfluenceRecord],
) -> Result<SyntheticCoreset> {
    ncfm::distill(
        train_set,
        records,
        guide.net.encoders(),
        &guide.encoder_params(),
        &cfg.distill.with_seed(seed),
    )
    .map_err(|e| e.in_phase("distillation"))
}

/// Recomputes weights from stored scores under another modulation setting,
/// exactly as assessment does.
pub fn reweight(records: &[InfluenceRecord], modulation: &ModulationConfig, uniform_fallback: bool) -> Result<Vec<f64>> {
    modulation.validate()?;
    let floor = modulation.weight_floor;
    let raw: Vec<f64> = records
        .iter()
        .map(|r| match (r.score_i, r.score_contrast) {
            (Some(si), Some(sc)) => ft_engine::modulate_weight(r.score_base, si, sc, modulation),
            _ => r.score_base.max(floor),
        })
        .collect();
    ft_engine::normalize_weights(&raw, floor, uniform_fallback)
}

/// Weights for an ablation variant, normalized to sum to one.
pub fn ablation_weights(cfg: &PipelineConfig, seed: u64, variant: Ablation, records: &[InfluenceRecord]) -> Result<Vec<f64>> {
    match variant {
        Ablation::Full => Ok(records.iter().map(|r| r.weight).collect()),
        Ablation::NoContrastive => ft_engine::base_only_weights(records, &cfg.modulation, cfg.assess.uniform_fallback),
        Ablation::RandomWeights => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RANDOM_WEIGHTS_SALT);
            let u = Uniform::new(0.0, 1.0).expect("unit interval");
            let mut raw: Vec<f64> = records.iter().map(|_| u.sample(&mut rng)).collect();
            while raw.iter().all(|&w| w == 0.0) {
                raw = records.iter().map(|_| u.sample(&mut rng)).collect();
            }
            let total: f64 = raw.iter().sum();
            Ok(raw.iter().map(|w| w / total).collect())
        }
    }
}

/// Positions of a uniform random coreset, without replacement, ascending.
pub fn random_coreset(n: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RANDOM_CORESET_SALT);
    let mut idx = rand::seq::index::sample(&mut rng, n, size.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Positions of the `size` highest base scores.
pub fn influence_coreset(train_set: &[Sample], records: &[InfluenceRecord], size: usize) -> Result<Vec<usize>> {
    let scores = aligned_scores(train_set, records)?;
    let ids: Vec<u32> = train_set.iter().map(|s| s.id).collect();
    Ok(ft_engine::top_positions(&scores, &ids, size))
}

fn aligned_scores(train_set: &[Sample], records: &[InfluenceRecord]) -> Result<Vec<f64>> {
    let by_id: std::collections::HashMap<u32, f64> = records.iter().map(|r| (r.sample_id, r.score_base)).collect();
    train_set
        .iter()
        .map(|s| {
            by_id
                .get(&s.id)
                .copied()
                .ok_or_else(|| Error::contract(format!("no influence record for sample {}", s.id)))
        })
        .collect()
}

/// Trains a fresh downstream policy. Every method shares the same
/// initialization and schedule for a given seed.
pub fn train_downstream(cfg: &PipelineConfig, seed: u64, net: &PolicyNet, data: &EncodedBatch) -> Result<ParamVector> {
    let s = seed ^ DOWNSTREAM_SEED_SALT;
    let objective = PolicyObjective::new(net, data)?;
    train(&objective, &net.init(s), &cfg.downstream.schedule().with_seed(s.wrapping_add(1))).map_err(|e| e.in_phase("downstream training"))
}

pub fn evaluate_policy(net: &PolicyNet, params: &ParamVector, eval: &[Sample]) -> Result<Metrics> {
    if eval.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    let preds = net.predict_trajectories(params, eval)?;
    let mut hits = 0usize;
    let mut err = 0.0;
    for (s, p) in eval.iter().zip(&preds) {
        let e = evaluate_success(s, p)?;
        hits += usize::from(e.success);
        err += e.error;
    }
    Ok(Metrics {
        success_rate: hits as f64 / eval.len() as f64,
        mean_error: err / eval.len() as f64,
    })
}

/// The downstream training set of `method`, read from the artifacts in `dir`.
pub fn method_training_set(cfg: &PipelineConfig, seed: u64, method: Method, dir: &Path) -> Result<EncodedBatch> {
    let train_set = io::read_samples(&dir.join(names::DATASET))?;
    let size = ncfm::coreset_size(train_set.len(), cfg.distill.eta)?;
    let pick = |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| train_set[i].clone()).collect() };
    match method {
        Method::FullData => EncodedBatch::from_samples(&train_set),
        Method::RandomCoreset => EncodedBatch::from_samples(&pick(&random_coreset(train_set.len(), size, seed))),
        Method::InfluenceCoreset => {
            let records = influence_csv::load(&dir.join(names::INFLUENCE))?;
            EncodedBatch::from_samples(&pick(&influence_coreset(&train_set, &records, size)?))
        }
        Method::FtNcfm => {
            let path = dir.join(names::CORESET);
            match cfg.downstream.synthetic_input {
                SyntheticInput::Discrete => EncodedBatch::from_samples(&io::read_samples(&path)?),
                SyntheticInput::Continuous => Ok(EncodedBatch::from_synthetic(&ncfm::load_sidecar(&path)?)),
            }
        }
    }
}

/// Runs phases 1–3 for one seed and writes their artifacts to `dir`.
pub fn run_phases(cfg: &PipelineConfig, seed: u64, dir: &Path) -> Result<SeedTimings> {
    ensure_dir(dir)?;
    let splits = generate_splits(cfg, seed)?;
    write_splits(&splits, dir)?;
    let t = Instant::now();
    let guide = guide_phase(cfg, seed, &splits.train)?;
    names::save_guide(&guide, &dir.join(names::GUIDE))?;
    let guide_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let records = assess_phase(cfg, seed, &guide, &splits)?;
    influence_csv::save(&dir.join(names::INFLUENCE), &records)?;
    let assess_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let coreset = distill_phase(cfg, seed, &guide, &splits.train, &records)?;
    ncfm::export_coreset(&coreset.samples, &dir.join(names::CORESET))?;
    names::write_rounds(&dir.join(names::DISCREPANCY), &coreset.rounds)?;
    Ok(SeedTimings {
        seed,
        guide_secs,
        assess_secs,
        distill_secs: t.elapsed().as_secs_f64(),
        downstream_secs: 0.0,
    })
}

/// Trains and evaluates one method from the artifacts in `dir`, saving the
/// policy checkpoint.
pub fn train_and_evaluate(cfg: &PipelineConfig, seed: u64, method: Method, dir: &Path) -> Result<Metrics> {
    let net = cfg.policy_net()?;
    let data = method_training_set(cfg, seed, method, dir)?;
    let params = train_downstream(cfg, seed, &net, &data)?;
    checkpoint::save(&params, &dir.join(names::policy_file(method.name())))?;
    let eval = io::read_samples(&dir.join(names::EVAL_SET))?;
    evaluate_policy(&net, &params, &eval)
}

/// Assembles the report from persisted artifacts alone: dataset, held-out
/// sets, influence CSV, coreset files and discrepancy log of every seed.
pub fn report_from_artifacts(cfg: &PipelineConfig, out: &Path) -> Result<(RunReport, Vec<f64>)> {
    let mut metrics = Vec::new();
    let mut weights = Vec::new();
    let mut curves = Vec::new();
    let mut downstream_secs = Vec::new();
    let mut coreset_size = 0;
    for &seed in &cfg.seeds {
        let dir = seed_dir(out, seed);
        let t = Instant::now();
        for method in Method::ALL {
            let m = train_and_evaluate(cfg, seed, method, &dir)?;
            metrics.push(MethodMetrics {
                method,
                seed,
                success_rate: m.success_rate,
                mean_error: m.mean_error,
            });
        }
        downstream_secs.push(t.elapsed().as_secs_f64());
        let records = influence_csv::load(&dir.join(names::INFLUENCE))?;
        weights.push(WeightStats::from_records(seed, &records));
        curves.push((seed, names::read_rounds(&dir.join(names::DISCREPANCY))?));
        coreset_size = io::read_samples(&dir.join(names::CORESET))?.len();
    }
    Ok((RunReport::assemble(cfg, coreset_size, metrics, weights, curves)?, downstream_secs))
}

/// Phases 1–3 for every configured seed plus the baselines, with all
/// artifacts and the report written under `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    ensure_dir(&out)?;
    std::fs::write(out.join(names::CONFIG), cfg.to_toml())?;
    let mut timings = Vec::new();
    for &seed in &cfg.seeds {
        timings.push(run_phases(cfg, seed, &seed_dir(&out, seed))?);
    }
    let (report, downstream) = report_from_artifacts(cfg, &out)?;
    for (t, d) in timings.iter_mut().zip(downstream) {
        t.downstream_secs = d;
    }
    names::write_json(&out.join(names::REPORT), &report)?;
    names::write_json(&out.join(names::TIMINGS), &Timings { seeds: timings })?;
    Ok(report)
}

/// One baseline for one seed, computed in memory.
pub fn run_baseline(cfg: &PipelineConfig, method: Method, seed: u64) -> Result<Metrics> {
    cfg.validate()?;
    let splits = generate_splits(cfg, seed)?;
    let net = cfg.policy_net()?;
    let size = ncfm::coreset_size(splits.train.len(), cfg.distill.eta)?;
    let pick = |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| splits.train[i].clone()).collect() };
    let data = match method {
        Method::FullData => EncodedBatch::from_samples(&splits.train)?,
        Method::RandomCoreset => EncodedBatch::from_samples(&pick(&random_coreset(splits.train.len(), size, seed)))?,
        Method::InfluenceCoreset => {
            let guide = guide_phase(cfg, seed, &splits.train)?;
            let records = assess_phase(cfg, seed, &guide, &splits)?;
            EncodedBatch::from_samples(&pick(&influence_coreset(&splits.train, &records, size)?))?
        }
        Method::FtNcfm => return Err(Error::Config("ft-ncfm is the pipeline, not a baseline".into())),
    };
    let params = train_downstream(cfg, seed, &net, &data)?;
    evaluate_policy(&net, &params, &splits.eval)
}

/// Downstream metrics of FT-NCFM trained on a coreset distilled under
/// `weights` (normalized, one per training sample).
pub fn distilled_metrics(
    cfg: &PipelineConfig,
    seed: u64,
    guide: &GuideModel,
    splits: &Splits,
    records: &[InfluenceRecord],
    weights: &[f64],
) -> Result<Metrics> {
    let records = ft_engine::reweighted(records, weights);
    let coreset = distill_phase(cfg, seed, guide, &splits.train, &records)?;
    let data = match cfg.downstream.synthetic_input {
        SyntheticInput::Continuous => EncodedBatch::from_synthetic(&coreset.samples),
        SyntheticInput::Discrete => {
            let samples: Vec<Sample> = coreset
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| ncfm::discretize(s, i as u32))
                .collect();
            EncodedBatch::from_samples(&samples)?
        }
    };
    let params = train_downstream(cfg, seed, &guide.net, &data)?;
    evaluate_policy(&guide.net, &params, &splits.eval)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Ablation,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Every requested ablation variant over the configured seeds. Phases 1–2
/// are shared between variants of one seed.
pub fn run_ablations(cfg: &PipelineConfig, variants: &[Ablation]) -> Result<Vec<VariantResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let splits = generate_splits(cfg, seed)?;
        let guide = guide_phase(cfg, seed, &splits.train)?;
        let records = assess_phase(cfg, seed, &guide, &splits)?;
        for &variant in variants {
            let w = ablation_weights(cfg, seed, variant, &records)?;
            out.push(VariantResult {
                variant,
                seed,
                metrics: distilled_metrics(cfg, seed, &guide, &splits, &records, &w)?,
            });
        }
    }
    Ok(out)
}

pub fn run_ablation(variant: Ablation, cfg: &PipelineConfig) -> Result<Vec<Metrics>> {
    Ok(run_ablations(cfg, &[variant])?.into_iter().map(|r| r.metrics).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub success: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// The full pipeline once per β, reusing phases 1–2 of each seed.
pub fn beta_sweep(cfg: &PipelineConfig, betas: &[f64]) -> Result<Vec<BetaRow>> {
    if betas.is_empty() {
        return Err(Error::Config("beta sweep needs at least one beta".into()));
    }
    cfg.validate()?;
    let mut success = vec![Vec::with_capacity(cfg.seeds.len()); betas.len()];
    for &seed in &cfg.seeds {
        let splits = generate_splits(cfg, seed)?;
        let guide = guide_phase(cfg, seed, &splits.train)?;
        let records = assess_phase(cfg, seed, &guide, &splits)?;
        for (k, &beta) in betas.iter().enumerate() {
            let modulation = ModulationConfig { beta, ..cfg.modulation };
            let w = reweight(&records, &modulation, cfg.assess.uniform_fallback).map_err(|e| e.in_phase("beta sweep"))?;
            success[k].push(distilled_metrics(cfg, seed, &guide, &splits, &records, &w)?.success_rate);
        }
    }
    Ok(betas
        .iter()
        .zip(success)
        .map(|(&beta, success)| {
            let (mean, std) = super::stats::mean_std(&success);
            BetaRow { beta, success, mean, std }
        })
        .collect())
}

pub fn write_beta_table(path: &Path, rows: &[BetaRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["beta", "mean_success", "std_success", "per_seed"])?;
    for r in rows {
        let per_seed: Vec<String> = r.success.iter().map(|s| format!("{s:?}")).collect();
        w.write_record([
            format!("{:?}", r.beta),
            format!("{:?}", r.mean),
            format!("{:?}", r.std),
            per_seed.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}
