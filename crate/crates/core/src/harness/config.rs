use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::Schedule;
use crate::error::{Error, Result};
use crate::ft_engine::{AssessConfig, LissaConfig, ModulationConfig, DEFAULT_TRAINING_FRACTION};
use crate::ncfm::DistillConfig;
use crate::representation::{EncoderDims, PolicyNet, DEFAULT_D_MODEL};
use crate::toyworld::{DatasetConfig, DEFAULT_HORIZON};

pub const DEFAULT_SEEDS: [u64; 3] = [42, 123, 1024];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub n_samples: usize,
    pub fraction_noisy: f64,
    pub fraction_redundant: f64,
    pub horizon: usize,
    /// Clean held-out samples whose loss defines influence.
    pub test_size: usize,
    /// Clean held-out samples for downstream evaluation.
    pub eval_size: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            fraction_noisy: 0.2,
            fraction_redundant: 0.3,
            horizon: DEFAULT_HORIZON,
            test_size: 100,
            eval_size: 300,
        }
    }
}

impl DatasetSection {
    pub fn dataset(&self, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_samples: self.n_samples,
            fraction_noisy: self.fraction_noisy,
            fraction_redundant: self.fraction_redundant,
            seed,
            horizon: self.horizon,
        }
    }

    pub fn clean(&self, n_samples: usize, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_samples,
            fraction_noisy: 0.0,
            fraction_redundant: 0.0,
            seed,
            horizon: self.horizon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub policy_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            d_model: DEFAULT_D_MODEL,
            policy_hidden: 64,
        }
    }
}

/// A training schedule without its seed; seeds derive from the run seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSection {
    pub steps: usize,
    pub step_size: f64,
    pub batch_size: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 5000,
            step_size: 0.05,
            batch_size: 32,
        }
    }
}

impl ScheduleSection {
    pub fn with_seed(&self, seed: u64) -> Schedule {
        Schedule {
            steps: self.steps,
            step_size: self.step_size,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuideSection {
    /// Steps of the full schedule the guide runs a fraction of.
    pub steps: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub training_fraction: f64,
}

impl Default for GuideSection {
    fn default() -> Self {
        let full = ScheduleSection::default();
        Self {
            steps: full.steps,
            step_size: full.step_size,
            batch_size: full.batch_size,
            training_fraction: DEFAULT_TRAINING_FRACTION,
        }
    }
}

impl GuideSection {
    pub fn full(&self) -> ScheduleSection {
        ScheduleSection {
            steps: self.steps,
            step_size: self.step_size,
            batch_size: self.batch_size,
        }
    }
}

/// LiSSA settings for the pipeline. The scale default sits above the
/// largest Hessian eigenvalue observed on guide models of the default size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LissaSection {
    pub depth: usize,
    pub damping: f64,
    pub batch_size: usize,
    pub scale: f64,
}

impl Default for LissaSection {
    fn default() -> Self {
        let l = LissaConfig::default();
        Self {
            depth: l.depth,
            damping: l.damping,
            batch_size: l.batch_size,
            scale: 100.0,
        }
    }
}

impl From<LissaSection> for LissaConfig {
    fn from(s: LissaSection) -> Self {
        LissaConfig {
            depth: s.depth,
            damping: s.damping,
            batch_size: s.batch_size,
            scale: s.scale,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssessSection {
    pub elite_percent: f64,
    pub counterexamples: usize,
    pub uniform_fallback: bool,
}

impl Default for AssessSection {
    fn default() -> Self {
        Self {
            elite_percent: 5.0,
            counterexamples: 1,
            uniform_fallback: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticInput {
    /// Train on the exported dataset-format coreset.
    Discrete,
    /// Train on the raw continuous tensors of the sidecar.
    Continuous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamSection {
    pub steps: usize,
    pub step_size: f64,
    pub batch_size: usize,
    pub synthetic_input: SyntheticInput,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        let s = ScheduleSection::default();
        Self {
            steps: s.steps,
            step_size: s.step_size,
            batch_size: s.batch_size,
            synthetic_input: SyntheticInput::Discrete,
        }
    }
}

impl DownstreamSection {
    pub fn schedule(&self) -> ScheduleSection {
        ScheduleSection {
            steps: self.steps,
            step_size: self.step_size,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    pub eta: f64,
    pub n_frequencies: usize,
    pub steps: usize,
    pub generator_step_size: f64,
    pub sampler_step_size: f64,
    pub sampler_updates: usize,
    pub real_batch_size: usize,
    pub noise_dim: usize,
    pub sampler_hidden: usize,
    pub frequency_scale: f64,
    pub full_sum: bool,
}

impl Default for DistillSection {
    fn default() -> Self {
        let d = DistillConfig::default();
        Self {
            eta: d.eta,
            n_frequencies: d.n_frequencies,
            steps: d.steps,
            generator_step_size: d.generator_step_size,
            sampler_step_size: d.sampler_step_size,
            sampler_updates: d.sampler_updates,
            real_batch_size: d.real_batch_size,
            noise_dim: d.noise_dim,
            sampler_hidden: d.sampler_hidden,
            frequency_scale: d.frequency_scale,
            full_sum: d.full_sum,
        }
    }
}

impl DistillSection {
    pub fn with_seed(&self, seed: u64) -> DistillConfig {
        DistillConfig {
            eta: self.eta,
            n_frequencies: self.n_frequencies,
            steps: self.steps,
            generator_step_size: self.generator_step_size,
            sampler_step_size: self.sampler_step_size,
            sampler_updates: self.sampler_updates,
            real_batch_size: self.real_batch_size,
            noise_dim: self.noise_dim,
            sampler_hidden: self.sampler_hidden,
            frequency_scale: self.frequency_scale,
            full_sum: self.full_sum,
            seed,
        }
    }
}

/// Everything one pipeline run needs. Parsed from TOML; unknown keys are
/// rejected and missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub guide: GuideSection,
    pub lissa: LissaSection,
    pub modulation: ModulationConfig,
    pub assess: AssessSection,
    pub distill: DistillSection,
    pub downstream: DownstreamSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS.to_vec(),
            out_dir: PathBuf::from("runs"),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            guide: GuideSection::default(),
            lissa: LissaSection::default(),
            modulation: ModulationConfig::default(),
            assess: AssessSection::default(),
            distill: DistillSection::default(),
            downstream: DownstreamSection::default(),
        }
    }
}

fn config_err(section: &str, e: Error) -> Error {
    Error::Config(format!("[{section}] {}", e.root()))
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let d = &self.dataset;
        d.dataset(0).validate().map_err(|e| config_err("dataset", e))?;
        if d.n_samples == 0 || d.test_size == 0 || d.eval_size == 0 {
            return Err(Error::Config("[dataset] sample counts must be positive".into()));
        }
        if self.model.d_model == 0 || self.model.policy_hidden == 0 {
            return Err(Error::Config("[model] sizes must be positive".into()));
        }
        crate::ft_engine::guide_steps(self.guide.steps, self.guide.training_fraction).map_err(|e| config_err("guide", e))?;
        for (name, s) in [("guide", self.guide.full()), ("downstream", self.downstream.schedule())] {
            if s.batch_size == 0 || !(s.step_size > 0.0) {
                return Err(Error::Config(format!("[{name}] batch size and step size must be positive")));
            }
        }
        self.assess_config(0).validate().map_err(|e| config_err("assess", e))?;
        crate::ft_engine::elite_count(d.n_samples, self.assess.elite_percent).map_err(|e| config_err("assess", e))?;
        let distill = self.distill.with_seed(0);
        distill.validate().map_err(|e| config_err("distill", e))?;
        crate::ncfm::coreset_size(d.n_samples, distill.eta).map_err(|e| config_err("distill", e))?;
        Ok(())
    }

    pub fn assess_config(&self, seed: u64) -> AssessConfig {
        AssessConfig {
            lissa: self.lissa.into(),
            modulation: self.modulation,
            elite_percent: self.assess.elite_percent,
            counterexamples: self.assess.counterexamples,
            uniform_fallback: self.assess.uniform_fallback,
            seed,
        }
    }

    pub fn policy_net(&self) -> Result<PolicyNet> {
        PolicyNet::new(EncoderDims::new(self.model.d_model, self.dataset.horizon), self.model.policy_hidden)
    }

    /// SHA-256 of the canonical TOML form, excluding the output directory.
    pub fn hash(&self) -> String {
        let canonical = Self {
            out_dir: PathBuf::new(),
            ..self.clone()
        };
        hex_digest(canonical.to_toml().as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
