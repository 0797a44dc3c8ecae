use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::expert::expert_trajectory;
use super::{Category, Instruction, Qualifier, Quality, Sample, SceneObject, Trajectory, Verb, DEFAULT_HORIZON};
use crate::error::{Error, Result};

pub const NOISE_SIGMA: f64 = 0.3;
pub const JITTER_SIGMA: f64 = 0.01;

const MIN_OBJECTS: usize = 2;
pub const MAX_OBJECTS: usize = 4;
const POSITION_MARGIN: f64 = 0.05;
const SIZE_RANGE: (f64, f64) = (0.3, 1.25);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub fraction_noisy: f64,
    pub fraction_redundant: f64,
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            fraction_noisy: 0.2,
            fraction_redundant: 0.3,
            seed: 42,
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..=1.0).contains(&f);
        if !ok(self.fraction_noisy) || !ok(self.fraction_redundant) {
            return Err(Error::contract("quality fractions must lie in [0, 1]"));
        }
        if self.fraction_noisy + self.fraction_redundant > 1.0 + 1e-12 {
            return Err(Error::contract("noisy and redundant fractions sum above 1"));
        }
        if self.horizon < 3 {
            return Err(Error::contract("horizon must be at least 3"));
        }
        Ok(())
    }

    /// (clean, redundant, noisy) counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let n = self.n_samples;
        let noisy = ((n as f64 * self.fraction_noisy).round() as usize).min(n);
        let redundant = ((n as f64 * self.fraction_redundant).round() as usize).min(n - noisy);
        (n - noisy - redundant, redundant, noisy)
    }
}

fn random_scene(rng: &mut ChaCha8Rng) -> Vec<SceneObject> {
    let n = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS);
    let mut cats = Category::ALL.to_vec();
    cats.shuffle(rng);
    let key = rng.random_range(0..n);
    cats.into_iter()
        .take(n)
        .enumerate()
        .map(|(i, category)| SceneObject {
            category,
            size: rng.random_range(SIZE_RANGE.0..SIZE_RANGE.1),
            position: [
                rng.random_range(POSITION_MARGIN..1.0 - POSITION_MARGIN),
                rng.random_range(POSITION_MARGIN..1.0 - POSITION_MARGIN),
            ],
            is_key: i == key,
        })
        .collect()
}

fn random_instruction(rng: &mut ChaCha8Rng, target: Category) -> Instruction {
    let verb = Verb::ALL[rng.random_range(0..Verb::ALL.len())];
    let qualifier = match verb {
        Verb::PlaceLeftOf => Some(Qualifier::Left),
        Verb::PlaceRightOf => Some(Qualifier::Right),
        Verb::Push => [None, Some(Qualifier::Near), Some(Qualifier::Far)][rng.random_range(0..3)],
        Verb::Pick | Verb::StackOn => None,
    };
    Instruction { verb, target, qualifier }
}

fn clean_sample(rng: &mut ChaCha8Rng, horizon: usize) -> Sample {
    let scene = random_scene(rng);
    let key = *scene.iter().find(|o| o.is_key).unwrap();
    let instruction = random_instruction(rng, key.category);
    Sample {
        id: 0,
        trajectory: expert_trajectory(&key, &instruction, horizon),
        scene,
        instruction,
        quality: Some(Quality::Clean),
    }
}

fn perturb_trajectory(rng: &mut ChaCha8Rng, t: &Trajectory, noise: &Normal<f64>) -> Trajectory {
    Trajectory(
        t.waypoints()
            .iter()
            .map(|w| [w[0] + noise.sample(rng), w[1] + noise.sample(rng)])
            .collect(),
    )
    .clamped()
}

/// Deterministic synthetic dataset. Clean samples follow the scripted expert,
/// noisy ones add Gaussian waypoint noise and redundant ones are jittered
/// copies of clean samples. Ids are assigned after shuffling.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let (n_clean, n_redundant, n_noisy) = cfg.counts();
    if n_redundant > 0 && n_clean == 0 {
        return Err(Error::contract("redundant samples need at least one clean sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).unwrap();
    let jitter = Normal::new(0.0, JITTER_SIGMA).unwrap();

    let mut out: Vec<Sample> = (0..n_clean).map(|_| clean_sample(&mut rng, cfg.horizon)).collect();
    for _ in 0..n_redundant {
        let src = &out[rng.random_range(0..n_clean)];
        let mut dup = src.clone();
        for o in &mut dup.scene {
            o.position[0] = (o.position[0] + jitter.sample(&mut rng)).clamp(0.0, 1.0);
            o.position[1] = (o.position[1] + jitter.sample(&mut rng)).clamp(0.0, 1.0);
        }
        dup.trajectory = perturb_trajectory(&mut rng, &dup.trajectory, &jitter);
        dup.quality = Some(Quality::Redundant);
        out.push(dup);
    }
    for _ in 0..n_noisy {
        let mut s = clean_sample(&mut rng, cfg.horizon);
        s.trajectory = perturb_trajectory(&mut rng, &s.trajectory, &noise);
        s.quality = Some(Quality::Noisy);
        out.push(s);
    }
    out.shuffle(&mut rng);
    for (i, s) in out.iter_mut().enumerate() {
        s.id = i as u32;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{evaluate_success, Verb};

    #[test]
    fn exact_counts() {
        let cfg = DatasetConfig {
            n_samples: 100,
            fraction_noisy: 0.2,
            fraction_redundant: 0.3,
            seed: 42,
            horizon: 8,
        };
        let d = generate_dataset(&cfg).unwrap();
        let count = |q| d.iter().filter(|s| s.quality == Some(q)).count();
        assert_eq!(
            (count(Quality::Clean), count(Quality::Redundant), count(Quality::Noisy)),
            (50, 30, 20)
        );
        let mut ids: Vec<u32> = d.iter().map(|s| s.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn empty_and_invalid() {
        let mut cfg = DatasetConfig {
            n_samples: 0,
            ..Default::default()
        };
        assert!(generate_dataset(&cfg).unwrap().is_empty());
        cfg.n_samples = 10;
        cfg.fraction_noisy = 0.8;
        cfg.fraction_redundant = 0.5;
        assert!(matches!(generate_dataset(&cfg), Err(Error::Contract(_))));
        cfg.fraction_noisy = -0.1;
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn scene_invariants_and_expert_consistency() {
        let d = generate_dataset(&DatasetConfig::default()).unwrap();
        for s in &d {
            assert_eq!(s.scene.iter().filter(|o| o.is_key).count(), 1);
            for o in &s.scene {
                assert!(o.size > 0.0 && o.size <= 4.0);
                assert!((0.0..=1.0).contains(&o.position[0]) && (0.0..=1.0).contains(&o.position[1]));
            }
            assert!(s.trajectory.waypoints().iter().all(|w| w.iter().all(|c| (-1.0..=1.0).contains(c))));
            assert!(s.scene.iter().any(|o| o.category == s.instruction.target));
            if s.quality == Some(Quality::Clean) {
                assert!(evaluate_success(s, &s.trajectory).unwrap().success);
                if s.instruction.verb == Verb::Pick {
                    let k = s.key_object().unwrap().position;
                    let last = s.trajectory.waypoints().last().unwrap();
                    assert!((last[0] - k[0]).hypot(last[1] - k[1]) < 0.05);
                }
            }
        }
    }
}
