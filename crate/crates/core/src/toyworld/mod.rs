//! Symbolic 2-D tabletop: scenes, instructions, scripted-expert trajectories
//! and programmatic perturbation templates.

mod expert;
mod generate;
pub mod io;
mod perturb;

use serde::{Deserialize, Serialize};

pub use expert::{evaluate_success, expert_trajectory, is_success, Evaluation, START, SUCCESS_THRESHOLD};
pub use generate::{generate_dataset, DatasetConfig};
pub use perturb::{
    instantiate_counterexample, select_template, semantic_parse, ParseRecord, PerturbationTemplate, TemplateKind, MIN_DISPLACEMENT,
    SCALE_FACTORS,
};

pub const DEFAULT_HORIZON: usize = 8;
pub const MAX_SIZE: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Cup,
    Bowl,
    Box,
    Plate,
    Block,
    Bottle,
    Sponge,
    Can,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Cup,
        Category::Bowl,
        Category::Box,
        Category::Plate,
        Category::Block,
        Category::Bottle,
        Category::Sponge,
        Category::Can,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Pick,
    Push,
    PlaceLeftOf,
    PlaceRightOf,
    StackOn,
}

impl Verb {
    pub const ALL: [Verb; 5] = [Verb::Pick, Verb::Push, Verb::PlaceLeftOf, Verb::PlaceRightOf, Verb::StackOn];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Qualifier {
    Left,
    Right,
    Near,
    Far,
}

impl Qualifier {
    pub const ALL: [Qualifier; 4] = [Qualifier::Left, Qualifier::Right, Qualifier::Near, Qualifier::Far];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_spatial(self) -> bool {
        matches!(self, Qualifier::Left | Qualifier::Right)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: Category,
    pub size: f64,
    pub position: [f64; 2],
    #[serde(rename = "key")]
    pub is_key: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub verb: Verb,
    #[serde(rename = "target")]
    pub target: Category,
    pub qualifier: Option<Qualifier>,
}

/// Fixed-length sequence of 2-D waypoints in normalized workspace units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory(pub Vec<[f64; 2]>);

impl Trajectory {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn waypoints(&self) -> &[[f64; 2]] {
        &self.0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|w| w.iter().copied()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        Trajectory(values.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn clamped(mut self) -> Self {
        for w in &mut self.0 {
            w[0] = w[0].clamp(-1.0, 1.0);
            w[1] = w[1].clamp(-1.0, 1.0);
        }
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    Clean,
    Noisy,
    Redundant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u32,
    pub scene: Vec<SceneObject>,
    pub instruction: Instruction,
    pub trajectory: Trajectory,
    /// Generator ground truth; never read by the pipeline.
    #[serde(rename = "quality", default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<Quality>,
}

impl Sample {
    pub fn key_object(&self) -> Option<&SceneObject> {
        self.scene.iter().find(|o| o.is_key)
    }

    pub fn key_index(&self) -> Option<usize> {
        self.scene.iter().position(|o| o.is_key)
    }

    /// Copy with the ground-truth tag removed.
    pub fn public(&self) -> Sample {
        Sample {
            quality: None,
            ..self.clone()
        }
    }
}
