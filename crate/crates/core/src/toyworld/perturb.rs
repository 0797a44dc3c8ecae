use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Category, Instruction, Qualifier, Sample, Verb, MAX_SIZE};
use crate::error::{Error, Result};

/// Scale factors for size scaling: shrink hard or enlarge hard.
pub const SCALE_FACTORS: [f64; 2] = [0.25, 3.0];

/// Lower bound on how far position change moves the key object.
pub const MIN_DISPLACEMENT: f64 = 0.4;

const CENTER: [f64; 2] = [0.5, 0.5];
const CORNERS: [[f64; 2]; 4] = [[0.05, 0.05], [0.05, 0.95], [0.95, 0.05], [0.95, 0.95]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParseRecord {
    pub verb: Verb,
    pub target: Category,
    pub qualifier: Option<Qualifier>,
}

/// Instructions are symbolic already, so parsing is a lossless projection.
pub fn semantic_parse(instruction: &Instruction) -> ParseRecord {
    ParseRecord {
        verb: instruction.verb,
        target: instruction.target,
        qualifier: instruction.qualifier,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    ObjectSubstitution,
    SizeScaling,
    PositionChange,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationTemplate {
    ObjectSubstitution {
        substitute: Category,
    },
    SizeScaling {
        factor: f64,
    },
    /// Reflect the key object through the table center, or send it to the
    /// farthest corner when it sits too close to the center for reflection
    /// to move it [`MIN_DISPLACEMENT`].
    PositionChange,
}

impl PerturbationTemplate {
    pub fn kind(&self) -> TemplateKind {
        match self {
            PerturbationTemplate::ObjectSubstitution { .. } => TemplateKind::ObjectSubstitution,
            PerturbationTemplate::SizeScaling { .. } => TemplateKind::SizeScaling,
            PerturbationTemplate::PositionChange => TemplateKind::PositionChange,
        }
    }
}

/// Instructions carrying a spatial qualifier get position change; the rest
/// choose uniformly between object substitution and size scaling.
pub fn select_template(parse: &ParseRecord, seed: u64) -> PerturbationTemplate {
    if parse.qualifier.is_some() {
        return PerturbationTemplate::PositionChange;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random_bool(0.5) {
        let others: Vec<Category> = Category::ALL.iter().copied().filter(|c| *c != parse.target).collect();
        PerturbationTemplate::ObjectSubstitution {
            substitute: others[rng.random_range(0..others.len())],
        }
    } else {
        PerturbationTemplate::SizeScaling {
            factor: SCALE_FACTORS[rng.random_range(0..SCALE_FACTORS.len())],
        }
    }
}

pub(crate) fn displaced(p: [f64; 2]) -> [f64; 2] {
    let d = [p[0] - CENTER[0], p[1] - CENTER[1]];
    if d[0].hypot(d[1]) * 2.0 >= MIN_DISPLACEMENT {
        [CENTER[0] - d[0], CENTER[1] - d[1]]
    } else {
        *CORNERS
            .iter()
            .max_by(|a, b| {
                let da = (a[0] - p[0]).hypot(a[1] - p[1]);
                let db = (b[0] - p[0]).hypot(b[1] - p[1]);
                da.total_cmp(&db)
            })
            .unwrap()
    }
}

/// Minimal counterexample: same instruction and trajectory, one attribute of
/// the key object edited.
pub fn instantiate_counterexample(sample: &Sample, template: &PerturbationTemplate) -> Result<Sample> {
    let k = sample
        .key_index()
        .ok_or_else(|| Error::contract(format!("sample {} has no key object", sample.id)))?;
    let mut out = sample.clone();
    out.quality = None;
    let key = &mut out.scene[k];
    match *template {
        PerturbationTemplate::ObjectSubstitution { substitute } => {
            if substitute == key.category {
                return Err(Error::contract("substitute category equals the key object's category"));
            }
            key.category = substitute;
        }
        PerturbationTemplate::SizeScaling { factor } => {
            let size = key.size * factor;
            if !(size > 0.0 && size <= MAX_SIZE) {
                return Err(Error::contract(format!("scaled size {size} leaves (0, {MAX_SIZE}]")));
            }
            key.size = size;
        }
        PerturbationTemplate::PositionChange => key.position = displaced(key.position),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toyworld::{expert_trajectory, SceneObject};

    fn sample(pos: [f64; 2], size: f64) -> Sample {
        let key = SceneObject {
            category: Category::Cup,
            size,
            position: pos,
            is_key: true,
        };
        let other = SceneObject {
            category: Category::Plate,
            size: 1.0,
            position: [0.2, 0.8],
            is_key: false,
        };
        let instruction = Instruction {
            verb: Verb::Pick,
            target: Category::Cup,
            qualifier: None,
        };
        Sample {
            id: 3,
            scene: vec![other, key],
            instruction,
            trajectory: expert_trajectory(&key, &instruction, 8),
            quality: None,
        }
    }

    #[test]
    fn parse_is_identity() {
        let i = Instruction {
            verb: Verb::PlaceLeftOf,
            target: Category::Bowl,
            qualifier: Some(Qualifier::Left),
        };
        let p = semantic_parse(&i);
        assert_eq!(
            (p.verb, p.target, p.qualifier),
            (Verb::PlaceLeftOf, Category::Bowl, Some(Qualifier::Left))
        );
    }

    #[test]
    fn qualifier_selects_position_change() {
        let p = ParseRecord {
            verb: Verb::PlaceLeftOf,
            target: Category::Bowl,
            qualifier: Some(Qualifier::Left),
        };
        for seed in 0..20 {
            assert_eq!(select_template(&p, seed), PerturbationTemplate::PositionChange);
        }
    }

    #[test]
    fn unqualified_selection_is_stable_and_covers_both_kinds() {
        let p = ParseRecord {
            verb: Verb::Pick,
            target: Category::Cup,
            qualifier: None,
        };
        assert_eq!(select_template(&p, 17), select_template(&p, 17));
        let mut seen = std::collections::HashSet::new();
        for seed in 0..1000 {
            let t = select_template(&p, seed);
            assert_ne!(t.kind(), TemplateKind::PositionChange);
            if let PerturbationTemplate::ObjectSubstitution { substitute } = t {
                assert_ne!(substitute, Category::Cup);
            }
            seen.insert(t.kind());
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn substitution_edits_only_category() {
        let s = sample([0.3, 0.6], 0.5);
        let c = instantiate_counterexample(&s, &PerturbationTemplate::ObjectSubstitution { substitute: Category::Box }).unwrap();
        let mut expect = s.clone();
        expect.scene[1].category = Category::Box;
        assert_eq!(c, expect);
        assert!(instantiate_counterexample(&s, &PerturbationTemplate::ObjectSubstitution { substitute: Category::Cup }).is_err());
    }

    #[test]
    fn size_scaling_multiplies() {
        let s = sample([0.3, 0.6], 0.5);
        let c = instantiate_counterexample(&s, &PerturbationTemplate::SizeScaling { factor: 3.0 }).unwrap();
        assert_eq!(c.scene[1].size, 1.5);
        let mut expect = s.clone();
        expect.scene[1].size = 1.5;
        assert_eq!(c, expect);
        let big = sample([0.3, 0.6], 1.5);
        assert!(instantiate_counterexample(&big, &PerturbationTemplate::SizeScaling { factor: 3.0 }).is_err());
    }

    #[test]
    fn position_change_moves_far_enough() {
        for pos in [[0.5, 0.5], [0.55, 0.45], [0.9, 0.1], [0.3, 0.6], [0.69, 0.5], [0.0, 1.0]] {
            let s = sample(pos, 0.5);
            let c = instantiate_counterexample(&s, &PerturbationTemplate::PositionChange).unwrap();
            let q = c.scene[1].position;
            assert!((q[0] - pos[0]).hypot(q[1] - pos[1]) >= MIN_DISPLACEMENT - 1e-12, "{pos:?} -> {q:?}");
            assert!((0.0..=1.0).contains(&q[0]) && (0.0..=1.0).contains(&q[1]));
            let last = s.trajectory.waypoints().last().unwrap();
            assert!((last[0] - q[0]).hypot(last[1] - q[1]) > 0.35);
        }
    }
}
