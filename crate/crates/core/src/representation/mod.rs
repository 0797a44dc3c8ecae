//! Multimodal featurization h = Φ(scene, instruction, action).
//!
//! Each modality is embedded by a one-layer tanh encoder. Scene objects are
//! embedded independently into a fixed number of slots (empty slots hold the
//! zero token) and mean-pooled, which makes h invariant to object order. A
//! single linear + tanh layer fuses the three codes into `d_model` features.

mod policy;

use std::cmp::Ordering;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Layer, Layout, Mlp, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::toyworld::{Category, Instruction, Qualifier, Sample, Verb};

pub use policy::{PolicyNet, PolicyObjective};

pub const SLOTS: usize = 4;
pub const DEFAULT_D_MODEL: usize = 32;

/// category one-hot, size / 4, x, y, key flag, key·x, key·y
pub const OBJECT_DIM: usize = Category::ALL.len() + 6;
/// verb one-hot, target one-hot, qualifier one-hot with slot 0 for "none"
pub const INSTR_DIM: usize = Verb::ALL.len() + Category::ALL.len() + Qualifier::ALL.len() + 1;

const CAT_OFF: usize = 0;
const SIZE_OFF: usize = Category::ALL.len();
const POS_OFF: usize = SIZE_OFF + 1;
const KEY_OFF: usize = POS_OFF + 2;
const KEYPOS_OFF: usize = KEY_OFF + 1;

const VERB_OFF: usize = 0;
const TARGET_OFF: usize = Verb::ALL.len();
const QUAL_OFF: usize = TARGET_OFF + Category::ALL.len();

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// Continuous relaxation of a sample: the tensors the distiller optimizes.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// SLOTS × OBJECT_DIM object tokens.
    pub scene: Array2<f64>,
    /// INSTR_DIM relaxed one-hot instruction.
    pub instruction: Array1<f64>,
    /// horizon × 2 waypoints, flattened.
    pub action: Array1<f64>,
}

impl SyntheticSample {
    pub fn horizon(&self) -> usize {
        self.action.len() / 2
    }

    pub fn is_finite(&self) -> bool {
        self.scene
            .iter()
            .chain(&self.instruction)
            .chain(&self.action)
            .all(|v| v.is_finite())
    }
}

pub fn encode_object_token(obj: &crate::toyworld::SceneObject) -> [f64; OBJECT_DIM] {
    let mut t = [0.0; OBJECT_DIM];
    t[CAT_OFF + obj.category.index()] = 1.0;
    t[SIZE_OFF] = obj.size / crate::toyworld::MAX_SIZE;
    t[POS_OFF] = obj.position[0];
    t[POS_OFF + 1] = obj.position[1];
    if obj.is_key {
        t[KEY_OFF] = 1.0;
        t[KEYPOS_OFF] = obj.position[0];
        t[KEYPOS_OFF + 1] = obj.position[1];
    }
    t
}

/// Slot tokens in a canonical order, so that the encoding (and therefore h)
/// does not depend on the order objects are listed in.
pub fn encode_scene(sample: &Sample) -> Result<Array2<f64>> {
    if sample.scene.len() > SLOTS {
        return Err(Error::contract(format!(
            "sample {} has {} objects; at most {SLOTS} fit the slot encoding",
            sample.id,
            sample.scene.len()
        )));
    }
    let mut tokens: Vec<[f64; OBJECT_DIM]> = sample.scene.iter().map(encode_object_token).collect();
    tokens.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    let mut m = Array2::zeros((SLOTS, OBJECT_DIM));
    for (i, t) in tokens.iter().enumerate() {
        m.row_mut(i).assign(&Array1::from(t.to_vec()));
    }
    Ok(m)
}

pub fn encode_instruction(instr: &Instruction) -> Array1<f64> {
    let mut v = Array1::zeros(INSTR_DIM);
    v[VERB_OFF + instr.verb.index()] = 1.0;
    v[TARGET_OFF + instr.target.index()] = 1.0;
    v[QUAL_OFF + instr.qualifier.map_or(0, |q| q.index() + 1)] = 1.0;
    v
}

/// Argmax decoding of a relaxed instruction vector.
pub fn decode_instruction(v: &Array1<f64>) -> Instruction {
    let argmax = |lo: usize, n: usize| (0..n).max_by(|&a, &b| v[lo + a].total_cmp(&v[lo + b]).then(b.cmp(&a))).unwrap();
    let q = argmax(QUAL_OFF, Qualifier::ALL.len() + 1);
    Instruction {
        verb: Verb::from_index(argmax(VERB_OFF, Verb::ALL.len())).unwrap(),
        target: Category::from_index(argmax(TARGET_OFF, Category::ALL.len())).unwrap(),
        qualifier: if q == 0 { None } else { Qualifier::from_index(q - 1) },
    }
}

/// Decodes slot tokens into scene objects. A slot whose category block is
/// closer to the zero token than to any one-hot vector is empty; the slot
/// with the largest key component is the key object and is always kept.
pub fn decode_scene(scene: &Array2<f64>) -> Vec<crate::toyworld::SceneObject> {
    use crate::toyworld::{SceneObject, MAX_SIZE};
    let key_slot = (0..scene.nrows())
        .max_by(|&a, &b| scene[[a, KEY_OFF]].total_cmp(&scene[[b, KEY_OFF]]).then(b.cmp(&a)))
        .unwrap();
    let mut out = Vec::new();
    for (i, row) in scene.outer_iter().enumerate() {
        let cats = row.slice(ndarray::s![CAT_OFF..CAT_OFF + Category::ALL.len()]);
        let norm2: f64 = cats.iter().map(|c| c * c).sum();
        let (best, best_val) = cats
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(j, v)| (j, *v))
            .unwrap();
        // ‖c - e_j‖² < ‖c‖²  ⇔  c_j > ½
        let occupied = best_val > 0.5 || (norm2 - 2.0 * best_val + 1.0) < norm2;
        if !occupied && i != key_slot {
            continue;
        }
        out.push(SceneObject {
            category: Category::from_index(best).unwrap(),
            size: (row[SIZE_OFF] * MAX_SIZE).clamp(1e-3, MAX_SIZE),
            position: [row[POS_OFF].clamp(0.0, 1.0), row[POS_OFF + 1].clamp(0.0, 1.0)],
            is_key: i == key_slot,
        });
    }
    out
}

/// A batch of encoded samples ready for the tape.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    /// (n · SLOTS) × OBJECT_DIM
    pub scene: Array2<f64>,
    /// n × INSTR_DIM
    pub instruction: Array2<f64>,
    /// n × 2·horizon
    pub action: Array2<f64>,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.instruction.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let horizon = samples.first().map_or(0, |s| s.trajectory.len());
        let mut scene = Array2::zeros((samples.len() * SLOTS, OBJECT_DIM));
        let mut instruction = Array2::zeros((samples.len(), INSTR_DIM));
        let mut action = Array2::zeros((samples.len(), 2 * horizon));
        for (i, s) in samples.iter().enumerate() {
            if s.trajectory.len() != horizon {
                return Err(Error::contract("samples in a batch must share one horizon"));
            }
            scene
                .slice_mut(ndarray::s![i * SLOTS..(i + 1) * SLOTS, ..])
                .assign(&encode_scene(s)?);
            instruction.row_mut(i).assign(&encode_instruction(&s.instruction));
            action.row_mut(i).assign(&Array1::from(s.trajectory.flatten()));
        }
        Ok(Self {
            scene,
            instruction,
            action,
        })
    }

    pub fn from_synthetic(samples: &[SyntheticSample]) -> Self {
        let horizon = samples.first().map_or(0, |s| s.horizon());
        let mut scene = Array2::zeros((samples.len() * SLOTS, OBJECT_DIM));
        let mut instruction = Array2::zeros((samples.len(), INSTR_DIM));
        let mut action = Array2::zeros((samples.len(), 2 * horizon));
        for (i, s) in samples.iter().enumerate() {
            scene.slice_mut(ndarray::s![i * SLOTS..(i + 1) * SLOTS, ..]).assign(&s.scene);
            instruction.row_mut(i).assign(&s.instruction);
            action.row_mut(i).assign(&s.action);
        }
        Self {
            scene,
            instruction,
            action,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let scene_rows: Vec<usize> = idx.iter().flat_map(|&i| i * SLOTS..(i + 1) * SLOTS).collect();
        Self {
            scene: self.scene.select(Axis(0), &scene_rows),
            instruction: self.instruction.select(Axis(0), idx),
            action: self.action.select(Axis(0), idx),
        }
    }
}

pub fn synthetic_from_sample(sample: &Sample) -> Result<SyntheticSample> {
    Ok(SyntheticSample {
        scene: encode_scene(sample)?,
        instruction: encode_instruction(&sample.instruction),
        action: Array1::from(sample.trajectory.flatten()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d_model: usize,
    pub horizon: usize,
    pub object_code: usize,
    pub instruction_code: usize,
    pub action_code: usize,
}

impl EncoderDims {
    pub fn new(d_model: usize, horizon: usize) -> Self {
        Self {
            d_model,
            horizon,
            object_code: 16,
            instruction_code: 8,
            action_code: 16,
        }
    }
}

/// Leaves of one encoder stack on a tape, in layout order.
pub struct EncoderVars<'a> {
    pub scene: &'a [Var],
    pub instruction: &'a [Var],
    pub action: &'a [Var],
    pub fusion: &'a [Var],
}

/// Per-modality encoders plus the fusion layer.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    dims: EncoderDims,
    scene: Mlp,
    instruction: Mlp,
    action: Mlp,
    fusion: Mlp,
    layout: Arc<Layout>,
}

impl EncoderStack {
    pub fn new(dims: EncoderDims) -> Result<Self> {
        let one_layer = |name: &str, i: usize, o: usize| {
            Mlp::new(vec![
                Layer::Linear {
                    name: name.into(),
                    inputs: i,
                    outputs: o,
                },
                Layer::Tanh,
            ])
        };
        let scene = one_layer("l0", OBJECT_DIM, dims.object_code)?;
        let instruction = one_layer("l0", INSTR_DIM, dims.instruction_code)?;
        let action = one_layer("l0", 2 * dims.horizon, dims.action_code)?;
        let fusion = one_layer("l0", dims.object_code + dims.instruction_code + dims.action_code, dims.d_model)?;
        let layout = Arc::new(Layout::concat(&[
            ("scene", scene.layout().as_ref()),
            ("instr", instruction.layout().as_ref()),
            ("action", action.layout().as_ref()),
            ("fusion", fusion.layout().as_ref()),
        ]));
        Ok(Self {
            dims,
            scene,
            instruction,
            action,
            fusion,
            layout,
        })
    }

    pub fn dims(&self) -> EncoderDims {
        self.dims
    }

    pub fn d_model(&self) -> usize {
        self.dims.d_model
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn init(&self, seed: u64) -> ParamVector {
        let parts = [
            self.scene.init(seed),
            self.instruction.init(seed.wrapping_add(1)),
            self.action.init(seed.wrapping_add(2)),
            self.fusion.init(seed.wrapping_add(3)),
        ];
        let values = parts.iter().flat_map(|p| p.values().iter().copied()).collect();
        ParamVector::new(self.layout.clone(), values).unwrap()
    }

    pub fn split<'a>(&self, vars: &'a [Var]) -> EncoderVars<'a> {
        let a = self.scene.layout().entries().len();
        let b = a + self.instruction.layout().entries().len();
        let c = b + self.action.layout().entries().len();
        EncoderVars {
            scene: &vars[..a],
            instruction: &vars[a..b],
            action: &vars[b..c],
            fusion: &vars[c..],
        }
    }

    /// Records h for a batch. With `with_action = false` the action code is
    /// replaced by zeros, giving the features a policy can see before acting.
    pub fn record(
        &self,
        tape: &mut Tape,
        params: &EncoderVars<'_>,
        scene: Var,
        instruction: Var,
        action: Var,
        with_action: bool,
    ) -> Result<Var> {
        let n = tape.shape(instruction).0;
        if tape.shape(scene) != (n * SLOTS, OBJECT_DIM) || tape.shape(instruction).1 != INSTR_DIM {
            return Err(Error::contract("encoded scene or instruction has the wrong shape"));
        }
        if with_action && tape.shape(action) != (n, 2 * self.dims.horizon) {
            return Err(Error::contract(format!(
                "action has shape {:?}, expected ({n}, {})",
                tape.shape(action),
                2 * self.dims.horizon
            )));
        }
        let obj = self.scene.forward(tape, params.scene, scene)?;
        let pooled = tape.group_sum_rows(obj, SLOTS);
        let s = tape.scale(pooled, 1.0 / SLOTS as f64);
        let l = self.instruction.forward(tape, params.instruction, instruction)?;
        let a = if with_action {
            self.action.forward(tape, params.action, action)?
        } else {
            tape.constant(Array2::zeros((n, self.dims.action_code)))
        };
        let code = tape.concat_cols(&[s, l, a]);
        self.fusion.forward(tape, params.fusion, code)
    }

    fn features_of(&self, params: &ParamVector, batch: &EncodedBatch, with_action: bool) -> Result<Array2<f64>> {
        if **params.layout() != *self.layout {
            return Err(Error::contract("encoder parameters do not match the encoder layout"));
        }
        let mut tape = Tape::new();
        let vars = params.load(&mut tape, false);
        let ev = self.split(&vars);
        let s = tape.constant(batch.scene.clone());
        let i = tape.constant(batch.instruction.clone());
        let a = tape.constant(batch.action.clone());
        let h = self.record(&mut tape, &ev, s, i, a, with_action)?;
        Ok(tape.value(h).clone())
    }

    /// h for every sample in the batch, one row each.
    pub fn features(&self, params: &ParamVector, batch: &EncodedBatch) -> Result<Array2<f64>> {
        self.features_of(params, batch, true)
    }

    pub fn featurize(&self, params: &ParamVector, sample: &Sample) -> Result<FeatureVector> {
        let b = EncodedBatch::from_samples(std::slice::from_ref(sample))?;
        Ok(FeatureVector(self.features(params, &b)?.row(0).to_vec()))
    }

    pub fn featurize_synthetic(&self, params: &ParamVector, syn: &SyntheticSample) -> Result<FeatureVector> {
        if !syn.is_finite() {
            return Err(Error::contract("synthetic sample has non-finite fields"));
        }
        let b = EncodedBatch::from_synthetic(std::slice::from_ref(syn));
        Ok(FeatureVector(self.features(params, &b)?.row(0).to_vec()))
    }

    pub fn featurize_all(&self, params: &ParamVector, samples: &[Sample]) -> Result<Vec<FeatureVector>> {
        let b = EncodedBatch::from_samples(samples)?;
        let h = self.features(params, &b)?;
        Ok(h.outer_iter().map(|r| FeatureVector(r.to_vec())).collect())
    }
}
