use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array1, Array2};

use crate::diffcore::{checkpoint, Layout, ParamVector};
use crate::error::{Error, Result};
use crate::representation::{decode_instruction, decode_scene, SyntheticSample, INSTR_DIM, OBJECT_DIM, SLOTS};
use crate::toyworld::{io, Sample, Trajectory};

pub const SIDECAR_SUFFIX: &str = ".tensors";

/// Discretizes one synthetic sample into the dataset schema.
pub fn discretize(syn: &SyntheticSample, id: u32) -> Sample {
    Sample {
        id,
        scene: decode_scene(&syn.scene),
        instruction: decode_instruction(&syn.instruction),
        trajectory: Trajectory::from_flat(syn.action.as_slice().expect("contiguous action")).clamped(),
        quality: None,
    }
}

pub fn sidecar_path(coreset_path: &Path) -> PathBuf {
    let mut s = coreset_path.as_os_str().to_owned();
    s.push(SIDECAR_SUFFIX);
    PathBuf::from(s)
}

pub fn to_tensors(samples: &[SyntheticSample]) -> Result<ParamVector> {
    let m = samples.len();
    let horizon = samples.first().map_or(0, |s| s.horizon());
    if samples
        .iter()
        .any(|s| s.horizon() != horizon || s.scene.dim() != (SLOTS, OBJECT_DIM) || s.instruction.len() != INSTR_DIM)
    {
        return Err(Error::contract("synthetic samples differ in shape"));
    }
    let layout = Layout::from_entries([
        ("syn.scene", vec![m, SLOTS, OBJECT_DIM]),
        ("syn.instr", vec![m, INSTR_DIM]),
        ("syn.action", vec![m, horizon, 2]),
    ]);
    let mut values = Vec::with_capacity(layout.total_len());
    for s in samples {
        values.extend(s.scene.iter());
    }
    for s in samples {
        values.extend(s.instruction.iter());
    }
    for s in samples {
        values.extend(s.action.iter());
    }
    ParamVector::new(Arc::new(layout), values)
}

pub fn from_tensors(p: &ParamVector) -> Result<Vec<SyntheticSample>> {
    let bad = || Error::format("coreset sidecar", "unexpected tensor layout");
    let entries = p.layout().entries();
    if entries.len() != 3 || entries[0].name != "syn.scene" || entries[1].name != "syn.instr" || entries[2].name != "syn.action" {
        return Err(bad());
    }
    let (sc, ins, act) = (&entries[0].shape, &entries[1].shape, &entries[2].shape);
    if sc.len() != 3 || ins.len() != 2 || act.len() != 3 || sc[1] != SLOTS || sc[2] != OBJECT_DIM || ins[1] != INSTR_DIM || act[2] != 2 {
        return Err(bad());
    }
    let m = sc[0];
    if ins[0] != m || act[0] != m {
        return Err(bad());
    }
    let scene = Array2::from_shape_vec((m * SLOTS, OBJECT_DIM), p.entry(0).to_vec()).map_err(|_| bad())?;
    let instr = Array2::from_shape_vec((m, INSTR_DIM), p.entry(1).to_vec()).map_err(|_| bad())?;
    let action = Array2::from_shape_vec((m, 2 * act[1]), p.entry(2).to_vec()).map_err(|_| bad())?;
    Ok((0..m)
        .map(|i| SyntheticSample {
            scene: scene.slice(s![i * SLOTS..(i + 1) * SLOTS, ..]).to_owned(),
            instruction: instr.row(i).to_owned(),
            action: Array1::from(action.row(i).to_vec()),
        })
        .collect())
}

/// Writes the discretized coreset as JSON lines and the raw tensors to the
/// sidecar next to it. Returns the discretized samples.
pub fn export_coreset(samples: &[SyntheticSample], path: &Path) -> Result<Vec<Sample>> {
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract("coreset contains non-finite values"));
    }
    let discrete: Vec<Sample> = samples.iter().enumerate().map(|(i, s)| discretize(s, i as u32)).collect();
    for s in &discrete {
        io::validate_sample(s)?;
    }
    io::write_samples(path, &discrete, false)?;
    checkpoint::save(&to_tensors(samples)?, &sidecar_path(path))?;
    Ok(discrete)
}

pub fn load_sidecar(coreset_path: &Path) -> Result<Vec<SyntheticSample>> {
    from_tensors(&checkpoint::load(&sidecar_path(coreset_path))?)
}
