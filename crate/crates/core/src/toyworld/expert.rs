use super::{Instruction, Qualifier, Sample, SceneObject, Trajectory, Verb};
use crate::error::{Error, Result};

/// Gripper rest position every trajectory starts from.
pub const START: [f64; 2] = [0.5, 0.0];

pub const SUCCESS_THRESHOLD: f64 = 0.1;

/// Two suffix waypoints after reaching the key object, as offsets from it.
fn suffix(instr: &Instruction) -> [[f64; 2]; 2] {
    match instr.verb {
        Verb::Pick => [[0.0, 0.0], [0.0, 0.0]],
        Verb::Push => {
            let d = match instr.qualifier {
                Some(Qualifier::Near) => 0.1,
                Some(Qualifier::Far) => 0.35,
                _ => 0.2,
            };
            [[0.5 * d, 0.0], [d, 0.0]]
        }
        Verb::PlaceLeftOf => [[-0.15, 0.1], [-0.3, 0.0]],
        Verb::PlaceRightOf => [[0.15, 0.1], [0.3, 0.0]],
        Verb::StackOn => [[0.0, 0.15], [0.0, 0.05]],
    }
}

/// Scripted expert: straight-line reach from [`START`] to the key object over
/// `horizon - 2` waypoints, then a two-waypoint verb-specific suffix.
/// Waypoints are clamped to [-1, 1]².
pub fn expert_trajectory(key: &SceneObject, instr: &Instruction, horizon: usize) -> Trajectory {
    assert!(horizon >= 3, "horizon must leave room for the reach and suffix");
    let reach = horizon - 2;
    let p = key.position;
    let mut w = Vec::with_capacity(horizon);
    for k in 1..=reach {
        let f = k as f64 / reach as f64;
        w.push([START[0] + f * (p[0] - START[0]), START[1] + f * (p[1] - START[1])]);
    }
    for off in suffix(instr) {
        w.push([p[0] + off[0], p[1] + off[1]]);
    }
    Trajectory(w).clamped()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub success: bool,
    pub error: f64,
}

/// Mean Euclidean waypoint deviation of `predicted` from the expert for the
/// sample's scene and instruction; success iff the deviation is below
/// [`SUCCESS_THRESHOLD`].
pub fn evaluate_success(sample: &Sample, predicted: &Trajectory) -> Result<Evaluation> {
    let horizon = sample.trajectory.len();
    if predicted.len() != horizon {
        return Err(Error::contract(format!(
            "predicted trajectory has {} waypoints, expected {horizon}",
            predicted.len()
        )));
    }
    let key = sample
        .key_object()
        .ok_or_else(|| Error::contract(format!("sample {} has no key object", sample.id)))?;
    let expert = expert_trajectory(key, &sample.instruction, horizon);
    let error = deviation(&expert, predicted);
    Ok(Evaluation {
        success: is_success(error),
        error,
    })
}

pub fn is_success(error: f64) -> bool {
    error < SUCCESS_THRESHOLD
}

pub(crate) fn deviation(a: &Trajectory, b: &Trajectory) -> f64 {
    let total: f64 = a
        .waypoints()
        .iter()
        .zip(b.waypoints())
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum();
    total / a.len() as f64
}
