use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{draw_batch, Objective, ParamVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LissaConfig {
    /// Recursion depth J.
    pub depth: usize,
    /// Damping λ added to the Hessian.
    pub damping: f64,
    pub batch_size: usize,
    /// Divisor keeping I − (H + λI)/scale contractive; must exceed the
    /// largest Hessian eigenvalue.
    pub scale: f64,
}

impl Default for LissaConfig {
    fn default() -> Self {
        Self {
            depth: 50,
            damping: 0.01,
            batch_size: 32,
            scale: 10.0,
        }
    }
}

impl LissaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::contract("LiSSA depth must be at least 1"));
        }
        if !(self.damping > 0.0) || !(self.scale > 0.0) {
            return Err(Error::contract("LiSSA damping and scale must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("LiSSA batch size must be positive"));
        }
        Ok(())
    }
}

/// Stochastic estimate of (H + λI)⁻¹ v by the truncated Neumann recursion
///
/// ```text
/// r₀ = v,   r_{j+1} = v + (I − (H_j + λI)/scale) r_j,   result = r_J / scale
/// ```
///
/// where H_j is the Hessian of the mean loss over the j-th minibatch.
pub fn lissa_ihvp<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamVector,
    v: &ParamVector,
    cfg: &LissaConfig,
    seed: u64,
) -> Result<ParamVector> {
    cfg.validate()?;
    params.check_layout(v)?;
    let n = objective.num_samples();
    if n == 0 {
        return Err(Error::contract("LiSSA over an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = v.clone();
    let v_norm = v.norm();
    for j in 0..cfg.depth {
        let idx = draw_batch(&mut rng, n, cfg.batch_size);
        let hv = objective.hvp(params, &idx, &r).map_err(|e| {
            if e.is_numeric() {
                Error::LissaDiverged { iteration: j + 1 }
            } else {
                e
            }
        })?;
        let shrink = 1.0 - cfg.damping / cfg.scale;
        let inv = 1.0 / cfg.scale;
        for ((ri, &vi), &hi) in r.values_mut().iter_mut().zip(v.values()).zip(hv.values()) {
            *ri = vi + shrink * *ri - inv * hi;
        }
        // A contractive recursion satisfies ‖r_j‖ ≤ (j + 1)‖v‖; far beyond
        // that the scale is below the top curvature and the series diverges.
        if !r.is_finite() || r.norm() > GROWTH_SLACK * (j + 2) as f64 * v_norm {
            return Err(Error::LissaDiverged { iteration: j + 1 });
        }
    }
    Ok(r.scaled(1.0 / cfg.scale))
}

const GROWTH_SLACK: f64 = 10.0;

/// Power-iteration estimate of the largest-magnitude eigenvalue of the
/// Hessian of the mean loss over `idx`.
pub fn top_curvature<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamVector,
    idx: &[usize],
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = ParamVector::zeros(params.layout().clone());
    for x in v.values_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let n = v.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        v = v.scaled(1.0 / n);
        let hv = objective.hvp(params, idx, &v)?;
        lambda = v.dot(&hv);
        v = hv;
    }
    Ok(lambda.abs())
}
