//! Two-stage influence assessment.
//!
//! A guide policy is trained briefly; LiSSA then estimates how much each
//! training sample helps the held-out test loss (base scores). The top-K%
//! samples are checked against programmatic counterexamples and their
//! weights modulated by the gap between the two gradient-alignment scores.

mod guide;
mod influence;
mod lissa;
pub mod report;

pub use guide::{guide_steps, train_guide, GuideModel, DEFAULT_TRAINING_FRACTION};
pub use influence::{
    assess, base_only_weights, contrastive_scores, elite_count, mean_gradient, modulate_weight, normalize_weights, per_sample_gradients,
    reweighted, score_base, scores_from_gradients, test_ihvp, top_positions, AssessConfig, InfluenceRecord, ModulationConfig,
};
pub use lissa::{lissa_ihvp, top_curvature, LissaConfig};
