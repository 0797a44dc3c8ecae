//! Influence-weighted neural characteristic function matching.
//!
//! A frequency sampler ψ and a learnable synthetic coreset play a minimax
//! game: ψ looks for frequencies where the weighted real and the synthetic
//! empirical characteristic functions disagree, and the coreset moves to
//! close that gap.

mod discrepancy;
mod distill;
mod export;
mod sampler;

pub use discrepancy::{cf_discrepancy, cf_discrepancy_matrix, features_to_matrix, record_cf_discrepancy, CfDiscrepancy};
pub use distill::{coreset_size, distill, distill_features, weighted_draws, DistillConfig, FeatureCoreset, RoundStats, SyntheticCoreset};
pub use export::{discretize, export_coreset, from_tensors, load_sidecar, sidecar_path, to_tensors, SIDECAR_SUFFIX};
pub use sampler::{sample_frequencies, SamplerNet, DEFAULT_FREQUENCY_SCALE, DEFAULT_NOISE_DIM, DEFAULT_SAMPLER_HIDDEN};

pub use crate::representation::SyntheticSample;
