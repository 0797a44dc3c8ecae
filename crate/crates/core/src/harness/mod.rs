//! End-to-end orchestration: configuration, the three-phase pipeline,
//! baselines, ablations, statistics and report emission.

pub mod artifacts;
mod config;
mod pipeline;
mod projection;
mod report;
mod stats;

pub use config::{
    hex_digest, AssessSection, DatasetSection, DistillSection, DownstreamSection, GuideSection, LissaSection, ModelSection, PipelineConfig,
    ScheduleSection, SyntheticInput, DEFAULT_SEEDS,
};
pub use pipeline::{
    ablation_weights, assess_phase, beta_sweep, distill_phase, distilled_metrics, evaluate_policy, generate_splits, guide_phase,
    influence_coreset, method_training_set, random_coreset, read_splits, report_from_artifacts, reweight, run_ablation, run_ablations,
    run_baseline, run_phases, run_pipeline, train_and_evaluate, train_downstream, write_beta_table, write_splits, Ablation, BetaRow,
    Method, Metrics, Splits, VariantResult, EVAL_ID_BASE, TEST_ID_BASE,
};
pub use projection::{export_projection, project, Pca2, ProjectedPoint};
pub use report::{DiscrepancyCurve, MethodMetrics, MethodSummary, NamedTest, RunReport, SeedTimings, Timings, WeightStats};
pub use stats::{mean_std, paired_compare, PairedTest, DEGENERATE_P_BOUND};
