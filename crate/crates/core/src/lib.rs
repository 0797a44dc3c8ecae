//! Influence-aware dataset distillation for a desk-scale vision-language-action
//! world.
//!
//! The pipeline runs in three phases:
//!
//! 1. a lightly trained guide policy ([`ft_engine::train_guide`]);
//! 2. influence assessment: LiSSA-based base scores, then contrastive
//!    verification of the top-K% samples against programmatic counterexamples
//!    ([`ft_engine::assess`]);
//! 3. influence-weighted characteristic-function matching that synthesizes a
//!    small coreset ([`ncfm::distill`]).
//!
//! [`harness`] wires the phases together with baselines, ablations and
//! downstream evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffcore;
pub mod error;
pub mod ft_engine;
pub mod harness;
pub mod ncfm;
pub mod representation;
pub mod toyworld;

pub use error::{Error, Result};
