//! Outcome-level reinforcement learning for compositional generalization.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: tokens, examples, TSV ingestion, the mini-SCAN generator and
//!   split coverage checks.
//! - [`abstraction`]: formalism descriptors, primitive extraction and
//!   compositional skeletons.
//! - [`reward`]: binary, primitive, composition and composite rewards.
//! - [`policy`]: a small autoregressive policy with hand-written reverse-mode
//!   gradients, sampling and checkpoints.
//! - [`sft`]: teacher-forced warm-up training.
//! - [`grpo`]: group-relative advantages, the clipped surrogate with KL
//!   regularization, and the training loop.
//! - [`eval`]: exact match, primitive/composition accuracy, pass@k, trigram
//!   copying analysis and length buckets.

pub mod abstraction;
pub mod corpus;
pub mod eval;
pub mod grpo;
pub mod policy;
pub mod reward;
pub mod seed;
pub mod sft;
#[cfg(test)]
mod testutil;

pub use abstraction::{FormalismDescriptor, Primitive, PrimitiveSet, Skeleton, SkeletonToken};
pub use corpus::{Dataset, Example, Formalism, Token};
pub use policy::{ArchConfig, PolicyParams, Vocab};
pub use reward::{RewardBreakdown, RewardMode, RewardWeights};
