//! Knowledge-based emotion recognition: fuse a face channel P(e|f) with a
//! situational-context channel P(e|c) by Bayesian cue integration.
//!
//! Modules follow the data flow: human ratings are aggregated into soft
//! labels ([`annotations`]), face-model exports become per-video
//! distributions ([`facesources`]), an LLM supplies per-outcome context
//! distributions ([`context`]), the two are combined ([`fusion`]) and scored
//! against the human context-based ratings ([`metrics`]). [`pipeline`] wires
//! it all into file-based stages and [`synth`] generates a seeded corpus.

pub mod annotations;
pub mod context;
pub mod distributions;
pub mod facesources;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use annotations::{Condition, GameOutcome};
pub use distributions::{EmotionDistribution, EmotionLabel, NUM_LABELS};
pub use fusion::{bci_fuse, BandTable, FusionConfig};
