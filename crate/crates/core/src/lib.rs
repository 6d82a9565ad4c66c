//! Preference-guided generation of UI controls.
//!
//! Given a task description and the preference aspects a user cares about,
//! the engine asks a language model to pick controls from a closed candidate
//! pool, grounded in a dataset of crowdsourced control preferences. Repeated
//! runs are folded into weighted, 10-point scored recommendations, which can
//! then be turned into abstract control specs or model-written code. The
//! crate also carries the pairwise-comparison study harness used to evaluate
//! the recommendations.

pub mod catalog;
pub mod codegen;
pub mod dataset;
pub mod experiment;
pub mod llm;
pub mod prompts;
pub mod reasoning;
pub mod replies;
pub mod selections;
pub mod stats;

pub use catalog::{
    default_catalog, parse_kind, ControlCatalog, ControlKind, ControlSpec, ValueDomain,
};
pub use dataset::{Aspect, PreferenceDataset, RequirementTag, TaskEntry};
