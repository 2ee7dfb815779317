//! Composable LLM agents.
//!
//! A policy is a nest of intrinsic functions, each rewriting the agent's
//! per-episode memory, followed by one extrinsic function that builds a
//! prompt, samples the model and parses an environment action. On top of
//! that sit a library of prompting methods, tree-search planners, a few
//! small built-in environments and the data-side math used to fine-tune
//! agents (masked token loss, action-granular advantage estimation).

pub mod env;
pub mod episode;
pub mod error;
pub mod flows;
pub mod llm;
pub mod memory;
pub mod methods;
pub mod planning;
pub mod prompts;
pub mod tasks;
pub mod tuning;
pub mod types;

pub use crate::error::{Error, Result};
