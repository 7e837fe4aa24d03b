//! Core library for valence coding of motivational-interviewing transcripts
//! with chat-completion language models.
//!
//! The pipeline: parse session transcripts ([`transcript`]), segment them
//! into fixed-size windows, build a staged prompt chain per window
//! ([`chain`]), send it to a backend ([`backend`]), extract a valence label
//! from the final answer ([`extraction`]), and score predictions against
//! gold labels ([`metrics`]). [`runner`] orchestrates full experiments with
//! resumable persistence; [`synth`] generates synthetic corpora for desk
//! runs.

pub mod assets;
pub mod backend;
pub mod chain;
pub mod config;
pub mod extraction;
pub mod labels;
pub mod metrics;
pub mod runner;
pub mod synth;
pub mod transcript;
