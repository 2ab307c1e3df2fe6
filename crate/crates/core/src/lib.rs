//! Iterative consensus facilitation: a session workflow in which a language
//! model synthesizes participant opinions into a proposal, collects
//! accept/reject verdicts and feedback, picks a facilitation strategy and
//! revises, plus the embedding-based analytics that measure how closely
//! accepted proposals track what participants originally said.

pub mod analytics;
pub mod clock;
pub mod domain;
pub mod embedding;
pub mod engine;
pub mod llm;
pub mod orchestrator;
pub mod service;
pub mod sim;
pub mod analysis;
