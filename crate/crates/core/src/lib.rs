//! Instrumented toy-transformer lab: attention-triggered retrieval (ATLAS),
//! importance-based KV-cache compression (CRITIC), group-relative policy
//! optimization for retrieval-augmented generation (PORAG), and a suite of
//! test-time decoding strategies.
//!
//! Numeric code is generic over [`scalar::Real`]; the aliases below fix it to
//! `f64`, which everything outside the numeric core uses.

pub mod atlas;
pub mod backend;
pub mod config;
pub mod critic;
pub mod decoders;
pub mod engine;
pub mod model;
pub mod pipeline;
pub mod porag;
pub mod retrieval;
pub mod sampling;
pub mod scalar;

pub type Model = model::Model<f64>;
pub type KvCache = model::KvCache<f64>;
pub type StepTrace = model::StepTrace<f64>;
