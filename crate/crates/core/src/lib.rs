//! Deterministic building-scale mobile-manipulation simulator and a
//! two-stage VLM agent loop on top of it.

pub mod backends;
pub mod engine;
pub mod expert;
pub mod harness;
pub mod memory;
pub mod nav;
pub mod percept;
pub mod rng;
pub mod skills;
pub mod world;
