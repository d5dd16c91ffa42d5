//! Boundary-aware evidence selection for retrieval-augmented generation.
//!
//! A selector policy picks evidence sets from a retrieved candidate pool and
//! is rewarded for sets whose empirical solvability under the generator sits
//! near a target level; a generator policy is then trained on those sets.
//! Both policies are sequential-softmax feature models optimized with
//! group-relative policy optimization, and the generator can be a seeded
//! simulator or a remote chat-completion endpoint (evaluation only).

pub mod backend;
pub mod bm25;
pub mod config;
pub mod corpus;
pub mod error;
pub mod filter;
pub mod grammar;
pub mod grpo;
pub mod metrics;
pub mod pipeline;
pub mod policy;
pub mod pool;
pub mod reward;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
