//! Coalition-level credit assignment for cooperative multi-agent policy
//! gradients.
//!
//! Each sampled timestep yields coalition advantages `A_C`; a small convex
//! QP turns them into per-agent advantages that sum to the global advantage
//! while keeping every coalition's share close to its own value (the
//! regularized least ε-core). The crate bundles the QP solver, critics,
//! policies, desk-scale environments, a PPO-style trainer, and numerical
//! checks of the policy-improvement bounds.

pub mod action;
pub mod coalition;
pub mod config;
pub mod critics;
pub mod envs;
pub mod error;
pub mod nn;
pub mod policy;
pub mod qp;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
