//! Sparse deep reinforcement learning policies.
//!
//! Dense networks are trained with DQN/DDQN, PPO or DDPG with hindsight replay
//! and demonstration-guided exploration. Any of them can be sparsified with
//! per-weight hard-concrete L0 gates (or L1/L2 penalties for comparison) and
//! compressed afterwards with truncated SVD.

pub mod algos;
pub mod envs;
pub mod error;
pub mod gates;
pub mod harness;
pub mod lowrank;
pub mod nn;
pub mod replay;

pub use error::{Error, Result};
