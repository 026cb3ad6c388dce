//! Grasp-and-throw learning in a simulated bin-to-box world.
//!
//! - [`scene`]: object models, hidden dynamics, workspace and box layouts
//! - [`simulator`]: bin spawning, heightmaps, grasp and throw execution
//! - [`ballistics`]: closed-form release planner and an ideal-flight oracle
//! - [`tensornet`]: tensors, layers with backward passes, optimizer, checkpoints
//! - [`policy`]: rotated dense grasp/throw predictions and action selection
//! - [`trainer`]: labels, prioritized replay and the trial-and-error loop
//! - [`bench`]: experiment configs, metrics and study drivers

pub mod ballistics;
pub mod error;
pub mod policy;
pub mod scene;
pub mod simulator;
pub mod tensornet;
pub mod trainer;
pub mod bench;

pub use error::{Error, Result};
