//! Space-air-ground multiconnectivity link selection.
//!
//! A user equipment picks, at every step, a non-empty subset of four links
//! (terrestrial base station, UAV relay, high-altitude platform, LEO
//! satellite). The crate provides the radio and mobility model, an episodic
//! environment, a small neural-network library, an actor-critic agent, six
//! comparison policies and an experiment harness that writes CSV traces.
//!
//! ```no_run
//! use sagin_core::harness::{run_experiment, ExperimentConfig};
//!
//! let cfg = ExperimentConfig { episodes: 200, ..ExperimentConfig::default() };
//! let result = run_experiment(&cfg)?;
//! for row in &result.summary {
//!     println!("{}: {:?}", row.policy, row.stats);
//! }
//! # Ok::<(), sagin_core::Error>(())
//! ```

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod channel;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod rng;

pub use agent::{ActionMode, ActorCritic, AgentConfig, Transition};
pub use baselines::{Policy, PolicyKind};
pub use channel::{LinkKind, LinkMetrics, LinkParams, PerLink};
pub use checkpoint::Checkpoint;
pub use env::{ActionIndex, EnvConfig, Environment, Observation, SaginEnv};
pub use error::{Error, Result};
pub use geometry::Position3D;
pub use harness::{EpisodeRecord, ExperimentConfig};
pub use nn::Mlp;
