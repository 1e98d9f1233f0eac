//! Optimistic value iteration (UCBVI) for episodic tabular MDPs, with the
//! tooling to study its regret tail.
//!
//! * [`mdp`]: model type, backward induction, policy evaluation, gaps and an
//!   enumeration oracle.
//! * [`agent`]: the learning agent with K-dependent and K-independent bonuses.
//! * [`bounds`]: closed-form tail, expectation and visit-threshold bounds.
//! * [`diagnostics`]: good event, optimism, regret decomposition and lemma checks.
//! * [`envs`]: benchmark instances.
//! * [`harness`]: Monte Carlo experiments and result files.
//! * [`verify`]: parameter grids for the diagnostics.

// negated float comparisons are used on purpose to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod bounds;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod verify;

pub use agent::{BonusConfig, BonusSchedule};
pub use bounds::{BoundInputs, BoundReport};
pub use envs::{EnvKind, EnvSpec};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentResult};
pub use mdp::TabularMdp;
