//! Game-theoretic allocation of generation types on radial power networks.
//!
//! Every bus of a tree-shaped network hosts one generation unit which is
//! either a synchronous machine ([`UnitType::M`]) or a droop-controlled
//! converter ([`UnitType::C`]). The two types differ only in their damping,
//! which shifts the synchronized frequency and therefore every steady-state
//! line flow. Units play a game whose utilities reward matching a set of
//! known target angle differences, and log-linear learning drives the
//! network towards the configuration that realizes them.
//!
//! Module map:
//!
//! * [`network`]: network data, validation, JSON documents and the bundled
//!   six-bus fixture.
//! * [`steady_state`]: synchronized frequency, tree edge flows and angles.
//! * [`game`]: edge costs, utilities, potential, Nash enumeration.
//! * [`log_linear`]: the asynchronous noisy best-response chain.
//! * [`robustness`]: susceptance-drop feasibility region and margins.
//! * [`oracle`]: exact transition matrix and stationary analysis.

pub mod error;
pub mod game;
pub mod log_linear;
pub mod network;
pub mod oracle;
pub mod robustness;
pub mod steady_state;

pub use error::{Error, Result};
pub use game::{GameContext, GameReport, GameRecord};
pub use log_linear::{LearningTrace, TemperatureSchedule};
pub use network::{
    paper6_fixture, Configuration, DampingParams, IncidenceMatrix, PowerNetwork, Scenario,
    TargetAngles, UnitType,
};
pub use steady_state::SteadyState;

/// Largest network accepted by the exhaustive (2^n) game enumerations.
pub const MAX_ENUMERATION_NODES: usize = 20;

/// Largest network accepted by the dense Markov-chain oracle.
pub const MAX_CHAIN_NODES: usize = 12;
