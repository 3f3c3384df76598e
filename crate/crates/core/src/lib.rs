//! Simulation and verification engine for Markov interacting particle
//! systems on weighted directed hypergraphs.
//!
//! The crate covers the whole pipeline: rule systems and their derived rate
//! quantities ([`rates`]), graph generators ([`generators`]), concrete model
//! builders ([`models`]), exact forward simulation ([`forward`]), backward
//! information-set and branching constructions ([`backward`]), the NIMFA
//! mean-field ODE ([`nimfa`]), an exact master-equation oracle for tiny
//! systems ([`oracle`]) and closed-form error bounds ([`bounds`]).

pub mod backward;
pub mod bounds;
pub mod forward;
pub mod generators;
pub mod linalg;
pub mod models;
pub mod nimfa;
pub mod ode;
pub mod oracle;
pub mod rates;
pub mod rng;
pub mod ruleset;
pub mod sparse;
pub mod stats;

pub use rates::{
    build_rate_system, influence_max, pair_rate_matrix, InteractionRule, PairRateMatrix, RateError, RateSystem,
    StateSpace,
};
pub use sparse::CsrMatrix;
