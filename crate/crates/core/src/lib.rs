//! Agent-based Monte-Carlo simulator of a staked-credit reputation mechanism.
//!
//! Agents stake credits on their own actions and on signed ratings of other
//! agents' actions. Settlement rewards actions that collect positive rating
//! stake and raters whose ratings align with their co-raters. Agents adapt the
//! share of credit they stake from round to round.
//!
//! ```
//! use stakerep::{run_simulation, SimConfig};
//!
//! let mut cfg = SimConfig::default();
//! cfg.population.n = 50;
//! cfg.population.cp_total = 5_000.0;
//! cfg.rounds = 5;
//! cfg.replications = 2;
//! let result = run_simulation(&cfg).unwrap();
//! assert_eq!(result.replications.len(), 2);
//! assert_eq!(result.replications[0].rounds.len(), 5);
//! ```

pub mod analysis;
pub mod config;
pub mod engine;
pub mod mechanics;
pub mod sampling;
pub mod validation;

pub use config::{parse_config, ConfigError, SimConfig};
pub use engine::{
    run_simulation, run_simulation_with_jobs, EngineError, Population, Replication,
    ReplicationResult, RoundOutcome, SimulationResult,
};
pub use sampling::RngStream;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/settlement.md")]
    mod settlement {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/rounds-and-learning.md")]
    mod rounds_and_learning {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
