//! Sample-efficient gear-ratio tuning for a simulated knee-mounted energy
//! harvester.
//!
//! The crate couples a multi-task Gaussian-process optimizer ([`gp`],
//! [`mtbo`]) to a gait/device simulator with analytically known optima
//! ([`sim`]), and benchmarks it against random search over seeded replicates
//! ([`bench`]). The [`cli`] module ties everything to reproducible batch runs.

pub mod bench;
pub mod cli;
pub mod config;
pub mod gp;
pub mod mtbo;
pub mod seeding;
pub mod sim;
