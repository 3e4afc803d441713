//! Property testers for data drawn from many source distributions, roughly one
//! sample per source, when every source deviates from a reference distribution
//! with the same sign at each domain element.
//!
//! The crate is organised bottom-up:
//!
//! - [`dist`]: validated distributions, norms, the shared-sign partition and error vectors.
//! - [`sampling`]: seeded streams, alias tables, Poisson variates and the multi-source draws.
//! - [`testers`]: collision (uniformity) and chi-square style (identity, closeness) testers.
//! - [`flattening`]: deterministic and randomized domain flattening.
//! - [`oracles`]: exact expectations, variances and the inequalities they satisfy.
//! - [`families`]: generators for completeness, soundness and counterexample families.
//! - [`definetti`]: the exchangeable-sequence witness events.
//! - [`harness`]: Monte Carlo runner, calibration, CSV ingestion and reports.
//!
//! Domain indices are 0-based throughout the library. Files read or written by
//! the harness use 1-based values.

pub mod definetti;
pub mod dist;
pub mod families;
pub mod flattening;
pub mod harness;
pub mod numeric;
pub mod oracles;
pub mod sampling;
pub mod testers;

pub use dist::{Distribution, ErrorVectors, Partition, Side, SourceFamily};
pub use sampling::{AliasTable, CountVector, FamilySampler, RngHandle};
pub use testers::{Decision, TesterConfig, Verdict};
