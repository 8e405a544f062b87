//! Calibrated search-attention measurements for fact-checked claims.
//!
//! The crate is organized as a pipeline:
//!
//! * [`ingest`] parses fact-check metadata exports and applies the study scope.
//! * [`claimcluster`] groups fact-check descriptions into claims (bag-of-words,
//!   Jaccard distance, DBSCAN) and supports manual split/expand refinements.
//! * [`kglink`] binds claim clusters to knowledge-graph entities.
//! * [`trendscal`] fetches group-normalized weekly search interest and
//!   de-normalizes it with per-country anchor banks.
//! * [`attention`] turns calibrated series into baseline-subtracted cumulative
//!   attention profiles.
//! * [`analysis`] computes the distribution, log-ratio, correlation and
//!   covariance statistics over a profile set.
//! * [`synthprov`] generates deterministic synthetic worlds and the simulated
//!   providers used as ground truth.
//! * [`pipeline`] runs all stages from one configuration file.

pub mod analysis;
pub mod attention;
pub mod claimcluster;
pub mod ingest;
pub mod kglink;
pub mod net;
pub mod pipeline;
pub mod synthprov;
pub mod trendscal;

/// Knowledge-graph id of the "Google" entity, the cross-country reference query.
pub const GOOGLE_ENTITY_ID: &str = "/m/045c7b";
