//! Command line front end for the `mrbsde` solvers: config ingestion, run
//! manifests and the solve / verify / game / regress operations.

pub mod config;
pub mod manifest;
pub mod run;
